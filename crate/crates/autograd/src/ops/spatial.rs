use crate::tape::Var;
use crate::tensor::Tensor;

/// Half-pixel-centre linear interpolation taps for resampling an axis of `src` samples
/// to `dst` samples: output `i` reads `(1 - w) * in[lo] + w * in[hi]`.
pub fn linear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resampling of the two trailing axes of `x`.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let r = x.rank();
    let (h, w) = (x.dim(r - 2), x.dim(r - 1));
    let lead: usize = x.shape()[..r - 2].iter().product();
    let ty = linear_taps(h, out_h);
    let tx = linear_taps(w, out_w);
    let mut shape = x.shape().to_vec();
    shape[r - 2] = out_h;
    shape[r - 1] = out_w;
    let mut out = Tensor::zeros(&shape);
    let (src, dst) = (x.data(), out.data_mut());
    for l in 0..lead {
        let s = &src[l * h * w..(l + 1) * h * w];
        let d = &mut dst[l * out_h * out_w..(l + 1) * out_h * out_w];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let top = (1.0 - wx) * s[y0 * w + x0] + wx * s[y0 * w + x1];
                let bot = (1.0 - wx) * s[y1 * w + x0] + wx * s[y1 * w + x1];
                d[oy * out_w + ox] = (1.0 - wy) * top + wy * bot;
            }
        }
    }
    out
}

fn resize_bilinear_adjoint(g: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let r = g.rank();
    let (out_h, out_w) = (g.dim(r - 2), g.dim(r - 1));
    let lead: usize = g.shape()[..r - 2].iter().product();
    let ty = linear_taps(in_h, out_h);
    let tx = linear_taps(in_w, out_w);
    let mut shape = g.shape().to_vec();
    shape[r - 2] = in_h;
    shape[r - 1] = in_w;
    let mut out = Tensor::zeros(&shape);
    let dst = out.data_mut();
    for l in 0..lead {
        let gs = &g.data()[l * out_h * out_w..(l + 1) * out_h * out_w];
        let d = &mut dst[l * in_h * in_w..(l + 1) * in_h * in_w];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let v = gs[oy * out_w + ox];
                d[y0 * in_w + x0] += (1.0 - wy) * (1.0 - wx) * v;
                d[y0 * in_w + x1] += (1.0 - wy) * wx * v;
                d[y1 * in_w + x0] += wy * (1.0 - wx) * v;
                d[y1 * in_w + x1] += wy * wx * v;
            }
        }
    }
    out
}

impl<'t> Var<'t> {
    /// Bilinear resize of the two trailing axes (half-pixel centres, edge clamp).
    pub fn resize_bilinear(self, out_h: usize, out_w: usize) -> Var<'t> {
        let x = self.value();
        let r = x.rank();
        let (h, w) = (x.dim(r - 2), x.dim(r - 1));
        if (h, w) == (out_h, out_w) {
            return self;
        }
        let out = resize_bilinear(&x, out_h, out_w);
        self.tape().op(out, &[self], Box::new(move |g| vec![Some(resize_bilinear_adjoint(g, h, w))]))
    }

    /// Nearest-neighbour 2× upsampling of the two trailing axes.
    pub fn upsample2x(self) -> Var<'t> {
        let x = self.value();
        let r = x.rank();
        let (h, w) = (x.dim(r - 2), x.dim(r - 1));
        let lead: usize = x.shape()[..r - 2].iter().product();
        let mut shape = x.shape().to_vec();
        shape[r - 2] = 2 * h;
        shape[r - 1] = 2 * w;
        let mut out = Tensor::zeros(&shape);
        {
            let d = out.data_mut();
            for l in 0..lead {
                for y in 0..2 * h {
                    for xo in 0..2 * w {
                        d[(l * 2 * h + y) * 2 * w + xo] = x.data()[(l * h + y / 2) * w + xo / 2];
                    }
                }
            }
        }
        let in_shape = x.shape().to_vec();
        self.tape().op(
            out,
            &[self],
            Box::new(move |g| {
                let mut dx = Tensor::zeros(&in_shape);
                let d = dx.data_mut();
                for l in 0..lead {
                    for y in 0..2 * h {
                        for xo in 0..2 * w {
                            d[(l * h + y / 2) * w + xo / 2] += g.data()[(l * 2 * h + y) * 2 * w + xo];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Mean over the two trailing axes: `[..., H, W]` → `[...]`.
    pub fn spatial_mean(self) -> Var<'t> {
        let x = self.value();
        let r = x.rank();
        assert!(r >= 3);
        let hw = x.dim(r - 2) * x.dim(r - 1);
        let lead_shape = x.shape()[..r - 2].to_vec();
        let data: Vec<f64> = x.data().chunks(hw).map(|c| c.iter().sum::<f64>() / hw as f64).collect();
        let in_shape = x.shape().to_vec();
        self.tape().op(
            Tensor::from_vec(data, &lead_shape),
            &[self],
            Box::new(move |g| {
                let mut dx = Tensor::zeros(&in_shape);
                for (chunk, &gv) in dx.data_mut().chunks_mut(hw).zip(g.data()) {
                    chunk.iter_mut().for_each(|v| *v = gv / hw as f64);
                }
                vec![Some(dx)]
            }),
        )
    }
}
