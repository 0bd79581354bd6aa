use crate::ops::linalg::{gemm, gemm_rs, MatRef};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Geometry of a 3D convolution with zero spatial padding, unit temporal stride and no
/// temporal padding (pad frames explicitly, e.g. with [`Var::reflect_pad_time`]).
///
/// Frames are unfolded spatially once (`rows = ci·kh·kw`, `cols = t·ho·wo`); each temporal
/// tap is then one GEMM against a column window of that buffer.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    ci: usize,
    t: usize,
    h: usize,
    w: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    to: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(x: &[usize], k: &[usize], stride: usize, pad: usize) -> Self {
        let (ci, t, h, w) = (x[1], x[2], x[3], x[4]);
        let (kt, kh, kw) = (k[2], k[3], k[4]);
        assert_eq!(k[1], ci, "conv kernel expects {} input channels, got {}", k[1], ci);
        assert!(t >= kt && h + 2 * pad >= kh && w + 2 * pad >= kw, "conv input {x:?} smaller than kernel {k:?}");
        let to = t - kt + 1;
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Self { ci, t, h, w, kt, kh, kw, stride, pad, to, ho, wo }
    }

    /// Rows of the unfolded buffer (one per spatial tap and channel).
    fn rows(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn frame_cols(&self) -> usize {
        self.ho * self.wo
    }

    fn in_len(&self) -> usize {
        self.ci * self.t * self.h * self.w
    }

    /// Output columns `[lo, hi)` whose input column `ox*stride + dx - pad` is in bounds.
    #[inline]
    fn valid_cols(&self, dx: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let first = p - dx as isize;
        let lo = if first <= 0 { 0 } else { ((first + s - 1) / s) as usize };
        let last = self.w as isize - 1 + p - dx as isize;
        let hi = if last < 0 { 0 } else { ((last / s) + 1).min(self.wo as isize) as usize };
        (lo.min(hi), hi)
    }

    /// Visits each contiguous run: (buffer offset, input offset, run length).
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let cols = self.t * self.frame_cols();
        let mut r = 0;
        for c in 0..self.ci {
            for dy in 0..self.kh {
                for dx in 0..self.kw {
                    let (lo, hi) = self.valid_cols(dx);
                    if lo < hi {
                        for f_idx in 0..self.t {
                            let frame = (c * self.t + f_idx) * self.h;
                            for oy in 0..self.ho {
                                let iy = (oy * self.stride + dy) as isize - self.pad as isize;
                                if iy < 0 || iy >= self.h as isize {
                                    continue;
                                }
                                let buf = r * cols + (f_idx * self.ho + oy) * self.wo + lo;
                                let inp = (frame + iy as usize) * self.w + lo * self.stride + dx - self.pad;
                                f(buf, inp, hi - lo);
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }

    fn unfold(&self, x: &[f64], buf: &mut [f64]) {
        buf.iter_mut().for_each(|v| *v = 0.0);
        let s = self.stride;
        self.for_each_run(|b, i, n| {
            if s == 1 {
                buf[b..b + n].copy_from_slice(&x[i..i + n]);
            } else {
                for k in 0..n {
                    buf[b + k] = x[i + k * s];
                }
            }
        });
    }

    fn fold(&self, buf: &[f64], dx: &mut [f64]) {
        let s = self.stride;
        self.for_each_run(|b, i, n| {
            for k in 0..n {
                dx[i + k * s] += buf[b + k];
            }
        });
    }

    /// Window of the unfolded buffer seen by temporal tap `dt`.
    fn window<'a>(&self, buf: &'a [f64], dt: usize) -> MatRef<'a> {
        let cols = self.t * self.frame_cols();
        let start = dt * self.frame_cols();
        MatRef { data: &buf[start..], rows: self.rows(), cols: self.to * self.frame_cols(), rs: cols as isize, cs: 1 }
    }
}

/// `[Co, Ci, kt, kh, kw]` → `kt` blocks of `[Co, Ci·kh·kw]`.
fn split_taps(w: &Tensor) -> Vec<f64> {
    let [co, ci, kt, kh, kw]: [usize; 5] = w.shape().try_into().unwrap();
    let k2 = kh * kw;
    let mut out = vec![0.0; w.numel()];
    for o in 0..co {
        for c in 0..ci {
            for t in 0..kt {
                let src = ((o * ci + c) * kt + t) * k2;
                let dst = (t * co + o) * ci * k2 + c * k2;
                out[dst..dst + k2].copy_from_slice(&w.data()[src..src + k2]);
            }
        }
    }
    out
}

fn merge_taps(split: &[f64], shape: &[usize]) -> Tensor {
    let [co, ci, kt, kh, kw]: [usize; 5] = shape.try_into().unwrap();
    let k2 = kh * kw;
    let mut out = Tensor::zeros(shape);
    for o in 0..co {
        for c in 0..ci {
            for t in 0..kt {
                let dst = ((o * ci + c) * kt + t) * k2;
                let src = (t * co + o) * ci * k2 + c * k2;
                out.data_mut()[dst..dst + k2].copy_from_slice(&split[src..src + k2]);
            }
        }
    }
    out
}

impl<'t> Var<'t> {
    /// 3D convolution over `[B, Ci, T, H, W]` with kernel `[Co, Ci, kt, kh, kw]`.
    pub fn conv3d(self, weight: Var<'t>, bias: Option<Var<'t>>, stride: usize, pad: usize) -> Var<'t> {
        let x = self.value();
        let w = weight.value();
        assert_eq!(x.rank(), 5, "conv3d input must be [B, C, T, H, W], got {:?}", x.shape());
        assert_eq!(w.rank(), 5, "conv3d kernel must be rank 5");
        let geo = Geometry::new(x.shape(), w.shape(), stride, pad);
        let batch = x.dim(0);
        let co = w.dim(0);
        let k = geo.rows();
        let p = geo.to * geo.frame_cols();
        let buf_len = k * geo.t * geo.frame_cols();
        let bias_val = bias.map(|b| {
            let bv = b.value();
            assert_eq!(bv.shape(), &[co], "conv bias shape");
            bv
        });
        let taps = std::rc::Rc::new(split_taps(&w));

        let mut out = Tensor::zeros(&[batch, co, geo.to, geo.ho, geo.wo]);
        let mut buf = vec![0.0; buf_len];
        for b in 0..batch {
            geo.unfold(&x.data()[b * geo.in_len()..(b + 1) * geo.in_len()], &mut buf);
            let ob = &mut out.data_mut()[b * co * p..(b + 1) * co * p];
            if let Some(bv) = &bias_val {
                for (row, &bias) in ob.chunks_mut(p).zip(bv.data()) {
                    row.iter_mut().for_each(|v| *v = bias);
                }
            }
            for dt in 0..geo.kt {
                let wm = MatRef::row_major(&taps[dt * co * k..(dt + 1) * co * k], co, k);
                let beta = if dt == 0 && bias_val.is_none() { 0.0 } else { 1.0 };
                gemm(1.0, wm, geo.window(&buf, dt), beta, ob);
            }
        }

        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        let x_shape = x.shape().to_vec();
        let w_shape = w.shape().to_vec();
        self.tape().op(
            out,
            &parents,
            Box::new(move |g| {
                let mut dx = Tensor::zeros(&x_shape);
                let mut dtaps = vec![0.0; taps.len()];
                let mut buf = vec![0.0; buf_len];
                let mut dbuf = vec![0.0; buf_len];
                let cols = geo.t * geo.frame_cols();
                for b in 0..batch {
                    let gb = MatRef::row_major(&g.data()[b * co * p..(b + 1) * co * p], co, p);
                    geo.unfold(&x.data()[b * geo.in_len()..(b + 1) * geo.in_len()], &mut buf);
                    dbuf.iter_mut().for_each(|v| *v = 0.0);
                    for dt in 0..geo.kt {
                        gemm(1.0, gb, geo.window(&buf, dt).t(), 1.0, &mut dtaps[dt * co * k..(dt + 1) * co * k]);
                        let wm = MatRef::row_major(&taps[dt * co * k..(dt + 1) * co * k], co, k);
                        gemm_rs(1.0, wm.t(), gb, 1.0, &mut dbuf[dt * geo.frame_cols()..], cols);
                    }
                    geo.fold(&dbuf, &mut dx.data_mut()[b * geo.in_len()..(b + 1) * geo.in_len()]);
                }
                let mut grads = vec![Some(dx), Some(merge_taps(&dtaps, &w_shape))];
                if has_bias {
                    let mut db = Tensor::zeros(&[co]);
                    for b in 0..batch {
                        for (c, row) in g.data()[b * co * p..(b + 1) * co * p].chunks(p).enumerate() {
                            db.data_mut()[c] += row.iter().sum::<f64>();
                        }
                    }
                    grads.push(Some(db));
                }
                grads
            }),
        )
    }

    /// 2D convolution over `[B, Ci, H, W]` with kernel `[Co, Ci, kh, kw]`.
    pub fn conv2d(self, weight: Var<'t>, bias: Option<Var<'t>>, stride: usize, pad: usize) -> Var<'t> {
        let xs = self.shape();
        let ws = weight.shape();
        assert_eq!(xs.len(), 4, "conv2d input must be [B, C, H, W], got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d kernel must be rank 4");
        let x5 = self.reshape(&[xs[0], xs[1], 1, xs[2], xs[3]]);
        let w5 = weight.reshape(&[ws[0], ws[1], 1, ws[2], ws[3]]);
        let y = x5.conv3d(w5, bias, stride, pad);
        let ys = y.shape();
        y.reshape(&[ys[0], ys[1], ys[3], ys[4]])
    }

    /// Pads the time axis of `[B, C, T, H, W]` by mirroring frames (edge frame excluded).
    pub fn reflect_pad_time(self, pad: usize) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.rank(), 5);
        let (b, c, t, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4));
        if pad == 0 {
            return self;
        }
        assert!(t > pad, "reflection pad {pad} needs more than {pad} frames, got {t}");
        let tp = t + 2 * pad;
        let src: Vec<usize> = (0..tp)
            .map(|i| {
                let j = i as isize - pad as isize;
                if j < 0 {
                    (-j) as usize
                } else if j >= t as isize {
                    2 * (t - 1) - j as usize
                } else {
                    j as usize
                }
            })
            .collect();
        let hw = h * w;
        let mut out = Tensor::zeros(&[b, c, tp, h, w]);
        for bc in 0..b * c {
            for (i, &s) in src.iter().enumerate() {
                out.data_mut()[(bc * tp + i) * hw..(bc * tp + i + 1) * hw]
                    .copy_from_slice(&x.data()[(bc * t + s) * hw..(bc * t + s + 1) * hw]);
            }
        }
        let shape = x.shape().to_vec();
        self.tape().op(
            out,
            &[self],
            Box::new(move |g| {
                let mut dx = Tensor::zeros(&shape);
                for bc in 0..b * c {
                    for (i, &s) in src.iter().enumerate() {
                        let gsl = &g.data()[(bc * tp + i) * hw..(bc * tp + i + 1) * hw];
                        for (d, v) in dx.data_mut()[(bc * t + s) * hw..(bc * t + s + 1) * hw].iter_mut().zip(gsl) {
                            *d += v;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }
}
