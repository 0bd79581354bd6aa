use std::rc::Rc;

use crate::tape::Var;
use crate::tensor::Tensor;

/// Broadcast shape for a `[B, 1, S...]` mask against `[B, C, S...]`.
fn mask_layout(x: &[usize], mask: &[usize]) -> (usize, usize, usize) {
    assert!(x.len() >= 2 && mask.len() == x.len(), "mask rank mismatch: {x:?} vs {mask:?}");
    assert!(mask[0] == x[0] && mask[1] == 1 && mask[2..] == x[2..], "mask {mask:?} does not broadcast to {x:?}");
    let spatial: usize = x[2..].iter().product();
    (x[0], x[1], spatial)
}

impl<'t> Var<'t> {
    fn unary(self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var<'t> {
        let x = self.value();
        let y = Rc::new(x.map(f));
        let y_out = (*y).clone();
        self.tape().op(
            y_out,
            &[self],
            Box::new(move |g| {
                let mut dx = g.clone();
                for ((d, &xi), &yi) in dx.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *d *= df(xi, yi);
                }
                vec![Some(dx)]
            }),
        )
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let out = self.value().zip_map(&other.value(), |a, b| a + b);
        self.tape().op(out, &[self, other], Box::new(|g| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let out = self.value().zip_map(&other.value(), |a, b| a - b);
        self.tape().op(out, &[self, other], Box::new(|g| vec![Some(g.clone()), Some(g.scale(-1.0))]))
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let out = a.zip_map(&b, |x, y| x * y);
        self.tape().op(
            out,
            &[self, other],
            Box::new(move |g| vec![Some(g.zip_map(&b, |gi, bi| gi * bi)), Some(g.zip_map(&a, |gi, ai| gi * ai))]),
        )
    }

    pub fn add_scalar(self, k: f64) -> Var<'t> {
        let out = self.value().map(|v| v + k);
        self.tape().op(out, &[self], Box::new(|g| vec![Some(g.clone())]))
    }

    pub fn mul_scalar(self, k: f64) -> Var<'t> {
        let out = self.value().scale(k);
        self.tape().op(out, &[self], Box::new(move |g| vec![Some(g.scale(k))]))
    }

    pub fn neg(self) -> Var<'t> {
        self.mul_scalar(-1.0)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(
            move |v| if v > 0.0 { v } else { slope * v },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(self) -> Var<'t> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(f64::abs, |x, _| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
    }

    pub fn sqr(self) -> Var<'t> {
        self.unary(|v| v * v, |x, _| 2.0 * x)
    }

    /// Clamp to `[lo, hi]`; gradient is zero outside the range.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(move |v| v.clamp(lo, hi), move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 })
    }

    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape().op(
            Tensor::scalar(x.sum()),
            &[self],
            Box::new(move |g| vec![Some(Tensor::full(&shape, g.data()[0]))]),
        )
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// `x * m` where `m` is a constant `[B, 1, S...]` multiplier broadcast over channels.
    pub fn mul_broadcast_channels(self, m: &Tensor) -> Var<'t> {
        let x = self.value();
        let (b, c, s) = mask_layout(x.shape(), m.shape());
        let m = Rc::new(m.clone());
        let apply = {
            let m = m.clone();
            move |t: &Tensor| {
                let mut out = t.clone();
                let data = out.data_mut();
                for bi in 0..b {
                    let mrow = &m.data()[bi * s..(bi + 1) * s];
                    for ci in 0..c {
                        let off = (bi * c + ci) * s;
                        for (v, &mv) in data[off..off + s].iter_mut().zip(mrow) {
                            *v *= mv;
                        }
                    }
                }
                out
            }
        };
        let out = apply(&x);
        self.tape().op(out, &[self], Box::new(move |g| vec![Some(apply(g))]))
    }

    /// Picks `self` where the constant `[B, 1, S...]` mask is non-zero, `other` elsewhere.
    pub fn select_where(self, mask: &Tensor, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let bval = other.value();
        assert_eq!(a.shape(), bval.shape(), "select_where operand shapes differ");
        let (b, c, s) = mask_layout(a.shape(), mask.shape());
        let mask = Rc::new(mask.clone());
        let split = move |t: &Tensor, take_mask: bool| {
            let mut out = t.clone();
            let data = out.data_mut();
            for bi in 0..b {
                let mrow = &mask.data()[bi * s..(bi + 1) * s];
                for ci in 0..c {
                    let off = (bi * c + ci) * s;
                    for (v, &mv) in data[off..off + s].iter_mut().zip(mrow) {
                        if (mv != 0.0) != take_mask {
                            *v = 0.0;
                        }
                    }
                }
            }
            out
        };
        let mut out = split(&a, true);
        out.add_assign(&split(&bval, false));
        self.tape().op(
            out,
            &[self, other],
            Box::new(move |g| vec![Some(split(g, true)), Some(split(g, false))]),
        )
    }

    /// Mean squared error against another var of the same shape.
    pub fn mse(self, target: Var<'t>) -> Var<'t> {
        self.sub(target).sqr().mean()
    }

    /// Mean absolute error against another var of the same shape.
    pub fn mae(self, target: Var<'t>) -> Var<'t> {
        self.sub(target).abs().mean()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
