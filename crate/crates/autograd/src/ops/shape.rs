use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t> Var<'t> {
    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let x = self.value();
        let old = x.shape().to_vec();
        let out = (*x).clone().reshape(shape);
        self.tape().op(out, &[self], Box::new(move |g| vec![Some(g.clone().reshape(&old))]))
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert!(start + len <= shape[axis], "slice {start}+{len} out of range for axis {axis} of {shape:?}");
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        self.tape().op(
            Tensor::from_vec(data, &out_shape),
            &[self],
            Box::new(move |g| {
                let mut dx = Tensor::zeros(&shape);
                let d = dx.data_mut();
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    d[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Index `i` along `axis`, dropping that axis.
    pub fn select(self, axis: usize, i: usize) -> Var<'t> {
        let mut shape = self.shape();
        shape.remove(axis);
        self.slice(axis, i, 1).reshape(&shape)
    }
}

/// Concatenates along `axis`; all other dims must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Var<'t> {
    assert!(!parts.is_empty(), "concat of nothing");
    let tape: &'t Tape = parts[0].tape();
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let first = values[0].shape().to_vec();
    let lens: Vec<usize> = values
        .iter()
        .map(|v| {
            let s = v.shape();
            assert!(
                s.len() == first.len() && s[..axis] == first[..axis] && s[axis + 1..] == first[axis + 1..],
                "concat shape mismatch on axis {axis}: {first:?} vs {s:?}"
            );
            s[axis]
        })
        .collect();
    let total: usize = lens.iter().sum();
    let (outer, _, inner) = split_at_axis(&first, axis);
    let mut out_shape = first.clone();
    out_shape[axis] = total;
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &len) in values.iter().zip(&lens) {
            data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    tape.op(
        Tensor::from_vec(data, &out_shape),
        parts,
        Box::new(move |g| {
            let mut grads: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
            let gd = g.data();
            let mut cursor = 0;
            for o in 0..outer {
                for (gr, &len) in grads.iter_mut().zip(&lens) {
                    let chunk = len * inner;
                    gr.data_mut()[o * chunk..(o + 1) * chunk].copy_from_slice(&gd[cursor..cursor + chunk]);
                    cursor += chunk;
                }
            }
            grads.into_iter().map(Some).collect()
        }),
    )
}

/// Stacks equally-shaped vars along a new axis.
pub fn stack<'t>(parts: &[Var<'t>], axis: usize) -> Var<'t> {
    let expanded: Vec<Var<'t>> = parts
        .iter()
        .map(|p| {
            let mut s = p.shape();
            s.insert(axis, 1);
            p.reshape(&s)
        })
        .collect();
    concat(&expanded, axis)
}
