use crate::tape::Var;
use crate::tensor::Tensor;

/// Strided matrix view: element (i, j) lives at `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols);
        Self { data, rows, cols, rs: cols as isize, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }
}

/// `c = alpha * a @ b + beta * c`, with `c` row-major `[a.rows, b.cols]`.
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    gemm_rs(alpha, a, b, beta, c, b.cols);
}

/// As [`gemm`], with output rows `rsc` elements apart.
pub fn gemm_rs(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64], rsc: usize) {
    assert_eq!(a.cols, b.rows, "gemm inner dims");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(rsc >= n && (m == 0 || c.len() >= (m - 1) * rsc + n), "gemm output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for v in &mut c[i * rsc..i * rsc + n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: the input views were bounds-checked on construction and `c` was checked
    // to hold m rows of n elements at stride rsc.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

impl<'t> Var<'t> {
    /// `[M, K] @ [K, N]`.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        assert!(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 operands");
        let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
        let mut out = Tensor::zeros(&[m, n]);
        gemm(1.0, MatRef::row_major(a.data(), m, k), MatRef::row_major(b.data(), k, n), 0.0, out.data_mut());
        self.tape().op(
            out,
            &[self, other],
            Box::new(move |g| {
                let gm = MatRef::row_major(g.data(), m, n);
                let mut da = Tensor::zeros(&[m, k]);
                gemm(1.0, gm, MatRef::row_major(b.data(), k, n).t(), 0.0, da.data_mut());
                let mut db = Tensor::zeros(&[k, n]);
                gemm(1.0, MatRef::row_major(a.data(), m, k).t(), gm, 0.0, db.data_mut());
                vec![Some(da), Some(db)]
            }),
        )
    }

    /// Fully connected layer: `x [B, I]`, `weight [O, I]`, `bias [O]` → `[B, O]`.
    pub fn linear(self, weight: Var<'t>, bias: Var<'t>) -> Var<'t> {
        let x = self.value();
        let w = weight.value();
        let bv = bias.value();
        let (batch, inp) = (x.dim(0), x.dim(1));
        let outp = w.dim(0);
        assert_eq!(w.dim(1), inp, "linear weight {:?} vs input {:?}", w.shape(), x.shape());
        assert_eq!(bv.shape(), &[outp]);
        let mut out = Tensor::zeros(&[batch, outp]);
        for row in out.data_mut().chunks_mut(outp) {
            row.copy_from_slice(bv.data());
        }
        gemm(1.0, MatRef::row_major(x.data(), batch, inp), MatRef::row_major(w.data(), outp, inp).t(), 1.0, out.data_mut());
        self.tape().op(
            out,
            &[self, weight, bias],
            Box::new(move |g| {
                let gm = MatRef::row_major(g.data(), batch, outp);
                let mut dx = Tensor::zeros(&[batch, inp]);
                gemm(1.0, gm, MatRef::row_major(w.data(), outp, inp), 0.0, dx.data_mut());
                let mut dw = Tensor::zeros(&[outp, inp]);
                gemm(1.0, gm.t(), MatRef::row_major(x.data(), batch, inp), 0.0, dw.data_mut());
                let mut db = Tensor::zeros(&[outp]);
                for row in g.data().chunks(outp) {
                    for (d, v) in db.data_mut().iter_mut().zip(row) {
                        *d += v;
                    }
                }
                vec![Some(dx), Some(dw), Some(db)]
            }),
        )
    }
}
