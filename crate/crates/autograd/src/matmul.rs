use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Batched product `op(a) @ op(b)` over rank-3 tensors `[batch, rows, cols]`.
pub(crate) fn forward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    ta: bool,
    tb: bool,
) -> Result<Tensor<T>> {
    let (&[ba, ra, ca], &[bb, rb, cb]) = (a.shape(), b.shape()) else {
        return Err(Error::Shape(format!("bmm expects rank-3 operands, got {:?} and {:?}", a.shape(), b.shape())));
    };
    let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
    let (k2, n) = if tb { (cb, rb) } else { (rb, cb) };
    if ba != bb || k != k2 {
        return Err(Error::Shape(format!(
            "bmm operand mismatch: {:?}{} x {:?}{}",
            a.shape(),
            if ta { "^T" } else { "" },
            b.shape(),
            if tb { "^T" } else { "" }
        )));
    }
    let mut out = Tensor::zeros(&[ba, m, n]);
    for i in 0..ba {
        let am = mat(a, i, ta);
        let bm = mat(b, i, tb);
        gemm(am, bm, &mut out.data_mut()[i * m * n..(i + 1) * m * n], T::zero());
    }
    Ok(out)
}

fn mat<T: Scalar>(t: &Tensor<T>, i: usize, transposed: bool) -> MatRef<'_, T> {
    let (r, c) = (t.shape()[1], t.shape()[2]);
    let m = MatRef::new(&t.data()[i * r * c..(i + 1) * r * c], r, c);
    if transposed {
        m.t()
    } else {
        m
    }
}

pub(crate) fn backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    ta: bool,
    tb: bool,
    grad: &Tensor<T>,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let batch = a.shape()[0];
    let (m, n) = (grad.shape()[1], grad.shape()[2]);
    let mut da = need_a.then(|| Tensor::zeros(a.shape()));
    let mut db = need_b.then(|| Tensor::zeros(b.shape()));
    for i in 0..batch {
        let g = MatRef::new(&grad.data()[i * m * n..(i + 1) * m * n], m, n);
        let am = mat(a, i, ta);
        let bm = mat(b, i, tb);
        if let Some(da) = da.as_mut() {
            let len = a.shape()[1] * a.shape()[2];
            let out = &mut da.data_mut()[i * len..(i + 1) * len];
            // d op(a) = g @ op(b)^T; transpose back when a was read transposed.
            if ta {
                gemm(bm, g.t(), out, T::zero());
            } else {
                gemm(g, bm.t(), out, T::zero());
            }
        }
        if let Some(db) = db.as_mut() {
            let len = b.shape()[1] * b.shape()[2];
            let out = &mut db.data_mut()[i * len..(i + 1) * len];
            if tb {
                gemm(g.t(), am, out, T::zero());
            } else {
                gemm(am.t(), g, out, T::zero());
            }
        }
    }
    (da, db)
}
