use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-(sample, group) statistics saved for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct GroupStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn forward<T: Scalar>(
    x: &Tensor<T>,
    groups: usize,
    eps: f64,
) -> Result<(Tensor<T>, GroupStats<T>)> {
    let (n, c, h, w) = x.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Shape(format!("{groups} groups do not divide {c} channels")));
    }
    let len = (c / groups) * h * w;
    let inv_len = T::one() / T::lit(len as f64);
    let eps = T::lit(eps);
    let mut out = Tensor::zeros(x.shape());
    let mut stats = GroupStats { mean: Vec::with_capacity(n * groups), rstd: Vec::with_capacity(n * groups) };
    for (src, dst) in x.data().chunks_exact(len).zip(out.data_mut().chunks_exact_mut(len)) {
        let mean = src.iter().copied().sum::<T>() * inv_len;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_len;
        let rstd = T::one() / (var + eps).sqrt();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * rstd;
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    Ok((out, stats))
}

pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    stats: &GroupStats<T>,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let len = x.numel() / stats.mean.len();
    let inv_len = T::one() / T::lit(len as f64);
    let mut dx = Tensor::zeros(x.shape());
    let chunks = x
        .data()
        .chunks_exact(len)
        .zip(grad.data().chunks_exact(len))
        .zip(dx.data_mut().chunks_exact_mut(len));
    for (i, ((xs, gs), ds)) in chunks.enumerate() {
        let (mean, rstd) = (stats.mean[i], stats.rstd[i]);
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for (&xv, &gv) in xs.iter().zip(gs) {
            sum_g += gv;
            sum_gx += gv * (xv - mean) * rstd;
        }
        let mean_g = sum_g * inv_len;
        let mean_gx = sum_gx * inv_len;
        for ((d, &xv), &gv) in ds.iter_mut().zip(xs).zip(gs) {
            let xhat = (xv - mean) * rstd;
            *d = rstd * (gv - mean_g - xhat * mean_gx);
        }
    }
    dx
}
