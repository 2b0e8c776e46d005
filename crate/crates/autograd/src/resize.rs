use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Nearest-neighbour upsampling by an integer factor on both spatial axes.
pub(crate) fn upsample_forward<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if factor == 0 {
        return Err(Error::Invalid("upsample factor must be positive".into()));
    }
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let src = x.data();
    for (plane, dst) in out.data_mut().chunks_exact_mut(ho * wo).enumerate() {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        for i in 0..ho {
            let row = &s[(i / factor) * w..(i / factor + 1) * w];
            for (j, d) in dst[i * wo..(i + 1) * wo].iter_mut().enumerate() {
                *d = row[j / factor];
            }
        }
    }
    Ok(out)
}

pub(crate) fn upsample_backward<T: Scalar>(
    grad: &Tensor<T>,
    in_shape: &[usize],
    factor: usize,
) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Tensor::zeros(in_shape);
    let g = grad.data();
    for (plane, dst) in out.data_mut().chunks_exact_mut(h * w).enumerate() {
        let gs = &g[plane * ho * wo..(plane + 1) * ho * wo];
        for i in 0..ho {
            for j in 0..wo {
                dst[(i / factor) * w + j / factor] += gs[i * wo + j];
            }
        }
    }
    out
}
