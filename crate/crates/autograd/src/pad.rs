use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Border extension used before a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PadMode {
    Zero,
    /// Mirror about the edge sample without repeating it: `[1,2,3]` -> `[2,1,2,3,2]`.
    Reflect,
}

/// Source index for padded coordinate `i` (may be negative), or `None` for a zero fill.
#[inline]
pub fn source_index(i: isize, n: usize, mode: PadMode) -> Option<usize> {
    let n = n as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Reflect => {
            let r = if i < 0 { -i } else { 2 * (n - 1) - i };
            debug_assert!((0..n).contains(&r));
            Some(r as usize)
        }
    }
}

pub fn check(h: usize, w: usize, width: usize, mode: PadMode) -> Result<()> {
    if mode == PadMode::Reflect && (width >= h || width >= w) {
        return Err(Error::Invalid(format!(
            "reflect padding width {width} must be smaller than spatial dims {h}x{w}"
        )));
    }
    Ok(())
}

pub fn forward<T: Scalar>(x: &Tensor<T>, width: usize, mode: PadMode) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    check(h, w, width, mode)?;
    let (ho, wo) = (h + 2 * width, w + 2 * width);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let src = x.data();
    let dst = out.data_mut();
    let rows: Vec<Option<usize>> =
        (0..ho).map(|i| source_index(i as isize - width as isize, h, mode)).collect();
    let cols: Vec<Option<usize>> =
        (0..wo).map(|j| source_index(j as isize - width as isize, w, mode)).collect();
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut dst[plane * ho * wo..(plane + 1) * ho * wo];
        for (i, ri) in rows.iter().enumerate() {
            let Some(ri) = ri else { continue };
            for (j, cj) in cols.iter().enumerate() {
                if let Some(cj) = cj {
                    d[i * wo + j] = s[ri * w + cj];
                }
            }
        }
    }
    Ok(out)
}

pub fn backward<T: Scalar>(
    grad: &Tensor<T>,
    in_shape: &[usize],
    width: usize,
    mode: PadMode,
) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (ho, wo) = (h + 2 * width, w + 2 * width);
    let planes = in_shape[0] * in_shape[1];
    let mut out = Tensor::zeros(in_shape);
    let g = grad.data();
    let d = out.data_mut();
    let rows: Vec<Option<usize>> =
        (0..ho).map(|i| source_index(i as isize - width as isize, h, mode)).collect();
    let cols: Vec<Option<usize>> =
        (0..wo).map(|j| source_index(j as isize - width as isize, w, mode)).collect();
    for plane in 0..planes {
        let gs = &g[plane * ho * wo..(plane + 1) * ho * wo];
        let ds = &mut d[plane * h * w..(plane + 1) * h * w];
        for (i, ri) in rows.iter().enumerate() {
            let Some(ri) = ri else { continue };
            for (j, cj) in cols.iter().enumerate() {
                if let Some(cj) = cj {
                    ds[ri * w + cj] += gs[i * wo + j];
                }
            }
        }
    }
    out
}
