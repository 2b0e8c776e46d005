//! Unpadded 2D convolution via im2col + GEMM. Padding is a separate op.

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], weight: &[usize], stride: usize) -> Result<Self> {
        let (&[n, c_in, h, w], &[c_out, wc, kh, kw]) = (x, weight) else {
            return Err(Error::Shape(format!("conv2d expects NCHW input and OIHW weight, got {x:?} and {weight:?}")));
        };
        if wc != c_in {
            return Err(Error::Shape(format!(
                "conv2d weight expects {wc} input channels, input has {c_in}"
            )));
        }
        if stride == 0 || kh > h || kw > w {
            return Err(Error::Shape(format!(
                "conv2d kernel {kh}x{kw} stride {stride} does not fit input {h}x{w}"
            )));
        }
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            ho: (h - kh) / stride + 1,
            wo: (w - kw) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let p = g.p();
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = oy * g.stride + ky;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let d = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        d.copy_from_slice(&src[kx..kx + g.wo]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = src[ox * g.stride + kx];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let p = g.p();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = oy * g.stride + ky;
                    let d = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let s = &src[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, &v) in s.iter().enumerate() {
                        d[ox * g.stride + kx] += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x.shape(), weight.shape(), stride)?;
    let (k, p) = (g.k(), g.p());
    let mut out = Tensor::zeros(&[g.n, g.c_out, g.ho, g.wo]);
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    let in_stride = g.c_in * g.h * g.w;
    let w = MatRef::new(weight.data(), g.c_out, k);
    for b in 0..g.n {
        let xb = &x.data()[b * in_stride..(b + 1) * in_stride];
        let cols_ref = if g.pointwise() {
            xb
        } else {
            im2col(&g, xb, &mut cols);
            &cols
        };
        let ob = &mut out.data_mut()[b * g.c_out * p..(b + 1) * g.c_out * p];
        gemm(w, MatRef::new(cols_ref, k, p), ob, T::zero());
    }
    Ok(out)
}

/// Gradients w.r.t. input and weight; either may be skipped.
pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    grad: &Tensor<T>,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let g = ConvGeom::new(x.shape(), weight.shape(), stride).expect("validated in forward");
    let (k, p) = (g.k(), g.p());
    let in_stride = g.c_in * g.h * g.w;
    let mut dx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_w.then(|| Tensor::zeros(weight.shape()));
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    let mut dcols = if g.pointwise() || !need_x { Vec::new() } else { vec![T::zero(); k * p] };
    let w = MatRef::new(weight.data(), g.c_out, k);
    for b in 0..g.n {
        let gb = MatRef::new(&grad.data()[b * g.c_out * p..(b + 1) * g.c_out * p], g.c_out, p);
        if let Some(dw) = dw.as_mut() {
            let xb = &x.data()[b * in_stride..(b + 1) * in_stride];
            let cols_ref = if g.pointwise() {
                xb
            } else {
                im2col(&g, xb, &mut cols);
                &cols
            };
            gemm(gb, MatRef::new(cols_ref, k, p).t(), dw.data_mut(), T::one());
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx.data_mut()[b * in_stride..(b + 1) * in_stride];
            if g.pointwise() {
                gemm(w.t(), gb, dxb, T::zero());
            } else {
                gemm(w.t(), gb, &mut dcols, T::zero());
                col2im(&g, &dcols, dxb);
            }
        }
    }
    (dx, dw)
}
