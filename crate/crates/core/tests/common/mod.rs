//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vivat_autograd::Tensor;
use vivat_core::model::ParamStore;
use vivat_core::Image;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_tensor(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| normal(rng) * std).collect()).unwrap()
}

pub fn uniform_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn random_image(w: usize, h: usize, c: usize, rng: &mut ChaCha8Rng) -> Image {
    let data = (0..w * h * c).map(|_| rng.random::<f32>()).collect();
    Image::from_planar(w, h, c, data).unwrap()
}

/// Replaces every parameter with `N(0, std^2)` so zero-initialised paths carry gradient.
pub fn randomize(store: &mut ParamStore<f64>, std: f64, seed: u64) {
    let mut r = rng(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = normal(&mut r) * std;
        }
    }
}

pub fn params_as_tensors(store: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    store.iter().map(|(_, t)| t.clone()).collect()
}

/// Monte-Carlo `E_q[log q(z) - log p(z)]` for one diagonal Gaussian, `p = N(0, I)`.
pub fn mc_kl(mu: &[f64], logvar: &[f64], samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut acc = 0.0;
    for _ in 0..samples {
        let mut s = 0.0;
        for (&m, &lv) in mu.iter().zip(logvar) {
            let eps = normal(rng);
            let z = m + (0.5 * lv).exp() * eps;
            // log q - log p per dimension; the 2*pi terms cancel.
            s += -0.5 * eps * eps - 0.5 * lv + 0.5 * z * z;
        }
        acc += s;
    }
    acc / samples as f64
}

/// Direct convolution of an `[N, C, H, W]` buffer; `reflect` mirrors without repeating the edge.
pub fn naive_conv(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &Tensor<f64>,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    reflect: bool,
) -> (Vec<f64>, (usize, usize, usize, usize)) {
    let s = weight.shape();
    let (co, k) = (s[0], s[2]);
    assert_eq!(s[1], c);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let sample = |b: usize, ch: usize, y: isize, xx: isize| -> f64 {
        let fix = |i: isize, len: usize| -> Option<usize> {
            if (0..len as isize).contains(&i) {
                Some(i as usize)
            } else if reflect {
                let r = if i < 0 { -i } else { 2 * (len as isize - 1) - i };
                Some(r as usize)
            } else {
                None
            }
        };
        match (fix(y, h), fix(xx, w)) {
            (Some(y), Some(xx)) => x[((b * c + ch) * h + y) * w + xx],
            _ => 0.0,
        }
    };
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |bv| bv[o]);
                    for ch in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                acc += weight.data()[((o * c + ch) * k + ky) * k + kx] * sample(b, ch, iy, ix);
                            }
                        }
                    }
                    out[((b * co + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    (out, (n, co, oh, ow))
}

pub fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

/// Reference SSIM: explicit 2-D Gaussian weights per window, moments computed in one pass.
pub fn ssim_direct(x: &Image, y: &Image, window: usize, sigma: f64, max_value: f64) -> f64 {
    let (h, w, c) = x.dims();
    let half = (window as f64 - 1.0) / 2.0;
    let mut kernel = vec![0.0; window * window];
    for i in 0..window {
        for j in 0..window {
            let (dy, dx) = (i as f64 - half, j as f64 - half);
            kernel[i * window + j] = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
        }
    }
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= norm);
    let (c1, c2) = ((0.01 * max_value).powi(2), (0.03 * max_value).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for ch in 0..c {
        for y0 in 0..=h - window {
            for x0 in 0..=w - window {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..window {
                    for j in 0..window {
                        let k = kernel[i * window + j];
                        let a = x.get(ch, y0 + i, x0 + j) as f64;
                        let b = y.get(ch, y0 + i, x0 + j) as f64;
                        mx += k * a;
                        my += k * b;
                        sxx += k * a * a;
                        syy += k * b * b;
                        sxy += k * a * b;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

pub fn psnr_direct(x: &Image, y: &Image) -> f64 {
    let mut se = 0.0;
    for (a, b) in x.data().iter().zip(y.data()) {
        se += (*a as f64 - *b as f64) * (*a as f64 - *b as f64);
    }
    let mse = se / x.data().len() as f64;
    (10.0 * (1.0 / mse).log10()).min(100.0)
}

/// Adds `N(0, std^2)` noise and clamps to `[0, 1]`.
pub fn jitter(x: &Image, std: f64, rng: &mut ChaCha8Rng) -> Image {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = (*v as f64 + std * normal(rng)).clamp(0.0, 1.0) as f32;
    }
    y
}

/// Adds a one-pixel mesh of period `period` (offset by `phase`) with the given amplitude.
pub fn inject_grid(x: &Image, period: usize, amplitude: f32, phase: (usize, usize)) -> Image {
    let (h, w, c) = x.dims();
    Image::from_fn(w, h, c, |ch, y, xx| {
        let on = (y + phase.0) % period == 0 || (xx + phase.1) % period == 0;
        (x.get(ch, y, xx) + if on { amplitude } else { 0.0 }).clamp(0.0, 1.0)
    })
}

/// Brightens a `size x size` square whose top-left corner is `at`.
pub fn inject_spot(x: &Image, size: usize, amplitude: f32, at: (usize, usize)) -> Image {
    let (h, w, c) = x.dims();
    Image::from_fn(w, h, c, |ch, y, xx| {
        let inside = (at.0..at.0 + size).contains(&y) && (at.1..at.1 + size).contains(&xx);
        (x.get(ch, y, xx) + if inside { amplitude } else { 0.0 }).clamp(0.0, 1.0)
    })
}
