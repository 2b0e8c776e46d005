//! 2D FFT helpers over row-major real maps.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn transform(data: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
}

pub fn fft2(values: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
    let mut data: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    transform(&mut data, h, w, false);
    data
}

/// Real part of the normalized inverse transform.
pub fn ifft2_real(spectrum: &[Complex<f64>], h: usize, w: usize) -> Vec<f64> {
    let mut data = spectrum.to_vec();
    transform(&mut data, h, w, true);
    let scale = 1.0 / (h * w) as f64;
    data.iter().map(|c| c.re * scale).collect()
}

/// `|F(k)|^2` for every frequency bin, unshifted (DC at index 0).
pub fn power_spectrum(values: &[f64], h: usize, w: usize) -> Vec<f64> {
    fft2(values, h, w).iter().map(|c| c.norm_sqr()).collect()
}

/// Signed frequency of bin `k` out of `n`, in cycles per pixel (`-0.5..0.5`).
#[inline]
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    k / n as f64
}

/// Radial frequency of bin `(ky, kx)` in cycles per pixel; Nyquist is 0.5.
#[inline]
pub fn radial_frequency(ky: usize, kx: usize, h: usize, w: usize) -> f64 {
    bin_frequency(ky, h).hypot(bin_frequency(kx, w))
}

/// Total energy in bins whose radial frequency exceeds `cutoff`.
pub fn energy_above(values: &[f64], h: usize, w: usize, cutoff: f64) -> f64 {
    let power = power_spectrum(values, h, w);
    let mut total = 0.0;
    for ky in 0..h {
        for kx in 0..w {
            if radial_frequency(ky, kx, h, w) > cutoff {
                total += power[ky * w + kx];
            }
        }
    }
    total
}
