//! Pixel-space detectors for the five reconstruction artifact classes.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::image::Image;
use crate::spectrum::{bin_frequency, energy_above, power_spectrum};

/// Upper bound for unbounded ratios.
pub const RATIO_CAP: f64 = 1e6;

fn residual_luma(x: &Image, xhat: &Image) -> Result<Vec<f64>> {
    x.ensure_same_dims(xhat)?;
    Ok(xhat.luma().iter().zip(x.luma()).map(|(a, b)| a - b).collect())
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorShift {
    /// `mean(xhat_c) - mean(x_c)` per channel.
    pub shift: Vec<f64>,
    pub dominant_channel: usize,
    pub score: f64,
    pub threshold: f64,
    pub flag: bool,
}

pub fn detect_color_shift(x: &Image, xhat: &Image, threshold: f64) -> Result<ColorShift> {
    x.ensure_same_dims(xhat)?;
    let n = (x.width() * x.height()) as f64;
    let shift: Vec<f64> = (0..x.channels())
        .map(|c| {
            let a: f64 = x.plane(c).iter().map(|&v| v as f64).sum();
            let b: f64 = xhat.plane(c).iter().map(|&v| v as f64).sum();
            (b - a) / n
        })
        .collect();
    let (dominant_channel, score) = shift
        .iter()
        .map(|s| s.abs())
        .enumerate()
        .fold((0, 0.0), |best, (i, s)| if s > best.1 { (i, s) } else { best });
    Ok(ColorShift { shift, dominant_channel, score, threshold, flag: score > threshold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Peak lattice-harmonic energy over the median off-lattice energy.
    pub score: f64,
    /// Spatial period (pixels) of the strongest harmonic, if any energy is present.
    pub period: Option<f64>,
    pub threshold: f64,
    pub flag: bool,
}

/// Periodic-mesh detector on the luma residual, probing the harmonics of period `f`.
pub fn detect_grid(x: &Image, xhat: &Image, f: usize, threshold: f64) -> Result<Grid> {
    let (h, w, _) = x.dims();
    if f == 0 || h < 2 * f || w < 2 * f {
        return Err(validation(format!("grid detector needs images of at least {0}x{0}", 2 * f)));
    }
    let r = residual_luma(x, xhat)?;
    let power = power_spectrum(&r, h, w);
    // Lattice harmonics of period f, including axis harmonics, excluding DC.
    let step_y = h as f64 / f as f64;
    let step_x = w as f64 / f as f64;
    let mut on_lattice = vec![false; h * w];
    let mut peak = (0.0f64, None::<(usize, usize)>);
    for i in 0..f {
        for j in 0..f {
            if i == 0 && j == 0 {
                continue;
            }
            let cy = (i as f64 * step_y).round() as isize;
            let cx = (j as f64 * step_x).round() as isize;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let ky = (cy + dy).rem_euclid(h as isize) as usize;
                    let kx = (cx + dx).rem_euclid(w as isize) as usize;
                    if ky == 0 && kx == 0 {
                        continue;
                    }
                    on_lattice[ky * w + kx] = true;
                    let e = power[ky * w + kx];
                    if e > peak.0 {
                        peak = (e, Some((cy as usize % h, cx as usize % w)));
                    }
                }
            }
        }
    }
    let mut off: Vec<f64> = (0..h * w).filter(|&k| k != 0 && !on_lattice[k]).map(|k| power[k]).collect();
    let med = median(&mut off);
    let score = if peak.0 == 0.0 {
        0.0
    } else if med == 0.0 {
        RATIO_CAP
    } else {
        (peak.0 / med).min(RATIO_CAP)
    };
    let period = peak.1.map(|(ky, kx)| {
        let fr = bin_frequency(ky, h).abs().max(bin_frequency(kx, w).abs());
        1.0 / fr
    });
    Ok(Grid { score, period, threshold, flag: score > threshold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blur {
    /// High-frequency energy of the reconstruction over that of the input; `None` when undefined.
    pub ratio: Option<f64>,
    pub cutoff: f64,
    pub threshold: f64,
    pub flag: bool,
    pub note: Option<String>,
}

/// Energy above `cutoff` cycles/pixel in the luma of `xhat` relative to `x`.
pub fn blur_ratio(x: &Image, xhat: &Image, cutoff: f64) -> Result<f64> {
    x.ensure_same_dims(xhat)?;
    let (h, w, _) = x.dims();
    let ex = energy_above(&x.luma(), h, w, cutoff);
    if ex <= 0.0 {
        return Err(Error::NotApplicable("input has no energy above the blur cutoff".into()));
    }
    Ok(energy_above(&xhat.luma(), h, w, cutoff) / ex)
}

pub fn detect_blur(x: &Image, xhat: &Image, cutoff: f64, threshold: f64) -> Result<Blur> {
    match blur_ratio(x, xhat, cutoff) {
        Ok(ratio) => Ok(Blur { ratio: Some(ratio), cutoff, threshold, flag: ratio < threshold, note: None }),
        Err(Error::NotApplicable(msg)) => Ok(Blur { ratio: None, cutoff, threshold, flag: false, note: Some(msg) }),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corner {
    /// Mean |r| in the border frame over mean |r| in the interior.
    pub ratio: f64,
    pub band: usize,
    pub threshold: f64,
    pub flag: bool,
}

/// `num / den` with the zero-residual convention and the ratio cap.
pub fn capped_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            1.0
        } else {
            RATIO_CAP
        }
    } else {
        (num / den).min(RATIO_CAP)
    }
}

pub fn detect_corner(x: &Image, xhat: &Image, band: usize, threshold: f64) -> Result<Corner> {
    x.ensure_same_dims(xhat)?;
    let (h, w, c) = x.dims();
    if band == 0 || 4 * band >= h.min(w) {
        return Err(validation(format!("corner band {band} must be positive and below a quarter of {w}x{h}")));
    }
    let (mut border, mut nb, mut interior, mut ni) = (0.0, 0usize, 0.0, 0usize);
    for ch in 0..c {
        let (a, b) = (x.plane(ch), xhat.plane(ch));
        for y in 0..h {
            for xx in 0..w {
                let r = (b[y * w + xx] as f64 - a[y * w + xx] as f64).abs();
                let edge = y < band || xx < band || y >= h - band || xx >= w - band;
                if edge {
                    border += r;
                    nb += 1;
                } else {
                    interior += r;
                    ni += 1;
                }
            }
        }
    }
    let ratio = capped_ratio(border / nb as f64, interior / ni as f64);
    Ok(Corner { ratio, band, threshold, flag: ratio > threshold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Droplet {
    /// Maximum robust z-score of window-mean |r| (clamped at 0).
    pub score: f64,
    /// `(y, x)` centre of the highest-scoring window.
    pub location: (usize, usize),
    pub window: usize,
    pub threshold: f64,
    pub flag: bool,
    /// Set when the median absolute deviation vanished and mean/std scoring was used.
    pub fallback: bool,
}

const MAD_SCALE: f64 = 1.4826;

pub fn detect_droplet(x: &Image, xhat: &Image, window: usize, threshold: f64) -> Result<Droplet> {
    x.ensure_same_dims(xhat)?;
    let (h, w, c) = x.dims();
    if window == 0 || window > h || window > w {
        return Err(validation(format!("droplet window {window} does not fit a {w}x{h} image")));
    }
    let mut abs_r = vec![0.0f64; h * w];
    for ch in 0..c {
        for (i, (a, b)) in x.plane(ch).iter().zip(xhat.plane(ch)).enumerate() {
            abs_r[i] += (*b as f64 - *a as f64).abs() / c as f64;
        }
    }
    // Summed-area table for window means.
    let mut sat = vec![0.0f64; (h + 1) * (w + 1)];
    for y in 0..h {
        for xx in 0..w {
            sat[(y + 1) * (w + 1) + xx + 1] =
                abs_r[y * w + xx] + sat[y * (w + 1) + xx + 1] + sat[(y + 1) * (w + 1) + xx] - sat[y * (w + 1) + xx];
        }
    }
    let (oh, ow) = (h - window + 1, w - window + 1);
    let area = (window * window) as f64;
    let means: Vec<f64> = (0..oh * ow)
        .map(|k| {
            let (y, xx) = (k / ow, k % ow);
            let (y1, x1) = (y + window, xx + window);
            (sat[y1 * (w + 1) + x1] - sat[y * (w + 1) + x1] - sat[y1 * (w + 1) + xx] + sat[y * (w + 1) + xx]) / area
        })
        .collect();
    let (argmax, max) = means
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    let mut sorted = means.clone();
    let med = median(&mut sorted);
    let mut dev: Vec<f64> = means.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev) * MAD_SCALE;
    let (z, fallback) = if mad > 0.0 {
        ((max - med) / mad, false)
    } else if max > med {
        let n = means.len() as f64;
        let mean = means.iter().sum::<f64>() / n;
        let std = (means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        (if std > 0.0 { (max - mean) / std } else { 0.0 }, true)
    } else {
        (0.0, false)
    };
    let score = z.max(0.0).min(RATIO_CAP);
    let location = (argmax / ow + window / 2, argmax % ow + window / 2);
    Ok(Droplet { score, location, window, threshold, flag: score > threshold, fallback })
}
