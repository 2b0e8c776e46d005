//! Procedural multi-octave textures for desk-scale training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::image::Image;
use crate::spectrum::{ifft2_real, radial_frequency};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub size: usize,
    pub octaves: usize,
    pub seed: u64,
    pub count: usize,
    /// Chroma field amplitude relative to the shared luminance field.
    pub color_amount: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { size: 32, octaves: 4, seed: 0, count: 1000, color_amount: 0.35 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 4 || self.octaves == 0 || self.count == 0 {
            return Err(validation("synthetic.size >= 4, synthetic.octaves >= 1 and synthetic.count >= 1 required"));
        }
        if !(0.0..=1.0).contains(&self.color_amount) {
            return Err(validation("synthetic.color_amount must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Finest band centre in cycles per pixel (half of Nyquist).
const FINEST_BAND: f64 = 0.25;
/// Band width in octaves (standard deviation of the log-frequency Gaussian).
const BAND_WIDTH: f64 = 0.45;

fn band_envelope(freq: f64, octaves: usize) -> f64 {
    if freq == 0.0 {
        return 0.0;
    }
    (0..octaves)
        .map(|o| {
            let centre = FINEST_BAND / (1u64 << o) as f64;
            let d = (freq / centre).log2() / BAND_WIDTH;
            (-0.5 * d * d).exp()
        })
        .sum()
}

fn noise_field(rng: &mut ChaCha8Rng, n: usize, octaves: usize) -> Vec<f64> {
    let spectrum: Vec<Complex<f64>> = (0..n * n)
        .map(|i| {
            let amp = band_envelope(radial_frequency(i / n, i % n, n, n), octaves);
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex::new(re * amp, im * amp)
        })
        .collect();
    let field = ifft2_real(&spectrum, n, n);
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let std = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / field.len() as f64).sqrt();
    field.iter().map(|v| (v - mean) / std.max(1e-12)).collect()
}

/// Band-limited RGB noise in `[0, 1]`; octave bands are centred at
/// `Nyquist/2, Nyquist/4, ...`. Deterministic in `(seed, index)`.
pub fn synth_texture(config: &SynthConfig, index: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    let n = config.size;
    let luma = noise_field(&mut rng, n, config.octaves);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.35..0.65));
    let mut img = Image::new(n, n, 3);
    for (c, &offset) in base.iter().enumerate() {
        let chroma = noise_field(&mut rng, n, config.octaves);
        let plane = img.plane_mut(c);
        for (i, v) in plane.iter_mut().enumerate() {
            let s = luma[i] + config.color_amount * chroma[i];
            *v = (offset + 0.12 * s).clamp(0.0, 1.0) as f32;
        }
    }
    img
}
