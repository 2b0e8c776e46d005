//! Preprocessing (proportional resize, then crop), synthetic textures and datasets.

mod dataset;
mod resize;
mod synth;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{Dataset, DatasetSource};
pub use resize::{cubic_kernel, resize, resize_proportional, ResizeFilter};
pub use synth::{synth_texture, SynthConfig};

use crate::error::{validation, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    #[default]
    Random,
    Center,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSpec {
    pub intermediate_short_side: usize,
    pub crop_size: usize,
    pub resize_filter: ResizeFilter,
    pub crop_mode: CropMode,
    /// Ablation only: crop at the final size first, then resize.
    pub crop_before_resize: bool,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            intermediate_short_side: 480,
            crop_size: 240,
            resize_filter: ResizeFilter::Bicubic,
            crop_mode: CropMode::Random,
            crop_before_resize: false,
        }
    }
}

impl PreprocessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 || self.intermediate_short_side == 0 {
            return Err(validation("preprocess sizes must be positive"));
        }
        if self.crop_size > self.intermediate_short_side {
            return Err(validation(format!(
                "preprocess.crop_size {} exceeds preprocess.intermediate_short_side {}",
                self.crop_size, self.intermediate_short_side
            )));
        }
        Ok(())
    }
}

/// `size x size` patch; center offsets are floored.
pub fn crop(img: &Image, size: usize, mode: CropMode, rng: &mut impl Rng) -> Result<Image> {
    let (h, w, c) = img.dims();
    if size == 0 || h < size || w < size {
        return Err(validation(format!("cannot crop {size}x{size} from a {w}x{h} image")));
    }
    let (ox, oy) = match mode {
        CropMode::Center => ((w - size) / 2, (h - size) / 2),
        CropMode::Random => (rng.random_range(0..=w - size), rng.random_range(0..=h - size)),
    };
    crop_at(img, ox, oy, size, c)
}

fn crop_at(img: &Image, ox: usize, oy: usize, size: usize, c: usize) -> Result<Image> {
    if (ox, oy) == (0, 0) && img.width() == size && img.height() == size {
        return Ok(img.clone());
    }
    Ok(Image::from_fn(size, size, c, |ch, y, x| img.get(ch, y + oy, x + ox)))
}

/// Resize so the short side is `intermediate_short_side`, then crop.
pub fn preprocess(img: &Image, spec: &PreprocessSpec, rng: &mut impl Rng) -> Result<Image> {
    spec.validate()?;
    if spec.crop_before_resize {
        let short = img.width().min(img.height());
        let region = (spec.crop_size as f64 * short as f64 / spec.intermediate_short_side as f64).round() as usize;
        let patch = crop(img, region.clamp(1, short), spec.crop_mode, rng)?;
        return resize(&patch, spec.crop_size, spec.crop_size, spec.resize_filter);
    }
    let resized = resize_proportional(img, spec.intermediate_short_side, spec.resize_filter)?;
    crop(&resized, spec.crop_size, spec.crop_mode, rng).map(|i| i.clamped())
}

/// Separable Gaussian blur with reflected borders; kernel radius `ceil(3 sigma)`.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0) {
        return Err(validation("blur sigma must be positive"));
    }
    let (h, w, c) = img.dims();
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i.rem_euclid(period);
        (if m < n { m } else { period - m }) as usize
    };
    let mut out = Image::new(w, h, c);
    let mut tmp = vec![0.0f64; h * w];
    for ch in 0..c {
        let src = img.plane(ch);
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * src[y * w + reflect(x as isize + k as isize - radius, w)] as f64)
                    .sum::<f64>()
                    / norm;
            }
        }
        let dst = out.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = (kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * tmp[reflect(y as isize + k as isize - radius, h) * w + x])
                    .sum::<f64>()
                    / norm) as f32;
            }
        }
    }
    Ok(out)
}
