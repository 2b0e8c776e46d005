//! Artifact detectors, activation-norm probing and the A/B mitigation harness.

mod ab;
mod activations;
mod detectors;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ab::{ab_compare, summarize_variant, AbEvalSpec, AbVariant, ComparisonReport, VariantSummary};
pub use activations::{constant_input_probe, norm_stats, stage_uniformity, LayerNormStats, NormStats, StageUniformity};
pub use detectors::{
    blur_ratio, capped_ratio, detect_blur, detect_color_shift, detect_corner, detect_droplet, detect_grid, Blur,
    ColorShift, Corner, Droplet, Grid, RATIO_CAP,
};

use crate::error::Result;
use crate::image::{save_heatmap_png, save_raw_f32, Image};
use crate::spectrum::power_spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub color_shift: f64,
    pub grid: f64,
    /// Downscale factor whose harmonics the grid detector probes.
    pub grid_period: usize,
    pub blur: f64,
    /// Cycles per pixel; Nyquist is 0.5.
    pub blur_cutoff: f64,
    pub corner: f64,
    pub corner_band: usize,
    pub droplet: f64,
    pub droplet_window: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            color_shift: 0.02,
            grid: 20.0,
            grid_period: 8,
            blur: 0.6,
            blur_cutoff: 0.125,
            corner: 2.0,
            corner_band: 8,
            droplet: 6.0,
            droplet_window: 4,
        }
    }
}

impl Thresholds {
    /// Corner band shrunk to fit small images (`band < min(H, W) / 4`).
    pub fn fitted_to(mut self, height: usize, width: usize) -> Self {
        let limit = (height.min(width).saturating_sub(1) / 4).max(1);
        self.corner_band = self.corner_band.min(limit);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactReport {
    pub color_shift: ColorShift,
    pub grid: Grid,
    pub blur: Blur,
    pub corner: Corner,
    pub droplet: Droplet,
    pub thresholds: Thresholds,
}

impl ArtifactReport {
    /// Whether every stored flag equals the comparison of its stored score and threshold.
    pub fn flags_consistent(&self) -> bool {
        self.color_shift.flag == (self.color_shift.score > self.color_shift.threshold)
            && self.grid.flag == (self.grid.score > self.grid.threshold)
            && self.blur.flag == self.blur.ratio.is_some_and(|r| r < self.blur.threshold)
            && self.corner.flag == (self.corner.ratio > self.corner.threshold)
            && self.droplet.flag == (self.droplet.score > self.droplet.threshold)
    }

    pub fn any_flag(&self) -> bool {
        self.color_shift.flag || self.grid.flag || self.blur.flag || self.corner.flag || self.droplet.flag
    }
}

/// Runs all five detectors on one (input, reconstruction) pair.
pub fn diagnose_pair(x: &Image, xhat: &Image, thresholds: &Thresholds) -> Result<ArtifactReport> {
    let t = thresholds.fitted_to(x.height(), x.width());
    Ok(ArtifactReport {
        color_shift: detect_color_shift(x, xhat, t.color_shift)?,
        grid: detect_grid(x, xhat, t.grid_period, t.grid)?,
        blur: detect_blur(x, xhat, t.blur_cutoff, t.blur)?,
        corner: detect_corner(x, xhat, t.corner_band, t.corner)?,
        droplet: detect_droplet(x, xhat, t.droplet_window, t.droplet)?,
        thresholds: t,
    })
}

/// Order-independent means and flag rates over a set of reports.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArtifactAggregate {
    pub count: usize,
    pub color_shift: f64,
    pub grid: f64,
    pub blur: f64,
    pub blur_count: usize,
    pub corner: f64,
    pub droplet: f64,
    pub color_shift_rate: f64,
    pub grid_rate: f64,
    pub blur_rate: f64,
    pub corner_rate: f64,
    pub droplet_rate: f64,
}

/// Mean of values summed in sorted order, so any permutation gives the same bits.
fn sorted_mean(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn aggregate(reports: &[ArtifactReport]) -> ArtifactAggregate {
    let col = |f: &dyn Fn(&ArtifactReport) -> f64| sorted_mean(reports.iter().map(f).collect());
    let rate = |f: &dyn Fn(&ArtifactReport) -> bool| sorted_mean(reports.iter().map(|r| f(r) as u8 as f64).collect());
    let blurs: Vec<f64> = reports.iter().filter_map(|r| r.blur.ratio).collect();
    ArtifactAggregate {
        count: reports.len(),
        color_shift: col(&|r| r.color_shift.score),
        grid: col(&|r| r.grid.score),
        blur_count: blurs.len(),
        blur: sorted_mean(blurs),
        corner: col(&|r| r.corner.ratio),
        droplet: col(&|r| r.droplet.score),
        color_shift_rate: rate(&|r| r.color_shift.flag),
        grid_rate: rate(&|r| r.grid.flag),
        blur_rate: rate(&|r| r.blur.flag),
        corner_rate: rate(&|r| r.corner.flag),
        droplet_rate: rate(&|r| r.droplet.flag),
    }
}

/// Writes a spectrum of the luma residual as a 16-bit heatmap (log scale, DC-centred) plus a raw dump.
pub fn export_residual_spectrum(x: &Image, xhat: &Image, stem: &Path) -> Result<()> {
    x.ensure_same_dims(xhat)?;
    let (h, w, _) = x.dims();
    let r: Vec<f64> = xhat.luma().iter().zip(x.luma()).map(|(a, b)| a - b).collect();
    let p = power_spectrum(&r, h, w);
    let shifted: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, xx) = (i / w, i % w);
            p[((y + h / 2) % h) * w + (xx + w / 2) % w].ln_1p()
        })
        .collect();
    save_heatmap_png(&shifted, w, h, &stem.with_extension("png"))?;
    save_raw_f32(&shifted, &[h, w], &stem.with_extension("f32"))
}
