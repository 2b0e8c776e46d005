//! PSNR / SSIM and dataset-level reconstruction reports.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vivat_autograd::Scalar;

use crate::error::{validation, Result};
use crate::image::Image;
use crate::model::VaeModel;

pub const PSNR_CAP_DB: f64 = 100.0;

/// `10 log10(max^2 / mse)`, capped at 100 dB for identical inputs.
pub fn psnr(x: &Image, y: &Image, max_value: f64) -> Result<f64> {
    x.ensure_same_dims(y)?;
    if !(max_value > 0.0) {
        return Err(validation("psnr max_value must be positive"));
    }
    let mse = x.data().iter().zip(y.data()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>()
        / x.data().len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_value * max_value / mse).log10()).min(PSNR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub max_value: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, max_value: 1.0 }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-0.5 * ((i as f64 - c) / sigma).powi(2)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over valid Gaussian windows and channels.
pub fn ssim(x: &Image, y: &Image, params: &SsimParams) -> Result<f64> {
    x.ensure_same_dims(y)?;
    let (h, w, c) = x.dims();
    if params.window == 0 || h < params.window || w < params.window {
        return Err(validation(format!("ssim window {} larger than {w}x{h} image", params.window)));
    }
    if !(params.sigma > 0.0 && params.max_value > 0.0) {
        return Err(validation("ssim sigma and max_value must be positive"));
    }
    let k = gaussian_window(params.window, params.sigma);
    let c1 = (0.01 * params.max_value).powi(2);
    let c2 = (0.03 * params.max_value).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let a: Vec<f64> = x.plane(ch).iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = y.plane(ch).iter().map(|&v| v as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
        let mx = filter_valid(&a, h, w, &k);
        let my = filter_valid(&b, h, w, &k);
        let sxx = filter_valid(&prod(&a, &a), h, w, &k);
        let syy = filter_valid(&prod(&b, &b), h, w, &k);
        let sxy = filter_valid(&prod(&a, &b), h, w, &k);
        for i in 0..mx.len() {
            let (mu_x, mu_y) = (mx[i], my[i]);
            let var_x = sxx[i] - mu_x * mu_x;
            let var_y = syy[i] - mu_y * mu_y;
            let cov = sxy[i] - mu_x * mu_y;
            let num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
            let den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Anything that maps images to reconstructions of the same size.
pub trait Reconstructor {
    fn identifier(&self) -> String;
    fn reconstruct(&self, images: &[Image]) -> Result<Vec<Image>>;
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityReconstructor;

impl Reconstructor for IdentityReconstructor {
    fn identifier(&self) -> String {
        "identity".into()
    }

    fn reconstruct(&self, images: &[Image]) -> Result<Vec<Image>> {
        Ok(images.to_vec())
    }
}

/// Mean-latent reconstruction with whatever weights the model holds (pass the EMA model).
impl<T: Scalar> Reconstructor for VaeModel<T> {
    fn identifier(&self) -> String {
        let digest = self.params().digest(|_| true);
        format!("vae-{}-{digest:016x}", T::DTYPE.name())
    }

    fn reconstruct(&self, images: &[Image]) -> Result<Vec<Image>> {
        VaeModel::reconstruct(self, images)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Aggregate {
    /// Population statistics, summed in the given order.
    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self { mean: 0.0, std: 0.0, count };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        Self { mean, std: var.sqrt(), count }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub label: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    /// `[height, width]` of the evaluated images.
    pub resolution: [usize; 2],
    pub protocol: String,
    pub per_image: Vec<ImageMetrics>,
    pub psnr: Aggregate,
    pub ssim: Aggregate,
}

impl MetricReport {
    pub fn recompute_aggregates(&self) -> (Aggregate, Aggregate) {
        let p: Vec<f64> = self.per_image.iter().map(|m| m.psnr).collect();
        let s: Vec<f64> = self.per_image.iter().map(|m| m.ssim).collect();
        (Aggregate::from_values(&p), Aggregate::from_values(&s))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::error::Error::Format(e.to_string()))?;
        w.write_record(["path", "psnr", "ssim"]).map_err(|e| crate::error::Error::Format(e.to_string()))?;
        for m in &self.per_image {
            w.write_record([m.label.clone(), m.psnr.to_string(), m.ssim.to_string()])
                .map_err(|e| crate::error::Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub batch_size: usize,
    pub ssim: SsimParams,
    pub protocol: String,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            batch_size: 8,
            ssim: SsimParams::default(),
            protocol: "proportional bicubic resize to the short side, center crop, mean latent, reconstructions clamped to [0, 1]".into(),
        }
    }
}

/// Reconstructs every image (clamped to `[0, 1]`) and scores it.
pub fn evaluate(
    model: &dyn Reconstructor,
    images: &[Image],
    labels: &[String],
    spec: &EvalSpec,
) -> Result<MetricReport> {
    let first = images.first().ok_or_else(|| validation("evaluation dataset is empty"))?;
    if labels.len() != images.len() {
        return Err(validation("one label per evaluated image required"));
    }
    let mut per_image = Vec::with_capacity(images.len());
    for (chunk, names) in images.chunks(spec.batch_size.max(1)).zip(labels.chunks(spec.batch_size.max(1))) {
        let recon = model.reconstruct(chunk)?;
        for ((x, y), label) in chunk.iter().zip(&recon).zip(names) {
            let y = y.clamped();
            per_image.push(ImageMetrics {
                label: label.clone(),
                psnr: psnr(x, &y, spec.ssim.max_value)?,
                ssim: ssim(x, &y, &spec.ssim)?,
            });
        }
    }
    let mut report = MetricReport {
        model: model.identifier(),
        resolution: [first.height(), first.width()],
        protocol: spec.protocol.clone(),
        per_image,
        psnr: Aggregate::from_values(&[]),
        ssim: Aggregate::from_values(&[]),
    };
    (report.psnr, report.ssim) = report.recompute_aggregates();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_analytic() {
        let a = Image::filled(4, 4, 3, 0.0);
        let b = Image::filled(4, 4, 3, 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 100.0);
        assert!((psnr(&a, &b, 1.0).unwrap() - 6.020599913279624).abs() < 1e-12);
        let c = Image::filled(4, 4, 3, 1.0);
        assert_eq!(psnr(&a, &c, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn ssim_analytic() {
        let x = Image::from_fn(16, 16, 3, |c, y, x| ((c * 5 + y * 3 + x * 7) % 13) as f32 / 13.0);
        assert_eq!(ssim(&x, &x, &SsimParams::default()).unwrap(), 1.0);
        let a = Image::filled(12, 12, 1, 0.0);
        let b = Image::filled(12, 12, 1, 1.0);
        let c1 = 1e-4;
        assert!((ssim(&a, &b, &SsimParams::default()).unwrap() - c1 / (1.0 + c1)).abs() < 1e-12);
        assert!(ssim(&Image::new(8, 8, 1), &Image::new(8, 8, 1), &SsimParams::default()).is_err());
    }

    #[test]
    fn identity_model_is_perfect() {
        let imgs: Vec<Image> = (0..3).map(|i| Image::filled(12, 12, 3, 0.1 * i as f32)).collect();
        let labels: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        let r = evaluate(&IdentityReconstructor, &imgs, &labels, &EvalSpec::default()).unwrap();
        assert_eq!((r.psnr.mean, r.ssim.mean, r.psnr.count), (100.0, 1.0, 3));
    }
}
