use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vivat_autograd::Scalar;

use super::activations::{constant_input_probe, norm_stats};
use super::{aggregate, diagnose_pair, Thresholds};
use crate::data::Dataset;
use crate::error::{validation, Result};
use crate::image::Image;
use crate::metrics::{evaluate, EvalSpec};
use crate::model::{reparameterize, LatentSample, ModelConfig, VaeModel};
use crate::training::{TrainConfig, Trainer};

/// One arm of an A/B study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbVariant {
    pub name: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbEvalSpec {
    pub thresholds: Thresholds,
    pub metrics: EvalSpec,
    /// Pixel value of the constant image used for the padding probe.
    pub probe_value: f64,
}

impl Default for AbEvalSpec {
    fn default() -> Self {
        Self { thresholds: Thresholds::default(), metrics: EvalSpec::default(), probe_value: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub steps: u64,
    /// SHA-256 of the evaluation images.
    pub eval_set: String,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: VariantSummary,
    pub b: VariantSummary,
    /// `b - a` for every shared value.
    pub deltas: BTreeMap<String, f64>,
}

impl ComparisonReport {
    pub fn from_summaries(a: VariantSummary, b: VariantSummary) -> Result<Self> {
        if a.eval_set != b.eval_set {
            return Err(validation("A/B variants were evaluated on different image sets"));
        }
        let deltas = a
            .values
            .iter()
            .filter_map(|(k, va)| b.values.get(k).map(|vb| (k.clone(), vb - va)))
            .collect();
        Ok(Self { a, b, deltas })
    }

    pub fn delta(&self, key: &str) -> Option<f64> {
        self.deltas.get(key).copied()
    }
}

pub fn eval_fingerprint(images: &[Image]) -> String {
    let mut h = Sha256::new();
    for img in images {
        for d in [img.width(), img.height(), img.channels()] {
            h.update((d as u64).to_le_bytes());
        }
        for v in img.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Metrics, artifact aggregates and activation statistics of one (EMA) model.
pub fn summarize_variant<T: Scalar>(
    name: &str,
    steps: u64,
    model: &VaeModel<T>,
    eval: &[Image],
    spec: &AbEvalSpec,
) -> Result<VariantSummary> {
    let first = eval.first().ok_or_else(|| validation("A/B evaluation set is empty"))?;
    let labels: Vec<String> = (0..eval.len()).map(|i| format!("eval/{i:05}")).collect();
    let metrics = evaluate(model, eval, &labels, &spec.metrics)?;
    let mut thresholds = spec.thresholds;
    thresholds.grid_period = model.config().downscale_factor;

    let mut reports = Vec::with_capacity(eval.len());
    let mut outliers = Vec::with_capacity(eval.len());
    let mut recon = 0.0;
    for chunk in eval.chunks(spec.metrics.batch_size.max(1)) {
        let dist = model.encode(chunk)?;
        let z = reparameterize(&dist, &dist.mu.map(|_| T::zero()))?;
        let decoded = model.decode(&LatentSample { z: z.z }, true)?;
        let out = Image::batch_from_tensor(&decoded.images)?;
        for (x, y) in chunk.iter().zip(&out) {
            let y = y.clamped();
            recon += x.data().iter().zip(y.data()).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>()
                / x.data().len() as f64;
            reports.push(diagnose_pair(x, &y, &thresholds)?);
        }
        for trace in decoded.traces.unwrap_or_default() {
            outliers.push(norm_stats(&trace)?.max_outlier_ratio());
        }
    }
    let agg = aggregate(&reports);
    let probe = constant_input_probe(model, first.height(), first.width(), spec.probe_value)?;

    let mut values = BTreeMap::new();
    let mut put = |k: &str, v: f64| {
        values.insert(k.to_string(), v);
    };
    put("psnr", metrics.psnr.mean);
    put("ssim", metrics.ssim.mean);
    put("recon_mse", recon / eval.len() as f64);
    put("color_shift", agg.color_shift);
    put("grid_score", agg.grid);
    put("blur_ratio", agg.blur);
    put("corner_ratio", agg.corner);
    put("droplet_score", agg.droplet);
    put("grid_rate", agg.grid_rate);
    put("blur_rate", agg.blur_rate);
    put("corner_rate", agg.corner_rate);
    put("droplet_rate", agg.droplet_rate);
    put("max_outlier_ratio", outliers.iter().sum::<f64>() / outliers.len().max(1) as f64);
    put("corner_activation_ratio", probe.iter().map(|s| s.border_ratio).fold(1.0, f64::max));
    put("constant_probe_deviation", probe.iter().map(|s| s.relative_deviation).fold(0.0, f64::max));
    Ok(VariantSummary { name: name.to_string(), steps, eval_set: eval_fingerprint(eval), values })
}

/// Trains both variants on the same data and compares their EMA models.
pub fn ab_compare<T: Scalar>(
    a: &AbVariant,
    b: &AbVariant,
    dataset: &Dataset,
    eval: &[Image],
    spec: &AbEvalSpec,
) -> Result<ComparisonReport> {
    let run = |v: &AbVariant| -> Result<VariantSummary> {
        let mut trainer = Trainer::<T>::new(v.model.clone(), v.train.clone())?;
        trainer.fit(dataset, |_, _| Ok(()))?;
        summarize_variant(&v.name, trainer.step(), &trainer.ema_model()?, eval, spec)
    };
    ComparisonReport::from_summaries(run(a)?, run(b)?)
}
