//! Activation-space probes: spatial norm outliers and padding-induced border effects.

use serde::{Deserialize, Serialize};
use vivat_autograd::{Scalar, Tensor};

use super::detectors::capped_ratio;
use crate::error::{validation, Result};
use crate::model::{ActivationTrace, VaeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormStats {
    pub layer: String,
    pub max: f64,
    pub median: f64,
    /// `max / median`.
    pub outlier_ratio: f64,
    /// `(y, x)` of the largest norm.
    pub argmax: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub layers: Vec<LayerNormStats>,
}

impl NormStats {
    /// Largest per-layer outlier ratio.
    pub fn max_outlier_ratio(&self) -> f64 {
        self.layers.iter().map(|l| l.outlier_ratio).fold(0.0, f64::max)
    }
}

pub fn norm_stats(trace: &ActivationTrace) -> Result<NormStats> {
    if trace.layers.is_empty() {
        return Err(validation("norm_stats needs a non-empty activation trace"));
    }
    let layers = trace
        .layers
        .iter()
        .map(|l| {
            let (argmax, max) =
                l.norms.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            let mut sorted = l.norms.clone();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
            LayerNormStats {
                layer: l.name.clone(),
                max,
                median,
                outlier_ratio: capped_ratio(max, median),
                argmax: (argmax / l.width.max(1), argmax % l.width.max(1)),
            }
        })
        .collect();
    Ok(NormStats { layers })
}

/// Spatial behaviour of one stage on a constant input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageUniformity {
    pub stage: String,
    /// `max |a - mean_c| / max(|mean_c|, max |a|)` over channels, positions and batch.
    pub relative_deviation: f64,
    /// Mean channel-L2 norm on the one-pixel border over the interior mean, folded to `>= 1`.
    pub border_ratio: f64,
}

/// Relative spatial deviation and border/interior norm ratio of a `[N, C, H, W]` activation.
pub fn stage_uniformity<T: Scalar>(stage: &str, t: &Tensor<T>) -> Result<StageUniformity> {
    let (n, c, h, w) = t.dims4()?;
    let hw = h * w;
    let mut deviation = 0.0f64;
    for b in 0..n {
        for ch in 0..c {
            let plane = &t.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            let mean = plane.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64;
            let scale = plane.iter().map(|v| v.as_f64().abs()).fold(mean.abs(), f64::max);
            if scale > 0.0 {
                let dev = plane.iter().map(|v| (v.as_f64() - mean).abs()).fold(0.0, f64::max);
                deviation = deviation.max(dev / scale);
            }
        }
    }
    let border_ratio = if h >= 3 && w >= 3 {
        let (mut border, mut nb, mut interior, mut ni) = (0.0, 0usize, 0.0, 0usize);
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let norm = (0..c)
                        .map(|ch| t.data()[(b * c + ch) * hw + y * w + x].as_f64().powi(2))
                        .sum::<f64>()
                        .sqrt();
                    if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
                        border += norm;
                        nb += 1;
                    } else {
                        interior += norm;
                        ni += 1;
                    }
                }
            }
        }
        let r = capped_ratio(border / nb as f64, interior / ni as f64);
        if r > 0.0 && r < 1.0 {
            1.0 / r
        } else {
            r
        }
    } else {
        1.0
    };
    Ok(StageUniformity { stage: stage.to_string(), relative_deviation: deviation, border_ratio })
}

/// Pushes a constant `value` image through encoder and decoder (mean latent) and measures every stage.
pub fn constant_input_probe<T: Scalar>(
    model: &VaeModel<T>,
    height: usize,
    width: usize,
    value: f64,
) -> Result<Vec<StageUniformity>> {
    let c = model.config().input_channels;
    let x = Tensor::full(&[1, c, height, width], T::lit(value));
    model
        .stage_activations(&x)?
        .iter()
        .map(|(name, t)| stage_uniformity(name, t))
        .collect()
}
