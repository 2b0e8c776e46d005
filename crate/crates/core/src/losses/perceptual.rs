use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use vivat_autograd::{Graph, PadMode, Scalar, Tensor, Var};

use crate::error::{validation, Result};

/// Feature pyramid `phi_l` used by the perceptual distance.
pub trait FeatureExtractor<T: Scalar> {
    /// One feature map per level, computed on the graph so gradients reach `x`.
    fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>>;

    /// Weight `w_l` of each level.
    fn level_weights(&self) -> &[f64];
}

/// `phi = id`, single level with weight 1: the perceptual loss becomes mean absolute error.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl<T: Scalar> FeatureExtractor<T> for IdentityExtractor {
    fn features(&self, _g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        Ok(vec![x])
    }

    fn level_weights(&self) -> &[f64] {
        &[1.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptualConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub seed: u64,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        Self { levels: 3, base_channels: 8, seed: 0x5eed }
    }
}

/// Frozen random convolutional pyramid: per level a reflect-padded 3x3 stride-2
/// convolution followed by leaky ReLU. Weights never change after construction.
#[derive(Debug, Clone)]
pub struct RandomPyramid<T> {
    config: PerceptualConfig,
    kernels: Vec<Tensor<T>>,
    weights: Vec<f64>,
}

impl<T: Scalar> RandomPyramid<T> {
    pub fn new(config: PerceptualConfig, in_channels: usize) -> Result<Self> {
        if config.levels == 0 || config.base_channels == 0 {
            return Err(validation("perceptual.levels and perceptual.base_channels must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut kernels = Vec::with_capacity(config.levels);
        let mut width = in_channels;
        for level in 0..config.levels {
            let out = config.base_channels << level.min(2);
            let std = (2.0 / (width * 9) as f64).sqrt();
            let data = (0..out * width * 9)
                .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal) * std))
                .collect();
            kernels.push(Tensor::from_vec(&[out, width, 3, 3], data)?);
            width = out;
        }
        let weights = vec![1.0 / config.levels as f64; config.levels];
        Ok(Self { config, kernels, weights })
    }

    pub fn config(&self) -> &PerceptualConfig {
        &self.config
    }

    pub fn kernels(&self) -> &[Tensor<T>] {
        &self.kernels
    }
}

impl<T: Scalar> FeatureExtractor<T> for RandomPyramid<T> {
    fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.kernels.len());
        let mut h = x;
        for k in &self.kernels {
            let w = g.constant(k.clone());
            let p = g.pad(h, 1, PadMode::Reflect)?;
            let c = g.conv2d(p, w, 2)?;
            h = g.leaky_relu(c, 0.2);
            out.push(h);
        }
        Ok(out)
    }

    fn level_weights(&self) -> &[f64] {
        &self.weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::perceptual_loss;

    #[test]
    fn identity_reduces_to_mae() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        let y = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let l = perceptual_loss(&IdentityExtractor, &x, &y).unwrap();
        assert!((l - (0.5 + 0.0 + 1.0 + 0.25) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_kernels() {
        let a = RandomPyramid::<f32>::new(PerceptualConfig::default(), 3).unwrap();
        let b = RandomPyramid::<f32>::new(PerceptualConfig::default(), 3).unwrap();
        assert_eq!(a.kernels(), b.kernels());
        let x = Tensor::<f32>::full(&[1, 3, 16, 16], 0.3);
        assert_eq!(perceptual_loss(&a, &x, &x).unwrap(), 0.0);
    }
}
