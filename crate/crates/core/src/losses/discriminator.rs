use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vivat_autograd::{Graph, PadMode, Scalar, Tensor, Var};

use crate::error::{shape, validation, Result};
use crate::model::{Binding, Conv, ConvSpec, ParamStore};

pub const DISC_PREFIX: &str = "disc.";
const SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscConfig {
    /// Total convolution count; all but the last are stride 2.
    pub layers: usize,
    pub base_channels: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self { layers: 4, base_channels: 32 }
    }
}

impl DiscConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 || self.base_channels == 0 {
            return Err(validation("disc.layers must be >= 2 and disc.base_channels >= 1"));
        }
        Ok(())
    }

    /// Logit map size for an `h x w` input: stride-2 k4 p1 layers halve, the final k4 p1 layer loses one.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let side = |mut n: usize| {
            for _ in 0..self.layers - 1 {
                if n < 2 {
                    return None;
                }
                n = (n - 2) / 2 + 1;
            }
            (n >= 2).then(|| n - 1)
        };
        Some((side(h)?, side(w)?))
    }
}

/// Patch classifier: k4 s2 convolutions with leaky ReLU, then a k4 s1 single-channel head.
#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    config: DiscConfig,
    params: ParamStore<T>,
    convs: Vec<Conv>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscConfig, in_channels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut convs = Vec::new();
        let mut width = in_channels;
        for i in 0..config.layers {
            let last = i + 1 == config.layers;
            let out = if last { 1 } else { config.base_channels << i.min(3) };
            let spec = ConvSpec { stride: if last { 1 } else { 2 }, pad: 1, ..ConvSpec::same(width, out, 4) };
            convs.push(Conv::new(&mut params, &format!("{DISC_PREFIX}conv{i}"), spec, &mut rng));
            width = out;
        }
        Ok(Self { config, params, convs })
    }

    pub fn config(&self) -> &DiscConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Binding {
        self.params.bind(g, |_| trainable)
    }

    pub fn forward_graph(&self, g: &mut Graph<T>, b: &Binding, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || self.config.output_size(s[2], s[3]).is_none() {
            return Err(shape(format!("discriminator input {s:?} too small for {} layers", self.config.layers)));
        }
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward_with(g, b, h, PadMode::Zero)?;
            if i + 1 < self.convs.len() {
                h = g.leaky_relu(h, SLOPE);
            }
        }
        Ok(h)
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward_graph(&mut g, &b, xv)?;
        Ok(g.value(out).clone())
    }
}
