use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vivat_autograd::{Graph, Scalar, Tensor, Var};

use super::config::{DecoderNorm, ModelConfig};
use super::layers::{AttnBlock, Conv, ConvSpec, Ctx, Downsample, GroupNormAffine, Norm, NormKind, ResBlock, Upsample};
use super::params::{Binding, ParamStore};
use crate::error::{shape, validation, Result};
use crate::image::Image;

pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 20.0;

/// Parameter-name prefix of everything the frozen-encoder phase keeps fixed.
pub const ENCODER_PREFIX: &str = "encoder.";

pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with(ENCODER_PREFIX)
}

/// Diagonal Gaussian posterior; `mu` and `logvar` are `[N, c, H/f, W/f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution<T> {
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
}

impl<T: Scalar> LatentDistribution<T> {
    pub fn new(mu: Tensor<T>, logvar: Tensor<T>) -> Result<Self> {
        if mu.shape() != logvar.shape() {
            return Err(shape(format!("mu {:?} and logvar {:?} differ", mu.shape(), logvar.shape())));
        }
        if !mu.all_finite() || !logvar.all_finite() {
            return Err(validation("latent distribution has non-finite entries"));
        }
        Ok(Self { mu, logvar })
    }

    pub fn shape(&self) -> &[usize] {
        self.mu.shape()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample<T> {
    pub z: Tensor<T>,
}

/// `z = mu + exp(logvar / 2) * noise`.
pub fn reparameterize<T: Scalar>(dist: &LatentDistribution<T>, noise: &Tensor<T>) -> Result<LatentSample<T>> {
    if noise.shape() != dist.mu.shape() {
        return Err(validation(format!(
            "noise shape {:?} does not match latent shape {:?}",
            noise.shape(),
            dist.mu.shape()
        )));
    }
    let half = T::lit(0.5);
    let data = dist
        .mu
        .data()
        .iter()
        .zip(dist.logvar.data())
        .zip(noise.data())
        .map(|((&m, &lv), &e)| {
            let lv = lv.max(T::lit(LOGVAR_MIN)).min(T::lit(LOGVAR_MAX));
            m + (lv * half).exp() * e
        })
        .collect();
    Ok(LatentSample { z: Tensor::from_vec(noise.shape(), data)? })
}

/// Spatial L2 norm over channels, one map per probed decoder stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLayer {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActivationTrace {
    pub layers: Vec<TraceLayer>,
}

impl ActivationTrace {
    /// Splits probed `[N, C, H, W]` activations into one trace per sample.
    pub fn from_probes<T: Scalar>(probes: &[(String, Tensor<T>)]) -> Result<Vec<ActivationTrace>> {
        let Some((_, first)) = probes.first() else { return Ok(Vec::new()) };
        let batch = first.dims4()?.0;
        let mut traces = vec![ActivationTrace::default(); batch];
        for (name, t) in probes {
            let (n, c, h, w) = t.dims4()?;
            for (b, trace) in traces.iter_mut().enumerate().take(n) {
                let base = b * c * h * w;
                let norms = (0..h * w)
                    .map(|p| {
                        (0..c)
                            .map(|ch| t.data()[base + ch * h * w + p].as_f64().powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                trace.layers.push(TraceLayer { name: name.clone(), height: h, width: w, norms });
            }
        }
        Ok(traces)
    }
}

type Probes<'a> = Option<&'a mut Vec<(String, Var)>>;

fn probe(probes: &mut Probes<'_>, name: impl Into<String>, v: Var) {
    if let Some(p) = probes.as_deref_mut() {
        p.push((name.into(), v));
    }
}

#[derive(Debug, Clone)]
struct Level {
    blocks: Vec<ResBlock>,
    attns: Vec<AttnBlock>,
    resample: Option<Resample>,
}

#[derive(Debug, Clone)]
enum Resample {
    Down(Downsample),
    Up(Upsample),
}

#[derive(Debug, Clone)]
struct Encoder {
    conv_in: Conv,
    levels: Vec<Level>,
    norm_out: GroupNormAffine,
    mu_head: Conv,
    logvar_head: Conv,
}

#[derive(Debug, Clone)]
struct Decoder {
    conv_in: Conv,
    /// Ordered from the lowest resolution upwards.
    levels: Vec<Level>,
    norm_out: Norm,
    conv_out: Conv,
}

impl Encoder {
    fn build<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let norm = NormKind::Group { groups: cfg.group_norm_groups };
        let conv_in = Conv::new(store, "encoder.conv_in", ConvSpec::same(cfg.input_channels, cfg.width(0), 3), rng);
        let mut levels = Vec::new();
        let mut width = cfg.width(0);
        for level in 0..cfg.levels() {
            let out = cfg.width(level);
            let mut blocks = Vec::new();
            let mut attns = Vec::new();
            for i in 0..cfg.blocks_per_level {
                let name = format!("encoder.down{level}.block{i}");
                blocks.push(ResBlock::new(store, &name, width, out, norm, rng));
                width = out;
                if cfg.has_attention(level) {
                    attns.push(AttnBlock::new(store, &format!("encoder.down{level}.attn{i}"), width, norm, rng));
                }
            }
            let resample = (level + 1 < cfg.levels())
                .then(|| Resample::Down(Downsample::new(store, &format!("encoder.down{level}.downsample"), width, rng)));
            levels.push(Level { blocks, attns, resample });
        }
        let norm_out = GroupNormAffine::new(store, "encoder.norm_out", width, cfg.group_norm_groups, rng);
        let head = |store: &mut ParamStore<T>, name: &str, rng: &mut ChaCha8Rng| {
            Conv::new(store, name, ConvSpec::same(width, cfg.latent_channels, 1), rng)
        };
        let mu_head = head(store, "encoder.mu_head", rng);
        let logvar_head = head(store, "encoder.logvar_head", rng);
        Self { conv_in, levels, norm_out, mu_head, logvar_head }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ctx: &Ctx<'_>, x: Var, mut probes: Probes<'_>) -> Result<(Var, Var)> {
        let mut h = self.conv_in.forward(g, ctx, x)?;
        probe(&mut probes, "encoder.conv_in", h);
        for (li, level) in self.levels.iter().enumerate() {
            for (bi, block) in level.blocks.iter().enumerate() {
                h = block.forward(g, ctx, h)?;
                probe(&mut probes, format!("encoder.down{li}.block{bi}"), h);
                if let Some(attn) = level.attns.get(bi) {
                    h = attn.forward(g, ctx, h)?;
                    probe(&mut probes, format!("encoder.down{li}.attn{bi}"), h);
                }
            }
            if let Some(Resample::Down(down)) = &level.resample {
                h = down.forward(g, ctx, h)?;
                probe(&mut probes, format!("encoder.down{li}.downsample"), h);
            }
        }
        let h = self.norm_out.forward(g, ctx.binding, h)?;
        let h = g.silu(h);
        let mu = self.mu_head.forward(g, ctx, h)?;
        let logvar = self.logvar_head.forward(g, ctx, h)?;
        let logvar = g.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX);
        probe(&mut probes, "encoder.mu", mu);
        Ok((mu, logvar))
    }
}

impl Decoder {
    fn build<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let norm = match cfg.decoder_norm {
            DecoderNorm::GroupNorm => NormKind::Group { groups: cfg.group_norm_groups },
            DecoderNorm::Scn => NormKind::Spatial { groups: cfg.group_norm_groups, cond_channels: cfg.latent_channels },
        };
        let top = cfg.levels() - 1;
        let mut width = cfg.width(top);
        let conv_in = Conv::new(store, "decoder.conv_in", ConvSpec::same(cfg.latent_channels, width, 3), rng);
        let mut levels = Vec::new();
        for level in (0..cfg.levels()).rev() {
            let out = cfg.width(level);
            let mut blocks = Vec::new();
            let mut attns = Vec::new();
            for i in 0..cfg.blocks_per_level {
                blocks.push(ResBlock::new(store, &format!("decoder.up{level}.block{i}"), width, out, norm, rng));
                width = out;
                if cfg.has_attention(level) {
                    attns.push(AttnBlock::new(store, &format!("decoder.up{level}.attn{i}"), width, norm, rng));
                }
            }
            let resample = (level > 0)
                .then(|| Resample::Up(Upsample::new(store, &format!("decoder.up{level}.upsample"), width, rng)));
            levels.push(Level { blocks, attns, resample });
        }
        let norm_out = Norm::new(store, "decoder.norm_out", width, norm, rng);
        let conv_out = Conv::new(store, "decoder.conv_out", ConvSpec::same(width, cfg.input_channels, 3), rng);
        Self { conv_in, levels, norm_out, conv_out }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ctx: &Ctx<'_>, z: Var, mut probes: Probes<'_>) -> Result<Var> {
        let mut h = self.conv_in.forward(g, ctx, z)?;
        probe(&mut probes, "decoder.conv_in", h);
        let top = self.levels.len() - 1;
        for (i, level) in self.levels.iter().enumerate() {
            let li = top - i;
            for (bi, block) in level.blocks.iter().enumerate() {
                h = block.forward(g, ctx, h)?;
                probe(&mut probes, format!("decoder.up{li}.block{bi}"), h);
                if let Some(attn) = level.attns.get(bi) {
                    h = attn.forward(g, ctx, h)?;
                    probe(&mut probes, format!("decoder.up{li}.attn{bi}"), h);
                }
            }
            if let Some(Resample::Up(up)) = &level.resample {
                h = up.forward(g, ctx, h)?;
                probe(&mut probes, format!("decoder.up{li}.upsample"), h);
            }
        }
        let h = self.norm_out.forward(g, ctx, h)?;
        let h = g.silu(h);
        let out = self.conv_out.forward(g, ctx, h)?;
        probe(&mut probes, "decoder.out", out);
        Ok(out)
    }
}

/// Result of decoding a latent sample.
#[derive(Debug, Clone)]
pub struct Decoded<T> {
    /// `[N, C, H, W]` reconstruction (not clamped).
    pub images: Tensor<T>,
    pub traces: Option<Vec<ActivationTrace>>,
}

/// KL-VAE: encoder `q(z|x)` with mean/log-variance heads and a decoder `p(x|z)`.
#[derive(Debug, Clone)]
pub struct VaeModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    encoder: Encoder,
    decoder: Decoder,
}

impl<T: Scalar> VaeModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::build(&mut params, &config, &mut rng);
        let decoder = Decoder::build(&mut params, &config, &mut rng);
        Ok(Self { config, params, encoder, decoder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Copy of this model with another (congruent) parameter set, e.g. EMA weights.
    pub fn with_params(&self, params: ParamStore<T>) -> Result<Self> {
        if !params.congruent(&self.params) {
            return Err(shape("parameter set does not match model layout"));
        }
        Ok(Self { params, ..self.clone() })
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: impl Fn(&str) -> bool) -> Binding {
        self.params.bind(g, trainable)
    }

    pub fn check_input_shape(&self, shape: &[usize]) -> Result<()> {
        let f = self.config.downscale_factor;
        match shape {
            [_, c, h, w] if *c == self.config.input_channels => {
                if h % f != 0 || w % f != 0 || *h == 0 || *w == 0 {
                    return Err(crate::error::shape(format!(
                        "input {h}x{w} is not a multiple of the downscale factor {f}"
                    )));
                }
                Ok(())
            }
            _ => Err(crate::error::shape(format!(
                "expected [N, {}, H, W] input, got {shape:?}",
                self.config.input_channels
            ))),
        }
    }

    pub fn encode_graph(&self, g: &mut Graph<T>, b: &Binding, x: Var) -> Result<(Var, Var)> {
        self.encode_probed(g, b, x, None)
    }

    fn encode_probed(&self, g: &mut Graph<T>, b: &Binding, x: Var, probes: Probes<'_>) -> Result<(Var, Var)> {
        self.check_input_shape(g.shape(x))?;
        if !g.value(x).all_finite() {
            return Err(validation("input image contains non-finite values"));
        }
        let ctx = Ctx { binding: b, pad: self.config.padding_policy.mode(), cond: None };
        self.encoder.forward(g, &ctx, x, probes)
    }

    pub fn check_latent_shape(&self, shape: &[usize]) -> Result<()> {
        match shape {
            [_, c, h, w] if *c == self.config.latent_channels && *h > 0 && *w > 0 => Ok(()),
            _ => Err(validation(format!(
                "latent shape {shape:?} incompatible with {} latent channels",
                self.config.latent_channels
            ))),
        }
    }

    pub fn decode_graph(&self, g: &mut Graph<T>, b: &Binding, z: Var, probes: Option<&mut Vec<(String, Var)>>) -> Result<Var> {
        self.check_latent_shape(g.shape(z))?;
        let ctx = Ctx { binding: b, pad: self.config.padding_policy.mode(), cond: Some(z) };
        self.decoder.forward(g, &ctx, z, probes)
    }

    pub fn encode(&self, images: &[Image]) -> Result<LatentDistribution<T>> {
        let x = Image::batch_to_tensor::<T>(images)?;
        self.encode_tensor(&x)
    }

    pub fn encode_tensor(&self, x: &Tensor<T>) -> Result<LatentDistribution<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let xv = g.constant(x.clone());
        let (mu, logvar) = self.encode_graph(&mut g, &b, xv)?;
        LatentDistribution::new(g.value(mu).clone(), g.value(logvar).clone())
    }

    pub fn decode(&self, z: &LatentSample<T>, trace: bool) -> Result<Decoded<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let zv = g.constant(z.z.clone());
        let mut probes = Vec::new();
        let out = self.decode_graph(&mut g, &b, zv, trace.then_some(&mut probes))?;
        let traces = if trace {
            let captured: Vec<(String, Tensor<T>)> = probes
                .iter()
                .filter(|(name, _)| name != "decoder.out")
                .map(|(name, v)| (name.clone(), g.value(*v).clone()))
                .collect();
            Some(ActivationTrace::from_probes(&captured)?)
        } else {
            None
        };
        Ok(Decoded { images: g.value(out).clone(), traces })
    }

    /// `decode(reparameterize(encode(x), noise))`.
    pub fn forward(&self, x: &Tensor<T>, noise: &Tensor<T>) -> Result<(Tensor<T>, LatentDistribution<T>)> {
        let dist = self.encode_tensor(x)?;
        let z = reparameterize(&dist, noise)?;
        let decoded = self.decode(&z, false)?;
        Ok((decoded.images, dist))
    }

    /// Mean-latent reconstruction (noise = 0).
    pub fn reconstruct(&self, images: &[Image]) -> Result<Vec<Image>> {
        let x = Image::batch_to_tensor::<T>(images)?;
        let dist = self.encode_tensor(&x)?;
        let decoded = self.decode(&LatentSample { z: dist.mu }, false)?;
        Image::batch_from_tensor(&decoded.images)
    }

    /// Activations after every encoder and decoder stage for a mean-latent pass.
    pub fn stage_activations(&self, x: &Tensor<T>) -> Result<Vec<(String, Tensor<T>)>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let xv = g.constant(x.clone());
        let mut probes = Vec::new();
        let (mu, _) = self.encode_probed(&mut g, &b, xv, Some(&mut probes))?;
        self.decode_graph(&mut g, &b, mu, Some(&mut probes))?;
        Ok(probes.into_iter().map(|(name, v)| (name, g.value(v).clone())).collect())
    }
}
