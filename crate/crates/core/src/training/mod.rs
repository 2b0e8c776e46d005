//! Two-phase training: full VAE, then decoder-only finetuning with a frozen encoder.

mod optim;
mod state;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use vivat_autograd::{Graph, Scalar, Tensor, Var};

pub use optim::{ema_update, Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use state::{load_trainer, TRAIN_KIND};

use crate::data::Dataset;
use crate::error::{validation, Error, Result};
use crate::image::Image;
use crate::losses::{
    adv_generator_graph, discriminator_graph, kl_graph, perceptual_graph, recon_graph, total_loss, AdvVariant,
    DiscConfig, DiscVariant, Discriminator, LossBundle, LossComponents, LossWeights, PerceptualConfig, RandomPyramid,
};
use crate::model::{is_encoder_param, ModelConfig, ParamStore, VaeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Full,
    DecoderOnly,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Full => "full",
            Phase::DecoderOnly => "decoder_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Fp32,
    Fp64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    /// Steps of the first phase.
    pub max_steps: u64,
    /// Additional frozen-encoder steps run after `max_steps`.
    pub decoder_finetune_steps: u64,
    /// First step with an adversarial term; `u64::MAX` disables the discriminator.
    pub disc_start_step: u64,
    pub phase: Phase,
    pub seed: u64,
    pub loss: LossWeights,
    pub adversarial: AdvVariant,
    pub discriminator_loss: DiscVariant,
    pub disc: DiscConfig,
    pub perceptual: PerceptualConfig,
    pub precision: Precision,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            ema_decay: 0.9999,
            batch_size: 8,
            max_steps: 1000,
            decoder_finetune_steps: 0,
            disc_start_step: 0,
            phase: Phase::Full,
            seed: 0,
            loss: LossWeights::default(),
            adversarial: AdvVariant::default(),
            discriminator_loss: DiscVariant::default(),
            disc: DiscConfig::default(),
            perceptual: PerceptualConfig::default(),
            precision: Precision::Fp32,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(validation(format!("train.learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(validation(format!("train.ema_decay must lie in [0, 1], got {}", self.ema_decay)));
        }
        if self.batch_size == 0 {
            return Err(validation("train.batch_size must be at least 1"));
        }
        self.loss.validate()?;
        self.disc.validate()?;
        Ok(())
    }
}

/// Everything one `train_step` reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub phase: Phase,
    pub losses: LossBundle,
    pub disc_loss: Option<f64>,
    pub grad_norm: f64,
}

/// Exponentially smoothed loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RollingStats {
    pub count: u64,
    pub smoothed: LossComponents,
    pub initial_recon: Option<f64>,
}

impl RollingStats {
    pub const ALPHA: f64 = 0.05;

    fn push(&mut self, c: &LossComponents) {
        if self.count == 0 {
            self.smoothed = *c;
            self.initial_recon = Some(c.recon);
        } else {
            let mix = |s: f64, v: f64| s + Self::ALPHA * (v - s);
            let s = &mut self.smoothed;
            *s = LossComponents {
                kl: mix(s.kl, c.kl),
                recon: mix(s.recon, c.recon),
                adv: mix(s.adv, c.adv),
                perc: mix(s.perc, c.perc),
            };
        }
        self.count += 1;
    }
}

/// Training state plus the frozen pieces needed to step it.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    config: TrainConfig,
    step: u64,
    model: VaeModel<T>,
    ema: ParamStore<T>,
    disc: Discriminator<T>,
    gen_opt: Adam<T>,
    disc_opt: Adam<T>,
    rng: ChaCha8Rng,
    stats: RollingStats,
    perceptual: RandomPyramid<T>,
}

const NOISE_STREAM: u64 = 7;
const DISC_SEED_SALT: u64 = 0xD15C_0000_0000_0001;

fn norm_sq<T: Scalar>(grads: &[Option<Tensor<T>>]) -> f64 {
    grads.iter().flatten().map(Tensor::squared_norm).sum()
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = VaeModel::new(model_config, config.seed)?;
        Self::from_model(model, config)
    }

    /// Starts training from existing weights (fresh optimizer and EMA).
    pub fn from_model(model: VaeModel<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let disc = Discriminator::new(config.disc.clone(), model.config().input_channels, config.seed ^ DISC_SEED_SALT)?;
        let perceptual = RandomPyramid::new(config.perceptual.clone(), model.config().input_channels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(NOISE_STREAM);
        Ok(Self {
            step: 0,
            ema: model.params().clone(),
            gen_opt: Adam::new(config.learning_rate, model.params()),
            disc_opt: Adam::new(config.learning_rate, disc.params()),
            model,
            disc,
            rng,
            stats: RollingStats::default(),
            perceptual,
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn phase(&self) -> Phase {
        self.config.phase
    }

    pub fn model(&self) -> &VaeModel<T> {
        &self.model
    }

    pub fn ema_params(&self) -> &ParamStore<T> {
        &self.ema
    }

    /// The model with EMA weights, used for evaluation.
    pub fn ema_model(&self) -> Result<VaeModel<T>> {
        self.model.with_params(self.ema.clone())
    }

    pub fn discriminator(&self) -> &Discriminator<T> {
        &self.disc
    }

    pub fn stats(&self) -> &RollingStats {
        &self.stats
    }

    /// Excludes encoder and latent-head parameters from all further updates.
    pub fn freeze_encoder(&mut self) {
        self.config.phase = Phase::DecoderOnly;
    }

    pub fn set_loss_weights(&mut self, weights: LossWeights) -> Result<()> {
        weights.validate()?;
        self.config.loss = weights;
        Ok(())
    }

    fn trainable(&self, name: &str) -> bool {
        match self.config.phase {
            Phase::Full => true,
            Phase::DecoderOnly => !is_encoder_param(name),
        }
    }

    fn disc_active(&self) -> bool {
        self.step >= self.config.disc_start_step
    }

    fn divergence(&self, component: &str) -> Error {
        Error::Divergence { component: component.to_string(), step: self.step }
    }

    /// One generator update and, once active, one discriminator update on detached reconstructions.
    /// Nothing is modified unless every loss and gradient is finite.
    pub fn train_step(&mut self, batch: &[Image]) -> Result<StepReport> {
        let x = Image::batch_to_tensor::<T>(batch)?;
        self.model.check_input_shape(x.shape()).map_err(|e| validation(e.to_string()))?;
        let (n, _, h, w) = x.dims4()?;
        let f = self.model.config().downscale_factor;
        let latent = [n, self.model.config().latent_channels, h / f, w / f];
        let mut rng = self.rng.clone();
        let noise_data = (0..latent.iter().product::<usize>())
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let noise = Tensor::from_vec(&latent, noise_data)?;
        let weights = self.config.loss;
        let adversarial = self.disc_active();

        let mut g = Graph::new();
        let binding = self.model.bind(&mut g, |name| self.trainable(name));
        let xv = g.constant(x.clone());
        let eps = g.constant(noise);
        let (mu, logvar) = self.model.encode_graph(&mut g, &binding, xv)?;
        let half = g.scale(logvar, 0.5);
        let std = g.exp(half);
        let spread = g.mul(std, eps)?;
        let z = g.add(mu, spread)?;
        let xhat = self.model.decode_graph(&mut g, &binding, z, None)?;

        let kl = kl_graph(&mut g, mu, logvar)?;
        let recon = recon_graph(&mut g, xv, xhat)?;
        let perc = perceptual_graph(&mut g, &self.perceptual, xv, xhat)?;
        let adv = if adversarial {
            let db = self.disc.bind(&mut g, false);
            let logits = self.disc.forward_graph(&mut g, &db, xhat)?;
            Some(adv_generator_graph(&mut g, logits, self.config.adversarial))
        } else {
            None
        };
        let value = |g: &Graph<T>, v: Var| g.value(v).item().as_f64();
        let components = LossComponents {
            kl: value(&g, kl),
            recon: value(&g, recon),
            adv: adv.map_or(0.0, |a| value(&g, a)),
            perc: value(&g, perc),
        };
        let bundle = total_loss(components, &weights).map_err(|e| match e {
            Error::Divergence { component, .. } => self.divergence(&component),
            other => other,
        })?;

        let mut terms = vec![(kl, weights.lambda_kl), (recon, weights.lambda_recon), (perc, weights.lambda_perc)];
        if let Some(a) = adv {
            terms.push((a, weights.lambda_adv));
        }
        let mut objective: Option<Var> = None;
        for (v, lambda) in terms {
            let term = g.scale(v, lambda);
            objective = Some(match objective {
                Some(o) => g.add(o, term)?,
                None => term,
            });
        }
        let objective = objective.expect("at least one loss term");
        let mut grads = g.backward(objective)?;
        let gen_grads: Vec<Option<Tensor<T>>> = self
            .model
            .params()
            .iter()
            .zip(binding.vars())
            .map(|((name, t), &v)| {
                self.trainable(name).then(|| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            })
            .collect();
        if gen_grads.iter().flatten().any(|t| !t.all_finite()) {
            return Err(self.divergence("generator gradient"));
        }
        let xhat_value = g.value(xhat).clone();
        drop(g);

        let (disc_loss, disc_grads) = if adversarial {
            let mut dg = Graph::new();
            let db = self.disc.bind(&mut dg, true);
            let real_in = dg.constant(x);
            let fake_in = dg.constant(xhat_value);
            let real = self.disc.forward_graph(&mut dg, &db, real_in)?;
            let fake = self.disc.forward_graph(&mut dg, &db, fake_in)?;
            let loss = discriminator_graph(&mut dg, real, fake, self.config.discriminator_loss)?;
            let lv = value(&dg, loss);
            if !lv.is_finite() {
                return Err(self.divergence("discriminator"));
            }
            let mut dgrads = dg.backward(loss)?;
            let grads: Vec<Option<Tensor<T>>> = self
                .disc
                .params()
                .iter()
                .zip(db.vars())
                .map(|((_, t), &v)| Some(dgrads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape()))))
                .collect();
            if grads.iter().flatten().any(|t| !t.all_finite()) {
                return Err(self.divergence("discriminator gradient"));
            }
            (Some(lv), Some(grads))
        } else {
            (None, None)
        };

        self.gen_opt.step(self.model.params_mut(), &gen_grads)?;
        if let Some(dgrads) = disc_grads {
            self.disc_opt.step(self.disc.params_mut(), &dgrads)?;
        }
        ema_update(&mut self.ema, self.model.params(), self.config.ema_decay)?;
        self.rng = rng;
        self.stats.push(&bundle.components());
        let report = StepReport {
            step: self.step,
            phase: self.config.phase,
            losses: bundle,
            disc_loss,
            grad_norm: norm_sq(&gen_grads).sqrt(),
        };
        self.step += 1;
        Ok(report)
    }

    /// Runs until `until_step` (exclusive), pulling batch `step` from the dataset each time.
    pub fn run(
        &mut self,
        dataset: &Dataset,
        until_step: u64,
        mut on_step: impl FnMut(&Self, &StepReport) -> Result<()>,
    ) -> Result<Vec<StepReport>> {
        let mut reports = Vec::new();
        while self.step < until_step {
            let batch = dataset.batch(self.step, self.config.batch_size)?;
            let report = self.train_step(&batch)?;
            on_step(self, &report)?;
            reports.push(report);
        }
        Ok(reports)
    }

    /// Full phase for `max_steps`, then `decoder_finetune_steps` with the encoder frozen.
    pub fn fit(
        &mut self,
        dataset: &Dataset,
        mut on_step: impl FnMut(&Self, &StepReport) -> Result<()>,
    ) -> Result<Vec<StepReport>> {
        let mut reports = Vec::new();
        if self.config.phase == Phase::Full {
            reports.extend(self.run(dataset, self.config.max_steps, &mut on_step)?);
        }
        if self.config.decoder_finetune_steps > 0 {
            self.freeze_encoder();
            let until = self.config.max_steps.max(self.step) + self.config.decoder_finetune_steps;
            reports.extend(self.run(dataset, until, &mut on_step)?);
        }
        Ok(reports)
    }
}

/// One JSON object per line: step, phase, loss components, grad norm, wall time.
pub struct MetricsWriter {
    out: BufWriter<File>,
    started: Instant,
}

#[derive(Serialize)]
struct MetricsRecord<'a> {
    step: u64,
    phase: &'a str,
    kl: f64,
    recon: f64,
    adv: f64,
    perc: f64,
    total: f64,
    disc_loss: Option<f64>,
    grad_norm: f64,
    wall_time_s: f64,
}

impl MetricsWriter {
    /// Appends to `path`, creating it if needed.
    pub fn append(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { out: BufWriter::new(file), started: Instant::now() })
    }

    pub fn record(&mut self, r: &StepReport) -> Result<()> {
        let rec = MetricsRecord {
            step: r.step,
            phase: r.phase.name(),
            kl: r.losses.kl,
            recon: r.losses.recon,
            adv: r.losses.adv,
            perc: r.losses.perc,
            total: r.losses.total,
            disc_loss: r.disc_loss,
            grad_norm: r.grad_norm,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        serde_json::to_writer(&mut self.out, &rec)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        Ok(self.out.flush()?)
    }
}
