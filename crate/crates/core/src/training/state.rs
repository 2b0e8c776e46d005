//! Full training-state checkpoints: model, EMA, discriminator, optimizer moments and RNG position.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vivat_autograd::{Scalar, Tensor};

use super::{Adam, RollingStats, TrainConfig, Trainer};
use crate::error::{shape, Error, Result};
use crate::model::{Checkpoint, ModelConfig, ParamStore, VaeModel, MODEL_PREFIX};

pub const TRAIN_KIND: &str = "train_state";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: String,
    word_pos: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainHeader {
    kind: String,
    dtype: String,
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    gen_opt_t: u64,
    disc_opt_t: u64,
    rng: RngState,
    stats: RollingStats,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Format(format!("invalid rng seed {s:?}"));
    if s.len() != 64 {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

fn push_moments<T: Scalar>(ck: &mut Checkpoint, prefix: &str, names: &ParamStore<T>, opt: &Adam<T>) {
    for ((name, _), (m, v)) in names.iter().zip(opt.m.iter().zip(&opt.v)) {
        ck.push(format!("{prefix}.m/{name}"), m);
        ck.push(format!("{prefix}.v/{name}"), v);
    }
}

fn load_moments<T: Scalar>(ck: &Checkpoint, prefix: &str, names: &ParamStore<T>, opt: &mut Adam<T>) -> Result<()> {
    for (i, (name, p)) in names.iter().enumerate() {
        let m: Tensor<T> = ck.tensor(&format!("{prefix}.m/{name}"))?;
        let v: Tensor<T> = ck.tensor(&format!("{prefix}.v/{name}"))?;
        if m.shape() != p.shape() || v.shape() != p.shape() {
            return Err(shape(format!("optimizer moments for {name} have the wrong shape")));
        }
        opt.m[i] = m;
        opt.v[i] = v;
    }
    Ok(())
}

impl<T: Scalar> Trainer<T> {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let header = TrainHeader {
            kind: TRAIN_KIND.into(),
            dtype: T::DTYPE.name().into(),
            model: self.model.config().clone(),
            train: self.config.clone(),
            step: self.step,
            gen_opt_t: self.gen_opt.t,
            disc_opt_t: self.disc_opt.t,
            rng: RngState {
                seed: hex(&self.rng.get_seed()),
                stream: self.rng.get_stream().to_string(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            stats: self.stats,
        };
        let mut ck = Checkpoint::new(header)?;
        ck.push_all(MODEL_PREFIX, self.model.params().iter());
        ck.push_all("ema/", self.ema.iter());
        ck.push_all("disc/", self.disc.params().iter());
        push_moments(&mut ck, "opt.gen", self.model.params(), &self.gen_opt);
        push_moments(&mut ck, "opt.disc", self.disc.params(), &self.disc_opt);
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.write(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let header: TrainHeader = ck.header_as()?;
        if header.kind != TRAIN_KIND {
            return Err(Error::Format(format!("checkpoint kind {:?} is not a training state", header.kind)));
        }
        if header.dtype != T::DTYPE.name() {
            return Err(Error::Format(format!(
                "checkpoint stores {} parameters, requested {}",
                header.dtype,
                T::DTYPE.name()
            )));
        }
        let model = VaeModel::new(header.model, 0)?;
        let mut trainer = Self::from_model(model, header.train)?;
        trainer.model.params_mut().load_from(&ck.tensors_with_prefix(MODEL_PREFIX)?)?;
        trainer.ema.load_from(&ck.tensors_with_prefix("ema/")?)?;
        trainer.disc.params_mut().load_from(&ck.tensors_with_prefix("disc/")?)?;
        let (model_params, disc_params) = (trainer.model.params().clone(), trainer.disc.params().clone());
        load_moments(ck, "opt.gen", &model_params, &mut trainer.gen_opt)?;
        load_moments(ck, "opt.disc", &disc_params, &mut trainer.disc_opt)?;
        trainer.gen_opt.t = header.gen_opt_t;
        trainer.disc_opt.t = header.disc_opt_t;
        trainer.step = header.step;
        trainer.stats = header.stats;
        let parse = |s: &str| s.parse::<u128>().map_err(|_| Error::Format(format!("invalid rng field {s:?}")));
        let mut rng = ChaCha8Rng::from_seed(unhex(&header.rng.seed)?);
        rng.set_stream(parse(&header.rng.stream)? as u64);
        rng.set_word_pos(parse(&header.rng.word_pos)?);
        trainer.rng = rng;
        Ok(trainer)
    }
}

pub fn load_trainer<T: Scalar>(path: &Path) -> Result<Trainer<T>> {
    Trainer::from_checkpoint(&Checkpoint::read(path)?)
}
