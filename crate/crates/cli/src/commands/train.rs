use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use vivat_autograd::Scalar;
use vivat_core::data::Dataset;
use vivat_core::model::{is_encoder_param, save_model, Checkpoint};
use vivat_core::training::{MetricsWriter, RollingStats, StepReport, Trainer};

use super::{checkpoint_precision, hex_digest, load_config, prepare_run_dir, training_data, with_precision, write_json};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::Cli;

#[derive(Debug, Serialize)]
struct TrainSummary {
    command: &'static str,
    step: u64,
    phase: &'static str,
    steps_run: usize,
    last: Option<StepReport>,
    stats: RollingStats,
    encoder_digest_before: String,
    encoder_digest: String,
    decoder_digest: String,
    state: PathBuf,
    model: PathBuf,
}

enum Until {
    /// The configured phases.
    Fit,
    Step(u64),
}

/// Trains with metrics logging and checkpoints; the last finite state is saved even on divergence.
fn drive<T: Scalar>(
    command: &'static str,
    trainer: &mut Trainer<T>,
    data: &Dataset,
    dir: &Path,
    until: Until,
) -> CliResult<TrainSummary> {
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let mut metrics = MetricsWriter::append(&dir.join("metrics.jsonl"))?;
    let every = trainer.config().checkpoint_every;
    let encoder_before = trainer.model().params().digest(is_encoder_param);
    let mut on_step = |t: &Trainer<T>, r: &StepReport| -> vivat_core::Result<()> {
        metrics.record(r)?;
        if every > 0 && t.step() % every == 0 {
            metrics.flush()?;
            t.save(&ckpt_dir.join(format!("step-{:08}.ckpt", t.step())))?;
        }
        if t.step() % 50 == 0 {
            info!("step {} total {:.5} recon {:.5}", r.step, r.losses.total, r.losses.recon);
        }
        Ok(())
    };
    let result = match until {
        Until::Fit => trainer.fit(data, &mut on_step),
        Until::Step(n) => trainer.run(data, n, &mut on_step),
    };
    metrics.flush()?;
    let state = ckpt_dir.join("last.ckpt");
    trainer.save(&state)?;
    let reports = result?;
    let model = dir.join("model.ckpt");
    save_model(&trainer.ema_model()?, &model)?;
    let summary = TrainSummary {
        command,
        step: trainer.step(),
        phase: trainer.phase().name(),
        steps_run: reports.len(),
        last: reports.last().copied(),
        stats: *trainer.stats(),
        encoder_digest_before: hex_digest(encoder_before),
        encoder_digest: hex_digest(trainer.model().params().digest(is_encoder_param)),
        decoder_digest: hex_digest(trainer.model().params().digest(|n| !is_encoder_param(n))),
        state,
        model,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Records the trainer's own model and train settings in the run copy.
fn write_effective_config<T: Scalar>(cfg: &RunConfig, trainer: &Trainer<T>, dir: &Path) -> CliResult<()> {
    let mut copy = cfg.clone();
    copy.model = trainer.model().config().clone();
    copy.train = trainer.config().clone();
    copy.write_copy(dir)
}

fn train_typed<T: Scalar>(cfg: &RunConfig, resume: Option<&Checkpoint>, dir: &Path) -> CliResult<TrainSummary> {
    let data = training_data(cfg)?;
    let mut trainer = match resume {
        Some(ck) => Trainer::<T>::from_checkpoint(ck)?,
        None => Trainer::<T>::new(cfg.model.clone(), cfg.train.clone())?,
    };
    write_effective_config(cfg, &trainer, dir)?;
    drive("train", &mut trainer, &data, dir, Until::Fit)
}

pub fn train(cli: &Cli, resume: Option<&Path>) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let resume = resume.map(Checkpoint::read).transpose()?;
    let precision = match &resume {
        Some(ck) => checkpoint_precision(ck)?,
        None => cfg.train.precision,
    };
    let dir = prepare_run_dir(cli)?;
    let s = with_precision!(precision, train_typed(&cfg, resume.as_ref(), &dir))?;
    println!("trained to step {} ({} steps this run); outputs in {}", s.step, s.steps_run, dir.display());
    Ok(())
}

fn finetune_typed<T: Scalar>(cfg: &RunConfig, ck: &Checkpoint, steps: u64, dir: &Path) -> CliResult<TrainSummary> {
    let data = training_data(cfg)?;
    let mut trainer = Trainer::<T>::from_checkpoint(ck)?;
    trainer.freeze_encoder();
    write_effective_config(cfg, &trainer, dir)?;
    let until = trainer.step() + steps;
    let summary = drive("finetune-decoder", &mut trainer, &data, dir, Until::Step(until))?;
    if summary.encoder_digest != summary.encoder_digest_before {
        return Err(CliError::Failed("encoder parameters changed during decoder-only training".into()));
    }
    Ok(summary)
}

pub fn finetune(cli: &Cli, checkpoint: &Path, steps: Option<u64>) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let steps = steps.unwrap_or(cfg.train.decoder_finetune_steps);
    if steps == 0 {
        return Err(CliError::Config("finetune-decoder needs --steps or train.decoder_finetune_steps > 0".into()));
    }
    let ck = Checkpoint::read(checkpoint)?;
    let dir = prepare_run_dir(cli)?;
    let s = with_precision!(checkpoint_precision(&ck)?, finetune_typed(&cfg, &ck, steps, &dir))?;
    println!(
        "decoder-only training to step {}; encoder digest {} unchanged; outputs in {}",
        s.step,
        s.encoder_digest,
        dir.display()
    );
    Ok(())
}
