//! Subcommand implementations and the plumbing they share.

mod ab;
mod eval;
mod train;

use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use vivat_autograd::Scalar;
use vivat_core::data::{Dataset, DatasetSource};
use vivat_core::model::{model_from_checkpoint, Checkpoint, VaeModel};
use vivat_core::training::{Precision, Trainer, TRAIN_KIND};
use vivat_core::Image;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::{Cli, Command};

/// Calls `$f::<f32>` or `$f::<f64>` according to a [`Precision`].
macro_rules! with_precision {
    ($p:expr, $f:ident($($arg:expr),* $(,)?)) => {
        match $p {
            vivat_core::training::Precision::Fp32 => $f::<f32>($($arg),*),
            vivat_core::training::Precision::Fp64 => $f::<f64>($($arg),*),
        }
    };
}
pub(crate) use with_precision;

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Train { resume } => train::train(cli, resume.as_deref()),
        Command::FinetuneDecoder { checkpoint, steps } => train::finetune(cli, checkpoint, *steps),
        Command::Reconstruct { checkpoint, input, output, trace } => {
            eval::reconstruct(cli, checkpoint, input, output, *trace)
        }
        Command::Diagnose { pairs, spectra } => eval::diagnose(cli, pairs, *spectra),
        Command::Metrics { checkpoint, identity } => eval::metrics(cli, checkpoint.as_deref(), *identity),
        Command::Ab { config_a, config_b } => ab::ab(cli, config_a, config_b),
        Command::Probe { checkpoint, value, size } => eval::probe(cli, checkpoint.as_deref(), *value, *size),
    }
}

pub(crate) fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    RunConfig::load(cli.preset, cli.config.as_deref(), &cli.overrides, cli.seed)
}

/// `--run-dir` if given, else a new `<root>/<command>-<unix time>[-k]`.
pub(crate) fn prepare_run_dir(cli: &Cli) -> CliResult<PathBuf> {
    if let Some(dir) = &cli.run_dir {
        std::fs::create_dir_all(dir)?;
        return Ok(dir.clone());
    }
    std::fs::create_dir_all(&cli.run_root)?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let base = format!("{}-{stamp}", cli.command.name());
    for k in 0u32.. {
        let name = if k == 0 { base.clone() } else { format!("{base}-{k}") };
        let path = cli.run_root.join(name);
        match std::fs::create_dir(&path) {
            Ok(()) => return Ok(path),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("run directory names are unbounded")
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn header_str<'a>(ck: &'a Checkpoint, key: &str) -> CliResult<&'a str> {
    ck.header
        .get(key)
        .and_then(|v| v.as_str())
        .ok_or_else(|| vivat_core::Error::Format(format!("checkpoint header has no {key}")).into())
}

pub(crate) fn checkpoint_precision(ck: &Checkpoint) -> CliResult<Precision> {
    match header_str(ck, "dtype")? {
        "f32" => Ok(Precision::Fp32),
        "f64" => Ok(Precision::Fp64),
        other => Err(vivat_core::Error::Format(format!("unknown checkpoint dtype {other:?}")).into()),
    }
}

/// The model to evaluate: the EMA weights of a training state, or a model checkpoint as stored.
pub(crate) fn eval_model<T: Scalar>(ck: &Checkpoint) -> CliResult<VaeModel<T>> {
    if header_str(ck, "kind")? == TRAIN_KIND {
        Ok(Trainer::<T>::from_checkpoint(ck)?.ema_model()?)
    } else {
        Ok(model_from_checkpoint(ck)?)
    }
}

pub(crate) fn training_data(cfg: &RunConfig) -> CliResult<Dataset> {
    Ok(Dataset::open(&cfg.data.source, cfg.data.preprocess.clone(), cfg.train.seed)?)
}

/// Center-cropped evaluation images with their labels.
pub(crate) fn eval_set(cfg: &RunConfig) -> CliResult<(Vec<Image>, Vec<String>)> {
    let source = cfg.data.eval.as_ref().unwrap_or(&cfg.data.source);
    let ds = Dataset::open(source, cfg.data.preprocess.clone(), cfg.train.seed)?;
    let images = ds.eval_items(cfg.data.eval_limit)?;
    let labels = (0..images.len()).map(|i| ds.label(i)).collect();
    Ok((images, labels))
}

/// Side of the images the configured pipeline produces.
pub(crate) fn image_side(cfg: &RunConfig) -> usize {
    match cfg.data.eval.as_ref().unwrap_or(&cfg.data.source) {
        DatasetSource::Synthetic(s) => s.size,
        DatasetSource::Directory { .. } => cfg.data.preprocess.crop_size,
    }
}

/// Sorted PNG files of a directory.
pub(crate) fn list_pngs(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))? {
        let path = entry?.path();
        if path.is_file() && path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub(crate) fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub(crate) fn hex_digest(d: u64) -> String {
    format!("{d:016x}")
}
