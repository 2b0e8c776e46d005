//! Run configuration: library defaults, an optional preset, a TOML file and `--set` overrides, merged in that order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use vivat_core::data::{DatasetSource, PreprocessSpec};
use vivat_core::diagnostics::Thresholds;
use vivat_core::metrics::EvalSpec;
use vivat_core::model::{DecoderNorm, ModelConfig, PaddingPolicy};
use vivat_core::training::TrainConfig;

use crate::error::{CliError, CliResult};

/// File name of the config copy written into every run directory.
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Zero padding, group-norm decoder, stronger KL and adversarial weights.
    Baseline,
    /// Reflect padding, spatially conditioned decoder norm, reduced KL and adversarial weights.
    Vivat,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Baseline => "baseline",
            Preset::Vivat => "vivat",
        })
    }
}

impl Preset {
    pub fn apply(self, cfg: &mut RunConfig) {
        match self {
            Preset::Baseline => {
                cfg.model.padding_policy = PaddingPolicy::Zero;
                cfg.model.decoder_norm = DecoderNorm::GroupNorm;
                cfg.train.loss.lambda_kl = 1e-3;
                cfg.train.loss.lambda_adv = 0.1;
            }
            Preset::Vivat => {
                cfg.model.padding_policy = PaddingPolicy::Reflect;
                cfg.model.decoder_norm = DecoderNorm::Scn;
                cfg.model.latent_channels = 16;
                cfg.train.learning_rate = 1e-4;
                cfg.train.ema_decay = 0.9999;
                cfg.train.loss.lambda_kl = 1e-4;
                cfg.train.loss.lambda_recon = 1.0;
                cfg.train.loss.lambda_adv = 0.01;
                cfg.train.loss.lambda_perc = 0.1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DatasetSource,
    pub preprocess: PreprocessSpec,
    /// Held-out images for metrics and A/B runs; the training source when absent.
    pub eval: Option<DatasetSource>,
    /// Cap on evaluated images.
    pub eval_limit: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { source: DatasetSource::default(), preprocess: PreprocessSpec::default(), eval: None, eval_limit: Some(64) }
    }
}

/// Where a config came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Provenance {
    pub preset: Option<Preset>,
    pub file: Option<PathBuf>,
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalSpec,
    pub thresholds: Thresholds,
    pub provenance: Provenance,
}

/// A parsed `key=value` override with a dotted key.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
    raw: String,
}

impl FromStr for Override {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (key, value) = s.split_once('=').ok_or_else(|| format!("override {s:?} is not of the form key=value"))?;
        let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
        if path.iter().any(String::is_empty) {
            return Err(format!("override key {key:?} has an empty segment"));
        }
        Ok(Self { path, value: parse_value(value.trim()), raw: s.to_string() })
    }
}

/// TOML literal when it parses as one, bare string otherwise.
fn parse_value(text: &str) -> Value {
    format!("v = {text}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

/// Tag key of the dataset-source unions; a table naming a different variant replaces the old one.
const TAG: &str = "kind";

fn same_variant(base: &Table, top: &Table) -> bool {
    top.get(TAG).is_none_or(|k| base.get(TAG) == Some(k))
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) if same_variant(b, &t) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_path(root: &mut Table, o: &Override) -> CliResult<()> {
    let (last, parents) = o.path.split_last().expect("non-empty path");
    let mut table = root;
    for (depth, seg) in parents.iter().enumerate() {
        let entry = table.entry(seg.clone()).or_insert_with(|| Value::Table(Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("--set {}: {} is not a table", o.raw, o.path[..=depth].join(".")))
        })?;
    }
    if last == TAG && table.get(TAG) != Some(&o.value) {
        table.clear();
    }
    table.insert(last.clone(), o.value.clone());
    Ok(())
}

fn to_table(cfg: &RunConfig) -> CliResult<Table> {
    Table::try_from(cfg).map_err(|e| CliError::Config(format!("config cannot be represented as TOML: {e}")))
}

impl RunConfig {
    /// Merges the layers and validates the result.
    pub fn load(preset: Option<Preset>, file: Option<&Path>, overrides: &[Override], seed: Option<u64>) -> CliResult<Self> {
        let mut base = RunConfig::default();
        if let Some(p) = preset {
            p.apply(&mut base);
        }
        let mut table = to_table(&base)?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            let file_table: Table =
                text.parse().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut table, file_table);
        }
        for o in overrides {
            set_path(&mut table, o)?;
        }
        let mut cfg: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            CliError::Config(format!("invalid configuration: {}", e.message()))
        })?;
        if let Some(s) = seed {
            cfg.train.seed = s;
        }
        if preset.is_some() || file.is_some() || !overrides.is_empty() {
            cfg.provenance = Provenance {
                preset: preset.or(cfg.provenance.preset),
                file: file.map(Path::to_path_buf).or(cfg.provenance.file),
                overrides: cfg.provenance.overrides.iter().cloned().chain(overrides.iter().map(|o| o.raw.clone())).collect(),
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let field = |prefix: &str, e: vivat_core::Error| CliError::Config(format!("{prefix}: {e}"));
        self.model.validate().map_err(|e| field("model", e))?;
        self.train.validate().map_err(|e| field("train", e))?;
        self.data.preprocess.validate().map_err(|e| field("data.preprocess", e))?;
        check_source(&self.data.source, "data.source")?;
        if let Some(eval) = &self.data.eval {
            check_source(eval, "data.eval")?;
        }
        if self.eval.batch_size == 0 {
            return Err(CliError::Config("eval.batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(&to_table(self)?).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Writes the config copy that makes a run directory self-describing.
    pub fn write_copy(&self, run_dir: &Path) -> CliResult<()> {
        std::fs::write(run_dir.join(CONFIG_COPY), self.to_toml()?)?;
        Ok(())
    }
}

fn check_source(source: &DatasetSource, field: &str) -> CliResult<()> {
    match source {
        DatasetSource::Directory { root, manifest } => {
            if !root.is_dir() {
                return Err(CliError::Config(format!("{field}.root: directory {} does not exist", root.display())));
            }
            if let Some(m) = manifest {
                let path = if m.is_absolute() { m.clone() } else { root.join(m) };
                if !path.is_file() {
                    return Err(CliError::Config(format!("{field}.manifest: file {} does not exist", path.display())));
                }
            }
            Ok(())
        }
        DatasetSource::Synthetic(s) => s.validate().map_err(|e| CliError::Config(format!("{field}: {e}"))),
    }
}
