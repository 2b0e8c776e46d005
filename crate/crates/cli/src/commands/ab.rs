use std::path::Path;

use vivat_autograd::Scalar;
use vivat_core::data::Dataset;
use vivat_core::diagnostics::{ab_compare, AbEvalSpec, AbVariant, ComparisonReport};
use vivat_core::Image;

use super::{eval_set, file_stem, prepare_run_dir, training_data, with_precision, write_json};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::Cli;

fn compare<T: Scalar>(
    a: &AbVariant,
    b: &AbVariant,
    data: &Dataset,
    eval: &[Image],
    spec: &AbEvalSpec,
) -> CliResult<ComparisonReport> {
    Ok(ab_compare::<T>(a, b, data, eval, spec)?)
}

fn variant(name: String, cfg: &RunConfig) -> AbVariant {
    AbVariant { name, model: cfg.model.clone(), train: cfg.train.clone() }
}

pub fn ab(cli: &Cli, config_a: &Path, config_b: &Path) -> CliResult<()> {
    let load = |p: &Path| RunConfig::load(cli.preset, Some(p), &cli.overrides, cli.seed);
    let (a, b) = (load(config_a)?, load(config_b)?);
    if a.data != b.data {
        return Err(CliError::Config("ab: the [data] sections differ; both variants must see the same images".into()));
    }
    if a.train.precision != b.train.precision {
        return Err(CliError::Config("ab: train.precision differs between the variants".into()));
    }
    let (mut name_a, mut name_b) = (file_stem(config_a), file_stem(config_b));
    if name_a == name_b {
        (name_a, name_b) = ("a".into(), "b".into());
    }
    let data = training_data(&a)?;
    let (eval, _) = eval_set(&a)?;
    let spec = AbEvalSpec { thresholds: a.thresholds, metrics: a.eval.clone(), ..AbEvalSpec::default() };
    let dir = prepare_run_dir(cli)?;
    a.write_copy(&dir)?;
    std::fs::rename(dir.join(crate::config::CONFIG_COPY), dir.join("config_a.toml"))?;
    b.write_copy(&dir)?;
    std::fs::rename(dir.join(crate::config::CONFIG_COPY), dir.join("config_b.toml"))?;
    let (va, vb) = (variant(name_a, &a), variant(name_b, &b));
    let report = with_precision!(a.train.precision, compare(&va, &vb, &data, &eval, &spec))?;
    write_json(&dir.join("ab.json"), &report)?;
    println!("{} vs {} (deltas are b - a):", report.a.name, report.b.name);
    for (k, d) in &report.deltas {
        println!("  {k:<28} {d:+.6e}");
    }
    println!("report in {}", dir.display());
    Ok(())
}
