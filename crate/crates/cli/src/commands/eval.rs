use std::path::{Path, PathBuf};

use log::warn;
use serde::Serialize;
use vivat_autograd::Scalar;
use vivat_core::diagnostics::{
    aggregate, constant_input_probe, diagnose_pair, export_residual_spectrum, norm_stats, ArtifactAggregate,
    ArtifactReport, NormStats, StageUniformity, Thresholds,
};
use vivat_core::image::save_heatmap_png;
use vivat_core::metrics::{evaluate, IdentityReconstructor, MetricReport};
use vivat_core::model::{Checkpoint, LatentSample, VaeModel};
use vivat_core::Image;

use super::{
    checkpoint_precision, eval_model, eval_set, file_stem, image_side, list_pngs, load_config, prepare_run_dir,
    with_precision, write_json,
};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::Cli;

#[derive(Debug, Serialize)]
struct Skipped {
    file: PathBuf,
    reason: String,
}

#[derive(Debug, Serialize)]
struct ReconstructSummary {
    checkpoint: PathBuf,
    processed: usize,
    skipped: Vec<Skipped>,
}

/// Largest centered crop whose sides are multiples of `f`.
fn crop_to_multiple(img: &Image, f: usize) -> Option<Image> {
    let (h, w, c) = img.dims();
    let (nh, nw) = (h - h % f, w - w % f);
    if nh == 0 || nw == 0 {
        return None;
    }
    let (oy, ox) = ((h - nh) / 2, (w - nw) / 2);
    Some(Image::from_fn(nw, nh, c, |ch, y, x| img.get(ch, y + oy, x + ox)))
}

fn reconstruct_one<T: Scalar>(
    model: &VaeModel<T>,
    x: &Image,
    thresholds: &Thresholds,
    trace: bool,
    out: &Path,
    stem: &str,
) -> CliResult<()> {
    let dist = model.encode(std::slice::from_ref(x))?;
    let decoded = model.decode(&LatentSample { z: dist.mu }, trace)?;
    let y = Image::batch_from_tensor(&decoded.images)?.remove(0).clamped();
    let mut t = *thresholds;
    t.grid_period = model.config().downscale_factor;
    let report = diagnose_pair(x, &y, &t)?;
    Image::side_by_side(&[x, &y])?.save_png(&out.join(format!("{stem}_pair.png")))?;
    write_json(&out.join(format!("{stem}.json")), &report)?;
    for (i, layer) in decoded.traces.iter().flatten().flat_map(|t| &t.layers).enumerate() {
        let name = format!("{stem}_trace_{i:02}_{}.png", layer.name.replace('.', "_"));
        save_heatmap_png(&layer.norms, layer.width, layer.height, &out.join(name))?;
    }
    Ok(())
}

fn reconstruct_typed<T: Scalar>(
    ck: &Checkpoint,
    cfg: &RunConfig,
    files: &[PathBuf],
    out: &Path,
    trace: bool,
) -> CliResult<ReconstructSummary> {
    let model = eval_model::<T>(ck)?;
    let f = model.config().downscale_factor;
    let mut summary = ReconstructSummary { checkpoint: PathBuf::new(), processed: 0, skipped: Vec::new() };
    for path in files {
        let attempt = Image::load_png(path).map_err(CliError::from).and_then(|img| {
            let x = crop_to_multiple(&img, f)
                .ok_or_else(|| CliError::Failed(format!("image smaller than the downscale factor {f}")))?;
            reconstruct_one(&model, &x, &cfg.thresholds, trace, out, &file_stem(path))
        });
        match attempt {
            Ok(()) => summary.processed += 1,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                summary.skipped.push(Skipped { file: path.clone(), reason: e.to_string() });
            }
        }
    }
    Ok(summary)
}

pub fn reconstruct(cli: &Cli, checkpoint: &Path, input: &Path, output: &Path, trace: bool) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let ck = Checkpoint::read(checkpoint)?;
    let files = list_pngs(input)?;
    std::fs::create_dir_all(output)?;
    let mut s = with_precision!(checkpoint_precision(&ck)?, reconstruct_typed(&ck, &cfg, &files, output, trace))?;
    s.checkpoint = checkpoint.to_path_buf();
    write_json(&output.join("summary.json"), &s)?;
    println!("reconstructed {} images ({} skipped) into {}", s.processed, s.skipped.len(), output.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct PairReport {
    name: String,
    report: ArtifactReport,
}

#[derive(Debug, Serialize)]
struct DiagnoseSummary {
    pairs: Vec<PairReport>,
    aggregate: ArtifactAggregate,
    skipped: Vec<Skipped>,
}

pub fn diagnose(cli: &Cli, pairs: &Path, spectra: bool) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let (input_dir, recon_dir) = (pairs.join("input"), pairs.join("recon"));
    let files = list_pngs(&input_dir)?;
    let dir = prepare_run_dir(cli)?;
    if spectra {
        std::fs::create_dir_all(dir.join("spectra"))?;
    }
    let mut out = DiagnoseSummary { pairs: Vec::new(), aggregate: ArtifactAggregate::default(), skipped: Vec::new() };
    for path in &files {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let attempt = (|| -> CliResult<ArtifactReport> {
            let x = Image::load_png(path)?;
            let y = Image::load_png(&recon_dir.join(&name))?;
            let report = diagnose_pair(&x, &y, &cfg.thresholds)?;
            if spectra {
                export_residual_spectrum(&x, &y, &dir.join("spectra").join(file_stem(path)))?;
            }
            Ok(report)
        })();
        match attempt {
            Ok(report) => out.pairs.push(PairReport { name, report }),
            Err(e) => {
                warn!("skipping {name}: {e}");
                out.skipped.push(Skipped { file: path.clone(), reason: e.to_string() });
            }
        }
    }
    let reports: Vec<ArtifactReport> = out.pairs.iter().map(|p| p.report.clone()).collect();
    out.aggregate = aggregate(&reports);
    write_json(&dir.join("diagnose.json"), &out)?;
    let a = &out.aggregate;
    println!(
        "{} pairs ({} skipped): flag rates grid {:.2} blur {:.2} corner {:.2} droplet {:.2} color {:.2}; report in {}",
        a.count,
        out.skipped.len(),
        a.grid_rate,
        a.blur_rate,
        a.corner_rate,
        a.droplet_rate,
        a.color_shift_rate,
        dir.display()
    );
    Ok(())
}

fn model_metrics<T: Scalar>(ck: &Checkpoint, cfg: &RunConfig, images: &[Image], labels: &[String]) -> CliResult<MetricReport> {
    Ok(evaluate(&eval_model::<T>(ck)?, images, labels, &cfg.eval)?)
}

pub fn metrics(cli: &Cli, checkpoint: Option<&Path>, identity: bool) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let (images, labels) = eval_set(&cfg)?;
    let report = match checkpoint {
        Some(path) if !identity => {
            let ck = Checkpoint::read(path)?;
            with_precision!(checkpoint_precision(&ck)?, model_metrics(&ck, &cfg, &images, &labels))?
        }
        _ => evaluate(&IdentityReconstructor, &images, &labels, &cfg.eval)?,
    };
    let dir = prepare_run_dir(cli)?;
    report.write_json(&dir.join("metrics.json"))?;
    report.write_csv(&dir.join("metrics.csv"))?;
    println!(
        "{}: PSNR {:.3} dB, SSIM {:.4} over {} images; report in {}",
        report.model,
        report.psnr.mean,
        report.ssim.mean,
        report.psnr.count,
        dir.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ProbeReport {
    value: f64,
    size: usize,
    stages: Vec<StageUniformity>,
    max_relative_deviation: f64,
    max_border_ratio: f64,
    /// Decoder activation-norm statistics of the first evaluation images.
    norm_stats: Vec<NormStats>,
    mean_max_outlier_ratio: f64,
}

/// Evaluation images decoded for activation statistics.
const PROBE_IMAGES: usize = 8;

fn probe_typed<T: Scalar>(
    ck: Option<&Checkpoint>,
    cfg: &RunConfig,
    value: f64,
    size: usize,
) -> CliResult<ProbeReport> {
    let model = match ck {
        Some(ck) => eval_model::<T>(ck)?,
        None => VaeModel::<T>::new(cfg.model.clone(), cfg.train.seed)?,
    };
    let stages = constant_input_probe(&model, size, size, value)?;
    let (images, _) = eval_set(cfg)?;
    let mut stats = Vec::new();
    for chunk in images[..images.len().min(PROBE_IMAGES)].chunks(cfg.eval.batch_size) {
        let dist = model.encode(chunk)?;
        for trace in model.decode(&LatentSample { z: dist.mu }, true)?.traces.unwrap_or_default() {
            stats.push(norm_stats(&trace)?);
        }
    }
    let mean_outlier = stats.iter().map(NormStats::max_outlier_ratio).sum::<f64>() / stats.len().max(1) as f64;
    Ok(ProbeReport {
        value,
        size,
        max_relative_deviation: stages.iter().map(|s| s.relative_deviation).fold(0.0, f64::max),
        max_border_ratio: stages.iter().map(|s| s.border_ratio).fold(1.0, f64::max),
        stages,
        norm_stats: stats,
        mean_max_outlier_ratio: mean_outlier,
    })
}

pub fn probe(cli: &Cli, checkpoint: Option<&Path>, value: f64, size: Option<usize>) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let ck = checkpoint.map(Checkpoint::read).transpose()?;
    let precision = match &ck {
        Some(ck) => checkpoint_precision(ck)?,
        None => cfg.train.precision,
    };
    let size = size.unwrap_or_else(|| image_side(&cfg));
    let report = with_precision!(precision, probe_typed(ck.as_ref(), &cfg, value, size))?;
    let dir = prepare_run_dir(cli)?;
    write_json(&dir.join("probe.json"), &report)?;
    println!(
        "constant-input deviation {:.3e}, border ratio {:.3}, mean outlier ratio {:.3}; report in {}",
        report.max_relative_deviation,
        report.max_border_ratio,
        report.mean_max_outlier_ratio,
        dir.display()
    );
    Ok(())
}
