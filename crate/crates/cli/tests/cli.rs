use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use vivat_core::Image;

const TINY: &str = r#"
[model]
base_channels = 8
channel_multipliers = [1, 1]
downscale_factor = 2
latent_channels = 4
attention_levels = [1]
group_norm_groups = 4
blocks_per_level = 1

[train]
learning_rate = 1e-3
batch_size = 2
max_steps = 4

[train.disc]
layers = 3
base_channels = 4

[data]
eval_limit = 3

[data.source]
kind = "synthetic"
size = 16
count = 10
"#;

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Runs `vivat --config tiny.toml <args>` inside the sandbox.
    fn vivat(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_vivat"))
            .current_dir(self.dir.path())
            .env("VIVAT_RUN_ROOT", self.path("runs"))
            .env("RUST_LOG", "warn")
            .arg("--config")
            .arg("tiny.toml")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.vivat(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_str(&std::fs::read_to_string(self.path(rel)).unwrap()).unwrap()
    }

    fn write_pngs(&self, dir: &str, n: usize) {
        std::fs::create_dir_all(self.path(dir)).unwrap();
        for i in 0..n {
            let img = Image::from_fn(18, 20, 3, |c, y, x| ((c * 7 + y * 3 + x * 5 + i) % 11) as f32 / 10.0);
            img.save_png(&self.path(&format!("{dir}/img{i}.png"))).unwrap();
        }
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Metrics lines without the wall-clock field.
fn trajectory(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_time_s");
            v
        })
        .collect()
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.clone(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn train_writes_a_self_describing_run_directory() {
    let s = Sandbox::new();
    s.ok(&["--run-dir", "r1", "--set", "train.max_steps=10", "--set", "train.checkpoint_every=5", "train"]);
    let metrics = trajectory(&s.path("r1/metrics.jsonl"));
    assert_eq!(metrics.len(), 10);
    assert_eq!(metrics[9]["step"], 9);
    for f in ["config.toml", "model.ckpt", "summary.json", "checkpoints/last.ckpt", "checkpoints/step-00000005.ckpt"] {
        assert!(s.path(&format!("r1/{f}")).is_file(), "{f}");
    }
    assert_eq!(s.json("r1/summary.json")["step"], 10);

    // Re-running from the copied config reproduces the trajectory bit for bit.
    let out = Command::new(env!("CARGO_BIN_EXE_vivat"))
        .current_dir(s.dir.path())
        .args(["--config", "r1/config.toml", "--run-dir", "r2", "train"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(trajectory(&s.path("r2/metrics.jsonl")), metrics);
}

#[test]
fn seed_flag_changes_the_run() {
    let s = Sandbox::new();
    s.ok(&["--run-dir", "a", "--seed", "1", "train"]);
    s.ok(&["--run-dir", "b", "--seed", "1", "train"]);
    s.ok(&["--run-dir", "c", "--seed", "2", "train"]);
    assert_eq!(trajectory(&s.path("a/metrics.jsonl")), trajectory(&s.path("b/metrics.jsonl")));
    assert_ne!(trajectory(&s.path("a/metrics.jsonl")), trajectory(&s.path("c/metrics.jsonl")));
}

#[test]
fn run_root_comes_from_the_environment() {
    let s = Sandbox::new();
    s.ok(&["probe"]);
    let runs: Vec<_> = std::fs::read_dir(s.path("runs")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(runs.len(), 1);
    assert!(runs[0].to_string_lossy().starts_with("probe-"));
}

#[test]
fn config_errors_exit_with_2_and_name_the_field() {
    let s = Sandbox::new();
    let out = s.vivat(&["--set", "data.source.kind=directory", "--set", "data.source.root=missing", "train"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("data.source.root"), "{}", stderr(&out));
    let out = s.vivat(&["--set", "train.batch_size=0", "train"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("train.batch_size"));
    assert_eq!(code(&s.vivat(&["--set", "model.bogus=1", "train"])), 2);
    assert_eq!(code(&s.vivat(&["--set", "novalue", "train"])), 2);
}

#[test]
fn divergence_exits_with_3_and_keeps_last_finite_state() {
    let s = Sandbox::new();
    let out = s.vivat(&["--run-dir", "d", "--set", "train.learning_rate=1e30", "--set", "train.max_steps=6", "train"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
    assert!(s.path("d/checkpoints/last.ckpt").is_file());
}

#[test]
fn corrupted_checkpoint_exits_with_4() {
    let s = Sandbox::new();
    s.ok(&["--run-dir", "r", "train"]);
    let mut bytes = std::fs::read(s.path("r/model.ckpt")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(s.path("bad.ckpt"), bytes).unwrap();
    let out = s.vivat(&["probe", "--checkpoint", "bad.ckpt"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("integrity"));
}

#[test]
fn baseline_preset_is_recorded_in_the_config_copy() {
    let s = Sandbox::new();
    s.ok(&["--preset", "baseline", "--run-dir", "b", "--set", "train.max_steps=1", "train"]);
    let copy: toml::Table = std::fs::read_to_string(s.path("b/config.toml")).unwrap().parse().unwrap();
    assert_eq!(copy["model"]["padding_policy"].as_str(), Some("zero"));
    assert_eq!(copy["model"]["decoder_norm"].as_str(), Some("group_norm"));
    assert_eq!(copy["train"]["loss"]["lambda_kl"].as_float(), Some(1e-3));
    assert_eq!(copy["train"]["loss"]["lambda_adv"].as_float(), Some(0.1));
    assert_eq!(copy["provenance"]["preset"].as_str(), Some("baseline"));
}

#[test]
fn finetune_decoder_continues_with_a_frozen_encoder() {
    let s = Sandbox::new();
    s.ok(&["--run-dir", "r", "train"]);
    s.ok(&["--run-dir", "f", "finetune-decoder", "--checkpoint", "r/checkpoints/last.ckpt", "--steps", "3"]);
    let metrics = trajectory(&s.path("f/metrics.jsonl"));
    let steps: Vec<u64> = metrics.iter().map(|m| m["step"].as_u64().unwrap()).collect();
    assert_eq!(steps, [4, 5, 6]);
    assert!(metrics.iter().all(|m| m["phase"] == "decoder_only"));
    let summary = s.json("f/summary.json");
    assert_eq!(summary["encoder_digest"], s.json("r/summary.json")["encoder_digest"]);
    assert_ne!(summary["decoder_digest"], s.json("r/summary.json")["decoder_digest"]);
    assert_eq!(code(&s.vivat(&["finetune-decoder", "--checkpoint", "r/checkpoints/last.ckpt"])), 2);
}

#[test]
fn reconstruct_is_deterministic_and_skips_unreadable_files() {
    let s = Sandbox::new();
    s.ok(&["--run-dir", "r", "train"]);
    s.write_pngs("in", 3);
    std::fs::write(s.path("in/broken.png"), b"not a png").unwrap();
    let before = dir_bytes(&s.path("in"));
    s.ok(&["reconstruct", "--checkpoint", "r/model.ckpt", "--input", "in", "--output", "o1", "--trace"]);
    s.ok(&["reconstruct", "--checkpoint", "r/model.ckpt", "--input", "in", "--output", "o2"]);
    assert_eq!(dir_bytes(&s.path("in")), before);
    for i in 0..3 {
        let pair = format!("img{i}_pair.png");
        assert_eq!(std::fs::read(s.path(&format!("o1/{pair}"))).unwrap(), std::fs::read(s.path(&format!("o2/{pair}"))).unwrap());
        let report = s.json(&format!("o1/img{i}.json"));
        assert!(report["grid"]["score"].is_number());
        assert!(s.path(&format!("o1/img{i}_trace_00_decoder_conv_in.png")).is_file());
    }
    let summary = s.json("o1/summary.json");
    assert_eq!(summary["processed"], 3);
    assert_eq!(summary["skipped"].as_array().unwrap().len(), 1);
}

#[test]
fn diagnose_identical_pairs_raises_no_flags() {
    let s = Sandbox::new();
    s.write_pngs("pairs/input", 3);
    s.write_pngs("pairs/recon", 3);
    s.ok(&["--run-dir", "d", "diagnose", "--pairs", "pairs", "--spectra"]);
    let report = s.json("d/diagnose.json");
    assert_eq!(report["aggregate"]["count"], 3);
    for rate in ["grid_rate", "blur_rate", "corner_rate", "droplet_rate", "color_shift_rate"] {
        assert_eq!(report["aggregate"][rate], 0.0, "{rate}");
    }
    assert!(s.path("d/spectra/img0.png").is_file());
}

#[test]
fn metrics_on_identity_is_perfect() {
    let s = Sandbox::new();
    s.ok(&["--run-dir", "m", "metrics", "--identity"]);
    let report = s.json("m/metrics.json");
    assert_eq!(report["psnr"]["mean"], 100.0);
    assert_eq!(report["ssim"]["mean"], 1.0);
    assert_eq!(report["per_image"].as_array().unwrap().len(), 3);
    let csv = std::fs::read_to_string(s.path("m/metrics.csv")).unwrap();
    assert!(csv.starts_with("path,psnr,ssim\n"));
    assert_eq!(code(&s.vivat(&["metrics"])), 2);
}

#[test]
fn ab_with_identical_configs_has_zero_deltas() {
    let s = Sandbox::new();
    std::fs::copy(s.path("tiny.toml"), s.path("other.toml")).unwrap();
    s.ok(&["--run-dir", "ab", "ab", "--config-a", "tiny.toml", "--config-b", "other.toml"]);
    let report = s.json("ab/ab.json");
    let deltas = report["deltas"].as_object().unwrap();
    assert!(deltas.contains_key("grid_score") && deltas.contains_key("max_outlier_ratio"));
    assert!(deltas.values().all(|d| d.as_f64() == Some(0.0)), "{deltas:?}");
    std::fs::write(s.path("other.toml"), format!("{TINY}\n[data.preprocess]\ncrop_size = 200\n")).unwrap();
    assert_eq!(code(&s.vivat(&["ab", "--config-a", "tiny.toml", "--config-b", "other.toml"])), 2);
}

#[test]
fn probe_separates_padding_policies() {
    let s = Sandbox::new();
    s.ok(&["--run-dir", "reflect", "probe"]);
    s.ok(&["--run-dir", "zero", "--set", "model.padding_policy=zero", "probe"]);
    let reflect = s.json("reflect/probe.json");
    let zero = s.json("zero/probe.json");
    assert!(reflect["max_relative_deviation"].as_f64().unwrap() <= 1e-5);
    assert!(zero["max_border_ratio"].as_f64().unwrap() > 1.1);
}
