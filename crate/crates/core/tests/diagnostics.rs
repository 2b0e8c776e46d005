mod common;

use common::*;
use proptest::prelude::*;
use vivat_core::data::{gaussian_blur, Dataset, SynthConfig};
use vivat_core::diagnostics::{
    aggregate, detect_blur, detect_color_shift, detect_corner, detect_droplet, detect_grid, diagnose_pair,
    export_residual_spectrum, norm_stats, summarize_variant, AbEvalSpec, ComparisonReport, Thresholds, RATIO_CAP,
};
use vivat_core::model::{ActivationTrace, ModelConfig, TraceLayer, VaeModel};
use vivat_core::{Error, Image};

fn texture(seed: u64) -> Image {
    vivat_core::data::synth_texture(&SynthConfig { size: 32, seed, ..SynthConfig::default() }, 0)
}

#[test]
fn identical_pair_scores_zero_everywhere() {
    let x = texture(1);
    let r = diagnose_pair(&x, &x, &Thresholds::default()).unwrap();
    assert_eq!((r.color_shift.score, r.grid.score, r.droplet.score), (0.0, 0.0, 0.0));
    assert_eq!(r.corner.ratio, 1.0);
    assert_eq!(r.blur.ratio, Some(1.0));
    assert!(!r.any_flag() && r.flags_consistent());
}

#[test]
fn color_shift_reports_dominant_channel() {
    let x = Image::filled(16, 16, 3, 0.4);
    let mut y = x.clone();
    for v in y.plane_mut(1) {
        *v += 0.1;
    }
    let c = detect_color_shift(&x, &y, 0.02).unwrap();
    assert_eq!(c.dominant_channel, 1);
    assert!((c.shift[1] - 0.1).abs() < 1e-6 && c.shift[0] == 0.0);
    assert!(c.flag);
}

#[test]
fn grid_score_is_phase_invariant() {
    let x = Image::filled(32, 32, 3, 0.5);
    let noisy = jitter(&x, 0.01, &mut rng(3));
    let scores: Vec<f64> =
        (0..8).map(|p| detect_grid(&x, &inject_grid(&noisy, 8, 0.05, (p, (p * 3) % 8)), 8, 20.0).unwrap().score).collect();
    let (lo, hi) = scores.iter().fold((f64::MAX, 0.0f64), |(a, b), s| (a.min(*s), b.max(*s)));
    assert!(lo > 20.0, "{scores:?}");
    assert!((hi - lo) / lo < 0.05, "{scores:?}");
    let g = detect_grid(&x, &inject_grid(&noisy, 8, 0.05, (0, 0)), 8, 20.0).unwrap();
    // Some harmonic of the mesh period.
    let k = 8.0 / g.period.unwrap();
    assert!((k - k.round()).abs() < 1e-9, "{:?}", g.period);
}

#[test]
fn grid_rejects_tiny_images() {
    let x = Image::filled(12, 12, 1, 0.5);
    assert!(detect_grid(&x, &x, 8, 20.0).is_err());
}

#[test]
fn corner_ratio_and_band_validation() {
    let x = Image::filled(32, 32, 3, 0.5);
    let y = Image::from_fn(32, 32, 3, |_, r, c| if r < 4 || c < 4 || r >= 28 || c >= 28 { 0.6 } else { 0.5 });
    let k = detect_corner(&x, &y, 4, 2.0).unwrap();
    assert_eq!(k.ratio, RATIO_CAP);
    assert!(k.flag);
    assert!(matches!(detect_corner(&x, &y, 8, 2.0), Err(Error::Validation(_))));
    assert!(detect_corner(&x, &y, 0, 2.0).is_err());
}

#[test]
fn blur_detector() {
    let flat = Image::filled(32, 32, 3, 0.5);
    let b = detect_blur(&flat, &flat, 0.125, 0.6).unwrap();
    assert!(b.ratio.is_none() && !b.flag && b.note.is_some());
    let x = texture(2);
    let b = detect_blur(&x, &gaussian_blur(&x, 2.0).unwrap(), 0.125, 0.6).unwrap();
    assert!(b.ratio.unwrap() < 0.6 && b.flag);
}

#[test]
fn droplet_is_localised() {
    let x = jitter(&Image::filled(32, 32, 3, 0.4), 0.0, &mut rng(0));
    let noisy = jitter(&x, 0.01, &mut rng(5));
    let y = inject_spot(&noisy, 3, 0.5, (20, 9));
    let d = detect_droplet(&x, &y, 4, 6.0).unwrap();
    assert!(d.flag, "{}", d.score);
    let (cy, cx) = d.location;
    assert!(cy.abs_diff(21) <= 4 && cx.abs_diff(10) <= 4, "{:?}", d.location);
    assert!(detect_droplet(&x, &y, 40, 6.0).is_err());
}

#[test]
fn norm_stats_find_the_outlier() {
    let layer = |norms: Vec<f64>| TraceLayer { name: "l".into(), height: 4, width: 4, norms };
    let flat = norm_stats(&ActivationTrace { layers: vec![layer(vec![2.0; 16])] }).unwrap();
    assert_eq!(flat.layers[0].outlier_ratio, 1.0);
    let mut spiky = vec![1.0; 16];
    spiky[2 * 4 + 3] = 10.0;
    let s = norm_stats(&ActivationTrace { layers: vec![layer(vec![2.0; 16]), layer(spiky)] }).unwrap();
    assert_eq!(s.layers[1].argmax, (2, 3));
    assert!((s.layers[1].outlier_ratio - 10.0).abs() < 1e-12);
    assert!((s.max_outlier_ratio() - 10.0).abs() < 1e-12);
    assert!(norm_stats(&ActivationTrace::default()).is_err());
}

#[test]
fn spectrum_export_writes_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let x = texture(3);
    let y = jitter(&x, 0.05, &mut rng(1));
    let stem = dir.path().join("residual");
    export_residual_spectrum(&x, &y, &stem).unwrap();
    assert!(dir.path().join("residual.png").is_file());
    let raw = std::fs::metadata(dir.path().join("residual.f32")).unwrap().len();
    assert!(raw >= 32 * 32 * 4);
}

#[test]
fn comparison_requires_a_shared_eval_set() {
    let model = VaeModel::<f32>::new(ModelConfig::micro(2, 4, 2), 1).unwrap();
    let spec = AbEvalSpec::default();
    let ds = Dataset::synthetic(&SynthConfig { size: 16, count: 4, seed: 1, ..SynthConfig::default() }, 0).unwrap();
    let eval_a = ds.eval_items(None).unwrap();
    let eval_b: Vec<Image> = eval_a.iter().map(|i| i.map(|v| v * 0.9)).collect();
    let a = summarize_variant("a", 0, &model, &eval_a, &spec).unwrap();
    let b = summarize_variant("b", 0, &model, &eval_b, &spec).unwrap();
    assert!(ComparisonReport::from_summaries(a.clone(), b).is_err());
    let same = ComparisonReport::from_summaries(a.clone(), a).unwrap();
    assert!(same.deltas.values().all(|d| *d == 0.0));
    for key in ["psnr", "ssim", "grid_score", "blur_ratio", "corner_ratio", "max_outlier_ratio", "recon_mse"] {
        assert_eq!(same.delta(key), Some(0.0), "{key}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn aggregate_is_permutation_invariant(seed in 0u64..1000, shift in 0usize..5) {
        let mut r = rng(seed);
        let reports: Vec<_> = (0..5)
            .map(|i| {
                let x = random_image(32, 32, 3, &mut r);
                let y = jitter(&x, 0.01 * (i + 1) as f64, &mut r);
                diagnose_pair(&x, &y, &Thresholds::default()).unwrap()
            })
            .collect();
        prop_assert!(reports.iter().all(|r| r.flags_consistent()));
        let mut rotated = reports.clone();
        rotated.rotate_left(shift);
        rotated.swap(0, 4);
        prop_assert_eq!(aggregate(&reports), aggregate(&rotated));
    }
}
