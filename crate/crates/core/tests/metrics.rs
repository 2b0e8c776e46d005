mod common;

use common::*;
use proptest::prelude::*;
use vivat_core::metrics::{evaluate, psnr, ssim, EvalSpec, IdentityReconstructor, Reconstructor, SsimParams, PSNR_CAP_DB};
use vivat_core::model::{ModelConfig, VaeModel};
use vivat_core::Image;

#[test]
fn psnr_is_capped_for_identical_inputs() {
    let x = random_image(10, 10, 3, &mut rng(0));
    assert_eq!(psnr(&x, &x, 1.0).unwrap(), PSNR_CAP_DB);
    assert!(psnr(&x, &Image::filled(9, 10, 3, 0.0), 1.0).is_err());
}

#[test]
fn evaluate_model_report_is_self_consistent() {
    let model = VaeModel::<f32>::new(ModelConfig::micro(2, 8, 4), 3).unwrap();
    let mut r = rng(3);
    let imgs: Vec<Image> = (0..5).map(|_| random_image(16, 16, 3, &mut r)).collect();
    let labels: Vec<String> = (0..5).map(|i| format!("img{i}.png")).collect();
    let spec = EvalSpec { batch_size: 2, ..EvalSpec::default() };
    let report = evaluate(&model, &imgs, &labels, &spec).unwrap();
    assert_eq!(report.per_image.len(), 5);
    assert_eq!(report.resolution, [16, 16]);
    assert_eq!(report.model, model.identifier());
    assert_eq!((report.psnr, report.ssim), report.recompute_aggregates());
    let recon = model.reconstruct(&imgs).unwrap();
    for ((m, x), y) in report.per_image.iter().zip(&imgs).zip(&recon) {
        assert!((m.psnr - psnr_direct(x, &y.clamped())).abs() < 1e-9);
    }
    assert!(evaluate(&model, &imgs, &labels[..4], &spec).is_err());
    assert!(evaluate(&IdentityReconstructor, &[], &[], &spec).is_err());
}

#[test]
fn reports_serialize_to_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(4);
    let imgs: Vec<Image> = (0..3).map(|_| random_image(12, 12, 3, &mut r)).collect();
    let labels: Vec<String> = (0..3).map(|i| format!("a/{i}.png")).collect();
    let report = evaluate(&IdentityReconstructor, &imgs, &labels, &EvalSpec::default()).unwrap();

    let json = dir.path().join("m.json");
    report.write_json(&json).unwrap();
    let back: vivat_core::metrics::MetricReport = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(back, report);

    let csv = dir.path().join("m.csv");
    report.write_csv(&csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path,psnr,ssim");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("a/0.png,100,1"));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn metrics_are_symmetric_and_bounded(seed in 0u64..10_000, w in 11usize..20, h in 11usize..20) {
        let mut r = rng(seed);
        let x = random_image(w, h, 3, &mut r);
        let y = jitter(&x, 0.1, &mut r);
        let p = SsimParams::default();
        let (s1, s2) = (ssim(&x, &y, &p).unwrap(), ssim(&y, &x, &p).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-9);
        prop_assert!(s1 <= 1.0 && s1 > -1.0);
        prop_assert!((psnr(&x, &y, 1.0).unwrap() - psnr(&y, &x, 1.0).unwrap()).abs() < 1e-9);
        prop_assert!((s1 - ssim_direct(&x, &y, 11, 1.5, 1.0)).abs() < 1e-5);
    }
}
