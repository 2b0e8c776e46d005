mod common;

use common::*;
use proptest::prelude::*;
use vivat_autograd::Tensor;
use vivat_core::model::{
    load_model, reparameterize, save_model, Checkpoint, LatentDistribution, LatentSample, ModelConfig, PaddingPolicy,
    VaeModel, FORMAT_VERSION,
};
use vivat_core::{Error, Image};

fn images(n: usize, size: usize, seed: u64) -> Vec<Image> {
    let mut r = rng(seed);
    (0..n).map(|_| random_image(size, size, 3, &mut r)).collect()
}

#[test]
fn encode_decode_shapes() {
    let model = VaeModel::<f32>::new(ModelConfig::micro(3, 8, 4), 1).unwrap();
    let dist = model.encode(&images(2, 32, 1)).unwrap();
    assert_eq!(dist.shape(), &[2, 4, 8, 8]);
    assert_eq!(dist.logvar.shape(), dist.mu.shape());
    let out = model.decode(&LatentSample { z: dist.mu.clone() }, true).unwrap();
    assert_eq!(out.images.shape(), &[2, 3, 32, 32]);
    let recon = model.reconstruct(&images(1, 24, 2)).unwrap();
    assert_eq!(recon[0].dims(), (24, 24, 3));
}

#[test]
fn input_not_divisible_by_factor_is_a_shape_error() {
    let model = VaeModel::<f32>::new(ModelConfig::micro(4, 4, 2), 1).unwrap();
    let err = model.encode(&images(1, 250, 3)).unwrap_err();
    assert!(matches!(err, Error::Shape(_)), "{err}");
    assert!(err.to_string().contains("250x250"));
}

#[test]
fn non_finite_input_is_rejected() {
    let model = VaeModel::<f32>::new(ModelConfig::micro(2, 4, 2), 1).unwrap();
    let mut img = Image::filled(8, 8, 3, 0.5);
    img.set(1, 2, 3, f32::NAN);
    assert!(matches!(model.encode(&[img]), Err(Error::Validation(_))));
}

#[test]
fn reparameterize_checks_shape_and_zero_noise_gives_mean() {
    let mut r = rng(4);
    let dist = LatentDistribution::new(random_tensor(&[1, 2, 3, 3], 1.0, &mut r), random_tensor(&[1, 2, 3, 3], 1.0, &mut r))
        .unwrap();
    let z = reparameterize(&dist, &Tensor::zeros(&[1, 2, 3, 3])).unwrap();
    assert_eq!(z.z, dist.mu);
    assert!(matches!(reparameterize(&dist, &Tensor::zeros(&[1, 2, 3, 2])), Err(Error::Validation(_))));
}

#[test]
fn latent_distribution_rejects_mismatch_and_non_finite() {
    let a = Tensor::<f32>::zeros(&[1, 2, 2, 2]);
    assert!(LatentDistribution::new(a.clone(), Tensor::zeros(&[1, 2, 2, 1])).is_err());
    let mut bad = a.clone();
    bad.data_mut()[0] = f32::INFINITY;
    assert!(LatentDistribution::new(a, bad).is_err());
}

/// Sample moments of `z` over 1e5 draws match `mu` and `exp(logvar)`.
#[test]
fn reparameterization_moments_match_monte_carlo() {
    let mu = [0.7, -1.2, 0.0];
    let lv = [0.0, -2.0, 1.5];
    let dist = LatentDistribution::new(
        Tensor::from_vec(&[1, 3, 1, 1], mu.to_vec()).unwrap(),
        Tensor::from_vec(&[1, 3, 1, 1], lv.to_vec()).unwrap(),
    )
    .unwrap();
    let n = 100_000;
    let mut r = rng(5);
    let (mut s1, mut s2) = ([0.0; 3], [0.0; 3]);
    for _ in 0..n {
        let noise = random_tensor(&[1, 3, 1, 1], 1.0, &mut r);
        let z = reparameterize(&dist, &noise).unwrap().z;
        for c in 0..3 {
            s1[c] += z.data()[c];
            s2[c] += z.data()[c] * z.data()[c];
        }
    }
    for c in 0..3 {
        let mean = s1[c] / n as f64;
        let var = s2[c] / n as f64 - mean * mean;
        let sd = (lv[c] * 0.5f64).exp();
        // Five standard errors.
        assert!((mean - mu[c]).abs() < 5.0 * sd / (n as f64).sqrt(), "mean {c}: {mean}");
        assert!((var / (sd * sd) - 1.0).abs() < 5.0 * (2.0 / n as f64).sqrt(), "var {c}: {var}");
    }
}

#[test]
fn forward_is_bit_identical_across_calls() {
    let model = VaeModel::<f32>::new(ModelConfig::micro(2, 8, 4), 7).unwrap();
    let x = Image::batch_to_tensor::<f32>(&images(2, 16, 7)).unwrap();
    let noise = random_tensor(&[2, 4, 8, 8], 1.0, &mut rng(8)).cast::<f32>();
    let (a, da) = model.forward(&x, &noise).unwrap();
    let (b, db) = model.forward(&x, &noise).unwrap();
    assert_eq!(a, b);
    assert_eq!(da, db);
}

#[test]
fn same_seed_same_parameters() {
    let a = VaeModel::<f32>::new(ModelConfig::micro(2, 8, 4), 11).unwrap();
    let b = VaeModel::<f32>::new(ModelConfig::micro(2, 8, 4), 11).unwrap();
    let c = VaeModel::<f32>::new(ModelConfig::micro(2, 8, 4), 12).unwrap();
    assert_eq!(a.params().digest(|_| true), b.params().digest(|_| true));
    assert_ne!(a.params().digest(|_| true), c.params().digest(|_| true));
}

#[test]
fn save_load_forward_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    for seed in [1u64, 2] {
        let mut model = VaeModel::<f64>::new(ModelConfig::micro(2, 8, 4), seed).unwrap();
        randomize(model.params_mut(), 0.1, seed);
        let path = dir.path().join(format!("m{seed}.ckpt"));
        save_model(&model, &path).unwrap();
        let loaded = load_model::<f64>(&path).unwrap();
        assert_eq!(loaded.config(), model.config());
        let x = images(1, 16, seed);
        let (a, b) = (model.reconstruct(&x).unwrap(), loaded.reconstruct(&x).unwrap());
        assert!(a[0].data().iter().zip(b[0].data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn checkpoint_rejects_corruption_and_future_versions() {
    let dir = tempfile::tempdir().unwrap();
    let model = VaeModel::<f32>::new(ModelConfig::micro(2, 4, 2), 3).unwrap();
    let path = dir.path().join("m.ckpt");
    save_model(&model, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for pos in [0, 20, bytes.len() / 2, bytes.len() - 1] {
        let mut b = bytes.clone();
        b[pos] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&b), Err(Error::Integrity(_))), "byte {pos}");
    }
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 5]), Err(Error::Integrity(_) | Error::Format(_))));
    assert_eq!(FORMAT_VERSION, 1);
}

#[test]
fn loading_into_mismatched_layout_fails() {
    let a = VaeModel::<f32>::new(ModelConfig::micro(2, 4, 2), 3).unwrap();
    let b = VaeModel::<f32>::new(ModelConfig::micro(2, 8, 2), 3).unwrap();
    assert!(matches!(a.with_params(b.params().clone()), Err(Error::Shape(_))));
}

#[test]
fn trace_has_one_non_negative_map_per_decoder_stage() {
    let model = VaeModel::<f32>::new(ModelConfig::micro(3, 8, 4), 2).unwrap();
    let dist = model.encode(&images(2, 16, 2)).unwrap();
    let traces = model.decode(&LatentSample { z: dist.mu }, true).unwrap().traces.unwrap();
    assert_eq!(traces.len(), 2);
    let names: Vec<&str> = traces[0].layers.iter().map(|l| l.name.as_str()).collect();
    assert_eq!(names.first(), Some(&"decoder.conv_in"));
    assert!(!names.contains(&"decoder.out"));
    for layer in &traces[0].layers {
        assert_eq!(layer.norms.len(), layer.height * layer.width);
        assert!(layer.norms.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}

#[test]
fn reflect_padding_keeps_constant_inputs_constant_for_random_weights() {
    for seed in 0..3 {
        let mut cfg = ModelConfig::micro(2, 8, 4);
        cfg.padding_policy = PaddingPolicy::Reflect;
        let mut model = VaeModel::<f64>::new(cfg, seed).unwrap();
        randomize(model.params_mut(), 0.3, seed + 100);
        let x = Tensor::full(&[1, 3, 16, 16], 0.3);
        for (stage, t) in model.stage_activations(&x).unwrap() {
            let (_, c, h, w) = t.dims4().unwrap();
            for ch in 0..c {
                let plane = &t.data()[ch * h * w..(ch + 1) * h * w];
                let scale = plane.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
                let spread = plane.iter().fold(0.0f64, |m, v| m.max((v - plane[0]).abs()));
                assert!(spread / scale <= 1e-5, "{stage} channel {ch}: {}", spread / scale);
            }
        }
    }
}

#[test]
fn zero_padding_breaks_constancy_at_the_border() {
    let mut cfg = ModelConfig::micro(2, 8, 4);
    cfg.padding_policy = PaddingPolicy::Zero;
    let model = VaeModel::<f64>::new(cfg, 1).unwrap();
    let x = Tensor::full(&[1, 3, 16, 16], 0.3);
    let (_, t) = model.stage_activations(&x).unwrap().into_iter().next().unwrap();
    let (_, _, h, w) = t.dims4().unwrap();
    let corner = t.data()[0];
    let centre = t.data()[(h / 2) * w + w / 2];
    assert_ne!(corner, centre);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn shape_algebra_round_trips(levels in 3usize..=4, hm in 2usize..=4, wm in 2usize..=4) {
        let model = VaeModel::<f32>::new(ModelConfig::micro(levels, 4, 2), 0).unwrap();
        let f = model.config().downscale_factor;
        let (h, w) = (hm * f, wm * f);
        let img = Image::filled(w, h, 3, 0.5);
        let dist = model.encode(&[img]).unwrap();
        prop_assert_eq!(dist.shape(), &[1, 2, h / f, w / f]);
        let out = model.decode(&LatentSample { z: dist.mu }, false).unwrap();
        prop_assert_eq!(out.images.shape(), &[1, 3, h, w]);
    }

    #[test]
    fn zero_noise_forward_equals_mean_reconstruction(seed in 0u64..1000) {
        let model = VaeModel::<f32>::new(ModelConfig::micro(2, 4, 2), seed).unwrap();
        let imgs = images(1, 8, seed);
        let x = Image::batch_to_tensor::<f32>(&imgs).unwrap();
        let (out, _) = model.forward(&x, &Tensor::zeros(&[1, 2, 4, 4])).unwrap();
        let recon = model.reconstruct(&imgs).unwrap();
        prop_assert_eq!(Image::batch_from_tensor(&out).unwrap(), recon);
    }
}
