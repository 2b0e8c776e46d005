mod common;

use common::*;
use proptest::prelude::*;
use vivat_autograd::Tensor;
use vivat_core::losses::{
    adv_generator_loss, discriminator_loss, kl_loss, perceptual_loss, recon_loss, total_loss, AdvVariant, DiscConfig,
    DiscVariant, Discriminator, LossBundle, LossComponents, LossWeights, PerceptualConfig, RandomPyramid,
};
use vivat_core::model::LatentDistribution;
use vivat_core::Error;

#[test]
fn default_weights() {
    let w = LossWeights::default();
    assert_eq!((w.lambda_kl, w.lambda_recon, w.lambda_adv, w.lambda_perc), (1e-4, 1.0, 0.01, 0.1));
}

#[test]
fn total_loss_arithmetic() {
    let w = LossWeights::default();
    let zero = total_loss(LossComponents::default(), &w).unwrap();
    assert_eq!(zero.total, 0.0);
    let ones = total_loss(LossComponents { kl: 1.0, recon: 1.0, adv: 1.0, perc: 1.0 }, &w).unwrap();
    assert!((ones.total - 1.1101).abs() < 1e-12);
    assert!(ones.is_consistent(&w));
}

#[test]
fn non_finite_component_is_divergence() {
    let w = LossWeights::default();
    for (i, name) in ["kl", "recon", "adv", "perc"].iter().enumerate() {
        let mut v = [0.5; 4];
        v[i] = if i % 2 == 0 { f64::NAN } else { f64::INFINITY };
        let c = LossComponents { kl: v[0], recon: v[1], adv: v[2], perc: v[3] };
        match total_loss(c, &w) {
            Err(Error::Divergence { component, .. }) => assert_eq!(&component, name),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
    let huge = LossWeights { lambda_recon: f64::MAX, ..w };
    let c = LossComponents { kl: 0.0, recon: 4.0, adv: 0.0, perc: 0.0 };
    assert!(matches!(total_loss(c, &huge), Err(Error::Divergence { component, .. }) if component == "total"));
}

#[test]
fn negative_weight_is_rejected() {
    assert!(LossWeights { lambda_adv: -0.1, ..LossWeights::default() }.validate().is_err());
    assert!(LossWeights { lambda_kl: f64::NAN, ..LossWeights::default() }.validate().is_err());
}

#[test]
fn kl_analytic_and_monte_carlo() {
    let mu = vec![0.8, -0.4, 1.1];
    let lv = vec![0.3, -0.7, 0.0];
    let dist = LatentDistribution::new(
        Tensor::from_vec(&[1, 3, 1, 1], mu.clone()).unwrap(),
        Tensor::from_vec(&[1, 3, 1, 1], lv.clone()).unwrap(),
    )
    .unwrap();
    let closed: f64 = mu.iter().zip(&lv).map(|(m, l): (&f64, &f64)| 0.5 * (m * m + l.exp() - 1.0 - l)).sum();
    let k = kl_loss(&dist).unwrap();
    assert!((k - closed).abs() < 1e-12);
    let mc = mc_kl(&mu, &lv, 200_000, &mut rng(1));
    assert!((k - mc).abs() / k < 0.02, "{k} vs {mc}");
}

#[test]
fn kl_averages_over_positions() {
    // Two positions with KL 0.5 and 0 average to 0.25.
    let dist = LatentDistribution::new(
        Tensor::<f64>::from_vec(&[2, 1, 1, 1], vec![1.0, 0.0]).unwrap(),
        Tensor::zeros(&[2, 1, 1, 1]),
    )
    .unwrap();
    assert!((kl_loss(&dist).unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn discriminator_map_follows_receptive_field_arithmetic() {
    let cfg = DiscConfig { layers: 4, base_channels: 4 };
    let d = Discriminator::<f64>::new(cfg.clone(), 3, 0).unwrap();
    for (h, w) in [(16, 16), (32, 24), (64, 64)] {
        let x = Tensor::full(&[2, 3, h, w], 0.5);
        let logits = d.logits(&x).unwrap();
        let (oh, ow) = cfg.output_size(h, w).unwrap();
        assert_eq!(logits.shape(), &[2, 1, oh, ow]);
        assert_eq!((oh, ow), (h / 8 - 1, w / 8 - 1));
    }
    assert!(d.logits(&Tensor::full(&[1, 3, 4, 4], 0.5)).is_err());
}

#[test]
fn perceptual_extractor_is_frozen_and_seeded() {
    let a = RandomPyramid::<f64>::new(PerceptualConfig::default(), 3).unwrap();
    let b = RandomPyramid::<f64>::new(PerceptualConfig::default(), 3).unwrap();
    assert_eq!(a.kernels(), b.kernels());
    let c = RandomPyramid::<f64>::new(PerceptualConfig { seed: 1, ..PerceptualConfig::default() }, 3).unwrap();
    assert_ne!(a.kernels(), c.kernels());
    let mut r = rng(2);
    let x = uniform_tensor(&[1, 3, 16, 16], 0.0, 1.0, &mut r);
    let y = uniform_tensor(&[1, 3, 16, 16], 0.0, 1.0, &mut r);
    let before = a.kernels().to_vec();
    let l1 = perceptual_loss(&a, &x, &y).unwrap();
    let l2 = perceptual_loss(&a, &x, &y).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(a.kernels(), &before[..]);
}

#[test]
fn losses_reject_bad_inputs() {
    let a = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
    let b = Tensor::<f64>::zeros(&[1, 3, 4, 2]);
    assert!(recon_loss(&a, &b).is_err());
    let mut nan = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
    nan.data_mut()[0] = f64::NAN;
    assert!(adv_generator_loss(&nan, AdvVariant::NonSaturating).is_err());
    assert!(discriminator_loss(&nan, &nan, DiscVariant::Vanilla).is_err());
}

/// Reorders the batch axis of an `[N, ...]` tensor.
fn permute(t: &Tensor<f64>, order: &[usize]) -> Tensor<f64> {
    let per = t.numel() / t.shape()[0];
    let data = order.iter().flat_map(|&i| t.data()[i * per..(i + 1) * per].to_vec()).collect();
    Tensor::from_vec(t.shape(), data).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn kl_is_non_negative_and_zero_only_at_prior(seed in 0u64..10_000, scale in 0.0f64..3.0) {
        let mut r = rng(seed);
        let mu = random_tensor(&[2, 3, 2, 2], scale, &mut r);
        let lv = random_tensor(&[2, 3, 2, 2], scale, &mut r);
        let k = kl_loss(&LatentDistribution::new(mu.clone(), lv.clone()).unwrap()).unwrap();
        prop_assert!(k >= 0.0);
        let far = mu.data().iter().chain(lv.data()).any(|v| v.abs() > 1e-3);
        if far {
            prop_assert!(k > 1e-9);
        }
        let prior = LatentDistribution::new(Tensor::<f64>::zeros(&[2, 3, 2, 2]), Tensor::zeros(&[2, 3, 2, 2])).unwrap();
        prop_assert!(kl_loss(&prior).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn losses_are_permutation_invariant_over_batch(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let order = [2usize, 0, 3, 1];
        let x = uniform_tensor(&[4, 3, 8, 8], 0.0, 1.0, &mut r);
        let y = uniform_tensor(&[4, 3, 8, 8], 0.0, 1.0, &mut r);
        let (px, py) = (permute(&x, &order), permute(&y, &order));
        prop_assert!(close(recon_loss(&x, &y).unwrap(), recon_loss(&px, &py).unwrap()));
        let pyramid = RandomPyramid::<f64>::new(PerceptualConfig::default(), 3).unwrap();
        prop_assert!(close(perceptual_loss(&pyramid, &x, &y).unwrap(), perceptual_loss(&pyramid, &px, &py).unwrap()));
        let mu = random_tensor(&[4, 2, 2, 2], 1.0, &mut r);
        let lv = random_tensor(&[4, 2, 2, 2], 1.0, &mut r);
        let k = kl_loss(&LatentDistribution::new(mu.clone(), lv.clone()).unwrap()).unwrap();
        let kp = kl_loss(&LatentDistribution::new(permute(&mu, &order), permute(&lv, &order)).unwrap()).unwrap();
        prop_assert!(close(k, kp));
        let real = random_tensor(&[4, 1, 3, 3], 2.0, &mut r);
        let fake = random_tensor(&[4, 1, 3, 3], 2.0, &mut r);
        for v in [AdvVariant::Saturating, AdvVariant::NonSaturating, AdvVariant::Hinge] {
            prop_assert!(close(adv_generator_loss(&fake, v).unwrap(), adv_generator_loss(&permute(&fake, &order), v).unwrap()));
        }
        for v in [DiscVariant::Vanilla, DiscVariant::Hinge] {
            let a = discriminator_loss(&real, &fake, v).unwrap();
            let b = discriminator_loss(&permute(&real, &order), &permute(&fake, &order), v).unwrap();
            prop_assert!(close(a, b));
        }
    }

    #[test]
    fn recon_and_perceptual_are_symmetric_and_zero_on_identity(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let x = uniform_tensor(&[1, 3, 8, 8], 0.0, 1.0, &mut r);
        let y = uniform_tensor(&[1, 3, 8, 8], 0.0, 1.0, &mut r);
        prop_assert_eq!(recon_loss(&x, &x).unwrap(), 0.0);
        prop_assert!(close(recon_loss(&x, &y).unwrap(), recon_loss(&y, &x).unwrap()));
        let pyramid = RandomPyramid::<f64>::new(PerceptualConfig::default(), 3).unwrap();
        prop_assert_eq!(perceptual_loss(&pyramid, &x, &x).unwrap(), 0.0);
        prop_assert!(perceptual_loss(&pyramid, &x, &y).unwrap() > 0.0);
    }

    #[test]
    fn bundle_total_is_exact_weighted_sum(
        kl in 0.0f64..10.0, recon in 0.0f64..1.0, adv in 0.0f64..5.0, perc in 0.0f64..2.0,
        lk in 0.0f64..1.0, la in 0.0f64..1.0,
    ) {
        let w = LossWeights { lambda_kl: lk, lambda_adv: la, ..LossWeights::default() };
        let c = LossComponents { kl, recon, adv, perc };
        let b = total_loss(c, &w).unwrap();
        prop_assert!(b.is_consistent(&w));
        prop_assert_eq!(b.total, LossBundle::weighted_sum(&c, &w));
    }
}
