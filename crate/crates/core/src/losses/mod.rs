//! Training objectives: KL, reconstruction, adversarial and perceptual terms.
//!
//! Every loss exists in two forms: a graph builder used by training, and an
//! eager function over tensors that evaluates the same graph.

mod discriminator;
mod perceptual;

use serde::{Deserialize, Serialize};
use vivat_autograd::{Graph, Scalar, Tensor, Var};

pub use discriminator::{DiscConfig, Discriminator, DISC_PREFIX};
pub use perceptual::{FeatureExtractor, IdentityExtractor, PerceptualConfig, RandomPyramid};

use crate::error::{validation, Error, Result};
use crate::model::LatentDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_kl: f64,
    pub lambda_recon: f64,
    pub lambda_adv: f64,
    pub lambda_perc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_kl: 1e-4, lambda_recon: 1.0, lambda_adv: 0.01, lambda_perc: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !v.is_finite() || v < 0.0 {
                return Err(validation(format!("loss.{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("lambda_kl", self.lambda_kl),
            ("lambda_recon", self.lambda_recon),
            ("lambda_adv", self.lambda_adv),
            ("lambda_perc", self.lambda_perc),
        ]
    }
}

/// Unweighted component values of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub kl: f64,
    pub recon: f64,
    pub adv: f64,
    pub perc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub kl: f64,
    pub recon: f64,
    pub adv: f64,
    pub perc: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn weighted_sum(c: &LossComponents, w: &LossWeights) -> f64 {
        w.lambda_kl * c.kl + w.lambda_recon * c.recon + w.lambda_adv * c.adv + w.lambda_perc * c.perc
    }

    pub fn components(&self) -> LossComponents {
        LossComponents { kl: self.kl, recon: self.recon, adv: self.adv, perc: self.perc }
    }

    /// Whether `total` equals the weighted sum recomputed from the components.
    pub fn is_consistent(&self, w: &LossWeights) -> bool {
        Self::weighted_sum(&self.components(), w) == self.total
    }
}

/// Weighted objective; fails on the first non-finite component.
pub fn total_loss(c: LossComponents, w: &LossWeights) -> Result<LossBundle> {
    for (name, v) in [("kl", c.kl), ("recon", c.recon), ("adv", c.adv), ("perc", c.perc)] {
        if !v.is_finite() {
            return Err(Error::Divergence { component: name.to_string(), step: 0 });
        }
    }
    let total = LossBundle::weighted_sum(&c, w);
    if !total.is_finite() {
        return Err(Error::Divergence { component: "total".to_string(), step: 0 });
    }
    Ok(LossBundle { kl: c.kl, recon: c.recon, adv: c.adv, perc: c.perc, total })
}

/// Generator-side adversarial objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvVariant {
    /// Literal `log(1 - D(x_hat))`, i.e. `-softplus(logit)`.
    Saturating,
    #[default]
    NonSaturating,
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscVariant {
    #[default]
    Vanilla,
    Hinge,
}

/// `-1/2 * mean over positions of sum_j (1 + lv - mu^2 - exp(lv))`.
pub fn kl_graph<T: Scalar>(g: &mut Graph<T>, mu: Var, logvar: Var) -> Result<Var> {
    let shape = g.shape(mu).to_vec();
    let channels = *shape.get(1).ok_or_else(|| validation("kl: expected [N, C, H, W] latent"))?;
    let positions = shape.iter().product::<usize>() / channels.max(1);
    let one_plus = g.add_scalar(logvar, 1.0);
    let mu2 = g.square(mu);
    let var = g.exp(logvar);
    let a = g.sub(one_plus, mu2)?;
    let inner = g.sub(a, var)?;
    let total = g.sum(inner);
    Ok(g.scale(total, -0.5 / positions as f64))
}

pub fn recon_graph<T: Scalar>(g: &mut Graph<T>, x: Var, xhat: Var) -> Result<Var> {
    let d = g.sub(xhat, x)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

pub fn adv_generator_graph<T: Scalar>(g: &mut Graph<T>, logits: Var, variant: AdvVariant) -> Var {
    match variant {
        AdvVariant::Saturating => {
            let sp = g.softplus(logits);
            let m = g.mean(sp);
            g.scale(m, -1.0)
        }
        AdvVariant::NonSaturating => {
            let neg = g.scale(logits, -1.0);
            let sp = g.softplus(neg);
            g.mean(sp)
        }
        AdvVariant::Hinge => {
            let m = g.mean(logits);
            g.scale(m, -1.0)
        }
    }
}

pub fn discriminator_graph<T: Scalar>(g: &mut Graph<T>, real: Var, fake: Var, variant: DiscVariant) -> Result<Var> {
    let (r, f) = match variant {
        DiscVariant::Vanilla => {
            let neg = g.scale(real, -1.0);
            (g.softplus(neg), g.softplus(fake))
        }
        DiscVariant::Hinge => {
            let neg = g.scale(real, -1.0);
            let r = g.add_scalar(neg, 1.0);
            let f = g.add_scalar(fake, 1.0);
            (g.relu(r), g.relu(f))
        }
    };
    let (rm, fm) = (g.mean(r), g.mean(f));
    Ok(g.add(rm, fm)?)
}

/// `sum_l w_l * mean |phi_l(x) - phi_l(x_hat)|`.
pub fn perceptual_graph<T: Scalar, E: FeatureExtractor<T> + ?Sized>(
    g: &mut Graph<T>,
    extractor: &E,
    x: Var,
    xhat: Var,
) -> Result<Var> {
    let fx = extractor.features(g, x)?;
    let fy = extractor.features(g, xhat)?;
    let weights = extractor.level_weights();
    if fx.len() != weights.len() || fy.len() != weights.len() {
        return Err(validation("perceptual: extractor returned a level count different from its weights"));
    }
    let mut total: Option<Var> = None;
    for ((a, b), &w) in fx.into_iter().zip(fy).zip(weights) {
        let d = g.sub(b, a)?;
        let ad = g.abs(d);
        let m = g.mean(ad);
        let term = g.scale(m, w);
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| validation("perceptual: extractor has no levels"))
}

fn ensure_finite<T: Scalar>(what: &str, t: &Tensor<T>) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(validation(format!("{what} contains non-finite values")))
    }
}

fn ensure_same<T: Scalar>(what: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(validation(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape())))
    }
}

fn eval<T: Scalar>(inputs: &[&Tensor<T>], f: impl FnOnce(&mut Graph<T>, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant((*t).clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item().as_f64())
}

pub fn kl_loss<T: Scalar>(dist: &LatentDistribution<T>) -> Result<f64> {
    ensure_finite("kl: mu", &dist.mu)?;
    ensure_finite("kl: logvar", &dist.logvar)?;
    eval(&[&dist.mu, &dist.logvar], |g, v| kl_graph(g, v[0], v[1]))
}

pub fn recon_loss<T: Scalar>(x: &Tensor<T>, xhat: &Tensor<T>) -> Result<f64> {
    ensure_same("recon", x, xhat)?;
    eval(&[x, xhat], |g, v| recon_graph(g, v[0], v[1]))
}

pub fn adv_generator_loss<T: Scalar>(logits: &Tensor<T>, variant: AdvVariant) -> Result<f64> {
    ensure_finite("adversarial logits", logits)?;
    eval(&[logits], |g, v| Ok(adv_generator_graph(g, v[0], variant)))
}

pub fn discriminator_loss<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>, variant: DiscVariant) -> Result<f64> {
    ensure_finite("real logits", real)?;
    ensure_finite("fake logits", fake)?;
    eval(&[real, fake], |g, v| discriminator_graph(g, v[0], v[1], variant))
}

pub fn perceptual_loss<T: Scalar, E: FeatureExtractor<T> + ?Sized>(
    extractor: &E,
    x: &Tensor<T>,
    xhat: &Tensor<T>,
) -> Result<f64> {
    ensure_same("perceptual", x, xhat)?;
    eval(&[x, xhat], |g, v| perceptual_graph(g, extractor, v[0], v[1]))
}
