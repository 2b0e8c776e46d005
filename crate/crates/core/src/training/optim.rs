use vivat_autograd::{Scalar, Tensor};

use crate::error::{shape, validation, Result};
use crate::model::ParamStore;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam without weight decay; moments are kept per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self { lr, t: 0, m: zeros(), v: zeros() }
    }

    /// One update. `grads[i] = None` leaves parameter `i` and its moments untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(shape("optimizer state does not match parameter count"));
        }
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t.min(i32::MAX as u64) as i32);
        let step_size = T::lit(self.lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let (b1, b2, eps) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2), T::lit(ADAM_EPS));
        let (one_b1, one_b2) = (T::lit(1.0 - ADAM_BETA1), T::lit(1.0 - ADAM_BETA2));
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let p = params.get_mut(id);
            if g.shape() != p.shape() {
                return Err(shape(format!("gradient shape {:?} vs parameter {:?}", g.shape(), p.shape())));
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                *pv -= step_size * *mv / ((*vv).sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

/// `ema' = decay * ema + (1 - decay) * params`, kept inside `[min, max]` of the two inputs.
pub fn ema_update<T: Scalar>(ema: &mut ParamStore<T>, params: &ParamStore<T>, decay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(validation(format!("ema decay {decay} outside [0, 1]")));
    }
    if !ema.congruent(params) {
        return Err(validation("ema and model parameters are not shape-congruent"));
    }
    let (d, rest) = (T::lit(decay), T::lit(1.0 - decay));
    for id in params.ids().collect::<Vec<_>>() {
        let src = params.get(id);
        for (e, &p) in ema.get_mut(id).data_mut().iter_mut().zip(src.data()) {
            let mixed = d * *e + rest * p;
            *e = mixed.max(e.min(p)).min(e.max(p));
        }
    }
    Ok(())
}
