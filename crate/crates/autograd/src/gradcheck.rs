//! Central finite-difference oracle for reverse-mode gradients.

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Smallest gradient norm used as a relative-error denominator, relative to `|f|`.
pub const NORM_FLOOR: f64 = 1e-5;

/// Outcome for one differentiated input.
#[derive(Debug, Clone)]
pub struct InputCheck {
    pub index: usize,
    pub relative_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

/// Compares `graph.backward` against central differences of `f` for every input.
///
/// `f` must build a scalar from the given leaves and be deterministic. The error
/// reported per input is `|a - n|_2 / max(|a|_2, |n|_2, NORM_FLOOR * max(1, |f|))`:
/// inputs whose true gradient vanishes (e.g. a key bias under softmax) are compared
/// against a floor above the round-off of the difference quotient.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Vec<InputCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    let floor = NORM_FLOOR * g.value(out).item().abs().max(1.0);
    let grads = g.backward(out).expect("scalar output");

    let mut reports = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (index, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[index].shape()));
        let mut numeric = Vec::with_capacity(inputs[index].numel());
        for e in 0..inputs[index].numel() {
            let orig = inputs[index].data()[e];
            work[index].data_mut()[e] = orig + step;
            let plus = eval(&work);
            work[index].data_mut()[e] = orig - step;
            let minus = eval(&work);
            work[index].data_mut()[e] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let an = analytic.squared_norm().sqrt();
        let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        let relative_error = diff / an.max(nn).max(floor);
        reports.push(InputCheck { index, relative_error, analytic_norm: an, numeric_norm: nn });
    }
    reports
}

/// Largest relative error across all inputs.
pub fn worst(reports: &[InputCheck]) -> f64 {
    reports.iter().map(|r| r.relative_error).fold(0.0, f64::max)
}
