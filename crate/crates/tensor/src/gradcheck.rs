//! Central-difference gradient checks.

use crate::{Graph, Tensor, Var};

/// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` of the
/// gradient of the scalar `f` with respect to each input.
///
/// Returns 0 for an input whose analytic and numeric gradients both vanish.
pub fn relative_errors(inputs: &[Tensor], h: f64, f: impl Fn(&mut Graph, &[Var]) -> Var) -> Vec<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);
    let eval = |k: usize, i: usize, delta: f64| {
        let mut g = Graph::inference();
        let vs: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(j, u)| {
                let mut u = u.clone();
                if j == k {
                    u.data_mut()[i] += delta;
                }
                g.input(u)
            })
            .collect();
        let o = f(&mut g, &vs);
        g.value(o).item()
    };
    inputs
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
            let numeric: Vec<f64> = (0..t.numel()).map(|i| (eval(k, i, h) - eval(k, i, -h)) / (2.0 * h)).collect();
            let diff = analytic.data().iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let na = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
            let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
            let scale = na.max(nn);
            if scale == 0.0 {
                0.0
            } else {
                diff / scale
            }
        })
        .collect()
}
