//! Central finite-difference gradient verification.
//!
//! The checker is independent of the backward pass by construction: it only
//! re-runs forward evaluations at perturbed parameter values.

use crate::graph::{Graph, Var};
use crate::params::ParamStore;

#[derive(Debug)]
pub struct GradCheckReport {
    /// (parameter, flat index, analytic, numeric) of the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compare analytic gradients of a scalar loss against central finite
/// differences for every element of every parameter in `store`.
///
/// `build` must construct the forward graph from the given store and return
/// the loss node; it is called once for the analytic pass and twice per
/// parameter element for the numeric pass.
pub fn check_gradients<F>(
    store: &ParamStore,
    build: F,
    eps: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<GradCheckReport, String>
where
    F: Fn(&ParamStore, &mut Graph) -> Var,
{
    let mut g = Graph::new();
    let loss = build(store, &mut g);
    g.backward(loss);
    let analytic = g.param_grads();

    let mut report = GradCheckReport {
        worst: None,
        max_rel_err: 0.0,
        checked: 0,
    };

    let mut perturbed = store.clone();
    let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
    for name in &names {
        let base = store.get(name).unwrap().clone();
        // Parameters the graph never touched have zero gradients.
        let zero = ndarray::ArrayD::zeros(base.raw_dim());
        let grad = analytic.get(name).unwrap_or(&zero);
        for (idx, _) in base.iter().enumerate() {
            let orig = base.as_slice().unwrap()[idx];

            let eval = |val: f64, perturbed: &mut ParamStore| -> f64 {
                perturbed.get_mut(name).unwrap().as_slice_mut().unwrap()[idx] = val;
                let mut g = Graph::new();
                let loss = build(perturbed, &mut g);
                g.scalar_value(loss)
            };
            let plus = eval(orig + eps, &mut perturbed);
            let minus = eval(orig - eps, &mut perturbed);
            perturbed.get_mut(name).unwrap().as_slice_mut().unwrap()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.as_slice().unwrap()[idx];
            let denom = a.abs().max(numeric.abs());
            let err = (a - numeric).abs();
            let rel = if denom > abs_tol { err / denom } else { 0.0 };
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), idx, a, numeric));
            }
            if rel > rel_tol && err > abs_tol {
                return Err(format!(
                    "gradient mismatch in `{name}`[{idx}]: analytic {a:.9e}, numeric {numeric:.9e}, rel {rel:.3e}"
                ));
            }
        }
    }
    Ok(report)
}
