//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so these routines stay independent
//! of the reverse pass they are used to verify.

use crate::autodiff::{Array, Gradients, ParamId, ParamStore};

/// Central finite-difference gradient of `f` with respect to one parameter.
pub fn numeric_gradient(
    store: &ParamStore,
    id: ParamId,
    eps: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> Array {
    let mut probe = store.clone();
    let (rows, cols) = store.get(id).shape();
    let mut out = Array::zeros(rows, cols);
    for k in 0..rows * cols {
        let orig = probe.get(id).data()[k];
        probe.get_mut(id).data_mut()[k] = orig + eps;
        let up = f(&probe);
        probe.get_mut(id).data_mut()[k] = orig - eps;
        let down = f(&probe);
        probe.get_mut(id).data_mut()[k] = orig;
        out.data_mut()[k] = (up - down) / (2.0 * eps);
    }
    out
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`, maximized over entries.
pub fn max_relative_error(analytic: &Array, numeric: &Array, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Outcome of checking one parameter.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub analytic_norm: f64,
}

/// Compares analytic gradients against finite differences for every parameter.
pub fn check_all(
    store: &ParamStore,
    analytic: &Gradients,
    eps: f64,
    floor: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> Vec<ParamCheck> {
    store
        .ids()
        .map(|id| {
            let numeric = numeric_gradient(store, id, eps, &mut f);
            let a = analytic.get(id);
            ParamCheck {
                name: store.name(id).to_string(),
                max_rel_error: max_relative_error(a, &numeric, floor),
                analytic_norm: a.sum_of_squares().sqrt(),
            }
        })
        .collect()
}
