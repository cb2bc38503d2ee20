//! Finite-difference verification helpers shared by unit tests and the
//! acceptance suite.

use std::collections::HashMap;

use ndarray::ArrayD;

use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Outcome of a gradient check: the worst relative error and where it was.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Compare analytic gradients against central finite differences for the
/// given parameters. `eval` must recompute the loss (and, when asked,
/// gradients keyed by parameter index) from the current store contents;
/// any sampling inside must be frozen across calls by the caller.
pub fn grad_check_params<F: Scalar>(
    store: &mut ParamStore<F>,
    param_ids: &[ParamId],
    mut eval: impl FnMut(&mut ParamStore<F>, bool) -> (f64, HashMap<usize, ArrayD<F>>),
    step: f64,
) -> GradCheckReport {
    let (_, grads) = eval(store, true);
    let mut max_rel_err = 0.0f64;
    let mut worst_param = String::new();
    let mut checked = 0usize;
    for id in param_ids {
        let n = store.value(*id).len();
        let name = store.entry(*id).name.clone();
        for flat in 0..n {
            let orig = {
                let v = store.value_mut(*id).as_slice_mut().unwrap();
                let o = v[flat];
                v[flat] = o + F::from_f64_lossy(step);
                o
            };
            let (f_plus, _) = eval(store, false);
            {
                let v = store.value_mut(*id).as_slice_mut().unwrap();
                v[flat] = orig - F::from_f64_lossy(step);
            }
            let (f_minus, _) = eval(store, false);
            {
                let v = store.value_mut(*id).as_slice_mut().unwrap();
                v[flat] = orig;
            }
            let fd = (f_plus - f_minus) / (2.0 * step);
            let analytic = grads
                .get(&id.0)
                .map(|g| g.as_slice().unwrap()[flat].to_f64_lossy())
                .unwrap_or(0.0);
            let denom = analytic.abs().max(fd.abs()).max(1e-6);
            let rel = (analytic - fd).abs() / denom;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst_param = format!("{name}[{flat}]");
            }
            checked += 1;
        }
    }
    GradCheckReport {
        max_rel_err,
        worst_param,
        checked,
    }
}
