//! Central finite-difference gradient checker (run at `f64`).

use super::ParamStore;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Denominator floor of the relative error. Central differences at
/// `DEFAULT_EPS` carry roundoff near `1e-11` on an O(1) loss, so smaller
/// coordinates are effectively held to an absolute tolerance.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Outcome of [`finite_diff_check`]; the worst coordinate is reported.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compare analytic gradients against `(f(w+eps) - f(w-eps)) / (2 eps)` for
/// every coordinate of every trainable parameter.
///
/// `loss` must zero the gradients, evaluate the objective and accumulate its
/// analytic gradient into `params`. The relative error of a coordinate is
/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn finite_diff_check<L>(mut loss: L, params: &mut ParamStore<f64>, eps: f64) -> Result<GradCheckReport>
where
    L: FnMut(&mut ParamStore<f64>) -> Result<f64>,
{
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {base}")));
    }
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();
    let trainable: Vec<bool> = params.iter().map(|p| p.trainable).collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        if !trainable[pi] {
            continue;
        }
        let id = super::ParamId(pi);
        for (i, &a) in grads.iter().enumerate() {
            let orig = params.value(id).data()[i];
            params.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = loss(params)?;
            params.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = loss(params)?;
            params.get_mut(id).value.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective non-finite while perturbing {}[{i}]",
                    params.get(id).name
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            report.coordinates += 1;
            if rel > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = rel;
                report.worst_param = params.get(id).name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    // Leave the store holding the analytic gradient at the unperturbed point.
    loss(params)?;
    Ok(report)
}
