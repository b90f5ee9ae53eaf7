//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numcore::tensor::{Gradients, ParamStore};

/// Refuse to perturb models with more scalars than this.
pub const MAX_GRADCHECK_SCALARS: usize = 50_000;

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    /// Perturbation size for `(f(θ+h) - f(θ-h)) / 2h`.
    pub step: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to rounding are compared absolutely. Central differences of a
    /// loss of size `L` carry about `L * 1e-16 / step` of rounding error, so
    /// the floor has to sit well above that.
    pub denom_floor: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            denom_floor: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub scalars_checked: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of `objective` against central differences
/// for every scalar in `store`.
///
/// `objective(params, want_grad)` returns the loss and, when asked, the
/// gradient table from a backward pass. It must be deterministic: any
/// randomness (dropout masks) has to be re-seeded on every call.
pub fn gradcheck<F>(store: &mut ParamStore, opts: GradcheckOptions, mut objective: F) -> Result<GradcheckReport>
where
    F: FnMut(&ParamStore, bool) -> Result<(f64, Option<Gradients>)>,
{
    let scalars = store.scalar_count();
    if scalars > MAX_GRADCHECK_SCALARS {
        return Err(Error::TooLarge {
            scalars,
            limit: MAX_GRADCHECK_SCALARS,
        });
    }
    let (_, grads) = objective(store, true)?;
    let grads = grads.ok_or_else(|| Error::InvalidInput("objective returned no gradients".into()))?;

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_parameter: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        scalars_checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for k in 0..store.get(id).numel() {
            let orig = store.get(id).data[k];
            store.get_mut(id).data[k] = orig + opts.step;
            let (plus, _) = objective(store, false)?;
            store.get_mut(id).data[k] = orig - opts.step;
            let (minus, _) = objective(store, false)?;
            store.get_mut(id).data[k] = orig;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let analytic = grads.get(id).data[k];
            let err = relative_error(analytic, numeric, opts.denom_floor);
            report.scalars_checked += 1;
            if err > report.max_rel_error || report.worst_parameter.is_empty() {
                report.max_rel_error = err;
                report.worst_parameter = store.name(id).to_string();
                report.worst_index = k;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
