//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

use super::{Graph, Tensor, Var};

/// Denominator floor of the relative error, so that gradients that are
/// zero up to rounding do not turn round-off into huge relative errors.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, REL_ERROR_FLOOR)`.
    pub max_rel_error: f64,
    /// (tensor, element) where the worst error occurred.
    pub worst: (usize, usize),
    pub checked: usize,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Checks the gradient of scalar `f` with respect to the single input `x`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>, Var) -> Result<Var>,
{
    grad_check_params(
        std::slice::from_ref(x),
        |g| {
            let v = g.param(0);
            f(g, v)
        },
        step,
        tolerance,
    )
}

/// Checks gradients of scalar `f` with respect to every element of every
/// tensor in `params`. `f` reaches the tensors through [`Graph::param`].
pub fn grad_check_params<F>(
    params: &[Tensor],
    f: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::with_params(params, true);
        let loss = f(&mut g)?;
        g.backward(loss)?;
        g.take_param_grads()
    };

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::with_params(ps, false);
        let loss = f(&mut g)?;
        let v = g.value(loss);
        if !v.is_scalar() {
            return Err(Error::invalid("grad_check needs a scalar function"));
        }
        Ok(v.item())
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
        passed: true,
    };
    for (ti, grads) in analytic.iter().enumerate() {
        for j in 0..params[ti].numel() {
            let original = params[ti].data()[j];
            work[ti].data_mut()[j] = original + step;
            let plus = eval(&work)?;
            work[ti].data_mut()[j] = original - step;
            let minus = eval(&work)?;
            work[ti].data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grads.as_ref().map_or(0.0, |g| g[j]);
            let err = relative_error(a, numeric);
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = (ti, j);
            }
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_error < tolerance;
    Ok(report)
}
