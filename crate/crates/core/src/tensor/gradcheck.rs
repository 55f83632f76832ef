use crate::error::{Error, Result};

/// Relative error between an analytic and a numeric derivative.
fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Per-coordinate relative errors of `analytic` against central differences
/// of `f` around `params`.
pub fn grad_check_coordinates<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("grad_check eps must be positive, got {eps}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::Dimension(format!(
            "grad_check: {} params vs {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut p = params.to_vec();
    let mut errors = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = f(&p)?;
        p[i] = orig - eps;
        let down = f(&p)?;
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "grad_check: f is not finite around coordinate {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * eps);
        errors.push(rel_error(analytic[i], numeric));
    }
    Ok(errors)
}

/// Maximum relative error of `analytic` against central differences of `f`.
///
/// The error per coordinate is `|a − n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(f: F, params: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    Ok(grad_check_coordinates(f, params, analytic, eps)?
        .into_iter()
        .fold(0.0, f64::max))
}
