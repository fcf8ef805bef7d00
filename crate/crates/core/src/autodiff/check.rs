use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients to central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Denominator floor in the relative error, so that coordinates whose true
/// gradient is zero are judged by absolute error.
const REL_FLOOR: f64 = 1e-6;

/// Checks the gradients of `f` at `params` against central finite
/// differences with step `eps`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss at the base point is {value}")));
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

    let eval = |point: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        tape.value(loss).item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut point = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for c in 0..param.len() {
            let base = param.data()[c];
            let mut at = |offset: f64| -> Result<f64> {
                point[pi].data_mut()[c] = base + offset;
                let v = eval(&point)?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "parameter {pi}, coordinate {c}: f({offset:+e}) = {v}"
                    )));
                }
                Ok(v)
            };
            let (up, down) = (at(eps)?, at(-eps)?);
            let (up2, down2) = (at(2.0 * eps)?, at(-2.0 * eps)?);
            point[pi].data_mut()[c] = base;
            let a = analytic[pi].data()[c];
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("parameter {pi}, coordinate {c}: grad={a}")));
            }
            // Five-point stencil, truncation error O(eps⁴).
            let n = (8.0 * (up - down) - (up2 - down2)) / (12.0 * eps);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
            report.coordinates += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((pi, c));
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    Ok(report)
}
