use super::tape::{NodeId, Tape};
use crate::error::{invalid, Result};

/// Result of comparing analytic gradients against central differences for
/// one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_relative_error: f64,
    /// Coordinate at which the maximum was observed.
    pub worst_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl FdReport {
    pub fn max_relative_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_relative_error).fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of `loss` with central differences
/// `(f(p+h) - f(p-h)) / 2h`, coordinate by coordinate, for every parameter
/// leaf on the tape. Relative error uses `max(|analytic|, |numeric|, 1e-8)`
/// as the denominator; the check passes iff every error is strictly below
/// `tolerance`.
pub fn finite_difference_check(tape: &Tape, loss: NodeId, step: f64, tolerance: f64) -> Result<FdReport> {
    if step <= 0.0 || !step.is_finite() {
        return Err(invalid(format!("finite-difference step must be positive, got {step}")));
    }
    let analytic = tape.gradients(loss)?;
    let mut work = tape.clone();
    let leaves: Vec<_> = tape.params().map(|(id, n)| (id, n.to_string())).collect();
    let mut params = Vec::with_capacity(leaves.len());

    for (id, name) in leaves {
        let node = tape.param_node(id).expect("leaf registered");
        let base = tape.value(node).clone();
        let grad = analytic.get(&name);
        let mut worst = (0.0, 0);
        for k in 0..base.len() {
            let mut plus = base.clone();
            plus.data_mut()[k] += step;
            work.set_param_value(id, plus)?;
            work.replay()?;
            let f_plus = work.value(loss).item();

            let mut minus = base.clone();
            minus.data_mut()[k] -= step;
            work.set_param_value(id, minus)?;
            work.replay()?;
            let f_minus = work.value(loss).item();

            let numeric = (f_plus - f_minus) / (2.0 * step);
            let exact = grad.map_or(0.0, |g| g.data()[k]);
            let denom = exact.abs().max(numeric.abs()).max(1e-8);
            let rel = (exact - numeric).abs() / denom;
            if rel > worst.0 {
                worst = (rel, k);
            }
        }
        work.set_param_value(id, base)?;
        params.push(ParamCheck {
            name,
            max_relative_error: worst.0,
            worst_index: worst.1,
        });
    }
    work.replay()?;

    let passed = params.iter().all(|p| p.max_relative_error < tolerance);
    Ok(FdReport {
        params,
        tolerance,
        passed,
    })
}
