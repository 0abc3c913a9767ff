//! Central finite-difference gradient checks in f64.

use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub step: f64,
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            step: 1e-4,
            rel: 1e-4,
            abs: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error among entries that failed the absolute test.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub failures: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares the tape's gradient of the scalar returned by `loss` against
/// central differences for every entry of every input.
pub fn check<'a, F>(inputs: &[Tensor<f64>], tol: Tolerance, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'a, f64>, &[Var]) -> Result<Var>,
{
    check_with(inputs, tol, Tape::new, loss)
}

/// Like [`check`], with a caller-supplied constructor for the tape that records
/// the analytic pass (finite differences always use a fresh [`Tape::new`]).
pub fn check_with<'a, F, T>(
    inputs: &[Tensor<f64>],
    tol: Tolerance,
    make_tape: T,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'a, f64>, &[Var]) -> Result<Var>,
    T: Fn() -> Tape<'a, f64>,
{
    let mut tape = make_tape();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = loss(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get(v)).collect();

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = loss(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        failures: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (t, a) in analytic.iter().enumerate() {
        for i in 0..inputs[t].len() {
            let orig = inputs[t].data()[i];
            work[t].data_mut()[i] = orig + tol.step;
            let plus = eval(&work)?;
            work[t].data_mut()[i] = orig - tol.step;
            let minus = eval(&work)?;
            work[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * tol.step);
            let got = a.data()[i];
            let abs = libm::fabs(got - numeric);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if abs <= tol.abs {
                continue;
            }
            let rel = abs / libm::fabs(got).max(libm::fabs(numeric));
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= tol.rel {
                report.failures += 1;
            }
        }
    }
    Ok(report)
}

/// `Σ y ⊙ w` for a fixed weight tensor; turns any output into a scalar with a
/// non-degenerate gradient.
pub fn weighted_sum(tape: &mut Tape<'_, f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}
