//! Central finite-difference checks of tape gradients.

use super::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Step used by the checks.
pub const STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest relative error over all checked tensors.
    pub max_rel_err: f64,
    /// Largest analytic gradient magnitude; near zero means the function is
    /// locally flat and the check carries no information.
    pub grad_scale: f64,
    pub entries: usize,
}

/// Relative error between an analytic and a numeric gradient tensor:
/// `max|a − n| / max(max|a|, max|n|)`, or the absolute error when both are
/// below `1e-12`.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> Result<f64> {
    let diff = analytic.max_abs_diff(numeric)?;
    let scale = analytic.max_abs().max(numeric.max_abs());
    Ok(if scale < 1e-12 { diff } else { diff / scale })
}

/// Compares `∂f/∂params` from the tape with central differences of step
/// `h`. `f` must build the same scalar function on every call (reseed any
/// randomness inside it).
pub fn check_gradients<F>(params: &[Matrix], f: F, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.constant(m.clone())).collect();
        let root = f(&mut tape, &vars)?;
        tape.value(root).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|m| tape.param(m.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut values = params.to_vec();
    let mut report = GradCheck { max_rel_err: 0.0, grad_scale: 0.0, entries: 0 };
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Matrix::zeros(params[k].rows(), params[k].cols()));
        let mut numeric = Matrix::zeros(params[k].rows(), params[k].cols());
        for idx in 0..params[k].len() {
            let x = values[k].data()[idx];
            values[k].data_mut()[idx] = x + h;
            let up = eval(&values)?;
            values[k].data_mut()[idx] = x - h;
            let down = eval(&values)?;
            values[k].data_mut()[idx] = x;
            numeric.data_mut()[idx] = (up - down) / (2.0 * h);
        }
        if !numeric.is_finite() {
            return Err(Error::NonFinite("finite-difference gradient"));
        }
        report.max_rel_err = report.max_rel_err.max(relative_error(&analytic, &numeric)?);
        report.grad_scale = report.grad_scale.max(analytic.max_abs());
        report.entries += params[k].len();
    }
    Ok(report)
}
