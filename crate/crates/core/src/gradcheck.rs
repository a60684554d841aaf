//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Default perturbation step.
pub const DEFAULT_H: f64 = 1e-5;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max over checked coordinates of
    /// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
    pub max_rel_err: f64,
    /// Coordinates flagged as sitting on a non-differentiable point
    /// (one-sided slopes disagree) and therefore skipped.
    pub skipped: Vec<usize>,
    /// Number of coordinates actually compared.
    pub checked: usize,
}

/// Compare the tape gradient of a scalar-valued function against central
/// differences `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
///
/// `f` must produce a scalar [`Var`]; building anything else is reported as
/// an error. Coordinates where the two one-sided slopes disagree (a ReLU kink
/// under the perturbation) are skipped and reported instead of failed.
pub fn finite_diff_grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let y = f(&mut tape, x)?;
    let f0 = scalar_value(&tape, y)?;
    tape.backward(y)?;
    let analytic = tape.grad(x).expect("requires_grad leaf has a gradient").clone();

    let eval = |p: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(p.clone(), false);
        let out = f(&mut t, v)?;
        scalar_value(&t, out)
    };

    let mut report = GradCheckReport { max_rel_err: 0.0, skipped: Vec::new(), checked: 0 };
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let f_plus = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let f_minus = eval(&probe)?;
        probe.data_mut()[i] = orig;

        let d_plus = (f_plus - f0) / h;
        let d_minus = (f0 - f_minus) / h;
        if (d_plus - d_minus).abs() > 1e-2 * (d_plus.abs() + d_minus.abs() + 1.0) {
            report.skipped.push(i);
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
        }
        report.checked += 1;
    }
    Ok(report)
}

fn scalar_value(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(Error::NotScalar {
            context: "finite_diff_grad_check",
            shape: t.shape().to_vec(),
        });
    }
    Ok(t.data()[0])
}
