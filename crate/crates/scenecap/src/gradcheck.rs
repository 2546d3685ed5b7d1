//! Finite-difference gradient oracle.
//!
//! Central differences with step `h`, compared against the tape's
//! reverse-mode gradients. Coordinates with `|x_i| < 10h` are skipped:
//! this is the documented guard against evaluating a difference quotient
//! across a relu kink.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Relative error between analytic and numeric derivatives, with an
/// absolute-error fallback for near-zero pairs. The 1e-6 denominator
/// floor reflects the resolution of central differences themselves: at
/// h = 1e-5 on an O(1) function the difference quotient carries ~1e-11
/// of round-off, so gradients below ~1e-6 are compared absolutely (to
/// 1e-10 per unit of reported error) rather than relatively.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-6, analytic.abs() + numeric.abs())
}

/// Max over coordinates of the analytic-vs-central-difference relative
/// error for a scalar-valued function of one tensor.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tape, Var) -> Result<Var>,
{
    let tape = Tape::new();
    let mut leaf = x.clone();
    leaf.requires_grad = true;
    let xv = tape.leaf(&leaf)?;
    let y = f(&tape, xv)?;
    tape.backward(y)?;
    let analytic = tape.grad(xv);

    let eval = |data: Vec<f64>| -> Result<f64> {
        let tape = Tape::new();
        let xv = tape.input(x.shape().to_vec(), data, false)?;
        let y = f(&tape, xv)?;
        tape.scalar_value(y)
    };

    let mut max_err: f64 = 0.0;
    for i in 0..x.len() {
        if x.data()[i].abs() < 10.0 * h {
            continue; // kink-guard skip rule
        }
        let mut plus = x.data().to_vec();
        plus[i] += h;
        let mut minus = x.data().to_vec();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        max_err = max_err.max(relative_error(analytic[i], numeric));
    }
    Ok(max_err)
}
