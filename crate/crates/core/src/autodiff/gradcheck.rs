//! Central finite-difference checks of tape gradients.

use super::{Tape, Var};
use crate::error::{arg_err, Error, Result};
use crate::tensor::Tensor;

/// `|a − b| / max(|a|, |b|, 1e-12)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn eval<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    let v = tape.value(out);
    if !v.is_scalar() {
        return Err(Error::NotScalar(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Largest relative error between the tape gradient of `f` at `x` and a
/// central difference with the given step, over every coordinate of `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    finite_diff_check_at(f, x, step, &coords)
}

/// As [`finite_diff_check`] but only over the listed coordinates.
pub fn finite_diff_check_at<F>(f: F, x: &Tensor<f64>, step: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(arg_err("finite_diff_check", format!("step must be positive, got {step}")));
    }
    if let Some(&c) = coords.iter().find(|&&c| c >= x.len()) {
        return Err(arg_err("finite_diff_check", format!("coordinate {c} out of range {}", x.len())));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    let analytic = tape.backward(out)?.tensor(xv);
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for &c in coords {
        let orig = probe.data()[c];
        probe.data_mut()[c] = orig + step;
        let up = eval(&f, &probe)?;
        probe.data_mut()[c] = orig - step;
        let down = eval(&f, &probe)?;
        probe.data_mut()[c] = orig;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(analytic.data()[c], numeric));
    }
    Ok(worst)
}
