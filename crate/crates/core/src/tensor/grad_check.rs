use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the autodiff gradient of a scalar function against central
/// differences and returns the largest relative error over all coordinates:
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |x: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = f(&mut tape, v)?;
        let y = tape.value(out);
        if y.numel() != 1 {
            return Err(Error::shape("grad_check", "function must be scalar-valued"));
        }
        if !y.item().is_finite() {
            return Err(Error::NonFinite { op: "grad_check evaluation" });
        }
        Ok(y.item())
    };

    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let out = f(&mut tape, x)?;
    let analytic = tape.backward(out)?.get(x);

    let mut worst: f64 = 0.0;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
