use crate::error::{Result, SeedError};

use super::{Tape, Tensor, Var};

/// Per-entry relative errors between the tape gradient of a scalar function
/// and central finite differences: `|analytic - numeric| / max(1, |numeric|)`.
pub fn gradient_errors<F>(f: F, x: &Tensor, eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |point: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(point);
        let out = f(&mut tape, v)?;
        let value = tape.value(out);
        if value.numel() != 1 {
            return Err(SeedError::shape(format!(
                "gradient check needs a scalar function, got {:?}",
                value.shape()
            )));
        }
        let y = value.item();
        if !y.is_finite() {
            return Err(SeedError::Numeric(format!("function value {y} is not finite")));
        }
        Ok(y)
    };

    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(v)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));
    if !analytic.all_finite() {
        return Err(SeedError::Numeric("analytic gradient is not finite".into()));
    }

    let mut errors = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        errors.push((a - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(errors)
}

/// Maximum of [`gradient_errors`].
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    Ok(gradient_errors(f, x, eps)?
        .into_iter()
        .fold(0.0, f64::max))
}
