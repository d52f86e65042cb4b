use super::Tensor;
use crate::error::{Error, Result};

const STEP: f64 = 1e-5;

/// Compares reverse-mode gradients of `f` at `point` with central
/// differences (step 1e-5). Returns the largest
/// `|autodiff − numeric| / (|numeric| + 1e-8)` over coordinates.
pub fn grad_check<F>(f: F, point: &[f64], shape: &[usize]) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let x = Tensor::variable(point.to_vec(), shape)?;
    let y = f(&x)?;
    if y.numel() != 1 {
        return Err(Error::Contract("grad_check needs a scalar function".into()));
    }
    y.backward()?;
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; point.len()]);

    let mut worst: f64 = 0.0;
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + STEP;
        let up = f(&Tensor::from_vec(probe.clone(), shape)?)?.item()?;
        probe[i] = orig - STEP;
        let down = f(&Tensor::from_vec(probe.clone(), shape)?)?.item()?;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let rel = (analytic[i] - numeric).abs() / (numeric.abs() + 1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
