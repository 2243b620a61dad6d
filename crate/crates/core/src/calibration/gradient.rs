use rayon::prelude::*;

use crate::error::{Error, Result};

/// Base step for central differences; the effective step is relative for
/// components larger than one.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// `max(step, step·|x|)`.
#[inline]
pub fn fd_step_for(step: f64, x: f64) -> f64 {
    step.max(step * x.abs())
}

/// Central-difference gradient of any scalar function.
///
/// Components are evaluated in parallel and assembled in index order, so the
/// result does not depend on the thread layout.
pub fn fd_gradient<F>(f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
    }
    (0..x.len())
        .into_par_iter()
        .map(|k| {
            let h = fd_step_for(step, x[k]);
            let mut probe = x.to_vec();
            probe[k] = x[k] + h;
            let plus = f(&probe)?;
            probe[k] = x[k] - h;
            let minus = f(&probe)?;
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}
