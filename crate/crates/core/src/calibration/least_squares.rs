//! Box-constrained nonlinear least squares by a projected Levenberg-Marquardt
//! iteration.
//!
//! Daily rates early in an epidemic move every later value of the cumulative
//! curve, so the plain SSE Hessian spans many orders of magnitude and
//! gradient-only methods stall. The Gauss-Newton matrix `JᵀJ` built from the
//! residual Jacobian captures that structure directly.

use nalgebra::{DMatrix, DVector};

use super::optimize::{trial_cost, Method, Minimum, Objective, StopRule};
use super::Bounds;
use crate::error::{Error, Result};

const MAX_DAMPING_TRIES: usize = 40;
const INITIAL_DAMPING: f64 = 1e-3;

/// An objective of the form `Σ rₖ(x)²`.
pub trait LeastSquares: Objective {
    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Column `j` holds `∂r/∂xⱼ`.
    fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>>;
}

fn sum_of_squares(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |acc, v| acc + v * v)
}

/// Minimizes `Σ rₖ(x)²` over the box. Iterations count accepted steps.
pub fn minimize_least_squares<O: LeastSquares + ?Sized>(
    objective: &O,
    x0: &[f64],
    bounds: Bounds,
    stop: StopRule,
) -> Result<Minimum> {
    if x0.is_empty() {
        return Err(Error::invalid("cannot minimize over an empty vector"));
    }
    if let Some((k, v)) = x0.iter().enumerate().find(|(_, v)| !bounds.contains(**v)) {
        return Err(Error::invalid(format!(
            "initial point component {k} = {v} lies outside [{}, {}]",
            bounds.lower, bounds.upper
        )));
    }
    if !(stop.tolerance > 0.0) || stop.max_iterations == 0 {
        return Err(Error::invalid(format!("invalid stopping rule {stop:?}")));
    }

    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = objective.residuals(&x)?;
    let mut f = sum_of_squares(&r);
    if !f.is_finite() {
        return Err(Error::Optimization(format!("objective is {f} at the initial point")));
    }
    let mut damping = INITIAL_DAMPING;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < stop.max_iterations {
        if f == 0.0 {
            converged = true;
            break;
        }
        let columns = objective.jacobian(&x)?;
        if columns.len() != n || columns.iter().any(|c| c.len() != r.len() || c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Optimization("jacobian is not finite".to_owned()));
        }
        // gradient of ½Σr² is Jᵀr
        let grad: Vec<f64> = columns.iter().map(|c| c.iter().zip(&r).map(|(a, b)| a * b).sum()).collect();
        let norms: Vec<f64> = columns.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let free: Vec<usize> = (0..n)
            .filter(|&k| {
                norms[k] > 0.0
                    && !((x[k] <= bounds.lower && grad[k] > 0.0) || (x[k] >= bounds.upper && grad[k] < 0.0))
            })
            .collect();
        if free.is_empty() {
            converged = true;
            break;
        }

        // Unit-norm column scaling keeps the normal equations well balanced.
        let m = r.len();
        let j = DMatrix::from_fn(m, free.len(), |row, col| columns[free[col]][row] / norms[free[col]]);
        let normal = j.tr_mul(&j);
        let rhs = -(j.tr_mul(&DVector::from_column_slice(&r)));

        let mut accepted = None;
        for _ in 0..MAX_DAMPING_TRIES {
            let mut a = normal.clone();
            for d in 0..free.len() {
                a[(d, d)] += damping;
            }
            let Some(chol) = a.cholesky() else {
                damping *= 10.0;
                continue;
            };
            let p = chol.solve(&rhs);
            let mut trial = x.clone();
            for (d, &k) in free.iter().enumerate() {
                trial[k] = bounds.clamp(x[k] + p[d] / norms[k]);
            }
            if trial == x {
                break;
            }
            let ft = trial_cost(objective, &trial)?;
            if ft < f {
                accepted = Some((trial, ft));
                damping = (damping / 3.0).max(1e-15);
                break;
            }
            damping *= 4.0;
        }
        let Some((trial, ft)) = accepted else {
            converged = true;
            break;
        };
        iterations += 1;

        let improvement = (f - ft) / f.abs();
        r = objective.residuals(&trial)?;
        x = trial;
        f = sum_of_squares(&r);
        if improvement < stop.tolerance {
            converged = true;
            break;
        }
    }
    let cost = objective.cost(&x)?;
    Ok(Minimum { x, cost, iterations, converged, method: Method::LevenbergMarquardt })
}
