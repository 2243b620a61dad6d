//! Box-constrained minimization.
//!
//! Low-dimensional problems use Nelder-Mead with every trial vertex clipped to
//! the box. Larger problems use a projected limited-memory BFGS iteration with
//! an Armijo backtracking search along the projection arc.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::gradient::{fd_gradient, DEFAULT_FD_STEP};
use super::Bounds;
use crate::error::{Error, ErrorKind, Result};

/// Problems of at most this dimension go to Nelder-Mead under [`Method::Auto`].
pub const NELDER_MEAD_MAX_DIM: usize = 8;

const LBFGS_MEMORY: usize = 10;
const MAX_BACKTRACKS: usize = 40;
const ARMIJO_C1: f64 = 1e-4;
/// Largest per-coordinate move (in β units) of a trial step.
const MAX_STEP: f64 = 1.0;

pub trait Objective: Sync {
    fn cost(&self, x: &[f64]) -> Result<f64>;

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        fd_gradient(|v| self.cost(v), x, DEFAULT_FD_STEP)
    }
}

/// Adapts an infallible closure; the gradient falls back to finite differences.
pub struct FnObjective<F>(pub F);

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn cost(&self, x: &[f64]) -> Result<f64> {
        Ok((self.0)(x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopRule {
    /// Stop once an iteration improves the cost by less than this fraction.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule { tolerance: 1e-8, max_iterations: 500 }
    }
}

impl StopRule {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) || self.max_iterations == 0 {
            return Err(Error::invalid(format!(
                "stopping rule needs a positive tolerance and iteration cap, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Auto,
    NelderMead,
    ProjectedQuasiNewton,
    /// Only available for least-squares objectives.
    LevenbergMarquardt,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    /// False when the iteration cap ended the run.
    pub converged: bool,
    pub method: Method,
}

pub fn minimize_bounded<O: Objective + ?Sized>(
    objective: &O,
    x0: &[f64],
    bounds: Bounds,
    stop: StopRule,
) -> Result<Minimum> {
    minimize_with(objective, x0, bounds, stop, Method::Auto)
}

pub fn minimize_with<O: Objective + ?Sized>(
    objective: &O,
    x0: &[f64],
    bounds: Bounds,
    stop: StopRule,
    method: Method,
) -> Result<Minimum> {
    stop.validate()?;
    if x0.is_empty() {
        return Err(Error::invalid("cannot minimize over an empty vector"));
    }
    if let Some((k, v)) = x0.iter().enumerate().find(|(_, v)| !bounds.contains(**v)) {
        return Err(Error::invalid(format!(
            "initial point component {k} = {v} lies outside [{}, {}]",
            bounds.lower, bounds.upper
        )));
    }
    let f0 = objective.cost(x0)?;
    if !f0.is_finite() {
        return Err(Error::Optimization(format!("objective is {f0} at the initial point")));
    }
    let method = match method {
        Method::Auto if x0.len() <= NELDER_MEAD_MAX_DIM => Method::NelderMead,
        Method::Auto => Method::ProjectedQuasiNewton,
        m => m,
    };
    match method {
        Method::NelderMead => nelder_mead(objective, x0, f0, bounds, stop),
        Method::LevenbergMarquardt => {
            Err(Error::invalid("Levenberg-Marquardt needs residuals; use minimize_least_squares"))
        }
        _ => projected_quasi_newton(objective, x0, f0, bounds, stop),
    }
}

/// Trial evaluations that fail numerically are treated as infinitely bad.
pub(crate) fn trial_cost<O: Objective + ?Sized>(objective: &O, x: &[f64]) -> Result<f64> {
    match objective.cost(x) {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Ok(f64::INFINITY),
        Err(e) if e.kind() == ErrorKind::Numerical => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

fn nelder_mead<O: Objective + ?Sized>(
    objective: &O,
    x0: &[f64],
    f0: f64,
    bounds: Bounds,
    stop: StopRule,
) -> Result<Minimum> {
    let n = x0.len();
    let clip = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|c| bounds.clamp(c)).collect() };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for k in 0..n {
        let delta = if x0[k] != 0.0 { 0.05 * x0[k] } else { 0.00025 };
        let mut v = x0.to_vec();
        v[k] = bounds.clamp(x0[k] + delta);
        if v[k] == x0[k] {
            v[k] = bounds.clamp(x0[k] - delta);
        }
        let f = trial_cost(objective, &v)?;
        simplex.push((v, f));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < stop.max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let scale = simplex[0].0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        // A flat simplex alone is not enough: vertices straddling a minimum can tie.
        let flat = worst - best <= stop.tolerance * best.abs();
        if best == 0.0 || (flat && diameter <= stop.tolerance.sqrt() * scale) || diameter <= 1e-12 * scale {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(v, _)| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            clip(centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect())
        };

        let xr = along(1.0);
        let fr = trial_cost(objective, &xr)?;
        if fr < best {
            let xe = along(2.0);
            let fe = trial_cost(objective, &xe)?;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        // Outside contraction when the reflection beat the worst vertex, inside otherwise.
        let (t, threshold) = if fr < worst { (0.5, fr) } else { (-0.5, worst) };
        let xc = along(t);
        let fc = trial_cost(objective, &xc)?;
        if fc < threshold || (t > 0.0 && fc == threshold) {
            simplex[n] = (xc, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let v: Vec<f64> = anchor.iter().zip(&vertex.0).map(|(a, b)| a + 0.5 * (b - a)).collect();
            let f = trial_cost(objective, &v)?;
            *vertex = (v, f);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, cost) = simplex.swap_remove(0);
    Ok(Minimum { x, cost, iterations, converged, method: Method::NelderMead })
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS two-loop recursion: returns `H·q`.
fn apply_inverse_hessian(memory: &VecDeque<Pair>, q: &[f64]) -> Vec<f64> {
    let mut q = q.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for p in memory.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        q.iter_mut().zip(&p.y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some(last) = memory.back() {
        let scale = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= scale);
    }
    for (p, a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        q.iter_mut().zip(&p.s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q
}

fn checked_gradient<O: Objective + ?Sized>(objective: &O, x: &[f64]) -> Result<Vec<f64>> {
    let g = objective.gradient(x)?;
    if g.len() != x.len() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimization("gradient is not finite".to_owned()));
    }
    Ok(g)
}

fn projected_quasi_newton<O: Objective + ?Sized>(
    objective: &O,
    x0: &[f64],
    f0: f64,
    bounds: Bounds,
    stop: StopRule,
) -> Result<Minimum> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut f = f0;
    let mut g = checked_gradient(objective, &x)?;
    let mut memory: VecDeque<Pair> = VecDeque::with_capacity(LBFGS_MEMORY);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < stop.max_iterations {
        if f == 0.0 {
            converged = true;
            break;
        }
        // Coordinates pinned at a bound by the gradient stay fixed this iteration.
        let free: Vec<bool> = (0..n)
            .map(|k| !((x[k] <= bounds.lower && g[k] > 0.0) || (x[k] >= bounds.upper && g[k] < 0.0)))
            .collect();
        let masked: Vec<f64> = g.iter().zip(&free).map(|(&gk, &fr)| if fr { gk } else { 0.0 }).collect();
        if masked.iter().all(|v| *v == 0.0) {
            converged = true;
            break;
        }

        let mut direction: Vec<f64> = apply_inverse_hessian(&memory, &masked)
            .into_iter()
            .zip(&free)
            .map(|(v, &fr)| if fr { -v } else { 0.0 })
            .collect();
        if !(dot(&direction, &g) < 0.0) || direction.iter().any(|v| !v.is_finite()) {
            memory.clear();
            direction = masked.iter().map(|v| -v).collect();
        }

        let longest = direction.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut alpha = if longest > MAX_STEP { MAX_STEP / longest } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> =
                x.iter().zip(&direction).map(|(xi, di)| bounds.clamp(xi + alpha * di)).collect();
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if step.iter().all(|v| *v == 0.0) {
                break;
            }
            let ft = trial_cost(objective, &trial)?;
            if ft <= f + ARMIJO_C1 * dot(&g, &step) {
                accepted = Some((trial, step, ft));
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;

        let Some((trial, step, ft)) = accepted else {
            if memory.is_empty() {
                // No descent even along the projected steepest direction.
                converged = true;
                break;
            }
            memory.clear();
            continue;
        };

        let gt = checked_gradient(objective, &trial)?;
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&step, &y);
        if sy > 1e-10 * dot(&step, &step).sqrt() * dot(&y, &y).sqrt() {
            if memory.len() == LBFGS_MEMORY {
                memory.pop_front();
            }
            memory.push_back(Pair { s: step, y, rho: 1.0 / sy });
        }

        let improvement = (f - ft) / f.abs();
        x = trial;
        f = ft;
        g = gt;
        if improvement < stop.tolerance {
            converged = true;
            break;
        }
    }
    Ok(Minimum { x, cost: f, iterations, converged, method: Method::ProjectedQuasiNewton })
}
