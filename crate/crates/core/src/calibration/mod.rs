//! Least-squares identification of a daily infection-rate schedule.
//!
//! The objective is the plain sum of squared differences between the observed
//! cumulative cases `Y(t)` and the simulated `Ŷ(t) = N - S(t)` over
//! `t = 1..=H`, minimized over a box by a coarse-to-fine sequence of
//! piecewise-constant parametrizations (see [`dyadic`]).

mod dyadic;
mod gradient;
mod least_squares;
mod optimize;
mod report;

pub use dyadic::{
    dyadic_fit, dyadic_fit_with, expand_schedule, padded_horizon, segments_to_daily, FitConfig,
    FitResult, StageReport,
};
pub use gradient::{fd_gradient, fd_step_for, DEFAULT_FD_STEP};
pub use least_squares::{minimize_least_squares, LeastSquares};
pub use optimize::{
    minimize_bounded, minimize_with, FnObjective, Method, Minimum, Objective, StopRule,
    NELDER_MEAD_MAX_DIM,
};
pub use report::{write_fit_comparison, write_stage_log, FitDocument};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservedSeries;
use crate::error::{Error, Result};
use crate::model::{simulate, BetaSchedule, DayStepper, SirParams, SirState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { lower: 0.0, upper: 5.0 }
    }
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && 0.0 <= lower && lower < upper) {
            return Err(Error::invalid(format!("bounds must satisfy 0 <= lower < upper < inf, got [{lower}, {upper}]")));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    #[inline]
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }
}

/// Everything the objective needs besides the schedule itself.
#[derive(Clone, Debug)]
pub struct ObjectiveContext {
    observed: ObservedSeries,
    targets: Vec<f64>,
    init: SirState,
    stepper: DayStepper,
    substeps_per_day: usize,
}

impl ObjectiveContext {
    pub fn new(
        observed: ObservedSeries,
        params: SirParams,
        init: SirState,
        substeps_per_day: usize,
    ) -> Result<Self> {
        init.validate(&params)?;
        let stepper = DayStepper::new(params, substeps_per_day)?;
        let targets = observed.cumulative().iter().map(|&y| y as f64).collect();
        Ok(ObjectiveContext { observed, targets, init, stepper, substeps_per_day })
    }

    pub fn horizon_days(&self) -> usize {
        self.targets.len()
    }

    pub fn observed(&self) -> &ObservedSeries {
        &self.observed
    }

    pub fn params(&self) -> &SirParams {
        self.stepper.params()
    }

    pub fn init(&self) -> SirState {
        self.init
    }

    pub fn substeps_per_day(&self) -> usize {
        self.substeps_per_day
    }

    pub(crate) fn stepper(&self) -> &DayStepper {
        &self.stepper
    }

    /// The same problem restricted to the first `days` observations.
    pub fn truncated(&self, days: usize) -> Result<Self> {
        ObjectiveContext::new(
            self.observed.truncated(days)?,
            *self.params(),
            self.init,
            self.substeps_per_day,
        )
    }

    /// SSE of a raw daily vector. Values are only required to be finite.
    pub fn sse_values(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values.len())?;
        self.sse_tail(|d| values[d], 0, self.init, 0.0)
    }

    /// Continues an SSE accumulation from the state at boundary `start_day`.
    ///
    /// `acc` must hold the partial sum over days `1..=start_day`; the result is
    /// bit-identical to a full evaluation when the schedule agrees on the prefix.
    pub(crate) fn sse_tail(
        &self,
        beta_of: impl Fn(usize) -> f64,
        start_day: usize,
        start_state: SirState,
        mut acc: f64,
    ) -> Result<f64> {
        let n = self.params().population;
        let mut y = start_state;
        for day in start_day..self.targets.len() {
            let beta = beta_of(day);
            if !beta.is_finite() {
                return Err(Error::NonFinite("beta"));
            }
            y = self.stepper.advance(y, beta, day)?;
            let r = self.targets[day] - (n - y.s);
            acc += r * r;
        }
        Ok(acc)
    }

    /// Residuals `Y(t) - Ŷ(t)` for days `start_day+1..=H`, continuing from the
    /// state at boundary `start_day`.
    pub(crate) fn residual_tail(
        &self,
        beta_of: impl Fn(usize) -> f64,
        start_day: usize,
        start_state: SirState,
    ) -> Result<Vec<f64>> {
        let n = self.params().population;
        let mut y = start_state;
        let mut out = Vec::with_capacity(self.targets.len().saturating_sub(start_day));
        for day in start_day..self.targets.len() {
            let beta = beta_of(day);
            if !beta.is_finite() {
                return Err(Error::NonFinite("beta"));
            }
            y = self.stepper.advance(y, beta, day)?;
            out.push(self.targets[day] - (n - y.s));
        }
        Ok(out)
    }

    /// `Y(t) - Ŷ(t)` for `t = 1..=H`.
    pub fn residuals(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_len(values.len())?;
        self.residual_tail(|d| values[d], 0, self.init)
    }

    /// States at every boundary and the running SSE after each day.
    pub(crate) fn base_run(&self, values: &[f64]) -> Result<(Vec<SirState>, Vec<f64>)> {
        self.check_len(values.len())?;
        let n = self.params().population;
        let mut states = Vec::with_capacity(values.len() + 1);
        let mut partial = Vec::with_capacity(values.len() + 1);
        let mut y = self.init;
        let mut acc = 0.0;
        states.push(y);
        partial.push(acc);
        for (day, &beta) in values.iter().enumerate() {
            if !beta.is_finite() {
                return Err(Error::NonFinite("beta"));
            }
            y = self.stepper.advance(y, beta, day)?;
            let r = self.targets[day] - (n - y.s);
            acc += r * r;
            states.push(y);
            partial.push(acc);
        }
        Ok((states, partial))
    }

    /// Simulated `Ŷ(t)` for `t = 1..=H`.
    pub fn fitted_cumulative(&self, schedule: &BetaSchedule) -> Result<Vec<f64>> {
        self.check_len(schedule.horizon_days())?;
        let traj = simulate(*self.params(), schedule, self.init, self.substeps_per_day)?;
        Ok(traj.cumulative_infected[1..].to_vec())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.targets.len() {
            return Err(Error::HorizonMismatch { expected: self.targets.len(), found: len });
        }
        Ok(())
    }
}

/// Sum over the observed days of `(Y(t) - Ŷ(t))²`.
pub fn sse_cost(ctx: &ObjectiveContext, schedule: &BetaSchedule) -> Result<f64> {
    ctx.sse_values(schedule.values())
}

/// Central-difference gradient of [`sse_cost`] with respect to each day's β.
pub fn sse_gradient(ctx: &ObjectiveContext, schedule: &BetaSchedule, step: f64) -> Result<Vec<f64>> {
    SegmentObjective::daily(ctx).with_fd_step(step)?.gradient(schedule.values())
}

/// Mean absolute percentage error between fitted and observed cumulative
/// series, skipping days with `Y(t) = 0`.
pub fn cumulative_mape(observed: &[f64], fitted: &[f64]) -> f64 {
    let (sum, n) = observed
        .iter()
        .zip(fitted)
        .filter(|(y, _)| **y > 0.0)
        .fold((0.0, 0usize), |(s, n), (y, f)| (s + ((y - f) / y).abs(), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// SSE as a function of `count` segment values, each covering `width`
/// consecutive days. Segments that start beyond the data horizon have no
/// effect on the cost.
#[derive(Clone, Copy, Debug)]
pub struct SegmentObjective<'a> {
    ctx: &'a ObjectiveContext,
    width: usize,
    count: usize,
    fd_step: f64,
}

impl<'a> SegmentObjective<'a> {
    pub fn new(ctx: &'a ObjectiveContext, count: usize, width: usize) -> Result<Self> {
        if count == 0 || width == 0 {
            return Err(Error::invalid("segment count and width must be positive"));
        }
        if count * width < ctx.horizon_days() {
            return Err(Error::invalid(format!(
                "{count} segments of {width} days do not cover {} days",
                ctx.horizon_days()
            )));
        }
        Ok(SegmentObjective { ctx, width, count, fd_step: DEFAULT_FD_STEP })
    }

    /// One segment per observed day.
    pub fn daily(ctx: &'a ObjectiveContext) -> Self {
        SegmentObjective { ctx, width: 1, count: ctx.horizon_days(), fd_step: DEFAULT_FD_STEP }
    }

    pub fn with_fd_step(mut self, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
        }
        self.fd_step = step;
        Ok(self)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn daily_values(&self, x: &[f64]) -> Vec<f64> {
        (0..self.ctx.horizon_days()).map(|d| x[d / self.width]).collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.count {
            return Err(Error::invalid(format!("expected {} segment values, got {}", self.count, x.len())));
        }
        Ok(())
    }
}

impl Objective for SegmentObjective<'_> {
    fn cost(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.ctx.sse_values(&self.daily_values(x))
    }

    /// Each probe re-integrates only the days at or after the perturbed segment.
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let daily = self.daily_values(x);
        let (states, partial) = self.ctx.base_run(&daily)?;
        let horizon = self.ctx.horizon_days();
        (0..self.count)
            .into_par_iter()
            .map(|j| {
                let start = j * self.width;
                if start >= horizon {
                    return Ok(0.0);
                }
                let h = fd_step_for(self.fd_step, x[j]);
                let probe = |v: f64| {
                    self.ctx.sse_tail(
                        |d| if d / self.width == j { v } else { daily[d] },
                        start,
                        states[start],
                        partial[start],
                    )
                };
                Ok((probe(x[j] + h)? - probe(x[j] - h)?) / (2.0 * h))
            })
            .collect()
    }
}

impl LeastSquares for SegmentObjective<'_> {
    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.ctx.residuals(&self.daily_values(x))
    }

    /// Central differences; rows before the perturbed segment are zero.
    fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_dim(x)?;
        let daily = self.daily_values(x);
        let (states, _) = self.ctx.base_run(&daily)?;
        let horizon = self.ctx.horizon_days();
        (0..self.count)
            .into_par_iter()
            .map(|j| {
                let mut column = vec![0.0; horizon];
                let start = j * self.width;
                if start >= horizon {
                    return Ok(column);
                }
                let h = fd_step_for(self.fd_step, x[j]);
                let probe = |v: f64| {
                    self.ctx.residual_tail(|d| if d / self.width == j { v } else { daily[d] }, start, states[start])
                };
                let (up, down) = (probe(x[j] + h)?, probe(x[j] - h)?);
                for (c, (a, b)) in column[start..].iter_mut().zip(up.iter().zip(&down)) {
                    *c = (a - b) / (2.0 * h);
                }
                Ok(column)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, NoiseModel, SyntheticSpec};
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 10).unwrap()
    }

    fn synthetic_ctx(values: Vec<f64>, n: f64) -> (ObjectiveContext, BetaSchedule) {
        let params = SirParams::new(n, 0.1).unwrap();
        let spec = SyntheticSpec {
            true_schedule: BetaSchedule::new(values).unwrap(),
            params,
            init: params.seeded_state(1.0).unwrap(),
            noise: NoiseModel::None,
            seed: 0,
            start_date: start(),
            substeps_per_day: 1,
        };
        let data = generate_synthetic(&spec).unwrap();
        let ctx = ObjectiveContext::new(data.series, params, spec.init, 1).unwrap();
        (ctx, data.true_schedule)
    }

    #[test]
    fn self_consistent_cost_is_round_off() {
        let (ctx, truth) = synthetic_ctx(vec![0.35; 60], 1e5);
        let cost = sse_cost(&ctx, &truth).unwrap();
        let scale: f64 = ctx.observed().cumulative().iter().map(|&y| (y as f64).powi(2)).sum();
        // Only the integer rounding of the synthetic data remains.
        assert!(cost <= 1e-6 * scale, "cost {cost} scale {scale}");
        assert!(cost <= 0.25 * 60.0);
    }

    #[test]
    fn unit_offsets_sum_to_three() {
        // Zero transmission keeps Ŷ(t) = 1; observing 2 on three days gives 3.
        let params = SirParams::new(100.0, 0.1).unwrap();
        let series = ObservedSeries::from_cumulative(start(), vec![2, 2, 2]).unwrap();
        let ctx = ObjectiveContext::new(series, params, params.seeded_state(1.0).unwrap(), 1).unwrap();
        let zero = BetaSchedule::constant(0.0, 3).unwrap();
        assert_eq!(sse_cost(&ctx, &zero).unwrap(), 3.0);
        assert!(matches!(
            sse_cost(&ctx, &BetaSchedule::constant(0.0, 4).unwrap()),
            Err(Error::HorizonMismatch { expected: 3, found: 4 })
        ));
    }

    #[test]
    fn zero_transmission_gradient_vanishes() {
        let params = SirParams::new(1e4, 0.1).unwrap();
        let series = ObservedSeries::from_cumulative(start(), vec![1; 12]).unwrap();
        let ctx = ObjectiveContext::new(series, params, params.seeded_state(1.0).unwrap(), 1).unwrap();
        let zero = BetaSchedule::constant(0.0, 12).unwrap();
        assert_eq!(sse_cost(&ctx, &zero).unwrap(), 0.0);
        let g = sse_gradient(&ctx, &zero, DEFAULT_FD_STEP).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-6), "{g:?}");
    }

    #[test]
    fn prefix_reuse_matches_plain_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let truth: Vec<f64> = (0..40).map(|_| rng.gen_range(0.15..0.45)).collect();
        let (ctx, _) = synthetic_ctx(truth, 1e6);
        let x: Vec<f64> = (0..40).map(|_| rng.gen_range(0.1..0.5)).collect();
        let fast = sse_gradient(&ctx, &BetaSchedule::new(x.clone()).unwrap(), 1e-6).unwrap();
        let plain = fd_gradient(|v| ctx.sse_values(v), &x, 1e-6).unwrap();
        assert_eq!(fast, plain);
    }

    #[test]
    fn segments_past_the_horizon_have_zero_gradient() {
        let (ctx, _) = synthetic_ctx(vec![0.3; 20], 1e5);
        let obj = SegmentObjective::new(&ctx, 8, 4).unwrap();
        let g = obj.gradient(&[0.3; 8]).unwrap();
        assert!(g[..5].iter().all(|v| *v != 0.0));
        assert!(g[5..].iter().all(|v| *v == 0.0));
        assert!(SegmentObjective::new(&ctx, 4, 4).is_err());
    }

    #[test]
    fn gradient_agrees_with_directional_difference() {
        // 4-day problem with a visible epidemic so that the cost is well scaled.
        let params = SirParams::new(1e4, 0.1).unwrap();
        let series = ObservedSeries::from_cumulative(start(), vec![400, 900, 1800, 3000]).unwrap();
        let ctx = ObjectiveContext::new(series, params, params.seeded_state(200.0).unwrap(), 1).unwrap();
        let x = [0.9, 1.1, 0.8, 1.2];
        let g = sse_gradient(&ctx, &BetaSchedule::new(x.to_vec()).unwrap(), 1e-6).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let dir: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let u: Vec<f64> = dir.iter().map(|v| v / norm).collect();
            let h = 1e-5;
            let plus: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + h * b).collect();
            let minus: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - h * b).collect();
            let dd = (ctx.sse_values(&plus).unwrap() - ctx.sse_values(&minus).unwrap()) / (2.0 * h);
            let gd: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
            assert!((gd - dd).abs() <= 1e-3 * dd.abs(), "gd {gd} dd {dd}");
        }
    }

    #[test]
    fn mape_skips_zero_observations() {
        assert_eq!(cumulative_mape(&[0.0, 100.0, 200.0], &[5.0, 101.0, 198.0]), 0.01);
        assert_eq!(cumulative_mape(&[0.0], &[1.0]), 0.0);
    }

    #[test]
    fn bounds_validation() {
        assert!(Bounds::new(0.0, 5.0).is_ok());
        assert!(Bounds::new(1.0, 1.0).is_err());
        assert!(Bounds::new(-1.0, 1.0).is_err());
        assert!(Bounds::new(0.0, f64::INFINITY).is_err());
        assert_eq!(Bounds::default().clamp(7.0), 5.0);
    }
}
