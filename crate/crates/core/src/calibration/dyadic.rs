//! Coarse-to-fine identification: fit one rate for the whole (padded) horizon,
//! duplicate every value, refit, and repeat until one segment per virtual day.
//! The padded horizon is the smallest power of two covering the data; the
//! surplus virtual days are discarded and a final per-day polish follows.
//!
//! Stages with up to eight rates use Nelder-Mead; larger ones use the
//! least-squares solver in [`super::minimize_least_squares`].

use serde::{Deserialize, Serialize};

use super::least_squares::minimize_least_squares;
use super::optimize::{minimize_bounded, Method, Objective, StopRule, NELDER_MEAD_MAX_DIM};
use super::{Bounds, ObjectiveContext, SegmentObjective, DEFAULT_FD_STEP};
use crate::error::{Error, Result};
use crate::model::BetaSchedule;

/// `[a, b] -> [a, a, b, b]`.
pub fn expand_schedule(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("cannot expand an empty vector"));
    }
    Ok(values.iter().flat_map(|&v| [v, v]).collect())
}

pub fn padded_horizon(horizon_days: usize) -> usize {
    horizon_days.max(1).next_power_of_two()
}

/// Spreads `k` segment values over `padded_horizon` virtual days and keeps the
/// first `horizon_days`.
pub fn segments_to_daily(
    values: &[f64],
    padded_horizon: usize,
    horizon_days: usize,
) -> Result<BetaSchedule> {
    let k = values.len();
    if k == 0 || !padded_horizon.is_multiple_of(k) {
        return Err(Error::invalid(format!(
            "{k} segments do not evenly divide a {padded_horizon}-day horizon"
        )));
    }
    if horizon_days == 0 || horizon_days > padded_horizon {
        return Err(Error::invalid(format!(
            "horizon of {horizon_days} days does not fit the {padded_horizon}-day padded horizon"
        )));
    }
    let width = padded_horizon / k;
    BetaSchedule::new((0..horizon_days).map(|d| values[d / width]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Applied to every dyadic stage.
    pub stage_stop: StopRule,
    /// Applied to the per-day polish.
    pub final_stop: StopRule,
    pub fd_step: f64,
    /// Value of the single rate that starts the first stage.
    pub initial_value: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            stage_stop: StopRule::default(),
            final_stop: StopRule::default(),
            fd_step: DEFAULT_FD_STEP,
            initial_value: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    /// Number of free rates in this stage. For the final polish this equals
    /// the data horizon.
    pub segment_count: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: Method,
    #[serde(default)]
    pub polish: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub schedule: BetaSchedule,
    pub stages: Vec<StageReport>,
    pub final_cost: f64,
}

impl FitResult {
    pub fn stage_costs(&self) -> Vec<(usize, f64)> {
        self.stages.iter().map(|s| (s.segment_count, s.final_cost)).collect()
    }

    pub fn iterations_per_stage(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.iterations).collect()
    }
}

pub fn dyadic_fit(ctx: &ObjectiveContext, bounds: Bounds, config: &FitConfig) -> Result<FitResult> {
    dyadic_fit_with(ctx, bounds, config, |_| {})
}

/// As [`dyadic_fit`], reporting each finished stage to `observer`.
pub fn dyadic_fit_with(
    ctx: &ObjectiveContext,
    bounds: Bounds,
    config: &FitConfig,
    mut observer: impl FnMut(&StageReport),
) -> Result<FitResult> {
    let horizon = ctx.horizon_days();
    if horizon == 0 {
        return Err(Error::invalid("cannot fit an empty series"));
    }
    let padded = padded_horizon(horizon);
    let mut stages = Vec::new();
    let mut values = vec![bounds.clamp(config.initial_value)];

    let mut run_stage = |objective: &SegmentObjective, x0: &[f64], stop: StopRule, polish: bool| {
        let count = objective.count();
        let stage_err = |e: Error| match e {
            Error::Optimization(msg) => Error::Optimization(format!("stage with {count} rates: {msg}")),
            other => Error::Optimization(format!("stage with {count} rates: {other}")),
        };
        let initial_cost = objective.cost(x0).map_err(stage_err)?;
        let found = if count <= NELDER_MEAD_MAX_DIM {
            minimize_bounded(objective, x0, bounds, stop)
        } else {
            minimize_least_squares(objective, x0, bounds, stop)
        }
        .map_err(stage_err)?;
        let report = StageReport {
            segment_count: count,
            initial_cost,
            final_cost: found.cost,
            iterations: found.iterations,
            converged: found.converged,
            method: found.method,
            polish,
        };
        observer(&report);
        stages.push(report);
        Ok::<_, Error>(found.x)
    };

    let mut k = 1;
    loop {
        let objective = SegmentObjective::new(ctx, k, padded / k)?.with_fd_step(config.fd_step)?;
        values = run_stage(&objective, &values, config.stage_stop, false)?;
        if k == padded {
            break;
        }
        values = expand_schedule(&values)?;
        k *= 2;
    }

    values.truncate(horizon);
    if padded > horizon {
        let objective = SegmentObjective::daily(ctx).with_fd_step(config.fd_step)?;
        values = run_stage(&objective, &values, config.final_stop, true)?;
    }

    let final_cost = stages.last().map_or(f64::NAN, |s| s.final_cost);
    Ok(FitResult { schedule: BetaSchedule::new(values)?, stages, final_cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ObservedSeries;
    use crate::model::SirParams;
    use chrono::NaiveDate;

    #[test]
    fn expansion_duplicates_in_place() {
        assert_eq!(expand_schedule(&[0.7]).unwrap(), vec![0.7, 0.7]);
        assert_eq!(expand_schedule(&[2.0, 3.0]).unwrap(), vec![2.0, 2.0, 3.0, 3.0]);
        let long: Vec<f64> = (0..512).map(|k| k as f64).collect();
        let out = expand_schedule(&long).unwrap();
        assert_eq!(out.len(), 1024);
        assert!(out.chunks(2).zip(&long).all(|(pair, v)| pair == [*v, *v]));
        assert!(expand_schedule(&[]).is_err());
    }

    #[test]
    fn segment_spreading() {
        let s = segments_to_daily(&[0.4], 1024, 770).unwrap();
        assert!(s.values().len() == 770 && s.values().iter().all(|v| *v == 0.4));

        let s = segments_to_daily(&[1.0, 2.0], 1024, 770).unwrap();
        assert!(s.values()[..512].iter().all(|v| *v == 1.0));
        assert!(s.values()[512..].iter().all(|v| *v == 2.0));
        assert_eq!(s.values().len() - 512, 258);

        let fine: Vec<f64> = (0..1024).map(|k| k as f64 / 1024.0).collect();
        let s = segments_to_daily(&fine, 1024, 770).unwrap();
        assert_eq!(s.values(), &fine[..770]);

        assert!(segments_to_daily(&[1.0, 2.0, 3.0], 1024, 770).is_err());
        assert!(segments_to_daily(&[1.0], 512, 770).is_err());
    }

    #[test]
    fn padded_horizons() {
        assert_eq!(padded_horizon(770), 1024);
        assert_eq!(padded_horizon(512), 512);
        assert_eq!(padded_horizon(100), 128);
        assert_eq!(padded_horizon(1), 1);
    }

    #[test]
    fn single_day_is_one_stage() {
        let params = SirParams::new(1e4, 0.1).unwrap();
        let start = NaiveDate::from_ymd_opt(2020, 3, 10).unwrap();
        let series = ObservedSeries::from_cumulative(start, vec![2]).unwrap();
        let ctx = ObjectiveContext::new(series, params, params.seeded_state(1.0).unwrap(), 1).unwrap();
        let fit = dyadic_fit(&ctx, Bounds::default(), &FitConfig::default()).unwrap();
        assert_eq!(fit.stages.len(), 1);
        assert_eq!(fit.stages[0].segment_count, 1);
        assert_eq!(fit.schedule.horizon_days(), 1);
        assert!(fit.final_cost < 1e-6, "{fit:?}");
    }
}
