//! Frozen-rate forecasting and rolling-origin error evaluation.
//!
//! From start day `t0` the identified rates are kept up to day `t0`, the rate
//! is then frozen for `T` days, and the simulated cumulative count is compared
//! with the observed one: `e_T(t0) = (Y(t0+T) - Ŷ(t0+T)) / Y(t0+T)`.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{dyadic_fit, Bounds, FitConfig, ObjectiveContext};
use crate::error::{Error, Result};
use crate::model::{simulate, BetaSchedule, SirState};

pub const DEFAULT_HORIZONS: [usize; 5] = [7, 14, 30, 60, 180];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionRule {
    /// β of day `t0`.
    #[default]
    HoldLast,
    /// Mean β of days `t0-k+1 ..= t0`.
    MeanOfLast(usize),
}

impl ExtensionRule {
    /// The frozen rate for one-based start day `t0`.
    pub fn frozen_value(&self, fitted: &[f64], t0: usize) -> Result<f64> {
        if t0 == 0 || t0 > fitted.len() {
            return Err(Error::invalid(format!(
                "start day {t0} outside the fitted horizon 1..={}",
                fitted.len()
            )));
        }
        match *self {
            ExtensionRule::HoldLast => Ok(fitted[t0 - 1]),
            ExtensionRule::MeanOfLast(k) => {
                if k == 0 || k > t0 {
                    return Err(Error::invalid(format!("cannot average the last {k} days before day {t0}")));
                }
                Ok(fitted[t0 - k..t0].iter().sum::<f64>() / k as f64)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationMode {
    /// Cut the single full-horizon fit at every start day.
    #[default]
    Truncate,
    /// Re-identify the rates from the data up to every start day.
    Refit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub horizons: Vec<usize>,
    pub start_day_min: usize,
    /// Upper limit on start days; every feasible start day is used when unset.
    pub start_day_max: Option<usize>,
    pub extension: ExtensionRule,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            horizons: DEFAULT_HORIZONS.to_vec(),
            start_day_min: 100,
            start_day_max: None,
            extension: ExtensionRule::HoldLast,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::invalid("forecast horizons must be a non-empty set of positive days"));
        }
        if self.start_day_min == 0 {
            return Err(Error::invalid("start_day_min must be at least 1"));
        }
        Ok(())
    }

    fn sorted_horizons(&self) -> Vec<usize> {
        let mut h = self.horizons.clone();
        h.sort_unstable();
        h.dedup();
        h
    }
}

/// First `t0` fitted rates followed by `horizon` copies of the frozen rate.
pub fn extend_schedule(
    fitted: &BetaSchedule,
    t0: usize,
    horizon: usize,
    rule: ExtensionRule,
) -> Result<BetaSchedule> {
    if horizon == 0 {
        return Err(Error::invalid("forecast horizon must be at least one day"));
    }
    let frozen = rule.frozen_value(fitted.values(), t0)?;
    let mut values = fitted.values()[..t0].to_vec();
    values.resize(t0 + horizon, frozen);
    BetaSchedule::new(values)
}

fn relative_error(observed: u64, simulated: f64, day: usize) -> Result<f64> {
    if observed == 0 {
        return Err(Error::invalid(format!("observed cumulative count is zero on day {day}")));
    }
    let y = observed as f64;
    Ok((y - simulated) / y)
}

fn check_window(ctx: &ObjectiveContext, t0: usize, horizon: usize) -> Result<()> {
    if t0 == 0 || horizon == 0 || t0 + horizon > ctx.horizon_days() {
        return Err(Error::invalid(format!(
            "window t0={t0}, T={horizon} exceeds the {}-day observed horizon",
            ctx.horizon_days()
        )));
    }
    Ok(())
}

/// Signed relative error of the frozen-rate forecast made at day `t0` for day
/// `t0 + horizon`. Simulates from day 0.
pub fn prediction_error(
    ctx: &ObjectiveContext,
    fitted: &BetaSchedule,
    t0: usize,
    horizon: usize,
    rule: ExtensionRule,
) -> Result<f64> {
    check_window(ctx, t0, horizon)?;
    let extended = extend_schedule(fitted, t0, horizon, rule)?;
    let traj = simulate(*ctx.params(), &extended, ctx.init(), ctx.substeps_per_day())?;
    let day = t0 + horizon;
    relative_error(ctx.observed().y(day), traj.cumulative_infected[day], day)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub start_day: usize,
    pub horizon: usize,
    pub error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    pub fn for_horizon(&self, horizon: usize) -> impl Iterator<Item = &ErrorRow> {
        self.rows.iter().filter(move |r| r.horizon == horizon)
    }

    pub fn horizons(&self) -> Vec<usize> {
        let mut h: Vec<usize> = self.rows.iter().map(|r| r.horizon).collect();
        h.sort_unstable();
        h.dedup();
        h
    }
}

fn start_days(ctx: &ObjectiveContext, config: &ForecastConfig, shortest: usize) -> std::ops::RangeInclusive<usize> {
    let last_feasible = ctx.horizon_days().saturating_sub(shortest);
    let last = config.start_day_max.map_or(last_feasible, |m| m.min(last_feasible));
    config.start_day_min..=last
}

/// Rows for one start day, given the state at boundary `t0` of the rates in
/// force before it.
fn rows_from(
    ctx: &ObjectiveContext,
    horizons: &[usize],
    t0: usize,
    state: SirState,
    frozen: f64,
) -> Result<Vec<ErrorRow>> {
    let reach = horizons.iter().copied().filter(|&h| t0 + h <= ctx.horizon_days()).max().unwrap_or(0);
    let n = ctx.params().population;
    let mut rows = Vec::new();
    let mut y = state;
    let mut wanted = horizons.iter().copied().peekable();
    for step in 1..=reach {
        y = ctx.stepper().advance(y, frozen, t0 + step - 1)?;
        if wanted.peek() == Some(&step) {
            wanted.next();
            let day = t0 + step;
            let error = relative_error(ctx.observed().y(day), n - y.s, day)?;
            rows.push(ErrorRow { start_day: t0, horizon: step, error });
        }
    }
    Ok(rows)
}

/// Evaluates every feasible `(t0, T)` pair, ordered by `t0` then `T`.
///
/// Equivalent to calling [`prediction_error`] per row, but each start day
/// integrates the frozen tail once for all horizons.
pub fn rolling_evaluation(
    ctx: &ObjectiveContext,
    fitted: &BetaSchedule,
    config: &ForecastConfig,
) -> Result<ErrorTable> {
    config.validate()?;
    if fitted.horizon_days() != ctx.horizon_days() {
        return Err(Error::HorizonMismatch { expected: ctx.horizon_days(), found: fitted.horizon_days() });
    }
    let horizons = config.sorted_horizons();
    let base = simulate(*ctx.params(), fitted, ctx.init(), ctx.substeps_per_day())?;
    let starts: Vec<usize> = start_days(ctx, config, horizons[0]).collect();
    let rows: Vec<Vec<ErrorRow>> = starts
        .par_iter()
        .map(|&t0| {
            let frozen = config.extension.frozen_value(fitted.values(), t0)?;
            rows_from(ctx, &horizons, t0, base.states[t0], frozen)
        })
        .collect::<Result<_>>()?;
    finish(rows)
}

/// Rolling evaluation where the rates used from start day `t0` are identified
/// from the first `t0` observations only.
pub fn rolling_evaluation_refit(
    ctx: &ObjectiveContext,
    bounds: Bounds,
    fit_config: &FitConfig,
    config: &ForecastConfig,
) -> Result<ErrorTable> {
    config.validate()?;
    let horizons = config.sorted_horizons();
    let starts: Vec<usize> = start_days(ctx, config, horizons[0]).collect();
    let rows: Vec<Vec<ErrorRow>> = starts
        .par_iter()
        .map(|&t0| {
            let prefix = ctx.truncated(t0)?;
            let fit = dyadic_fit(&prefix, bounds, fit_config)?;
            let frozen = config.extension.frozen_value(fit.schedule.values(), t0)?;
            let traj = simulate(*ctx.params(), &fit.schedule, ctx.init(), ctx.substeps_per_day())?;
            rows_from(ctx, &horizons, t0, traj.final_state(), frozen)
        })
        .collect::<Result<_>>()?;
    finish(rows)
}

fn finish(rows: Vec<Vec<ErrorRow>>) -> Result<ErrorTable> {
    let rows: Vec<ErrorRow> = rows.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(Error::invalid("no feasible (start day, horizon) pair in the observed window"));
    }
    Ok(ErrorTable { rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    /// Normal density at the bin centre scaled by `n·width`; absent when the
    /// sample has zero spread.
    pub gaussian: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub horizon: usize,
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    pub mean_abs: f64,
    pub bins: Vec<HistogramBin>,
}

/// `⌈log₂ n⌉ + 1`.
pub fn sturges_bins(n: usize) -> usize {
    (n.max(1) as f64).log2().ceil() as usize + 1
}

pub fn summarize(table: &ErrorTable, horizon: usize, bin_count: Option<usize>) -> Result<ErrorSummary> {
    let errors: Vec<f64> = table.for_horizon(horizon).map(|r| r.error).collect();
    summarize_errors(horizon, &errors, bin_count)
}

pub fn summarize_errors(horizon: usize, errors: &[f64], bin_count: Option<usize>) -> Result<ErrorSummary> {
    let n = errors.len();
    if n < 2 {
        return Err(Error::invalid(format!("horizon {horizon}: need at least 2 errors to summarize, got {n}")));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("forecast errors"));
    }
    let bins_wanted = bin_count.unwrap_or_else(|| sturges_bins(n));
    if bins_wanted == 0 {
        return Err(Error::invalid("bin count must be positive"));
    }
    let mean = errors.iter().sum::<f64>() / n as f64;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let mean_abs = errors.iter().map(|e| e.abs()).sum::<f64>() / n as f64;

    let lo = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = if hi == lo {
        vec![HistogramBin { low: lo, high: hi, count: n, gaussian: None }]
    } else {
        let width = (hi - lo) / bins_wanted as f64;
        let mut counts = vec![0usize; bins_wanted];
        for e in errors {
            let k = (((e - lo) / width) as usize).min(bins_wanted - 1);
            counts[k] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(k, count)| {
                let low = lo + k as f64 * width;
                let high = if k + 1 == bins_wanted { hi } else { lo + (k + 1) as f64 * width };
                let gaussian = (std > 0.0).then(|| {
                    let z = (0.5 * (low + high) - mean) / std;
                    n as f64 * width * (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
                });
                HistogramBin { low, high, count, gaussian }
            })
            .collect()
    };
    Ok(ErrorSummary { horizon, count: n, mean, std, mean_abs, bins })
}

fn lf_writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink)
}

/// `start_day,horizon,error`.
pub fn write_error_table<W: Write>(rows: &[ErrorRow], sink: W) -> Result<()> {
    let mut w = lf_writer(sink);
    w.write_record(["start_day", "horizon", "error"])?;
    for r in rows {
        w.write_record([r.start_day.to_string(), r.horizon.to_string(), r.error.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_error_table<R: Read>(source: R) -> Result<ErrorTable> {
    let mut reader = csv::Reader::from_reader(source);
    let rows = reader.deserialize().collect::<std::result::Result<Vec<ErrorRow>, _>>()?;
    Ok(ErrorTable { rows })
}

/// `#`-prefixed header block (horizon, n, mean, std, mean_abs) followed by
/// `bin_low,bin_high,count,gaussian_value`. The gaussian column is empty for
/// a zero-spread sample.
pub fn write_summary<W: Write>(summary: &ErrorSummary, mut sink: W) -> Result<()> {
    writeln!(sink, "# horizon,{}", summary.horizon)?;
    writeln!(sink, "# n,{}", summary.count)?;
    writeln!(sink, "# mean,{}", summary.mean)?;
    writeln!(sink, "# std,{}", summary.std)?;
    writeln!(sink, "# mean_abs,{}", summary.mean_abs)?;
    let mut w = lf_writer(sink);
    w.write_record(["bin_low", "bin_high", "count", "gaussian_value"])?;
    for b in &summary.bins {
        w.write_record([
            b.low.to_string(),
            b.high.to_string(),
            b.count.to_string(),
            b.gaussian.map_or_else(String::new, |g| g.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ObservedSeries;
    use crate::model::SirParams;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn sched(v: &[f64]) -> BetaSchedule {
        BetaSchedule::new(v.to_vec()).unwrap()
    }

    #[test]
    fn extension_rules() {
        let f = sched(&[0.3, 0.2, 0.1]);
        assert_eq!(extend_schedule(&f, 3, 2, ExtensionRule::HoldLast).unwrap().values(), &[0.3, 0.2, 0.1, 0.1, 0.1]);
        let m = extend_schedule(&f, 3, 2, ExtensionRule::MeanOfLast(2)).unwrap();
        assert_eq!(&m.values()[..3], &[0.3, 0.2, 0.1]);
        assert!((m.values()[3] - 0.15).abs() < 1e-15 && m.values()[3] == m.values()[4]);
        assert_eq!(extend_schedule(&f, 1, 1, ExtensionRule::HoldLast).unwrap().values(), &[0.3, 0.3]);
        assert!(extend_schedule(&f, 0, 1, ExtensionRule::HoldLast).is_err());
        assert!(extend_schedule(&f, 4, 1, ExtensionRule::HoldLast).is_err());
        assert!(extend_schedule(&f, 2, 1, ExtensionRule::MeanOfLast(3)).is_err());
        assert!(extend_schedule(&f, 2, 0, ExtensionRule::HoldLast).is_err());
    }

    fn zero_transmission_ctx(cumulative: Vec<u64>) -> ObjectiveContext {
        let params = SirParams::new(1e4, 0.1).unwrap();
        let start = NaiveDate::from_ymd_opt(2020, 3, 10).unwrap();
        let series = ObservedSeries::from_cumulative(start, cumulative).unwrap();
        ObjectiveContext::new(series, params, params.seeded_state(190.0).unwrap(), 1).unwrap()
    }

    #[test]
    fn prediction_error_formula() {
        // With β = 0 the simulated cumulative stays at the seed, 190.
        let ctx = zero_transmission_ctx(vec![190, 190, 195, 200]);
        let zero = BetaSchedule::constant(0.0, 4).unwrap();
        let e = prediction_error(&ctx, &zero, 2, 2, ExtensionRule::HoldLast).unwrap();
        assert!((e - 0.05).abs() < 1e-15);
        assert_eq!(prediction_error(&ctx, &zero, 1, 1, ExtensionRule::HoldLast).unwrap(), 0.0);
        assert!(prediction_error(&ctx, &zero, 2, 3, ExtensionRule::HoldLast).is_err());

        let ctx = zero_transmission_ctx(vec![0, 0, 1]);
        assert!(prediction_error(&ctx, &BetaSchedule::constant(0.0, 3).unwrap(), 1, 1, ExtensionRule::HoldLast).is_err());
    }

    #[test]
    fn feasible_window_counts() {
        let ctx = zero_transmission_ctx(vec![190; 120]);
        let fitted = BetaSchedule::constant(0.0, 120).unwrap();
        let cfg = ForecastConfig { horizons: vec![7], ..Default::default() };
        let table = rolling_evaluation(&ctx, &fitted, &cfg).unwrap();
        assert_eq!(table.rows.len(), 14);
        assert_eq!(table.rows.first().unwrap().start_day, 100);
        assert_eq!(table.rows.last().unwrap().start_day, 113);

        let ctx = zero_transmission_ctx(vec![190; 770]);
        let fitted = BetaSchedule::constant(0.0, 770).unwrap();
        let table = rolling_evaluation(&ctx, &fitted, &ForecastConfig::default()).unwrap();
        let t180: Vec<_> = table.for_horizon(180).collect();
        assert_eq!(t180.len(), 491);
        assert_eq!((t180[0].start_day, t180[490].start_day), (100, 590));
        assert!(table.rows.iter().all(|r| r.start_day + r.horizon <= 770));
        assert!(table.rows.windows(2).all(|w| (w[0].start_day, w[0].horizon) < (w[1].start_day, w[1].horizon)));

        let capped = ForecastConfig { start_day_max: Some(150), ..Default::default() };
        let table = rolling_evaluation(&ctx, &fitted, &capped).unwrap();
        assert_eq!(table.for_horizon(180).count(), 51);

        let short = zero_transmission_ctx(vec![190; 50]);
        assert!(rolling_evaluation(&short, &BetaSchedule::constant(0.0, 50).unwrap(), &ForecastConfig::default()).is_err());
        assert!(rolling_evaluation(&ctx, &BetaSchedule::constant(0.0, 769).unwrap(), &ForecastConfig::default()).is_err());
    }

    #[test]
    fn fast_sweep_matches_direct_prediction() {
        let params = SirParams::new(1e6, 0.1).unwrap();
        let values: Vec<f64> = (0..160).map(|d| 0.2 + 0.1 * (d as f64 / 20.0).sin()).collect();
        let fitted = sched(&values);
        let traj = simulate(params, &fitted, params.seeded_state(1.0).unwrap(), 1).unwrap();
        let cum: Vec<u64> = traj.cumulative_infected[1..].iter().map(|y| y.round() as u64).collect();
        let start = NaiveDate::from_ymd_opt(2020, 3, 10).unwrap();
        let ctx = ObjectiveContext::new(
            ObservedSeries::from_cumulative(start, cum).unwrap(),
            params,
            params.seeded_state(1.0).unwrap(),
            1,
        )
        .unwrap();
        for rule in [ExtensionRule::HoldLast, ExtensionRule::MeanOfLast(5)] {
            let cfg = ForecastConfig { horizons: vec![30, 7, 14], start_day_min: 100, start_day_max: None, extension: rule };
            let table = rolling_evaluation(&ctx, &fitted, &cfg).unwrap();
            assert_eq!(table.rows.len(), 54 + 47 + 31);
            for r in &table.rows {
                assert_eq!(r.error, prediction_error(&ctx, &fitted, r.start_day, r.horizon, rule).unwrap());
            }
        }
    }

    #[test]
    fn summary_statistics() {
        let s = summarize_errors(7, &[0.01, 0.02, 0.03], None).unwrap();
        assert!((s.mean - 0.02).abs() < 1e-15);
        assert!((s.std - 0.01).abs() < 1e-15);
        assert_eq!(s.bins.len(), 3);
        assert_eq!(s.bins.iter().map(|b| b.count).sum::<usize>(), 3);
        assert!(s.bins.iter().all(|b| b.gaussian.is_some()));

        let s = summarize_errors(7, &[0.5; 4], None).unwrap();
        assert_eq!(s.std, 0.0);
        assert_eq!(s.bins.len(), 1);
        assert_eq!(s.bins[0].count, 4);
        assert!(s.bins[0].gaussian.is_none());

        assert!(summarize_errors(7, &[0.1], None).is_err());
        assert!(summarize_errors(7, &[0.1, 0.2], Some(0)).is_err());
        assert_eq!(sturges_bins(491), 10);
    }

    #[test]
    fn summary_file_layout() {
        let s = summarize_errors(14, &[-0.1, 0.0, 0.1, 0.3], Some(2)).unwrap();
        let mut buf = Vec::new();
        write_summary(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# horizon,14");
        assert_eq!(lines[1], "# n,4");
        assert_eq!(lines[5], "bin_low,bin_high,count,gaussian_value");
        assert_eq!(lines.len(), 8);
        assert!(!text.contains('\r'));
    }

    #[test]
    fn error_table_round_trip() {
        let rows = vec![
            ErrorRow { start_day: 100, horizon: 7, error: 0.0125 },
            ErrorRow { start_day: 100, horizon: 14, error: -3.5e-5 },
        ];
        let mut buf = Vec::new();
        write_error_table(&rows, &mut buf).unwrap();
        assert_eq!(read_error_table(buf.as_slice()).unwrap().rows, rows);
    }

    proptest! {
        #[test]
        fn bins_partition_the_sample(errors in proptest::collection::vec(-3.0f64..3.0, 2..400), bins in proptest::option::of(1usize..40)) {
            let s = summarize_errors(30, &errors, bins).unwrap();
            prop_assert_eq!(s.bins.iter().map(|b| b.count).sum::<usize>(), errors.len());
            prop_assert!(s.std >= 0.0);
            for w in s.bins.windows(2) {
                prop_assert!(w[0].high <= w[1].low + 1e-12);
            }
        }
    }
}
