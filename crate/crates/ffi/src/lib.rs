//! C interface to `sirtv`.
//!
//! Objects are opaque handles created by `sirtv_*_new`/`sirtv_fit`/... and
//! released with the matching `*_free`. Every fallible call returns a
//! [`SirtvStatus`]; on failure the out-pointer is left null and
//! [`sirtv_last_error`] describes the problem. Errors are per thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use chrono::NaiveDate;
use sirtv::calibration::{dyadic_fit, Bounds, FitConfig, FitResult, ObjectiveContext, StopRule};
use sirtv::data::{load_daily_counts, ObservedSeries};
use sirtv::forecast::{prediction_error, rolling_evaluation, summarize, ErrorTable, ExtensionRule, ForecastConfig};
use sirtv::model::{early_phase_infected, reproduction_number, simulate, BetaSchedule, SirParams, Trajectory};
use sirtv::{Error, ErrorKind};

/// Result of every fallible call. Values 2-4 match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SirtvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numerical = 3,
    Optimization = 4,
    Panic = 5,
}

pub struct SirtvSchedule(BetaSchedule);

pub struct SirtvTrajectory(Trajectory);

pub struct SirtvSeries(ObservedSeries);

pub struct SirtvFit {
    ctx: ObjectiveContext,
    result: FitResult,
}

pub struct SirtvErrorTable(ErrorTable);

/// Model and optimizer settings for `sirtv_fit`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SirtvFitOptions {
    pub population: f64,
    pub gamma: f64,
    pub initial_infected: f64,
    pub substeps_per_day: usize,
    pub beta_lower: f64,
    pub beta_upper: f64,
    /// Relative-improvement stopping threshold per stage.
    pub tolerance: f64,
    /// Iteration cap per stage.
    pub max_iterations: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SirtvStage {
    pub segment_count: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub polish: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SirtvErrorRow {
    pub start_day: usize,
    pub horizon: usize,
    pub error: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SirtvSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub mean_abs: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SirtvStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SirtvStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SirtvStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            match e.kind() {
                ErrorKind::Input => SirtvStatus::InvalidInput,
                ErrorKind::Numerical => SirtvStatus::Numerical,
                ErrorKind::Optimization => SirtvStatus::Optimization,
            }
        }
        Err(_) => {
            set_error("internal panic".to_owned());
            SirtvStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Writes a boxed handle to `out`, which must be non-null.
unsafe fn emit<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn clear_out<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = ptr::null_mut();
    Ok(())
}

fn copy_into(src: &[f64], dst: &mut [f64]) -> Result<(), Failure> {
    if dst.len() < src.len() {
        return Err(Error::InvalidInput(format!("buffer holds {} values, {} needed", dst.len(), src.len())).into());
    }
    dst[..src.len()].copy_from_slice(src);
    Ok(())
}

/// Message for the most recent failure on this thread, or null. The pointer is
/// valid until the next `sirtv_*` call on the same thread.
#[no_mangle]
pub extern "C" fn sirtv_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sirtv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Daily rates; `values[k]` applies on day `k+1`.
#[no_mangle]
pub unsafe extern "C" fn sirtv_schedule_new(
    values: *const f64,
    len: usize,
    out: *mut *mut SirtvSchedule,
) -> SirtvStatus {
    guard(|| {
        clear_out(out)?;
        let v = slice(values, len, "values")?;
        emit(out, SirtvSchedule(BetaSchedule::new(v.to_vec())?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sirtv_schedule_len(schedule: *const SirtvSchedule) -> usize {
    schedule.as_ref().map_or(0, |s| s.0.horizon_days())
}

/// Copies the rates into `out` (capacity `len`).
#[no_mangle]
pub unsafe extern "C" fn sirtv_schedule_values(
    schedule: *const SirtvSchedule,
    out: *mut f64,
    len: usize,
) -> SirtvStatus {
    guard(|| copy_into(obj(schedule, "schedule")?.0.values(), slice_mut(out, len, "out")?))
}

#[no_mangle]
pub unsafe extern "C" fn sirtv_schedule_free(schedule: *mut SirtvSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Integrates the model from `initial_infected` infected and no recovered.
#[no_mangle]
pub unsafe extern "C" fn sirtv_simulate(
    population: f64,
    gamma: f64,
    initial_infected: f64,
    substeps_per_day: usize,
    schedule: *const SirtvSchedule,
    out: *mut *mut SirtvTrajectory,
) -> SirtvStatus {
    guard(|| {
        clear_out(out)?;
        let schedule = obj(schedule, "schedule")?;
        let params = SirParams::new(population, gamma)?;
        let init = params.seeded_state(initial_infected)?;
        emit(out, SirtvTrajectory(simulate(params, &schedule.0, init, substeps_per_day)?));
        Ok(())
    })
}

/// Number of day boundaries (horizon + 1).
#[no_mangle]
pub unsafe extern "C" fn sirtv_trajectory_len(trajectory: *const SirtvTrajectory) -> usize {
    trajectory.as_ref().map_or(0, |t| t.0.states.len())
}

/// Copies S, I and R at each day boundary. Any of the buffers may be null.
#[no_mangle]
pub unsafe extern "C" fn sirtv_trajectory_states(
    trajectory: *const SirtvTrajectory,
    s: *mut f64,
    i: *mut f64,
    r: *mut f64,
    len: usize,
) -> SirtvStatus {
    guard(|| {
        let states = &obj(trajectory, "trajectory")?.0.states;
        for (buf, pick) in [(s, 0usize), (i, 1), (r, 2)] {
            if buf.is_null() {
                continue;
            }
            let values: Vec<f64> = states.iter().map(|st| [st.s, st.i, st.r][pick]).collect();
            copy_into(&values, slice_mut(buf, len, "buffer")?)?;
        }
        Ok(())
    })
}

/// Copies `N - S(t)` at each day boundary.
#[no_mangle]
pub unsafe extern "C" fn sirtv_trajectory_cumulative(
    trajectory: *const SirtvTrajectory,
    out: *mut f64,
    len: usize,
) -> SirtvStatus {
    guard(|| copy_into(&obj(trajectory, "trajectory")?.0.cumulative_infected, slice_mut(out, len, "out")?))
}

#[no_mangle]
pub unsafe extern "C" fn sirtv_trajectory_free(trajectory: *mut SirtvTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

/// Series from daily counts; the first count belongs to `year-month-day`.
#[no_mangle]
pub unsafe extern "C" fn sirtv_series_from_daily(
    year: i32,
    month: u32,
    day: u32,
    counts: *const u64,
    len: usize,
    out: *mut *mut SirtvSeries,
) -> SirtvStatus {
    guard(|| {
        clear_out(out)?;
        let start = NaiveDate::from_ymd_opt(year, month, day)
            .ok_or_else(|| Error::InvalidInput(format!("invalid date {year}-{month}-{day}")))?;
        let counts = slice(counts, len, "counts")?;
        emit(out, SirtvSeries(ObservedSeries::from_daily(start, counts.to_vec())?));
        Ok(())
    })
}

/// Loads a `date,count` file.
#[no_mangle]
pub unsafe extern "C" fn sirtv_series_load(path: *const c_char, out: *mut *mut SirtvSeries) -> SirtvStatus {
    guard(|| {
        clear_out(out)?;
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidInput("path is not valid UTF-8".to_owned()))?;
        let file = File::open(path).map_err(|e| Error::InvalidInput(format!("{path}: {e}")))?;
        emit(out, SirtvSeries(load_daily_counts(BufReader::new(file))?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sirtv_series_len(series: *const SirtvSeries) -> usize {
    series.as_ref().map_or(0, |s| s.0.horizon_days())
}

/// Copies the cumulative counts `Y(1..=H)` into `out`.
#[no_mangle]
pub unsafe extern "C" fn sirtv_series_cumulative(series: *const SirtvSeries, out: *mut u64, len: usize) -> SirtvStatus {
    guard(|| {
        let src = obj(series, "series")?.0.cumulative();
        let dst = slice_mut(out, len, "out")?;
        if dst.len() < src.len() {
            return Err(Error::InvalidInput(format!("buffer holds {} values, {} needed", dst.len(), src.len())).into());
        }
        dst[..src.len()].copy_from_slice(src);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sirtv_series_free(series: *mut SirtvSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

#[no_mangle]
pub extern "C" fn sirtv_fit_options_default() -> SirtvFitOptions {
    let stop = StopRule::default();
    let bounds = Bounds::default();
    SirtvFitOptions {
        population: 11_300_000.0,
        gamma: 0.1,
        initial_infected: 1.0,
        substeps_per_day: 1,
        beta_lower: bounds.lower,
        beta_upper: bounds.upper,
        tolerance: stop.tolerance,
        max_iterations: stop.max_iterations,
    }
}

/// Fits daily rates to `series`. A null `options` means the defaults.
#[no_mangle]
pub unsafe extern "C" fn sirtv_fit(
    series: *const SirtvSeries,
    options: *const SirtvFitOptions,
    out: *mut *mut SirtvFit,
) -> SirtvStatus {
    guard(|| {
        clear_out(out)?;
        let series = obj(series, "series")?;
        let o = options.as_ref().copied().unwrap_or_else(|| sirtv_fit_options_default());
        let params = SirParams::new(o.population, o.gamma)?;
        let ctx = ObjectiveContext::new(series.0.clone(), params, params.seeded_state(o.initial_infected)?, o.substeps_per_day)?;
        let stop = StopRule { tolerance: o.tolerance, max_iterations: o.max_iterations };
        let config = FitConfig { stage_stop: stop, final_stop: stop, ..FitConfig::default() };
        let result = dyadic_fit(&ctx, Bounds::new(o.beta_lower, o.beta_upper)?, &config)?;
        emit(out, SirtvFit { ctx, result });
        Ok(())
    })
}

/// A copy of the fitted daily rates.
#[no_mangle]
pub unsafe extern "C" fn sirtv_fit_schedule(fit: *const SirtvFit, out: *mut *mut SirtvSchedule) -> SirtvStatus {
    guard(|| {
        clear_out(out)?;
        emit(out, SirtvSchedule(obj(fit, "fit")?.result.schedule.clone()));
        Ok(())
    })
}

/// Final SSE, or NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn sirtv_fit_final_cost(fit: *const SirtvFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.result.final_cost)
}

#[no_mangle]
pub unsafe extern "C" fn sirtv_fit_stage_count(fit: *const SirtvFit) -> usize {
    fit.as_ref().map_or(0, |f| f.result.stages.len())
}

#[no_mangle]
pub unsafe extern "C" fn sirtv_fit_stage(fit: *const SirtvFit, index: usize, out: *mut SirtvStage) -> SirtvStatus {
    guard(|| {
        let stage = obj(fit, "fit")?
            .result
            .stages
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("no stage {index}")))?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = SirtvStage {
            segment_count: stage.segment_count,
            initial_cost: stage.initial_cost,
            final_cost: stage.final_cost,
            iterations: stage.iterations,
            converged: stage.converged,
            polish: stage.polish,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sirtv_fit_free(fit: *mut SirtvFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

fn extension(mean_window: usize) -> ExtensionRule {
    if mean_window == 0 {
        ExtensionRule::HoldLast
    } else {
        ExtensionRule::MeanOfLast(mean_window)
    }
}

/// Relative error of a `horizon`-day forecast from day `t0`. The frozen rate
/// is the last fitted one (`mean_window = 0`) or the mean of the last
/// `mean_window` fitted rates.
#[no_mangle]
pub unsafe extern "C" fn sirtv_prediction_error(
    fit: *const SirtvFit,
    t0: usize,
    horizon: usize,
    mean_window: usize,
    out: *mut f64,
) -> SirtvStatus {
    guard(|| {
        let fit = obj(fit, "fit")?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = prediction_error(&fit.ctx, &fit.result.schedule, t0, horizon, extension(mean_window))?;
        Ok(())
    })
}

/// Errors for every feasible start day `>= start_day_min` and each horizon.
#[no_mangle]
pub unsafe extern "C" fn sirtv_rolling_evaluation(
    fit: *const SirtvFit,
    horizons: *const usize,
    horizon_count: usize,
    start_day_min: usize,
    mean_window: usize,
    out: *mut *mut SirtvErrorTable,
) -> SirtvStatus {
    guard(|| {
        clear_out(out)?;
        let fit = obj(fit, "fit")?;
        let config = ForecastConfig {
            horizons: slice(horizons, horizon_count, "horizons")?.to_vec(),
            start_day_min,
            start_day_max: None,
            extension: extension(mean_window),
        };
        emit(out, SirtvErrorTable(rolling_evaluation(&fit.ctx, &fit.result.schedule, &config)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sirtv_error_table_len(table: *const SirtvErrorTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.rows.len())
}

/// Rows are ordered by start day, then horizon.
#[no_mangle]
pub unsafe extern "C" fn sirtv_error_table_row(
    table: *const SirtvErrorTable,
    index: usize,
    out: *mut SirtvErrorRow,
) -> SirtvStatus {
    guard(|| {
        let row = obj(table, "table")?
            .0
            .rows
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("no row {index}")))?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = SirtvErrorRow { start_day: row.start_day, horizon: row.horizon, error: row.error };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sirtv_error_summary(
    table: *const SirtvErrorTable,
    horizon: usize,
    out: *mut SirtvSummary,
) -> SirtvStatus {
    guard(|| {
        let s = summarize(&obj(table, "table")?.0, horizon, None)?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = SirtvSummary { count: s.count, mean: s.mean, std: s.std, mean_abs: s.mean_abs };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sirtv_error_table_free(table: *mut SirtvErrorTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// `R0 = beta / gamma`.
#[no_mangle]
pub unsafe extern "C" fn sirtv_reproduction_number(beta: f64, gamma: f64, out: *mut f64) -> SirtvStatus {
    guard(|| {
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = reproduction_number(beta, gamma)?.value;
        Ok(())
    })
}

/// `i0 * exp((beta - gamma) * t)`.
#[no_mangle]
pub unsafe extern "C" fn sirtv_early_phase_infected(
    i0: f64,
    beta: f64,
    gamma: f64,
    t: f64,
    out: *mut f64,
) -> SirtvStatus {
    guard(|| {
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = early_phase_infected(i0, beta, gamma, t)?;
        Ok(())
    })
}
