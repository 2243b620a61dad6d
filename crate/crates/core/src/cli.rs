//! `sirtv` command line: simulate, fit, evaluate, synth.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 numerical
//! failure, 4 optimization failure. Progress and warnings go to stderr with a
//! `sirtv:` prefix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calibration::{
    cumulative_mape, dyadic_fit_with, write_fit_comparison, write_stage_log, Bounds, FitDocument,
    ObjectiveContext,
};
use crate::config::{DataFormat, RunConfig, SynthFile};
use crate::data::{
    aggregate_daily, generate_synthetic, load_daily_counts, load_schedule, parse_case_records,
    write_daily_counts, write_true_beta, ObservedSeries,
};
use crate::error::{Error, Result};
use crate::forecast::{
    rolling_evaluation, rolling_evaluation_refit, summarize, write_error_table, write_summary,
    EvaluationMode,
};
use crate::model::{simulate, BetaSchedule};

#[derive(Debug, Parser)]
#[command(name = "sirtv", version, about = "Time-varying infection-rate SIR identification and forecast evaluation")]
pub struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    population: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate a daily β schedule and write the trajectory table.
    Simulate {
        /// Schedule file (`beta` or `true_beta` column).
        #[arg(long, conflicts_with = "random_days", required_unless_present = "random_days")]
        schedule: Option<PathBuf>,
        /// Draw this many daily rates uniformly from [0, 1) using the seed.
        #[arg(long)]
        random_days: Option<usize>,
        #[arg(long)]
        substeps: Option<usize>,
    },
    /// Identify daily rates from a case series by dyadic refinement.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        beta_max: Option<f64>,
        #[arg(long, value_enum)]
        data_format: Option<FormatArg>,
        #[arg(long)]
        max_days: Option<usize>,
    },
    /// Rolling frozen-rate forecast errors and their summaries.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fit: PathBuf,
        /// Comma-separated forecast horizons in days.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
        #[arg(long)]
        start_day: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long, value_enum)]
        data_format: Option<FormatArg>,
        #[arg(long)]
        max_days: Option<usize>,
    },
    /// Generate a synthetic dataset from a specification file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Counts,
    Records,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Truncate,
    Refit,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("sirtv: error: {e}");
            e.exit_code()
        }
    }
}

fn warn(msg: impl std::fmt::Display) {
    eprintln!("sirtv:warn {msg}");
}

fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.output {
        cfg.output = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(p) = common.population {
        cfg.population = p;
    }
    if let Some(g) = common.gamma {
        cfg.gamma = g;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::Simulate { schedule, random_days, substeps } => {
            if let Some(s) = substeps {
                cfg.substeps_per_day = s;
            }
            cfg.validate()?;
            cmd_simulate(&cfg, schedule.as_deref(), random_days)
        }
        Command::Fit { data, beta_max, data_format, max_days } => {
            if let Some(b) = beta_max {
                cfg.bounds.upper = b;
            }
            apply_data_flags(&mut cfg, data_format, max_days);
            cfg.validate()?;
            cmd_fit(&cfg, &data)
        }
        Command::Evaluate { data, fit, horizons, start_day, mode, bins, data_format, max_days } => {
            if let Some(h) = horizons {
                cfg.forecast.horizons = h;
            }
            if let Some(s) = start_day {
                cfg.forecast.start_day_min = s;
            }
            if let Some(m) = mode {
                cfg.mode = match m {
                    ModeArg::Truncate => EvaluationMode::Truncate,
                    ModeArg::Refit => EvaluationMode::Refit,
                };
            }
            if bins.is_some() {
                cfg.histogram_bins = bins;
            }
            apply_data_flags(&mut cfg, data_format, max_days);
            cfg.validate()?;
            cmd_evaluate(&cfg, &data, &fit, cli.common.seed.is_some() || cli.common.population.is_some() || cli.common.gamma.is_some())
        }
        Command::Synth { spec } => {
            cfg.validate()?;
            cmd_synth(&cfg, &spec, cli.common.seed)
        }
    }
}

fn apply_data_flags(cfg: &mut RunConfig, format: Option<FormatArg>, max_days: Option<usize>) {
    if let Some(f) = format {
        cfg.data.format = match f {
            FormatArg::Counts => DataFormat::Counts,
            FormatArg::Records => DataFormat::Records,
        };
    }
    if max_days.is_some() {
        cfg.data.max_days = max_days;
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// Loads the observed series as configured, applying the day window.
pub fn load_series(cfg: &RunConfig, path: &Path) -> Result<ObservedSeries> {
    let series = match cfg.data.format {
        DataFormat::Counts => load_daily_counts(open(path)?)?,
        DataFormat::Records => {
            let parsed = parse_case_records(open(path)?, &cfg.data.records)?;
            if parsed.skipped() > 0 {
                warn(format_args!(
                    "skipped {} rows with unparseable dates (first at line {})",
                    parsed.skipped(),
                    parsed.skipped_lines[0]
                ));
            }
            aggregate_daily(&parsed.records)?
        }
    };
    match cfg.data.max_days {
        Some(days) => series.truncated(days),
        None => Ok(series),
    }
}

fn cmd_simulate(cfg: &RunConfig, schedule: Option<&Path>, random_days: Option<usize>) -> Result<()> {
    let schedule = match (schedule, random_days) {
        (Some(path), _) => load_schedule(open(path)?)?,
        (None, Some(days)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            BetaSchedule::new((0..days).map(|_| rng.gen_range(0.0..1.0)).collect())?
        }
        (None, None) => return Err(Error::invalid("simulate needs --schedule or --random-days")),
    };
    let params = cfg.params()?;
    let traj = simulate(params, &schedule, params.seeded_state(cfg.initial_infected)?, cfg.substeps_per_day)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(&cfg.output, "trajectory.csv")?);
    w.write_record(["day", "S", "I", "R", "cumulative_infected"])?;
    for (t, (st, y)) in traj.states.iter().zip(&traj.cumulative_infected).enumerate() {
        w.write_record([t.to_string(), st.s.to_string(), st.i.to_string(), st.r.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_fit(cfg: &RunConfig, data: &Path) -> Result<()> {
    let series = load_series(cfg, data)?;
    let params = cfg.params()?;
    let ctx = ObjectiveContext::new(series, params, params.seeded_state(cfg.initial_infected)?, cfg.substeps_per_day)?;
    let bounds = Bounds::new(cfg.bounds.lower, cfg.bounds.upper)?;
    let fit = dyadic_fit_with(&ctx, bounds, &cfg.fit, |s| {
        eprintln!(
            "sirtv:stage segments={} polish={} initial_cost={:e} final_cost={:e} iterations={} converged={}",
            s.segment_count, s.polish, s.initial_cost, s.final_cost, s.iterations, s.converged
        );
    })?;
    if fit.stages.windows(2).any(|w| w[1].final_cost > w[0].final_cost) {
        warn("stage costs increased between stages");
    }

    let doc = FitDocument::new(&ctx, bounds, &fit);
    let mut out = create(&cfg.output, "fit.json")?;
    doc.write_json(&mut out)?;
    out.flush()?;
    write_fit_comparison(&ctx, &fit.schedule, create(&cfg.output, "fit_comparison.csv")?)?;
    write_stage_log(&fit.stages, create(&cfg.output, "stages.csv")?)?;

    let observed: Vec<f64> = ctx.observed().cumulative().iter().map(|&y| y as f64).collect();
    let mape = cumulative_mape(&observed, &ctx.fitted_cumulative(&fit.schedule)?);
    eprintln!("sirtv:done final_cost={:e} mape={:e}", fit.final_cost, mape);
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, data: &Path, fit_path: &Path, overridden: bool) -> Result<()> {
    let doc = FitDocument::read_json(open(fit_path)?)?;
    let series = load_series(cfg, data)?;
    if doc.horizon_days != series.horizon_days() {
        return Err(Error::HorizonMismatch { expected: series.horizon_days(), found: doc.horizon_days });
    }
    if overridden && (doc.population != cfg.population || doc.gamma != cfg.gamma) {
        warn("population/gamma are taken from the fit file; command-line values ignored");
    }
    let ctx = ObjectiveContext::new(series, doc.params()?, doc.initial_state, doc.substeps_per_day)?;

    let mut forecast = cfg.forecast.clone();
    let horizon = ctx.horizon_days();
    forecast.horizons.retain(|&t| {
        let feasible = forecast_rows(horizon, cfg.forecast.start_day_min, cfg.forecast.start_day_max, t);
        if feasible == 0 {
            warn(format_args!("horizon {t} skipped: no start day fits in the {horizon}-day window"));
        }
        feasible > 0
    });
    if forecast.horizons.is_empty() {
        return Err(Error::invalid("no forecast horizon fits in the observed window"));
    }

    let table = match cfg.mode {
        EvaluationMode::Truncate => rolling_evaluation(&ctx, &doc.schedule, &forecast)?,
        EvaluationMode::Refit => rolling_evaluation_refit(&ctx, doc.bounds, &cfg.fit, &forecast)?,
    };
    for t in table.horizons() {
        let rows: Vec<_> = table.for_horizon(t).copied().collect();
        write_error_table(&rows, create(&cfg.output, &format!("errors_T{t}.csv"))?)?;
        match summarize(&table, t, cfg.histogram_bins) {
            Ok(summary) => {
                write_summary(&summary, create(&cfg.output, &format!("summary_T{t}.csv"))?)?;
                eprintln!(
                    "sirtv:summary horizon={t} n={} mean={:e} std={:e} mean_abs={:e}",
                    summary.count, summary.mean, summary.std, summary.mean_abs
                );
            }
            Err(e) => warn(format_args!("horizon {t}: summary skipped: {e}")),
        }
    }
    Ok(())
}

fn forecast_rows(horizon: usize, start_min: usize, start_max: Option<usize>, t: usize) -> usize {
    let last = horizon.saturating_sub(t);
    let last = start_max.map_or(last, |m| m.min(last));
    (last + 1).saturating_sub(start_min)
}

fn cmd_synth(cfg: &RunConfig, spec_path: &Path, seed_flag: Option<u64>) -> Result<()> {
    let spec = SynthFile::load(spec_path)?.resolve(cfg, seed_flag)?;
    let data = generate_synthetic(&spec)?;
    let mut out = create(&cfg.output, "daily_counts.csv")?;
    write_daily_counts(&data.series, &mut out)?;
    out.flush()?;
    let mut out = create(&cfg.output, "true_beta.csv")?;
    write_true_beta(&data.true_schedule, &mut out)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feasible_row_counting() {
        assert_eq!(forecast_rows(770, 100, None, 180), 491);
        assert_eq!(forecast_rows(120, 100, None, 7), 14);
        assert_eq!(forecast_rows(120, 100, None, 60), 0);
        assert_eq!(forecast_rows(770, 100, Some(150), 180), 51);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["sirtv", "bogus"]), 2);
        assert_eq!(run(["sirtv", "fit"]), 2);
        assert_eq!(run(["sirtv", "--help"]), 0);
    }
}
