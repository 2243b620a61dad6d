//! Run configuration (TOML) and synthetic-dataset specification files.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calibration::{Bounds, FitConfig};
use crate::data::{NoiseModel, RecordFormat, SyntheticSpec};
use crate::error::{Error, Result};
use crate::forecast::{EvaluationMode, ForecastConfig};
use crate::model::{BetaSchedule, SirParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Pre-aggregated `date,count` rows.
    #[default]
    Counts,
    /// One row per registered case.
    Records,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub format: DataFormat,
    pub records: RecordFormat,
    /// Keep only the first `max_days` days of the series.
    pub max_days: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub population: f64,
    pub gamma: f64,
    pub substeps_per_day: usize,
    pub initial_infected: f64,
    pub seed: u64,
    pub output: PathBuf,
    pub bounds: Bounds,
    pub fit: FitConfig,
    pub forecast: ForecastConfig,
    pub mode: EvaluationMode,
    pub histogram_bins: Option<usize>,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            population: 11_300_000.0,
            gamma: 0.1,
            substeps_per_day: 1,
            initial_infected: 1.0,
            seed: 0,
            output: PathBuf::from("."),
            bounds: Bounds::default(),
            fit: FitConfig::default(),
            forecast: ForecastConfig::default(),
            mode: EvaluationMode::Truncate,
            histogram_bins: None,
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn params(&self) -> Result<SirParams> {
        SirParams::new(self.population, self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.params()?;
        params.seeded_state(self.initial_infected)?;
        if self.substeps_per_day == 0 {
            return Err(Error::Config("substeps_per_day must be at least 1".to_owned()));
        }
        Bounds::new(self.bounds.lower, self.bounds.upper)?;
        for stop in [self.fit.stage_stop, self.fit.final_stop] {
            if !(stop.tolerance > 0.0) || stop.max_iterations == 0 {
                return Err(Error::Config(format!("invalid stopping rule {stop:?}")));
            }
        }
        if !(self.fit.fd_step > 0.0 && self.fit.fd_step.is_finite()) {
            return Err(Error::Config("fit.fd_step must be positive".to_owned()));
        }
        if self.histogram_bins == Some(0) {
            return Err(Error::Config("histogram_bins must be positive".to_owned()));
        }
        if self.data.max_days == Some(0) {
            return Err(Error::Config("data.max_days must be positive".to_owned()));
        }
        self.forecast.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub days: usize,
    pub beta: f64,
}

/// Ground-truth rates for a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Constant { beta: f64, days: usize },
    Piecewise { segments: Vec<Segment> },
    /// `base + amplitude·sin(2πk/period)` on day index `k`.
    Sinusoid { base: f64, amplitude: f64, period: f64, days: usize },
    Values { values: Vec<f64> },
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<BetaSchedule> {
        let values = match self {
            ScheduleSpec::Constant { beta, days } => vec![*beta; *days],
            ScheduleSpec::Piecewise { segments } => {
                segments.iter().flat_map(|s| std::iter::repeat_n(s.beta, s.days)).collect()
            }
            ScheduleSpec::Sinusoid { base, amplitude, period, days } => {
                if !(*period > 0.0) {
                    return Err(Error::Config("sinusoid period must be positive".to_owned()));
                }
                (0..*days)
                    .map(|k| base + amplitude * (2.0 * std::f64::consts::PI * k as f64 / period).sin())
                    .collect()
            }
            ScheduleSpec::Values { values } => values.clone(),
        };
        BetaSchedule::new(values)
    }
}

/// Synthetic-dataset file. Unset model fields fall back to the run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFile {
    pub population: Option<f64>,
    pub gamma: Option<f64>,
    pub initial_infected: Option<f64>,
    pub substeps_per_day: Option<usize>,
    pub seed: Option<u64>,
    pub start_date: Option<NaiveDate>,
    #[serde(default = "no_noise")]
    pub noise: NoiseModel,
    pub schedule: ScheduleSpec,
}

fn no_noise() -> NoiseModel {
    NoiseModel::None
}

impl SynthFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Resolves against `run`; `seed_override` wins over both files.
    pub fn resolve(&self, run: &RunConfig, seed_override: Option<u64>) -> Result<SyntheticSpec> {
        let params = SirParams::new(
            self.population.unwrap_or(run.population),
            self.gamma.unwrap_or(run.gamma),
        )?;
        let init = params.seeded_state(self.initial_infected.unwrap_or(run.initial_infected))?;
        Ok(SyntheticSpec {
            true_schedule: self.schedule.build()?,
            params,
            init,
            noise: self.noise,
            seed: seed_override.or(self.seed).unwrap_or(run.seed),
            start_date: self
                .start_date
                .unwrap_or_else(|| NaiveDate::from_ymd_opt(2020, 3, 10).expect("valid date")),
            substeps_per_day: self.substeps_per_day.unwrap_or(run.substeps_per_day),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::ExtensionRule;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.population, 11.3e6);
        cfg.validate().unwrap();

        let cfg = RunConfig::from_toml(
            r#"
            population = 1e6
            mode = "refit"
            [bounds]
            lower = 0.0
            upper = 2.0
            [fit.stage_stop]
            tolerance = 1e-6
            max_iterations = 50
            [forecast]
            horizons = [7, 14]
            extension = { mean_of_last = 7 }
            [data]
            format = "records"
            max_days = 770
            [data.records]
            date_column = "DATA_CONFIRMACAO"
            date_format = "%d/%m/%Y"
            delimiter = ";"
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.mode, EvaluationMode::Refit);
        assert_eq!(cfg.fit.stage_stop.max_iterations, 50);
        assert_eq!(cfg.fit.final_stop.max_iterations, 500);
        assert_eq!(cfg.forecast.extension, ExtensionRule::MeanOfLast(7));
        assert_eq!(cfg.forecast.start_day_min, 100);
        assert_eq!(cfg.data.records.delimiter, ';');
        assert_eq!(cfg.data.max_days, Some(770));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("populaton = 3").is_err());
        assert!(RunConfig::from_toml("gamma = -0.1").unwrap().validate().is_err());
        assert!(RunConfig::from_toml("[bounds]\nlower = 3.0\nupper = 1.0").unwrap().validate().is_err());
        assert!(RunConfig::from_toml("[forecast]\nhorizons = []").unwrap().validate().is_err());
    }

    #[test]
    fn synth_file_schedules() {
        let f = SynthFile::from_toml(
            r#"
            population = 1e6
            seed = 9
            [noise]
            kind = "proportional"
            sigma = 0.01
            [schedule]
            kind = "piecewise"
            segments = [{ days = 50, beta = 0.3 }, { days = 50, beta = 0.15 }]
            "#,
        )
        .unwrap();
        let spec = f.resolve(&RunConfig::default(), None).unwrap();
        assert_eq!(spec.true_schedule.horizon_days(), 100);
        assert_eq!(spec.true_schedule.values()[49], 0.3);
        assert_eq!(spec.true_schedule.values()[50], 0.15);
        assert_eq!(spec.seed, 9);
        assert_eq!(f.resolve(&RunConfig::default(), Some(4)).unwrap().seed, 4);
        assert_eq!(spec.params.gamma, 0.1);
        assert_eq!(spec.init.i, 1.0);

        let sin = ScheduleSpec::Sinusoid { base: 0.2, amplitude: 0.1, period: 180.0, days: 400 }.build().unwrap();
        assert_eq!(sin.values()[0], 0.2);
        assert!((sin.values()[45] - 0.3).abs() < 1e-15);
        assert!(ScheduleSpec::Constant { beta: 0.2, days: 0 }.build().is_err());
    }
}
