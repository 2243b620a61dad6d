//! Case-record ingestion, daily aggregation and synthetic datasets.
//!
//! Series are anchored at the earliest registration date: index 0 of every
//! vector is day 1, and `cumulative[t - 1]` is the observed `Y(t)`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{simulate, BetaSchedule, SirParams, SirState};

pub const ISO_DATE: &str = "%Y-%m-%d";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CaseRecord {
    pub registration_date: NaiveDate,
}

/// Layout of a one-row-per-case file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordFormat {
    pub delimiter: char,
    pub date_column: String,
    pub date_format: String,
    /// Abort on the first unparseable date instead of skipping the row.
    pub strict: bool,
}

impl Default for RecordFormat {
    fn default() -> Self {
        RecordFormat {
            delimiter: ',',
            date_column: "date".to_owned(),
            date_format: ISO_DATE.to_owned(),
            strict: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedRecords {
    pub records: Vec<CaseRecord>,
    /// One-based line numbers of rows whose date did not parse.
    pub skipped_lines: Vec<u64>,
}

impl ParsedRecords {
    pub fn skipped(&self) -> usize {
        self.skipped_lines.len()
    }
}

fn delimiter_byte(c: char) -> Result<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| Error::Config(format!("delimiter {c:?} is not a single ASCII character")))
}

pub fn parse_case_records<R: Read>(source: R, format: &RecordFormat) -> Result<ParsedRecords> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter_byte(format.delimiter)?)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::NoRecords);
    }
    let column = headers
        .iter()
        .position(|h| h.trim() == format.date_column)
        .ok_or_else(|| Error::MissingColumn(format.date_column.clone()))?;

    let mut parsed = ParsedRecords::default();
    let mut rows = 0usize;
    for row in reader.records() {
        let row = row?;
        rows += 1;
        let line = row.position().map_or(0, |p| p.line());
        let raw = row.get(column).unwrap_or("").trim();
        match NaiveDate::parse_from_str(raw, &format.date_format) {
            Ok(date) => parsed.records.push(CaseRecord { registration_date: date }),
            Err(e) if format.strict => {
                return Err(Error::Parse { line, message: format!("date {raw:?}: {e}") });
            }
            Err(_) => parsed.skipped_lines.push(line),
        }
    }
    if rows == 0 {
        return Err(Error::NoRecords);
    }
    Ok(parsed)
}

/// Daily counts and their running total starting at `start_date` (day 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservedSeries {
    start_date: NaiveDate,
    daily_counts: Vec<u64>,
    cumulative: Vec<u64>,
}

impl ObservedSeries {
    pub fn from_daily(start_date: NaiveDate, daily_counts: Vec<u64>) -> Result<Self> {
        if daily_counts.is_empty() {
            return Err(Error::NoRecords);
        }
        let cumulative = daily_counts
            .iter()
            .scan(0u64, |acc, &c| {
                *acc += c;
                Some(*acc)
            })
            .collect();
        Ok(ObservedSeries { start_date, daily_counts, cumulative })
    }

    pub fn from_cumulative(start_date: NaiveDate, cumulative: Vec<u64>) -> Result<Self> {
        if cumulative.is_empty() {
            return Err(Error::NoRecords);
        }
        let mut prev = 0u64;
        let mut daily = Vec::with_capacity(cumulative.len());
        for (t, &c) in cumulative.iter().enumerate() {
            if c < prev {
                return Err(Error::invalid(format!("cumulative series decreases at day {}", t + 1)));
            }
            daily.push(c - prev);
            prev = c;
        }
        Ok(ObservedSeries { start_date, daily_counts: daily, cumulative })
    }

    pub fn horizon_days(&self) -> usize {
        self.daily_counts.len()
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    /// Calendar date of one-based `day`.
    pub fn date_of(&self, day: usize) -> NaiveDate {
        self.start_date + Duration::days(day as i64 - 1)
    }

    pub fn daily_counts(&self) -> &[u64] {
        &self.daily_counts
    }

    pub fn cumulative(&self) -> &[u64] {
        &self.cumulative
    }

    /// Observed `Y(day)` for one-based `day`.
    pub fn y(&self, day: usize) -> u64 {
        self.cumulative[day - 1]
    }

    /// Keeps the first `days` days.
    pub fn truncated(&self, days: usize) -> Result<Self> {
        if days == 0 {
            return Err(Error::invalid("cannot truncate a series to zero days"));
        }
        let days = days.min(self.horizon_days());
        Ok(ObservedSeries {
            start_date: self.start_date,
            daily_counts: self.daily_counts[..days].to_vec(),
            cumulative: self.cumulative[..days].to_vec(),
        })
    }
}

pub fn aggregate_daily(records: &[CaseRecord]) -> Result<ObservedSeries> {
    let first = records.iter().map(|r| r.registration_date).min().ok_or(Error::NoRecords)?;
    let last = records.iter().map(|r| r.registration_date).max().ok_or(Error::NoRecords)?;
    let horizon = (last - first).num_days() as usize + 1;
    let mut daily = vec![0u64; horizon];
    for r in records {
        daily[(r.registration_date - first).num_days() as usize] += 1;
    }
    ObservedSeries::from_daily(first, daily)
}

#[derive(Deserialize)]
struct CountRow {
    date: String,
    count: i64,
}

/// Reads a pre-aggregated `date,count` file. Rows may come in any order; gaps
/// are filled with zero counts.
pub fn load_daily_counts<R: Read>(source: R) -> Result<ObservedSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut by_date = BTreeMap::new();
    for row in reader.deserialize::<CountRow>() {
        let row = row?;
        let date = NaiveDate::parse_from_str(&row.date, ISO_DATE).map_err(|e| Error::Parse {
            line: 0,
            message: format!("date {:?}: {e}", row.date),
        })?;
        if row.count < 0 {
            return Err(Error::invalid(format!("negative count {} on {date}", row.count)));
        }
        if by_date.insert(date, row.count as u64).is_some() {
            return Err(Error::invalid(format!("duplicate date {date}")));
        }
    }
    let (&first, _) = by_date.first_key_value().ok_or(Error::NoRecords)?;
    let (&last, _) = by_date.last_key_value().ok_or(Error::NoRecords)?;
    let mut daily = vec![0u64; (last - first).num_days() as usize + 1];
    for (date, count) in by_date {
        daily[(date - first).num_days() as usize] = count;
    }
    ObservedSeries::from_daily(first, daily)
}

pub fn write_daily_counts<W: Write>(series: &ObservedSeries, sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    w.write_record(["date", "count"])?;
    for (t, count) in series.daily_counts().iter().enumerate() {
        w.write_record([series.date_of(t + 1).format(ISO_DATE).to_string(), count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    /// Multiplies each cumulative value by `1 + sigma·ε`, `ε ~ N(0, 1)`.
    Proportional { sigma: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub true_schedule: BetaSchedule,
    pub params: SirParams,
    pub init: SirState,
    pub noise: NoiseModel,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub substeps_per_day: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub series: ObservedSeries,
    pub true_schedule: BetaSchedule,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let sigma = match spec.noise {
        NoiseModel::None => 0.0,
        NoiseModel::Proportional { sigma } if sigma.is_finite() && sigma >= 0.0 => sigma,
        NoiseModel::Proportional { sigma } => {
            return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
        }
    };
    let traj = simulate(spec.params, &spec.true_schedule, spec.init, spec.substeps_per_day)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut running = 0u64;
    let cumulative = traj.cumulative_infected[1..]
        .iter()
        .map(|&y| {
            let noisy = if sigma > 0.0 {
                let eps: f64 = StandardNormal.sample(&mut rng);
                y * (1.0 + sigma * eps)
            } else {
                y
            };
            running = running.max(noisy.round().max(0.0) as u64);
            running
        })
        .collect();
    Ok(SyntheticData {
        series: ObservedSeries::from_cumulative(spec.start_date, cumulative)?,
        true_schedule: spec.true_schedule.clone(),
    })
}

/// Writes the `day_index,true_beta` sidecar of a synthetic dataset.
pub fn write_true_beta<W: Write>(schedule: &BetaSchedule, sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    w.write_record(["day_index", "true_beta"])?;
    for (k, beta) in schedule.values().iter().enumerate() {
        w.write_record([k.to_string(), beta.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a schedule file: the `beta` or `true_beta` column when present,
/// otherwise the single column of a one-column file.
pub fn load_schedule<R: Read>(source: R) -> Result<BetaSchedule> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let column = headers
        .iter()
        .position(|h| h == "beta" || h == "true_beta")
        .or(if headers.len() == 1 { Some(0) } else { None })
        .ok_or_else(|| Error::MissingColumn("beta".to_owned()))?;
    let mut values = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let raw = row.get(column).ok_or_else(|| Error::Parse {
            line,
            message: "missing beta field".to_owned(),
        })?;
        let v: f64 = raw
            .parse()
            .map_err(|e| Error::Parse { line, message: format!("beta {raw:?}: {e}") })?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::NoRecords);
    }
    BetaSchedule::new(values)
}
