use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{Bounds, FitResult, ObjectiveContext, StageReport};
use crate::data::ISO_DATE;
use crate::error::{Error, Result};
use crate::model::{BetaSchedule, SirParams, SirState};

/// On-disk form of a finished fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub population: f64,
    pub gamma: f64,
    pub substeps_per_day: usize,
    pub initial_state: SirState,
    pub bounds: Bounds,
    pub start_date: NaiveDate,
    pub horizon_days: usize,
    pub stages: Vec<StageReport>,
    pub final_cost: f64,
    pub schedule: BetaSchedule,
}

impl FitDocument {
    pub fn new(ctx: &ObjectiveContext, bounds: Bounds, fit: &FitResult) -> Self {
        FitDocument {
            population: ctx.params().population,
            gamma: ctx.params().gamma,
            substeps_per_day: ctx.substeps_per_day(),
            initial_state: ctx.init(),
            bounds,
            start_date: ctx.observed().start_date(),
            horizon_days: fit.schedule.horizon_days(),
            stages: fit.stages.clone(),
            final_cost: fit.final_cost,
            schedule: fit.schedule.clone(),
        }
    }

    pub fn params(&self) -> Result<SirParams> {
        SirParams::new(self.population, self.gamma)
    }

    pub fn fit_result(&self) -> FitResult {
        FitResult {
            schedule: self.schedule.clone(),
            stages: self.stages.clone(),
            final_cost: self.final_cost,
        }
    }

    pub fn write_json<W: Write>(&self, mut sink: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut sink, self)?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json<R: Read>(source: R) -> Result<Self> {
        let doc: FitDocument = serde_json::from_reader(source)?;
        if doc.schedule.horizon_days() != doc.horizon_days {
            return Err(Error::HorizonMismatch {
                expected: doc.horizon_days,
                found: doc.schedule.horizon_days(),
            });
        }
        Ok(doc)
    }
}

fn lf_writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink)
}

/// `day_index,date,beta,Y_observed,Y_fitted` for one-based days; `beta` is
/// the rate in force during that day.
pub fn write_fit_comparison<W: Write>(
    ctx: &ObjectiveContext,
    schedule: &BetaSchedule,
    sink: W,
) -> Result<()> {
    let fitted = ctx.fitted_cumulative(schedule)?;
    let observed = ctx.observed();
    let mut w = lf_writer(sink);
    w.write_record(["day_index", "date", "beta", "Y_observed", "Y_fitted"])?;
    for t in 1..=ctx.horizon_days() {
        w.write_record([
            t.to_string(),
            observed.date_of(t).format(ISO_DATE).to_string(),
            schedule.values()[t - 1].to_string(),
            observed.y(t).to_string(),
            fitted[t - 1].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stage_log<W: Write>(stages: &[StageReport], sink: W) -> Result<()> {
    let mut w = lf_writer(sink);
    w.write_record(["stage", "segment_count", "initial_cost", "final_cost", "iterations", "converged", "polish"])?;
    for (k, s) in stages.iter().enumerate() {
        w.write_record([
            (k + 1).to_string(),
            s.segment_count.to_string(),
            s.initial_cost.to_string(),
            s.final_cost.to_string(),
            s.iterations.to_string(),
            s.converged.to_string(),
            s.polish.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
