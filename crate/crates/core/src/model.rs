//! SIR state space and fixed-step RK4 integration of the time-varying-β system.
//!
//! The infection rate is piecewise constant: `values[k]` applies on `[k, k+1)`.
//! States are sampled at integer day boundaries, so `states[t]` is the state at
//! the end of day `t` and `states[0]` is the initial condition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance (w.r.t. population) below which negative compartments
/// are clamped to zero instead of being reported.
pub const NEGATIVE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SirParams {
    pub population: f64,
    pub gamma: f64,
}

impl SirParams {
    pub fn new(population: f64, gamma: f64) -> Result<Self> {
        if !population.is_finite() || !gamma.is_finite() {
            return Err(Error::NonFinite("SIR parameters"));
        }
        if population <= 0.0 {
            return Err(Error::invalid(format!("population must be positive, got {population}")));
        }
        if gamma <= 0.0 {
            return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
        }
        Ok(SirParams { population, gamma })
    }

    /// Mean time spent in the infected class.
    pub fn infectious_period(&self) -> f64 {
        1.0 / self.gamma
    }

    /// `(N - i0, i0, 0)`: the seeding used for identification runs.
    pub fn seeded_state(&self, initial_infected: f64) -> Result<SirState> {
        if !(initial_infected > 0.0 && initial_infected <= self.population) {
            return Err(Error::invalid(format!(
                "initial infected must lie in (0, N], got {initial_infected}"
            )));
        }
        Ok(SirState::new(self.population - initial_infected, initial_infected, 0.0))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SirState {
    pub s: f64,
    pub i: f64,
    pub r: f64,
}

impl SirState {
    pub const fn new(s: f64, i: f64, r: f64) -> Self {
        SirState { s, i, r }
    }

    pub fn total(&self) -> f64 {
        self.s + self.i + self.r
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.i.is_finite() && self.r.is_finite()
    }

    /// Checks finiteness, non-negativity and that the compartments sum to `N`.
    pub fn validate(&self, params: &SirParams) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::NonFinite("SIR state"));
        }
        if self.s < 0.0 || self.i < 0.0 || self.r < 0.0 {
            return Err(Error::invalid(format!("negative compartment in {self:?}")));
        }
        let drift = (self.total() - params.population).abs();
        if drift > 1e-9 * params.population.max(1.0) {
            return Err(Error::invalid(format!(
                "state sums to {} but population is {}",
                self.total(),
                params.population
            )));
        }
        Ok(())
    }
}

/// Daily infection rates; `values[k]` is β on `[k, k+1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BetaSchedule {
    values: Vec<f64>,
}

impl BetaSchedule {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("beta schedule is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("beta schedule"));
        }
        if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::invalid(format!("beta on day index {k} is negative ({v})")));
        }
        Ok(BetaSchedule { values })
    }

    pub fn constant(beta: f64, horizon_days: usize) -> Result<Self> {
        Self::new(vec![beta; horizon_days])
    }

    pub fn horizon_days(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for BetaSchedule {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        BetaSchedule::new(values)
    }
}

impl From<BetaSchedule> for Vec<f64> {
    fn from(schedule: BetaSchedule) -> Self {
        schedule.values
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub params: SirParams,
    pub states: Vec<SirState>,
    pub cumulative_infected: Vec<f64>,
}

impl Trajectory {
    pub fn horizon_days(&self) -> usize {
        self.states.len() - 1
    }

    pub fn final_state(&self) -> SirState {
        *self.states.last().expect("trajectory holds the initial state")
    }
}

#[inline]
fn field(state: &SirState, beta: f64, params: &SirParams) -> SirState {
    let infection = beta * state.i * state.s / params.population;
    let removal = params.gamma * state.i;
    SirState::new(-infection, infection - removal, removal)
}

#[inline]
fn rk4_unchecked(state: &SirState, beta: f64, params: &SirParams, h: f64) -> SirState {
    let k1 = field(state, beta, params);
    let y2 = SirState::new(
        state.s + 0.5 * h * k1.s,
        state.i + 0.5 * h * k1.i,
        state.r + 0.5 * h * k1.r,
    );
    let k2 = field(&y2, beta, params);
    let y3 = SirState::new(
        state.s + 0.5 * h * k2.s,
        state.i + 0.5 * h * k2.i,
        state.r + 0.5 * h * k2.r,
    );
    let k3 = field(&y3, beta, params);
    let y4 = SirState::new(state.s + h * k3.s, state.i + h * k3.i, state.r + h * k3.r);
    let k4 = field(&y4, beta, params);
    let w = h / 6.0;
    SirState::new(
        state.s + w * (k1.s + 2.0 * k2.s + 2.0 * k3.s + k4.s),
        state.i + w * (k1.i + 2.0 * k2.i + 2.0 * k3.i + k4.i),
        state.r + w * (k1.r + 2.0 * k2.r + 2.0 * k3.r + k4.r),
    )
}

/// One classic four-stage Runge-Kutta step with β held constant.
///
/// The result is not clamped; negative-compartment handling belongs to
/// [`simulate`].
pub fn rk4_step(state: SirState, beta: f64, params: &SirParams, h: f64) -> Result<SirState> {
    if !state.is_finite() || !beta.is_finite() || !h.is_finite() {
        return Err(Error::NonFinite("rk4 step input"));
    }
    if h <= 0.0 {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    if beta < 0.0 {
        return Err(Error::invalid(format!("beta must be non-negative, got {beta}")));
    }
    let next = rk4_unchecked(&state, beta, params, h);
    if !next.is_finite() {
        return Err(Error::NonFinite("rk4 step output"));
    }
    Ok(next)
}

/// Advances whole days with a fixed number of RK4 substeps per day.
///
/// This is the hot loop shared by simulation, the least-squares objective and
/// the forecast sweep. β values are not validated here so that finite-difference
/// probes may step marginally outside the feasible box.
#[derive(Clone, Copy, Debug)]
pub struct DayStepper {
    params: SirParams,
    substeps: usize,
    h: f64,
    floor: f64,
}

impl DayStepper {
    pub fn new(params: SirParams, substeps_per_day: usize) -> Result<Self> {
        if substeps_per_day == 0 {
            return Err(Error::invalid("substeps_per_day must be at least 1"));
        }
        Ok(DayStepper {
            params,
            substeps: substeps_per_day,
            h: 1.0 / substeps_per_day as f64,
            floor: -NEGATIVE_TOLERANCE * params.population,
        })
    }

    pub fn params(&self) -> &SirParams {
        &self.params
    }

    /// Integrates day `day` (from boundary `day` to `day + 1`).
    #[inline]
    pub fn advance(&self, state: SirState, beta: f64, day: usize) -> Result<SirState> {
        let mut y = state;
        for _ in 0..self.substeps {
            y = rk4_unchecked(&y, beta, &self.params, self.h);
        }
        self.guard(y, day + 1)
    }

    #[inline]
    fn guard(&self, mut y: SirState, day: usize) -> Result<SirState> {
        if !y.is_finite() {
            return Err(Error::NonFinite("simulated state"));
        }
        for (name, v) in [("S", &mut y.s), ("I", &mut y.i), ("R", &mut y.r)] {
            if *v < 0.0 {
                if *v < self.floor {
                    return Err(Error::NegativeCompartment { day, compartment: name, value: *v });
                }
                *v = 0.0;
            }
        }
        Ok(y)
    }
}

/// Integrates the schedule from `init`, recording every day boundary.
pub fn simulate(
    params: SirParams,
    schedule: &BetaSchedule,
    init: SirState,
    substeps_per_day: usize,
) -> Result<Trajectory> {
    init.validate(&params)?;
    let stepper = DayStepper::new(params, substeps_per_day)?;
    let mut states = Vec::with_capacity(schedule.horizon_days() + 1);
    states.push(init);
    let mut y = init;
    for (day, &beta) in schedule.values().iter().enumerate() {
        y = stepper.advance(y, beta, day)?;
        states.push(y);
    }
    let cumulative_infected = states.iter().map(|st| params.population - st.s).collect();
    Ok(Trajectory { params, states, cumulative_infected })
}

/// `Ŷ(t) = N - S(t)` for every recorded day boundary.
pub fn cumulative_infected_series(traj: &Trajectory) -> Vec<f64> {
    traj.states.iter().map(|st| traj.params.population - st.s).collect()
}

/// Early-phase approximation `I₀·exp((β-γ)t)`, valid while `S ≈ N`.
pub fn early_phase_infected(i0: f64, beta: f64, gamma: f64, t: f64) -> Result<f64> {
    if ![i0, beta, gamma, t].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("early-phase input"));
    }
    if i0 <= 0.0 || gamma <= 0.0 || t < 0.0 {
        return Err(Error::invalid("early-phase solution requires i0 > 0, gamma > 0, t >= 0"));
    }
    Ok(i0 * ((beta - gamma) * t).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outlook {
    Growing,
    Shrinking,
    Critical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReproductionNumber {
    pub value: f64,
    pub outlook: Outlook,
}

/// `R₀ = β/γ` with its growth classification.
pub fn reproduction_number(beta: f64, gamma: f64) -> Result<ReproductionNumber> {
    if !beta.is_finite() || !gamma.is_finite() {
        return Err(Error::NonFinite("reproduction number input"));
    }
    if gamma <= 0.0 {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    let value = beta / gamma;
    let outlook = if value > 1.0 {
        Outlook::Growing
    } else if value < 1.0 {
        Outlook::Shrinking
    } else {
        Outlook::Critical
    };
    Ok(ReproductionNumber { value, outlook })
}
