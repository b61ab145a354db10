//! Execution schedules for a single elastic batch job.
//!
//! A schedule assigns a server count to every slot of the job's window: zero
//! (suspended) or anything in `[m, M]`. The carbon-scaling policy
//! ([`greedy_schedule`]) fills slots in order of marginal work per unit of
//! carbon; the baselines cover the status quo and the usual temporal-shifting
//! heuristics. [`planned_carbon`] turns a schedule into carbon, compute and
//! completion figures.

mod accounting;
mod baselines;
mod greedy;
mod oracle;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{MarginalCapacityCurve, PowerModel};
use crate::trace::CarbonTrace;
use crate::WORK_EPS;

pub use accounting::{compute_cost, planned_carbon, slot_uses, AccountingMode, ProrateRule, ScheduleMetrics, SlotUse};
pub use baselines::{carbon_agnostic, static_scale, suspend_resume_deadline, suspend_resume_threshold};
pub use greedy::{exchange_gamma, greedy_allocate, greedy_schedule, recompute};
pub use oracle::{brute_force_optimal, OracleSolution, ORACLE_BUDGET};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedError {
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error("curve covers servers {curve_min}..={curve_max} but the job needs {job_min}..={job_max}")]
    CurveMismatch {
        job_min: u32,
        job_max: u32,
        curve_min: u32,
        curve_max: u32,
    },
    #[error("window needs slots up to {needed} but the trace has {available}")]
    TraceTooShort { needed: usize, available: usize },
    #[error("infeasible: {required:.6} work units required, at most {achievable:.6} achievable")]
    Infeasible { required: f64, achievable: f64 },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("instance needs {combinations:.0} allocation vectors, over the oracle budget")]
    OracleBudget { combinations: f64 },
}

/// An elastic batch job. Times are slot indices from the trace origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    #[serde(default)]
    pub name: String,
    pub arrival_slot: usize,
    /// Duration at the minimum allocation, in slots (may be fractional).
    pub base_length_slots: f64,
    pub min_servers: u32,
    pub max_servers: u32,
    /// Deadline `T`; the window is `[arrival_slot, completion_slot)`.
    pub completion_slot: usize,
    /// Absent means unit power: carbon is reported in intensity x server x slot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<PowerModel>,
}

impl JobSpec {
    pub fn validate(&self) -> Result<(), SchedError> {
        let bad = |msg: String| Err(SchedError::InvalidJob(msg));
        if self.min_servers < 1 {
            return bad("min_servers must be at least 1".into());
        }
        if self.max_servers < self.min_servers {
            return bad(format!(
                "max_servers {} is below min_servers {}",
                self.max_servers, self.min_servers
            ));
        }
        if !(self.base_length_slots >= 0.0 && self.base_length_slots.is_finite()) {
            return bad(format!(
                "base_length_slots {} must be finite and non-negative",
                self.base_length_slots
            ));
        }
        if self.completion_slot < self.arrival_slot
            || (self.completion_slot - self.arrival_slot) as f64 + WORK_EPS < self.base_length_slots
        {
            return bad(format!(
                "completion_slot {} is before arrival_slot {} + base_length_slots {}",
                self.completion_slot, self.arrival_slot, self.base_length_slots
            ));
        }
        if let Some(p) = self.power {
            if !(p.per_server_watts > 0.0 && p.per_server_watts.is_finite()) {
                return bad(format!("power {} W must be positive", p.per_server_watts));
            }
        }
        Ok(())
    }

    /// Number of slots in `[t, T)`.
    pub fn window_len(&self) -> usize {
        self.completion_slot - self.arrival_slot
    }

    /// `T - (t + l)`.
    pub fn slack(&self) -> f64 {
        self.window_len() as f64 - self.base_length_slots
    }

    /// Carbon per allocated server per slot per unit of intensity.
    pub fn energy_per_server_slot(&self, slot_hours: f64) -> f64 {
        energy_factor(self.power, slot_hours)
    }

    pub(crate) fn check_curve(&self, curve: &MarginalCapacityCurve) -> Result<(), SchedError> {
        if curve.min_servers() != self.min_servers || curve.max_servers() < self.max_servers {
            return Err(SchedError::CurveMismatch {
                job_min: self.min_servers,
                job_max: self.max_servers,
                curve_min: curve.min_servers(),
                curve_max: curve.max_servers(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_trace(&self, trace: &CarbonTrace) -> Result<(), SchedError> {
        if trace.len() < self.completion_slot {
            return Err(SchedError::TraceTooShort {
                needed: self.completion_slot,
                available: trace.len(),
            });
        }
        Ok(())
    }
}

pub(crate) fn energy_factor(power: Option<PowerModel>, slot_hours: f64) -> f64 {
    power.map_or(1.0, |p| p.kwh_per_server_slot(slot_hours))
}

/// Total work `W = l * MC_m`, in baseline units.
pub fn work_requirement(job: &JobSpec, curve: &MarginalCapacityCurve) -> Result<f64, SchedError> {
    job.check_curve(curve)?;
    Ok(job.base_length_slots * curve.marginal(curve.min_servers()))
}

/// Scheduling policy.
///
/// Text form: `greedy`, `agnostic`, `sr_deadline`, `sr_threshold(P)`, `static(K)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    /// Carbon scaling: greedy on marginal capacity per unit carbon.
    Greedy,
    /// Run at `m` servers from arrival until done.
    Agnostic,
    /// `m` servers in the lowest-carbon slots before the deadline.
    SuspendResumeDeadline,
    /// `m` servers whenever intensity is at or below the given percentile; deadline-unaware.
    SuspendResumeThreshold { percentile: f64 },
    /// `k` servers in the lowest-carbon slots before the deadline.
    StaticScale { k: u32 },
}

impl Policy {
    pub fn prorate_rule(&self) -> ProrateRule {
        match self {
            Policy::Greedy => ProrateRule::LeastEfficient,
            _ => ProrateRule::Chronological,
        }
    }

    pub fn is_deadline_aware(&self) -> bool {
        !matches!(self, Policy::SuspendResumeThreshold { .. })
    }

    /// Plans `work` units over `[from_slot, T)` (or to the end of the trace for
    /// the threshold policy).
    pub fn plan_from(
        &self,
        job: &JobSpec,
        curve: &MarginalCapacityCurve,
        forecast: &CarbonTrace,
        from_slot: usize,
        work: f64,
    ) -> Result<Schedule, SchedError> {
        let window = &forecast.intensities()[from_slot.min(forecast.len())..];
        let deadline_window = &window[..job.completion_slot.saturating_sub(from_slot).min(window.len())];
        let allocations = match *self {
            Policy::Greedy => greedy::allocate_capped(curve, job.max_servers, deadline_window, work)?,
            Policy::Agnostic => baselines::agnostic_alloc(curve, deadline_window.len(), work)?,
            Policy::SuspendResumeDeadline => {
                baselines::lowest_slots_alloc(curve, curve.min_servers(), deadline_window, work)?
            }
            Policy::StaticScale { k } => {
                if k < job.min_servers || k > job.max_servers {
                    return Err(SchedError::InvalidPolicy(format!(
                        "static scale {k} outside [{}, {}]",
                        job.min_servers, job.max_servers
                    )));
                }
                baselines::lowest_slots_alloc(curve, k, deadline_window, work)?
            }
            Policy::SuspendResumeThreshold { percentile } => {
                baselines::threshold_alloc(curve, window, percentile, work)?
            }
        };
        Ok(Schedule {
            window_start: from_slot,
            allocations,
            policy: *self,
        })
    }

    /// Initial plan for the whole job.
    pub fn plan(
        &self,
        job: &JobSpec,
        curve: &MarginalCapacityCurve,
        forecast: &CarbonTrace,
    ) -> Result<Schedule, SchedError> {
        job.validate()?;
        job.check_trace(forecast)?;
        let work = work_requirement(job, curve)?;
        self.plan_from(job, curve, forecast, job.arrival_slot, work)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Greedy => f.write_str("greedy"),
            Policy::Agnostic => f.write_str("agnostic"),
            Policy::SuspendResumeDeadline => f.write_str("sr_deadline"),
            Policy::SuspendResumeThreshold { percentile } => write!(f, "sr_threshold({percentile})"),
            Policy::StaticScale { k } => write!(f, "static({k})"),
        }
    }
}

impl FromStr for Policy {
    type Err = SchedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || SchedError::InvalidPolicy(format!("unknown policy `{s}`"));
        let (name, arg) = match s.split_once('(') {
            Some((name, rest)) => (name, Some(rest.strip_suffix(')').ok_or_else(bad)?)),
            None => (s, None),
        };
        let name = name.replace('-', "_");
        match (name.as_str(), arg) {
            ("greedy" | "carbon_scaling", None) => Ok(Policy::Greedy),
            ("agnostic" | "carbon_agnostic", None) => Ok(Policy::Agnostic),
            ("sr_deadline" | "suspend_resume", None) => Ok(Policy::SuspendResumeDeadline),
            ("sr_threshold", arg) => {
                let percentile = match arg {
                    None => 25.0,
                    Some(a) => a.parse::<f64>().map_err(|_| bad())?,
                };
                if !(0.0..=100.0).contains(&percentile) {
                    return Err(SchedError::InvalidPolicy(format!(
                        "percentile {percentile} outside [0, 100]"
                    )));
                }
                Ok(Policy::SuspendResumeThreshold { percentile })
            }
            ("static" | "static_scale", Some(a)) => Ok(Policy::StaticScale {
                k: a.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Policy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Policy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-slot server allocation starting at `window_start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub window_start: usize,
    pub allocations: Vec<u32>,
    pub policy: Policy,
}

impl Schedule {
    /// Slots with a non-zero allocation, as absolute indices.
    pub fn active_slots(&self) -> Vec<usize> {
        self.allocations
            .iter()
            .enumerate()
            .filter(|(_, s)| **s > 0)
            .map(|(i, _)| self.window_start + i)
            .collect()
    }

    /// Work per slot summed over the schedule, before any prorating.
    pub fn planned_work(&self, curve: &MarginalCapacityCurve) -> f64 {
        self.allocations.iter().map(|s| curve.capacity(*s)).sum()
    }

    /// Allocation at absolute slot `slot`, zero outside the window.
    pub fn allocation_at(&self, slot: usize) -> u32 {
        slot.checked_sub(self.window_start)
            .and_then(|i| self.allocations.get(i))
            .copied()
            .unwrap_or(0)
    }
}
