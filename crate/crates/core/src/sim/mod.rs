//! Slot-by-slot execution of a policy against ground truth.
//!
//! The planner sees a noisy forecast and a noisy capacity curve; the engine
//! realizes work with the true curve and charges carbon at the true intensity.
//! Scale-up requests may be denied. When realized progress or carbon drifts
//! from the plan by more than a threshold, the remaining schedule is rebuilt.

mod engine;
mod sweep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{MarginalCapacityCurve, MIN_MARGINAL};
use crate::scheduler::{AccountingMode, SchedError};

pub use engine::simulate;
pub use sweep::{
    sweep_parameter, sweep_start_times, Axis, CellSummary, StartRow, StartSweep, SweepRecord, SweepTable,
    SWEEP_CSV_HEADER,
};

/// Scaling overhead preset: middle of the 20-40 s observed per rescale.
pub const TYPICAL_SCALING_OVERHEAD_SECS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Plan(#[from] SchedError),
    #[error("invalid simulation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Uniform multiplicative forecast error bound, percent.
    pub forecast_error_pct: f64,
    /// Uniform multiplicative error on the believed capacity curve, percent.
    pub profile_error_pct: f64,
    /// Chance that each requested server beyond the current grant is refused.
    pub denial_probability: f64,
    /// Relative deviation (work or carbon) that triggers a replan.
    pub recompute_threshold: f64,
    /// `false` gives the error-oblivious variant that never replans.
    pub recompute: bool,
    /// On replan, forecasts `h` slots ahead carry `min(1, h / horizon)` of the
    /// full error; 0 redraws every remaining slot at the full error.
    pub refresh_horizon_slots: usize,
    pub accounting_mode: AccountingMode,
    /// Dead time (no work) at the start of a slot whose allocation changed.
    pub scaling_overhead_secs: f64,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            forecast_error_pct: 0.0,
            profile_error_pct: 0.0,
            denial_probability: 0.0,
            recompute_threshold: 0.05,
            recompute: true,
            refresh_horizon_slots: 24,
            accounting_mode: AccountingMode::Prorated,
            scaling_overhead_secs: 0.0,
            rng_seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        let non_neg = |v: f64| v >= 0.0 && v.is_finite();
        if !non_neg(self.forecast_error_pct) {
            return bad(format!("forecast_error_pct {} must be >= 0", self.forecast_error_pct));
        }
        if !non_neg(self.profile_error_pct) {
            return bad(format!("profile_error_pct {} must be >= 0", self.profile_error_pct));
        }
        if !(0.0..=1.0).contains(&self.denial_probability) {
            return bad(format!("denial_probability {} outside [0, 1]", self.denial_probability));
        }
        if !non_neg(self.recompute_threshold) {
            return bad(format!("recompute_threshold {} must be >= 0", self.recompute_threshold));
        }
        if !non_neg(self.scaling_overhead_secs) {
            return bad(format!(
                "scaling_overhead_secs {} must be >= 0",
                self.scaling_overhead_secs
            ));
        }
        Ok(())
    }
}

/// One executed slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub requested_servers: u32,
    pub granted_servers: u32,
    pub intensity_actual: f64,
    pub intensity_forecast: f64,
    pub work_done: f64,
    pub carbon_g: f64,
    /// The remaining schedule was rebuilt at the end of this slot.
    pub recomputed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub carbon_g: f64,
    pub compute_slot_hours: f64,
    /// Absolute slot (fractional) at which the last unit of work finished, or
    /// the end of the last executed slot if the job never finished.
    pub completion_slot: f64,
    pub met_deadline: bool,
    pub work_required: f64,
    pub work_done: f64,
    pub recomputations: usize,
    pub denied_servers: u32,
    pub timeline: Vec<SlotRecord>,
}

/// Grows a curve to `new_max` servers by continuing the decay ratio of its
/// last two marginals (flat when there is only one).
pub fn extrapolate_curve(curve: &MarginalCapacityCurve, new_max: u32) -> MarginalCapacityCurve {
    if new_max <= curve.max_servers() {
        return curve.clone();
    }
    let mut values = curve.values().to_vec();
    let ratio = match values.as_slice() {
        [.., a, b] => (b / a).min(1.0),
        _ => 1.0,
    };
    while values.len() < (new_max - curve.min_servers() + 1) as usize {
        let last = *values.last().unwrap();
        values.push((last * ratio).max(MIN_MARGINAL));
    }
    MarginalCapacityCurve::unchecked(curve.min_servers(), new_max, values).expect("extrapolated values stay positive")
}
