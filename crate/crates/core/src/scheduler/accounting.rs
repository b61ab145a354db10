//! Carbon, compute and completion accounting for a schedule.
//!
//! A schedule usually plans a little more work than the job needs: the last
//! increment overshoots `W`. [`slot_uses`] decides which servers actually run
//! for how long so that exactly `W` gets done, and [`planned_carbon`] charges
//! them under one of two billing modes.

use serde::{Deserialize, Serialize};

use super::{energy_factor, Schedule};
use crate::profile::{MarginalCapacityCurve, PowerModel};
use crate::trace::CarbonTrace;
use crate::WORK_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccountingMode {
    /// Every allocated server is charged for its whole slot.
    WholeSlot,
    /// Only the server-time needed to finish exactly `W` is charged.
    #[default]
    Prorated,
}

impl std::str::FromStr for AccountingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whole" | "whole_slot" | "whole-slot" => Ok(Self::WholeSlot),
            "prorated" => Ok(Self::Prorated),
            other => Err(format!("unknown accounting mode `{other}` (whole|prorated)")),
        }
    }
}

/// Which planned work is trimmed when a schedule overshoots `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProrateRule {
    /// Trim the least carbon-efficient top increment first (the one the greedy
    /// policy committed last).
    LeastEfficient,
    /// Trim from the chronologically last active slot: the job simply stops
    /// once done, with all of that slot's servers idle for the remainder.
    Chronological,
}

/// What actually runs in one slot.
///
/// `full_servers` run the whole slot; the remaining `servers - full_servers`
/// run for `fraction` of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotUse {
    pub servers: u32,
    pub full_servers: u32,
    pub fraction: f64,
}

impl SlotUse {
    pub const IDLE: SlotUse = SlotUse {
        servers: 0,
        full_servers: 0,
        fraction: 1.0,
    };

    pub fn full(servers: u32) -> Self {
        Self {
            servers,
            full_servers: servers,
            fraction: 1.0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.servers > 0 && self.fraction > 0.0
    }

    pub fn work(&self, curve: &MarginalCapacityCurve) -> f64 {
        let base = curve.capacity(self.full_servers);
        if self.full_servers == self.servers {
            return base;
        }
        base + self.fraction * (curve.capacity(self.servers) - base)
    }

    /// Server-slots charged under `mode`; `allocated` is the schedule's count.
    pub fn billed(&self, mode: AccountingMode, allocated: u32) -> f64 {
        match mode {
            AccountingMode::WholeSlot => f64::from(allocated),
            AccountingMode::Prorated => {
                f64::from(self.full_servers) + self.fraction * f64::from(self.servers - self.full_servers)
            }
        }
    }

    /// Offset within the slot at which the last server stops.
    pub fn end_offset(&self) -> f64 {
        if self.full_servers == 0 {
            self.fraction
        } else {
            1.0
        }
    }
}

/// Carbon, compute and timing of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleMetrics {
    /// gCO2eq, or intensity x server x slot when the job has no power rating.
    pub carbon_g: f64,
    pub compute_slot_hours: f64,
    /// Absolute (fractional) slot at which the job finishes.
    pub completion_slot: f64,
    /// Planned work beyond `W`.
    pub overallocation: f64,
}

/// Decides per-slot usage so that planned work equals `work` exactly.
///
/// `intensities` covers the schedule's window (same indexing as
/// `schedule.allocations`).
pub fn slot_uses(schedule: &Schedule, curve: &MarginalCapacityCurve, intensities: &[f64], work: f64) -> Vec<SlotUse> {
    let mut uses: Vec<SlotUse> = schedule.allocations.iter().map(|&s| SlotUse::full(s)).collect();
    let mut excess = schedule.planned_work(curve) - work;
    if excess <= WORK_EPS {
        return uses;
    }
    let m = curve.min_servers();
    match schedule.policy.prorate_rule() {
        ProrateRule::LeastEfficient => loop {
            // top increment of every active slot: (slot, work, servers it adds)
            let worst = uses
                .iter()
                .enumerate()
                .filter(|(_, u)| u.servers > 0)
                .map(|(i, u)| {
                    let (inc_work, size) = if u.servers == m {
                        (curve.capacity(m), m)
                    } else {
                        (curve.marginal(u.servers), 1)
                    };
                    (i, inc_work, size, intensities[i] * f64::from(size) / inc_work)
                })
                .reduce(|best, cand| if cand.3 >= best.3 { cand } else { best });
            let Some((i, inc_work, size, _)) = worst else {
                break;
            };
            let u = &mut uses[i];
            if inc_work <= excess {
                excess -= inc_work;
                u.servers -= size;
                u.full_servers = u.servers;
                if excess <= WORK_EPS {
                    break;
                }
            } else {
                u.full_servers = u.servers - size;
                u.fraction = (inc_work - excess) / inc_work;
                break;
            }
        },
        ProrateRule::Chronological => {
            for u in uses.iter_mut().rev().filter(|u| u.servers > 0) {
                let slot_work = curve.capacity(u.servers);
                if slot_work <= excess {
                    excess -= slot_work;
                    *u = SlotUse::IDLE;
                    if excess <= WORK_EPS {
                        break;
                    }
                } else {
                    u.full_servers = 0;
                    u.fraction = (slot_work - excess) / slot_work;
                    break;
                }
            }
        }
    }
    uses
}

/// Carbon, compute-hours and completion of `schedule` against `trace`.
///
/// `trace` is indexed from its origin; the schedule's window must lie inside it.
pub fn planned_carbon(
    schedule: &Schedule,
    curve: &MarginalCapacityCurve,
    trace: &CarbonTrace,
    work: f64,
    power: Option<PowerModel>,
    mode: AccountingMode,
) -> ScheduleMetrics {
    let window = &trace.intensities()[schedule.window_start..schedule.window_start + schedule.allocations.len()];
    let uses = slot_uses(schedule, curve, window, work);
    let energy = energy_factor(power, trace.slot_hours());
    let slot_hours = trace.slot_hours();

    let mut carbon_g = 0.0;
    let mut compute_slot_hours = 0.0;
    let mut completion_slot = schedule.window_start as f64;
    for (i, (u, &alloc)) in uses.iter().zip(&schedule.allocations).enumerate() {
        let billed = u.billed(mode, alloc);
        carbon_g += window[i] * billed * energy;
        compute_slot_hours += billed * slot_hours;
        if u.is_active() {
            completion_slot = (schedule.window_start + i) as f64 + u.end_offset();
        }
    }
    ScheduleMetrics {
        carbon_g,
        compute_slot_hours,
        completion_slot,
        overallocation: (schedule.planned_work(curve) - work).max(0.0),
    }
}

/// Server-hours charged for `schedule` under `mode`.
pub fn compute_cost(
    schedule: &Schedule,
    curve: &MarginalCapacityCurve,
    trace: &CarbonTrace,
    work: f64,
    mode: AccountingMode,
) -> f64 {
    planned_carbon(schedule, curve, trace, work, None, mode).compute_slot_hours
}
