//! Baseline policies: carbon-agnostic, suspend-resume (deadline and threshold
//! variants) and static scaling.

use super::{JobSpec, Policy, SchedError, Schedule};
use crate::profile::MarginalCapacityCurve;
use crate::trace::{nearest_rank, CarbonTrace};
use crate::WORK_EPS;

/// Number of slots at `per_slot` work needed to cover `work`.
fn slots_needed(work: f64, per_slot: f64) -> usize {
    if work <= WORK_EPS {
        0
    } else {
        (work / per_slot - WORK_EPS).ceil().max(1.0) as usize
    }
}

pub(crate) fn agnostic_alloc(curve: &MarginalCapacityCurve, window: usize, work: f64) -> Result<Vec<u32>, SchedError> {
    let m = curve.min_servers();
    let per_slot = curve.capacity(m);
    let need = slots_needed(work, per_slot);
    if need > window {
        return Err(SchedError::Infeasible {
            required: work,
            achievable: window as f64 * per_slot,
        });
    }
    let mut alloc = vec![0; window];
    alloc[..need].fill(m);
    Ok(alloc)
}

/// `k` servers in the fewest lowest-carbon slots covering `work`; ties go to
/// the earlier slot.
pub(crate) fn lowest_slots_alloc(
    curve: &MarginalCapacityCurve,
    k: u32,
    intensities: &[f64],
    work: f64,
) -> Result<Vec<u32>, SchedError> {
    let per_slot = curve.capacity(k);
    let need = slots_needed(work, per_slot);
    if need > intensities.len() {
        return Err(SchedError::Infeasible {
            required: work,
            achievable: intensities.len() as f64 * per_slot,
        });
    }
    let mut order: Vec<usize> = (0..intensities.len()).collect();
    order.sort_by(|&a, &b| intensities[a].total_cmp(&intensities[b]).then(a.cmp(&b)));
    let mut alloc = vec![0; intensities.len()];
    for &i in &order[..need] {
        alloc[i] = k;
    }
    Ok(alloc)
}

/// Runs at `m` in every slot at or below the percentile threshold, in time
/// order, until done. The result is as long as it needs to be.
pub(crate) fn threshold_alloc(
    curve: &MarginalCapacityCurve,
    horizon: &[f64],
    percentile: f64,
    work: f64,
) -> Result<Vec<u32>, SchedError> {
    if work <= WORK_EPS {
        return Ok(Vec::new());
    }
    if horizon.is_empty() {
        return Err(SchedError::Infeasible {
            required: work,
            achievable: 0.0,
        });
    }
    let threshold = nearest_rank(horizon, percentile);
    let m = curve.min_servers();
    let per_slot = curve.capacity(m);
    let mut alloc = Vec::new();
    let mut done = 0.0;
    for &c in horizon {
        if c <= threshold {
            alloc.push(m);
            done += per_slot;
            if done >= work - WORK_EPS {
                return Ok(alloc);
            }
        } else {
            alloc.push(0);
        }
    }
    Err(SchedError::Infeasible {
        required: work,
        achievable: done,
    })
}

/// Status quo: `m` servers from arrival for `ceil(l)` slots.
pub fn carbon_agnostic(
    job: &JobSpec,
    curve: &MarginalCapacityCurve,
    forecast: &CarbonTrace,
) -> Result<Schedule, SchedError> {
    Policy::Agnostic.plan(job, curve, forecast)
}

/// `m` servers in the `ceil(l)` lowest-carbon slots of `[t, T)`.
pub fn suspend_resume_deadline(
    job: &JobSpec,
    curve: &MarginalCapacityCurve,
    forecast: &CarbonTrace,
) -> Result<Schedule, SchedError> {
    Policy::SuspendResumeDeadline.plan(job, curve, forecast)
}

/// Deadline-unaware suspend-resume: runs whenever intensity is at or below the
/// `percentile`-th value of the trace from arrival onward. May finish after `T`.
pub fn suspend_resume_threshold(
    job: &JobSpec,
    curve: &MarginalCapacityCurve,
    trace: &CarbonTrace,
    percentile: f64,
) -> Result<Schedule, SchedError> {
    Policy::SuspendResumeThreshold { percentile }.plan(job, curve, trace)
}

/// `k` servers in the fewest lowest-carbon slots of `[t, T)` that cover the work.
pub fn static_scale(
    job: &JobSpec,
    curve: &MarginalCapacityCurve,
    forecast: &CarbonTrace,
    k: u32,
) -> Result<Schedule, SchedError> {
    Policy::StaticScale { k }.plan(job, curve, forecast)
}
