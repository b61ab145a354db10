//! Greedy carbon scaling.
//!
//! Every (slot, server) increment has a score: the work it adds per unit of
//! carbon. Increments are committed best-first until the job's work is
//! covered. A slot is opened with its full minimum allocation of `m` servers
//! (scored by aggregate work over aggregate carbon, `MC_m / (m * c_i)`); after
//! that it grows one server at a time up to `M`. Only the next increment of
//! each slot is ever a candidate, so a max-heap holding one entry per slot is
//! enough: O(nM log n) overall.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{work_requirement, JobSpec, Policy, SchedError, Schedule};
use crate::profile::MarginalCapacityCurve;
use crate::trace::CarbonTrace;
use crate::WORK_EPS;

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    slot: usize,
    servers: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // Higher score wins; ties go to the earlier slot, then the lower server index.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.slot.cmp(&self.slot))
            .then_with(|| other.servers.cmp(&self.servers))
    }
}

fn score(work: f64, servers: u32, intensity: f64) -> f64 {
    let carbon = intensity * f64::from(servers);
    if carbon > 0.0 {
        work / carbon
    } else {
        f64::INFINITY
    }
}

/// Greedy allocation of `work` units over `intensities` using the whole curve.
pub fn greedy_allocate(curve: &MarginalCapacityCurve, intensities: &[f64], work: f64) -> Result<Vec<u32>, SchedError> {
    allocate_capped(curve, curve.max_servers(), intensities, work)
}

pub(crate) fn allocate_capped(
    curve: &MarginalCapacityCurve,
    max_servers: u32,
    intensities: &[f64],
    work: f64,
) -> Result<Vec<u32>, SchedError> {
    let m = curve.min_servers();
    let max_servers = max_servers.min(curve.max_servers());
    let mut alloc = vec![0u32; intensities.len()];
    if work <= WORK_EPS {
        return Ok(alloc);
    }
    let opening = curve.capacity(m);
    let mut heap: BinaryHeap<Candidate> = intensities
        .iter()
        .enumerate()
        .map(|(slot, &c)| Candidate {
            score: score(opening, m, c),
            slot,
            servers: m,
        })
        .collect();

    let mut done = 0.0;
    while let Some(Candidate { slot, servers, .. }) = heap.pop() {
        alloc[slot] = servers;
        done += if servers == m { opening } else { curve.marginal(servers) };
        if done >= work - WORK_EPS {
            return Ok(alloc);
        }
        if servers < max_servers {
            let next = servers + 1;
            heap.push(Candidate {
                score: score(curve.marginal(next), 1, intensities[slot]),
                slot,
                servers: next,
            });
        }
    }
    Err(SchedError::Infeasible {
        required: work,
        achievable: done,
    })
}

/// Carbon-scaling schedule over the job's window `[t, T)`.
pub fn greedy_schedule(
    job: &JobSpec,
    curve: &MarginalCapacityCurve,
    forecast: &CarbonTrace,
) -> Result<Schedule, SchedError> {
    Policy::Greedy.plan(job, curve, forecast)
}

/// Replans the rest of the job from `current_slot` given `work_done` so far.
pub fn recompute(
    job: &JobSpec,
    curve: &MarginalCapacityCurve,
    forecast: &CarbonTrace,
    current_slot: usize,
    work_done: f64,
) -> Result<Schedule, SchedError> {
    job.validate()?;
    job.check_trace(forecast)?;
    let total = work_requirement(job, curve)?;
    if current_slot < job.arrival_slot || current_slot >= job.completion_slot {
        return Err(SchedError::InvalidJob(format!(
            "current slot {current_slot} outside window [{}, {})",
            job.arrival_slot, job.completion_slot
        )));
    }
    if !(0.0..=total + WORK_EPS).contains(&work_done) {
        return Err(SchedError::InvalidJob(format!(
            "work done {work_done} outside [0, {total}]"
        )));
    }
    Policy::Greedy.plan_from(job, curve, forecast, current_slot, (total - work_done).max(0.0))
}

/// Carbon needed to redo work `MC_j` (originally done in slot `i` at cost
/// `c_i`) by moving it to the unused increment `(k, l)`.
///
/// When `MC_l >= MC_j` the work fits in part of slot `k`; otherwise all of
/// `(k, l)` is used and the overflow `MC_j - MC_l` stays in slot `i`.
pub fn exchange_gamma(c_i: f64, c_k: f64, mc_j: f64, mc_l: f64) -> f64 {
    if mc_l >= mc_j {
        c_k * mc_j / mc_l
    } else {
        c_k + (mc_j - mc_l) / mc_j * c_i
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{planned_carbon, AccountingMode};

    fn worked_example_job() -> JobSpec {
        JobSpec {
            name: "worked_example".into(),
            arrival_slot: 0,
            base_length_slots: 2.0,
            min_servers: 1,
            max_servers: 2,
            completion_slot: 3,
            power: None,
        }
    }

    fn worked_example_trace() -> CarbonTrace {
        CarbonTrace::hourly("worked_example", vec![10.0, 100.0, 20.0]).unwrap()
    }

    #[test]
    fn flat_curve_fills_cheapest_slot() {
        let flat = MarginalCapacityCurve::new(1, 2, vec![1.0, 1.0]).unwrap();
        let s = greedy_schedule(&worked_example_job(), &flat, &worked_example_trace()).unwrap();
        assert_eq!(s.allocations, vec![2, 0, 0]);
        assert_eq!(s.window_start, 0);
    }

    #[test]
    fn diminishing_curve_spills_to_third_slot() {
        let dim = MarginalCapacityCurve::new(1, 2, vec![1.0, 0.7]).unwrap();
        let s = greedy_schedule(&worked_example_job(), &dim, &worked_example_trace()).unwrap();
        assert_eq!(s.allocations, vec![2, 0, 1]);
    }

    #[test]
    fn no_flexibility_runs_every_slot() {
        let one = MarginalCapacityCurve::new(1, 1, vec![1.0]).unwrap();
        let job = JobSpec {
            max_servers: 1,
            completion_slot: 2,
            ..worked_example_job()
        };
        let s = greedy_schedule(&job, &one, &worked_example_trace()).unwrap();
        assert_eq!(s.allocations, vec![1, 1]);
    }

    #[test]
    fn infeasible_reports_capacity() {
        let dim = MarginalCapacityCurve::new(1, 2, vec![1.0, 0.7]).unwrap();
        let err = greedy_allocate(&dim, &[1.0, 2.0], 4.0).unwrap_err();
        match err {
            SchedError::Infeasible { required, achievable } => {
                assert_eq!(required, 4.0);
                assert!((achievable - 3.4).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_carbon_slots_come_first() {
        let flat = MarginalCapacityCurve::new(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(greedy_allocate(&flat, &[5.0, 0.0, 0.0], 3.0).unwrap(), vec![0, 2, 1]);
    }

    #[test]
    fn block_opening_for_larger_minimum() {
        // m = 2: opening block does 1 unit for 2 servers; the third server adds 0.8.
        let curve = MarginalCapacityCurve::new(2, 3, vec![1.0, 0.8]).unwrap();
        let alloc = greedy_allocate(&curve, &[10.0, 12.0], 1.5).unwrap();
        // block scores: 1/20, 1/24; then (0, 3) scores 0.08 -> committed next.
        assert_eq!(alloc, vec![3, 0]);
        let alloc = greedy_allocate(&curve, &[10.0, 12.0], 2.5).unwrap();
        assert_eq!(alloc, vec![3, 2]);
    }

    #[test]
    fn recompute_after_first_slot() {
        let dim = MarginalCapacityCurve::new(1, 2, vec![1.0, 0.7]).unwrap();
        let job = worked_example_job();
        let trace = worked_example_trace();
        let rest = recompute(&job, &dim, &trace, 1, 1.7).unwrap();
        assert_eq!(rest.window_start, 1);
        assert_eq!(rest.allocations, vec![0, 1]);

        let none = recompute(&job, &dim, &trace, 1, 2.0).unwrap();
        assert!(none.allocations.iter().all(|s| *s == 0));

        assert_eq!(
            recompute(&job, &dim, &trace, 0, 0.0).unwrap(),
            greedy_schedule(&job, &dim, &trace).unwrap()
        );
        assert!(recompute(&job, &dim, &trace, 3, 0.0).is_err());
        assert!(recompute(&job, &dim, &trace, 1, 2.5).is_err());
    }

    #[test]
    fn recompute_residual_infeasible() {
        let dim = MarginalCapacityCurve::new(1, 2, vec![1.0, 0.7]).unwrap();
        let err = recompute(&worked_example_job(), &dim, &worked_example_trace(), 2, 0.0).unwrap_err();
        assert!(matches!(err, SchedError::Infeasible { .. }));
    }

    #[test]
    fn gamma_cases() {
        assert_eq!(exchange_gamma(100.0, 10.0, 1.0, 1.0), 10.0);
        assert!((exchange_gamma(20.0, 10.0, 1.0, 0.7) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_trace_scales_carbon_only() {
        let dim = MarginalCapacityCurve::new(1, 2, vec![1.0, 0.7]).unwrap();
        let job = worked_example_job();
        let base = greedy_schedule(&job, &dim, &worked_example_trace()).unwrap();
        let scaled_trace = CarbonTrace::hourly("x", vec![25.0, 250.0, 50.0]).unwrap();
        let scaled = greedy_schedule(&job, &dim, &scaled_trace).unwrap();
        assert_eq!(base.allocations, scaled.allocations);
        let a = planned_carbon(
            &base,
            &dim,
            &worked_example_trace(),
            2.0,
            None,
            AccountingMode::Prorated,
        );
        let b = planned_carbon(&scaled, &dim, &scaled_trace, 2.0, None, AccountingMode::Prorated);
        assert!((b.carbon_g - 2.5 * a.carbon_g).abs() < 1e-9);
    }
}
