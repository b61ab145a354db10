use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{SimConfig, SimError, SimResult, SlotRecord};
use crate::profile::MarginalCapacityCurve;
use crate::scheduler::{slot_uses, work_requirement, JobSpec, Policy, SchedError, Schedule, SlotUse};
use crate::trace::CarbonTrace;
use crate::{seeded_rng, WORK_EPS};

const DENIAL_STREAM: u64 = 3;
const REFRESH_STREAM: u64 = 4;

/// The schedule currently being followed, with its per-slot usage.
struct Plan {
    schedule: Schedule,
    uses: Vec<SlotUse>,
}

impl Plan {
    fn new(schedule: Schedule, believed: &MarginalCapacityCurve, forecast: &CarbonTrace, work: f64) -> Self {
        let start = schedule.window_start;
        let window = &forecast.intensities()[start..start + schedule.allocations.len()];
        let uses = slot_uses(&schedule, believed, window, work);
        Self { schedule, uses }
    }

    fn at(&self, slot: usize) -> (u32, SlotUse) {
        let idx = slot.checked_sub(self.schedule.window_start);
        match idx.and_then(|i| self.uses.get(i)) {
            Some(u) => (self.schedule.allocations[idx.unwrap()], *u),
            None => (0, SlotUse::IDLE),
        }
    }

    /// Believed work still scheduled strictly after `slot`.
    fn work_after(&self, slot: usize, believed: &MarginalCapacityCurve) -> f64 {
        let skip = (slot + 1).saturating_sub(self.schedule.window_start);
        self.uses.iter().skip(skip).map(|u| u.work(believed)).sum()
    }
}

/// Best-effort fallback when the residual no longer fits: every remaining
/// slot at the policy's largest allocation.
fn saturated(policy: Policy, job: &JobSpec, from: usize) -> Schedule {
    let servers = match policy {
        Policy::Greedy => job.max_servers,
        Policy::StaticScale { k } => k,
        _ => job.min_servers,
    };
    Schedule {
        window_start: from,
        allocations: vec![servers; job.completion_slot.saturating_sub(from)],
        policy,
    }
}

/// Replaces the forecast from `from` on with a fresh draw whose error grows
/// with lead time (see [`SimConfig::refresh_horizon_slots`]).
fn refresh_forecast(
    forecast: &mut CarbonTrace,
    truth: &CarbonTrace,
    from: usize,
    config: &SimConfig,
    rng: &mut ChaCha8Rng,
) {
    if config.forecast_error_pct == 0.0 {
        return;
    }
    let full = config.forecast_error_pct / 100.0;
    let values: Vec<f64> = truth.intensities()[from..]
        .iter()
        .enumerate()
        .map(|(ahead, &v)| {
            let lead = (ahead + 1) as f64;
            let bound = match config.refresh_horizon_slots {
                0 => full,
                h => full * (lead / h as f64).min(1.0),
            };
            let u: f64 = rng.random_range(-bound..=bound);
            (v * (1.0 + u)).max(0.0)
        })
        .collect();
    forecast.overwrite_from(from, &values);
}

fn relative_gap(realized: f64, planned: f64) -> f64 {
    if planned > 0.0 {
        (realized - planned).abs() / planned
    } else if realized > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Runs `policy` for `job` against the true curve and trace.
///
/// Planning failures at arrival are errors; running out of window later is
/// reported through `met_deadline`.
pub fn simulate(
    job: &JobSpec,
    true_curve: &MarginalCapacityCurve,
    true_trace: &CarbonTrace,
    policy: Policy,
    config: &SimConfig,
) -> Result<SimResult, SimError> {
    config.validate()?;
    job.validate()?;
    job.check_trace(true_trace)?;
    let work = work_requirement(job, true_curve)?;
    let m = job.min_servers;
    let mode = config.accounting_mode;
    let energy = job.energy_per_server_slot(true_trace.slot_hours());
    let slot_hours = true_trace.slot_hours();
    let dead_fraction = (config.scaling_overhead_secs / (slot_hours * 3600.0)).min(1.0);

    let mut forecast = true_trace
        .perturb_forecast(config.forecast_error_pct, config.rng_seed)
        .map_err(|e| SimError::Config(e.to_string()))?;
    let mut believed = true_curve.perturb(config.profile_error_pct, config.rng_seed).curve;
    let mut denial_rng = seeded_rng(config.rng_seed, DENIAL_STREAM);
    let mut refresh_rng = seeded_rng(config.rng_seed, REFRESH_STREAM);

    let initial = policy.plan_from(job, &believed, &forecast, job.arrival_slot, work)?;
    let mut plan = Plan::new(initial, &believed, &forecast, work);

    let replans = config.recompute && policy.is_deadline_aware() && policy != Policy::Agnostic;
    let end_slot = if policy.is_deadline_aware() {
        job.completion_slot
    } else {
        true_trace.len()
    };

    let mut done = 0.0;
    let mut carbon_g = 0.0;
    let mut compute_slot_hours = 0.0;
    let mut completion_slot = job.arrival_slot as f64;
    let mut planned_work = 0.0;
    let mut planned_carbon = 0.0;
    let mut prev_granted = 0u32;
    let mut visited: BTreeSet<u32> = BTreeSet::new();
    let mut recomputations = 0;
    let mut denied_servers = 0;
    let mut timeline = Vec::new();

    for slot in job.arrival_slot..end_slot {
        if done >= work - WORK_EPS {
            break;
        }
        let (requested, planned_use) = plan.at(slot);

        // Releasing or holding servers always succeeds; the opening block of m
        // is never refused; each server beyond that may be.
        let granted = if requested == 0 {
            0
        } else {
            let held = prev_granted.max(m).min(requested);
            let extra = (held + 1..=requested)
                .filter(|_| config.denial_probability == 0.0 || !denial_rng.random_bool(config.denial_probability))
                .count() as u32;
            denied_servers += requested - held - extra;
            held + extra
        };
        let run = if granted >= planned_use.servers {
            planned_use
        } else {
            SlotUse::full(granted)
        };

        let mut slot_work = run.work(true_curve);
        if granted > 0 && granted != prev_granted && dead_fraction > 0.0 {
            slot_work *= 1.0 - dead_fraction;
        }
        let mut billed = run.billed(mode, granted);
        let mut end_offset = run.end_offset();
        let remaining = work - done;
        if slot_work > remaining + WORK_EPS {
            let share = remaining / slot_work;
            slot_work = remaining;
            if mode == crate::scheduler::AccountingMode::Prorated {
                billed *= share;
            }
            end_offset = share;
        }
        let actual = true_trace.intensities()[slot];
        let slot_carbon = actual * billed * energy;
        carbon_g += slot_carbon;
        compute_slot_hours += billed * slot_hours;
        done += slot_work;
        if run.is_active() {
            completion_slot = slot as f64 + end_offset;
            visited.insert(granted);
        }
        prev_granted = granted;

        planned_work += planned_use.work(&believed);
        planned_carbon += forecast.intensities()[slot] * planned_use.billed(mode, requested) * energy;

        let mut record = SlotRecord {
            slot,
            requested_servers: requested,
            granted_servers: granted,
            intensity_actual: actual,
            intensity_forecast: forecast.intensities()[slot],
            work_done: slot_work,
            carbon_g: slot_carbon,
            recomputed: false,
        };

        let deviation = relative_gap(done, planned_work).max(relative_gap(carbon_g, planned_carbon));
        // a plan that can no longer finish is replaced whatever the deviation
        let short = plan.work_after(slot, &believed) < (work - done) - WORK_EPS * work.max(1.0);
        let next = slot + 1;
        let drifted = deviation > config.recompute_threshold || short;
        if replans && drifted && done < work - WORK_EPS && next < end_slot {
            believed = believed.corrected_with(true_curve, visited.iter().copied());
            refresh_forecast(&mut forecast, true_trace, next, config, &mut refresh_rng);
            let residual = work - done;
            let schedule = match policy.plan_from(job, &believed, &forecast, next, residual) {
                Ok(s) => s,
                Err(SchedError::Infeasible { .. }) => saturated(policy, job, next),
                Err(e) => return Err(e.into()),
            };
            plan = Plan::new(schedule, &believed, &forecast, residual);
            planned_work = done;
            planned_carbon = carbon_g;
            recomputations += 1;
            record.recomputed = true;
        }
        timeline.push(record);
    }

    let finished = done >= work - WORK_EPS;
    Ok(SimResult {
        carbon_g,
        compute_slot_hours,
        completion_slot,
        met_deadline: finished && completion_slot <= job.completion_slot as f64 + WORK_EPS,
        work_required: work,
        work_done: done,
        recomputations,
        denied_servers,
        timeline,
    })
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
    fn perfect_information_realizes_the_plan() {
        let dim = MarginalCapacityCurve::new(1, 2, vec![1.0, 0.7]).unwrap();
        for mode in [AccountingMode::Prorated, AccountingMode::WholeSlot] {
            let cfg = SimConfig {
                accounting_mode: mode,
                ..Default::default()
            };
            for policy in [
                Policy::Greedy,
                Policy::Agnostic,
                Policy::SuspendResumeDeadline,
                Policy::StaticScale { k: 2 },
            ] {
                let sched = policy
                    .plan(&worked_example_job(), &dim, &worked_example_trace())
                    .unwrap();
                let planned = planned_carbon(&sched, &dim, &worked_example_trace(), 2.0, None, mode);
                let r = simulate(&worked_example_job(), &dim, &worked_example_trace(), policy, &cfg).unwrap();
                assert_eq!(r.carbon_g, planned.carbon_g, "{policy} {mode:?}");
                assert_eq!(r.compute_slot_hours, planned.compute_slot_hours, "{policy} {mode:?}");
                assert_eq!(r.completion_slot, planned.completion_slot, "{policy} {mode:?}");
                assert!(r.met_deadline);
                assert_eq!(r.recomputations, 0);
            }
        }
    }

    #[test]
    fn whole_slot_worked_example() {
        let dim = MarginalCapacityCurve::new(1, 2, vec![1.0, 0.7]).unwrap();
        let cfg = SimConfig {
            accounting_mode: AccountingMode::WholeSlot,
            ..Default::default()
        };
        let g = simulate(
            &worked_example_job(),
            &dim,
            &worked_example_trace(),
            Policy::Greedy,
            &cfg,
        )
        .unwrap();
        let a = simulate(
            &worked_example_job(),
            &dim,
            &worked_example_trace(),
            Policy::Agnostic,
            &cfg,
        )
        .unwrap();
        assert_eq!((g.carbon_g, a.carbon_g), (40.0, 110.0));
        assert_eq!(g.timeline.len(), 3);
        assert_eq!(g.timeline[0].granted_servers, 2);
        assert_eq!(g.timeline[1].granted_servers, 0);
    }

    #[test]
    fn full_denial_without_elasticity_changes_nothing() {
        let one = MarginalCapacityCurve::new(1, 1, vec![1.0]).unwrap();
        let job = JobSpec {
            max_servers: 1,
            ..worked_example_job()
        };
        let base = simulate(
            &job,
            &one,
            &worked_example_trace(),
            Policy::Greedy,
            &SimConfig::default(),
        )
        .unwrap();
        let denied = SimConfig {
            denial_probability: 1.0,
            ..Default::default()
        };
        assert_eq!(
            simulate(&job, &one, &worked_example_trace(), Policy::Greedy, &denied).unwrap(),
            base
        );
    }

    #[test]
    fn denial_of_scale_up_triggers_replan() {
        let flat = MarginalCapacityCurve::new(1, 2, vec![1.0, 1.0]).unwrap();
        let cfg = SimConfig {
            denial_probability: 1.0,
            ..Default::default()
        };
        let r = simulate(
            &worked_example_job(),
            &flat,
            &worked_example_trace(),
            Policy::Greedy,
            &cfg,
        )
        .unwrap();
        // slot 0: asked for 2, got 1; replanned to finish in slot 2
        assert_eq!(r.timeline[0].requested_servers, 2);
        assert_eq!(r.timeline[0].granted_servers, 1);
        assert!(r.timeline[0].recomputed);
        assert_eq!(r.denied_servers, 1);
        assert!(r.met_deadline);
        assert_eq!(r.carbon_g, 30.0);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let dim = MarginalCapacityCurve::new(1, 4, vec![1.0, 0.8, 0.6, 0.4]).unwrap();
        let trace = CarbonTrace::hourly("x", (0..48).map(|i| 100.0 + 50.0 * (i as f64 / 4.0).sin()).collect()).unwrap();
        let job = JobSpec {
            base_length_slots: 12.0,
            max_servers: 4,
            completion_slot: 24,
            ..worked_example_job()
        };
        let cfg = SimConfig {
            forecast_error_pct: 30.0,
            profile_error_pct: 20.0,
            denial_probability: 0.3,
            rng_seed: 9,
            ..Default::default()
        };
        let a = simulate(&job, &dim, &trace, Policy::Greedy, &cfg).unwrap();
        let b = simulate(&job, &dim, &trace, Policy::Greedy, &cfg).unwrap();
        assert_eq!(a, b);
        for rec in &a.timeline {
            assert!(rec.work_done <= dim.capacity(rec.granted_servers) + 1e-12);
        }
    }

    #[test]
    fn threshold_policy_may_overrun_deadline() {
        let one = MarginalCapacityCurve::new(1, 1, vec![1.0]).unwrap();
        let trace = CarbonTrace::hourly("x", vec![10.0, 100.0, 20.0, 15.0]).unwrap();
        let job = JobSpec {
            max_servers: 1,
            completion_slot: 2,
            ..worked_example_job()
        };
        let r = simulate(
            &job,
            &one,
            &trace,
            Policy::SuspendResumeThreshold { percentile: 50.0 },
            &SimConfig::default(),
        )
        .unwrap();
        assert_eq!(r.completion_slot, 4.0);
        assert!(!r.met_deadline);
        assert_eq!(r.carbon_g, 25.0);
    }

    #[test]
    fn scaling_overhead_costs_work() {
        let flat = MarginalCapacityCurve::new(1, 1, vec![1.0]).unwrap();
        let job = JobSpec {
            max_servers: 1,
            base_length_slots: 1.0,
            ..worked_example_job()
        };
        let cfg = SimConfig {
            scaling_overhead_secs: 360.0,
            recompute: false,
            ..Default::default()
        };
        let r = simulate(&job, &flat, &worked_example_trace(), Policy::Greedy, &cfg).unwrap();
        assert!((r.work_done - 0.9).abs() < 1e-12);
        assert!(!r.met_deadline);
    }

    #[test]
    fn planning_failures_are_errors() {
        let one = MarginalCapacityCurve::new(1, 1, vec![1.0]).unwrap();
        let job = JobSpec {
            max_servers: 1,
            completion_slot: 2,
            ..worked_example_job()
        };
        let trace = CarbonTrace::hourly("x", vec![10.0, 100.0]).unwrap();
        let policy = Policy::SuspendResumeThreshold { percentile: 50.0 };
        assert!(matches!(
            simulate(&job, &one, &trace, policy, &SimConfig::default()),
            Err(SimError::Plan(SchedError::Infeasible { .. }))
        ));
        let short = JobSpec {
            completion_slot: 5,
            ..worked_example_job()
        };
        assert!(matches!(
            simulate(
                &short,
                &one,
                &worked_example_trace(),
                Policy::Greedy,
                &SimConfig::default()
            ),
            Err(SimError::Plan(_))
        ));
        let bad = SimConfig {
            denial_probability: 2.0,
            ..Default::default()
        };
        assert!(matches!(
            simulate(&job, &one, &trace, Policy::Greedy, &bad),
            Err(SimError::Config(_))
        ));
    }
}
