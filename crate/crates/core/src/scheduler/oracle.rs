//! Exhaustive reference solver for small instances.
//!
//! Enumerates every allocation vector in `({0} ∪ [m, M])^n`, charges each
//! feasible one with the cheapest fractional use of its increments, and keeps
//! the minimum. The charging here deliberately does not reuse
//! [`slot_uses`](super::slot_uses): increments are sorted globally by carbon
//! per unit of work and the overshoot is shaved off the most expensive ones.

use super::{energy_factor, work_requirement, JobSpec, Policy, SchedError, Schedule};
use crate::profile::MarginalCapacityCurve;
use crate::trace::CarbonTrace;
use crate::WORK_EPS;

/// Largest number of allocation vectors the oracle will enumerate.
pub const ORACLE_BUDGET: f64 = 1e7;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub schedule: Schedule,
    /// Prorated carbon of `schedule`.
    pub carbon: f64,
}

/// Minimum prorated carbon over all allocation vectors of the job's window.
pub fn brute_force_optimal(
    job: &JobSpec,
    curve: &MarginalCapacityCurve,
    trace: &CarbonTrace,
) -> Result<OracleSolution, SchedError> {
    job.validate()?;
    job.check_trace(trace)?;
    let work = work_requirement(job, curve)?;
    let m = job.min_servers;
    let max = job.max_servers;
    let window = &trace.intensities()[job.arrival_slot..job.completion_slot];
    let n = window.len();
    let levels = (max - m + 2) as f64;
    let combinations = levels.powi(n as i32);
    if combinations > ORACLE_BUDGET {
        return Err(SchedError::OracleBudget { combinations });
    }
    let energy = energy_factor(job.power, trace.slot_hours());

    // choices[k]: 0 -> suspended, otherwise m + k - 1 servers
    let choice_servers = |k: u32| if k == 0 { 0 } else { m + k - 1 };
    let mut choices = vec![0u32; n];
    let mut best: Option<(f64, Vec<u32>)> = None;
    let mut capacity_max = 0.0_f64;
    loop {
        let alloc: Vec<u32> = choices.iter().map(|&k| choice_servers(k)).collect();
        let total: f64 = alloc.iter().map(|&s| curve.capacity(s)).sum();
        capacity_max = capacity_max.max(total);
        if total >= work - WORK_EPS {
            let carbon = cheapest_charge(&alloc, curve, window, work, energy);
            let servers: u32 = alloc.iter().sum();
            // ties go to the vector with fewer servers
            let better = best.as_ref().is_none_or(|(b, a)| {
                let tol = 1e-12 * b.abs().max(1.0);
                carbon < *b - tol || (carbon <= *b + tol && servers < a.iter().sum::<u32>())
            });
            if better {
                best = Some((carbon, alloc));
            }
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == n {
                return match best {
                    Some((carbon, allocations)) => Ok(OracleSolution {
                        schedule: Schedule {
                            window_start: job.arrival_slot,
                            allocations,
                            policy: Policy::Greedy,
                        },
                        carbon,
                    }),
                    None => Err(SchedError::Infeasible {
                        required: work,
                        achievable: capacity_max,
                    }),
                };
            }
            choices[pos] += 1;
            if choices[pos] <= max - m + 1 {
                break;
            }
            choices[pos] = 0;
            pos += 1;
        }
    }
}

/// Charges all increments of `alloc` in full, then refunds the overshoot from
/// the increments with the highest carbon per unit of work.
///
/// Within a slot only the topmost remaining increment can be shaved, so an
/// increment that is cheaper than the one below it is pooled with it first.
/// Pooling only happens when `m > 1`; there the result is a lower bound
/// rather than an exact charge.
fn cheapest_charge(alloc: &[u32], curve: &MarginalCapacityCurve, intensities: &[f64], work: f64, energy: f64) -> f64 {
    let m = curve.min_servers();
    // (carbon per unit work, work)
    let mut increments: Vec<(f64, f64)> = Vec::new();
    for (i, &s) in alloc.iter().enumerate() {
        if s == 0 {
            continue;
        }
        let block = curve.capacity(m);
        let mut stack = vec![(intensities[i] * f64::from(m) * energy / block, block)];
        for j in m + 1..=s {
            let mc = curve.marginal(j);
            let mut top = (intensities[i] * energy / mc, mc);
            while let Some(&(rate, w)) = stack.last() {
                if top.0 >= rate {
                    break;
                }
                stack.pop();
                top = ((rate * w + top.0 * top.1) / (w + top.1), w + top.1);
            }
            stack.push(top);
        }
        increments.extend(stack);
    }
    let total_work: f64 = increments.iter().map(|(_, w)| w).sum();
    let mut carbon: f64 = increments.iter().map(|(rate, w)| rate * w).sum();
    let mut excess = total_work - work;
    increments.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (rate, w) in increments {
        if excess <= 0.0 {
            break;
        }
        let shaved = excess.min(w);
        carbon -= rate * shaved;
        excess -= shaved;
    }
    carbon
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job(l: f64, m: u32, max: u32, big_t: usize) -> JobSpec {
        JobSpec {
            name: "j".into(),
            arrival_slot: 0,
            base_length_slots: l,
            min_servers: m,
            max_servers: max,
            completion_slot: big_t,
            power: None,
        }
    }

    #[test]
    fn worked_example_diminishing() {
        let dim = MarginalCapacityCurve::new(1, 2, vec![1.0, 0.7]).unwrap();
        let trace = CarbonTrace::hourly("x", vec![10.0, 100.0, 20.0]).unwrap();
        let sol = brute_force_optimal(&job(2.0, 1, 2, 3), &dim, &trace).unwrap();
        assert!((sol.carbon - 26.0).abs() < 1e-12);
        assert_eq!(sol.schedule.allocations, vec![2, 0, 1]);
    }

    #[test]
    fn single_slot() {
        let one = MarginalCapacityCurve::new(1, 1, vec![1.0]).unwrap();
        let trace = CarbonTrace::hourly("x", vec![7.0]).unwrap();
        let sol = brute_force_optimal(&job(1.0, 1, 1, 1), &one, &trace).unwrap();
        assert_eq!(sol.schedule.allocations, vec![1]);
        assert_eq!(sol.carbon, 7.0);
    }

    #[test]
    fn non_minimal_vector_can_be_cheapest() {
        // Trimming a block in an expensive slot beats keeping a whole server there.
        let curve = MarginalCapacityCurve::new(1, 2, vec![1.0, 0.1]).unwrap();
        let trace = CarbonTrace::hourly("x", vec![1.0, 100.0]).unwrap();
        let sol = brute_force_optimal(&job(1.15, 1, 2, 2), &curve, &trace).unwrap();
        assert_eq!(sol.schedule.allocations, vec![2, 1]);
        assert!((sol.carbon - 7.0).abs() < 1e-9);
    }

    #[test]
    fn pooled_increments_for_wide_blocks() {
        // m = 2: the block costs 2c per unit, the third server only 1.25c.
        let curve = MarginalCapacityCurve::new(2, 3, vec![1.0, 0.8]).unwrap();
        let trace = CarbonTrace::hourly("x", vec![10.0, 10.0]).unwrap();
        let sol = brute_force_optimal(&job(1.5, 2, 3, 2), &curve, &trace).unwrap();
        let check = crate::scheduler::planned_carbon(
            &sol.schedule,
            &curve,
            &trace,
            1.5,
            None,
            crate::scheduler::AccountingMode::Prorated,
        );
        assert_eq!(sol.schedule.allocations, vec![3, 0]);
        assert!((sol.carbon - 25.0).abs() < 1e-9);
        assert!(sol.carbon <= check.carbon_g + 1e-9);
    }

    #[test]
    fn budget_guard() {
        let curve = MarginalCapacityCurve::new(1, 3, vec![1.0, 0.5, 0.2]).unwrap();
        let trace = CarbonTrace::hourly("x", vec![1.0; 20]).unwrap();
        assert!(matches!(
            brute_force_optimal(&job(2.0, 1, 3, 20), &curve, &trace),
            Err(SchedError::OracleBudget { .. })
        ));
    }
}
