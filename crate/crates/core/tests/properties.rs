use std::collections::BTreeMap;

use carbonscale::scheduler::{
    brute_force_optimal, carbon_agnostic, exchange_gamma, greedy_schedule, planned_carbon, static_scale,
    suspend_resume_deadline, AccountingMode,
};
use carbonscale::sim::simulate;
use carbonscale::{CarbonTrace, JobSpec, MarginalCapacityCurve, Policy, SimConfig, ThroughputProfile};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Instance {
    job: JobSpec,
    curve: MarginalCapacityCurve,
    trace: CarbonTrace,
}

fn curve_from_ratios(m: u32, ratios: &[f64]) -> MarginalCapacityCurve {
    let mut values = vec![1.0];
    for r in ratios {
        let last = *values.last().unwrap();
        values.push(last * r);
    }
    MarginalCapacityCurve::new(m, m + ratios.len() as u32, values).unwrap()
}

fn instance(max_n: usize, max_extra: u32, max_m: u32) -> impl Strategy<Value = Instance> {
    (2..=max_n, 0..=max_extra, 1..=max_m)
        .prop_flat_map(|(n, extra, m)| {
            (
                Just(m),
                prop::collection::vec(0.05f64..=1.0, extra as usize),
                prop::collection::vec(1.0f64..500.0, n),
                0.05f64..=1.0,
            )
        })
        .prop_map(|(m, ratios, intensities, frac)| {
            let n = intensities.len();
            let curve = curve_from_ratios(m, &ratios);
            Instance {
                job: JobSpec {
                    name: "p".into(),
                    arrival_slot: 0,
                    base_length_slots: frac * n as f64,
                    min_servers: m,
                    max_servers: curve.max_servers(),
                    completion_slot: n,
                    power: None,
                },
                curve,
                trace: CarbonTrace::hourly("p", intensities).unwrap(),
            }
        })
}

fn prorated(s: &carbonscale::Schedule, inst: &Instance) -> f64 {
    planned_carbon(
        s,
        &inst.curve,
        &inst.trace,
        inst.job.base_length_slots,
        None,
        AccountingMode::Prorated,
    )
    .carbon_g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn trace_csv_round_trip(values in prop::collection::vec(0.0f64..2000.0, 1..48)) {
        let trace = CarbonTrace::hourly("rt", values).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = CarbonTrace::parse_csv("rt", buf.as_slice()).unwrap();
        prop_assert_eq!(back, trace);
    }

    #[test]
    fn slices_compose(len in 4usize..48, a in 0usize..4, b in 0usize..4, k in 1usize..4) {
        let trace = CarbonTrace::hourly("s", (0..len).map(|v| v as f64).collect()).unwrap();
        let outer = trace.slice(a, len - a).unwrap();
        prop_assume!(b + k <= outer.len());
        prop_assert_eq!(outer.slice(b, k).unwrap(), trace.slice(a + b, k).unwrap());
    }

    #[test]
    fn perturbation_stays_in_bounds(
        values in prop::collection::vec(1.0f64..500.0, 1..48),
        pct in 0.0f64..90.0,
        seed in any::<u64>(),
    ) {
        let trace = CarbonTrace::hourly("f", values).unwrap();
        let noisy = trace.perturb_forecast(pct, seed).unwrap();
        prop_assert_eq!(noisy.clone(), trace.perturb_forecast(pct, seed).unwrap());
        for (a, b) in trace.intensities().iter().zip(noisy.intensities()) {
            prop_assert!((b / a - 1.0).abs() <= pct / 100.0 + 1e-12);
        }
    }

    #[test]
    fn profiles_give_normalized_concave_curves(
        m in 1u32..4,
        increments in prop::collection::vec(0.0f64..=1.0, 1..10),
        base in 0.5f64..100.0,
    ) {
        // concave throughput: non-increasing gains
        let mut gains = increments.clone();
        gains.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut samples = BTreeMap::new();
        let mut th = base;
        samples.insert(m, th);
        for (i, g) in gains.iter().enumerate() {
            th += g * base;
            samples.insert(m + 1 + i as u32, th);
        }
        let max = m + gains.len() as u32;
        let curve = ThroughputProfile::new(m, max, samples).unwrap().to_curve().unwrap();
        prop_assert_eq!(curve.marginal(m), 1.0);
        prop_assert!(curve.is_monotone());
        prop_assert!((curve.capacity(max) - th / base).abs() < 1e-9 * th / base);
    }

    #[test]
    fn monotonize_repairs_any_curve(n in 1u32..12, seed in any::<u64>()) {
        let curve = MarginalCapacityCurve::new(1, n, vec![1.0; n as usize]).unwrap();
        let noisy = curve.perturb(60.0, seed).curve.monotonize();
        prop_assert!(noisy.is_monotone());
        prop_assert_eq!(noisy.marginal(1), 1.0);
    }

    #[test]
    fn greedy_matches_oracle(inst in instance(6, 2, 1)) {
        let g = greedy_schedule(&inst.job, &inst.curve, &inst.trace).unwrap();
        let oracle = brute_force_optimal(&inst.job, &inst.curve, &inst.trace).unwrap();
        let greedy = prorated(&g, &inst);
        prop_assert!((greedy - oracle.carbon).abs() <= 1e-9 * oracle.carbon.abs().max(1.0),
            "greedy {} oracle {} ({:?} vs {:?})", greedy, oracle.carbon, g.allocations, oracle.schedule.allocations);
    }

    #[test]
    fn greedy_never_exceeds_oracle_bound_for_wide_blocks(inst in instance(5, 1, 3)) {
        // the oracle is a lower bound when m > 1
        let g = greedy_schedule(&inst.job, &inst.curve, &inst.trace).unwrap();
        let oracle = brute_force_optimal(&inst.job, &inst.curve, &inst.trace).unwrap();
        prop_assert!(prorated(&g, &inst) >= oracle.carbon - 1e-9 * oracle.carbon.max(1.0));
    }

    #[test]
    fn without_elasticity_greedy_is_suspend_resume(inst in instance(24, 0, 4)) {
        let g = greedy_schedule(&inst.job, &inst.curve, &inst.trace).unwrap();
        let sr = suspend_resume_deadline(&inst.job, &inst.curve, &inst.trace).unwrap();
        prop_assert_eq!(g.active_slots(), sr.active_slots());
    }

    #[test]
    fn without_slack_greedy_is_agnostic(inst in instance(24, 0, 4)) {
        let mut job = inst.job.clone();
        job.base_length_slots = job.completion_slot as f64;
        let g = greedy_schedule(&job, &inst.curve, &inst.trace).unwrap();
        let a = carbon_agnostic(&job, &inst.curve, &inst.trace).unwrap();
        prop_assert_eq!(g.allocations, a.allocations);
    }

    #[test]
    fn greedy_dominates_baselines(inst in instance(24, 7, 1)) {
        let greedy = prorated(&greedy_schedule(&inst.job, &inst.curve, &inst.trace).unwrap(), &inst);
        let mut others = vec![
            carbon_agnostic(&inst.job, &inst.curve, &inst.trace),
            suspend_resume_deadline(&inst.job, &inst.curve, &inst.trace),
        ];
        others.extend((1..=inst.job.max_servers).map(|k| static_scale(&inst.job, &inst.curve, &inst.trace, k)));
        for s in others.into_iter().flatten() {
            let c = prorated(&s, &inst);
            prop_assert!(greedy <= c + 1e-9 * c.max(1.0), "{} beats greedy: {} < {}", s.policy, c, greedy);
        }
    }

    #[test]
    fn scaling_the_trace_scales_carbon(inst in instance(24, 4, 2), shift in -4i32..=4) {
        let k = 2f64.powi(shift);
        let scaled = CarbonTrace::hourly("k", inst.trace.intensities().iter().map(|v| v * k).collect()).unwrap();
        let a = greedy_schedule(&inst.job, &inst.curve, &inst.trace).unwrap();
        let b = greedy_schedule(&inst.job, &inst.curve, &scaled).unwrap();
        prop_assert_eq!(&a.allocations, &b.allocations);
        let scaled_inst = Instance { trace: scaled, ..inst.clone() };
        prop_assert_eq!(prorated(&b, &scaled_inst), k * prorated(&a, &inst));
    }

    #[test]
    fn exchange_improves_when_ratio_is_better(
        c_i in 1.0f64..500.0, c_k in 1.0f64..500.0, mc_j in 0.01f64..=1.0, mc_l in 0.01f64..=1.0,
    ) {
        prop_assume!(mc_l / c_k > mc_j / c_i);
        prop_assert!(exchange_gamma(c_i, c_k, mc_j, mc_l) < c_i);
    }

    #[test]
    fn zero_error_simulation_is_the_plan(inst in instance(24, 4, 3), whole in any::<bool>()) {
        let mode = if whole { AccountingMode::WholeSlot } else { AccountingMode::Prorated };
        let cfg = SimConfig { accounting_mode: mode, ..SimConfig::default() };
        for policy in [Policy::Greedy, Policy::Agnostic, Policy::SuspendResumeDeadline] {
            let plan = policy.plan(&inst.job, &inst.curve, &inst.trace).unwrap();
            let want = planned_carbon(&plan, &inst.curve, &inst.trace, inst.job.base_length_slots, None, mode);
            let got = simulate(&inst.job, &inst.curve, &inst.trace, policy, &cfg).unwrap();
            prop_assert_eq!(got.carbon_g, want.carbon_g);
            prop_assert_eq!(got.compute_slot_hours, want.compute_slot_hours);
            prop_assert_eq!(got.completion_slot, want.completion_slot);
            prop_assert_eq!(got.recomputations, 0);
        }
    }

    #[test]
    fn noisy_simulation_conserves_work_and_carbon(
        inst in instance(24, 4, 2),
        forecast in 0.0f64..50.0,
        profile in 0.0f64..30.0,
        denial in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let cfg = SimConfig {
            forecast_error_pct: forecast,
            profile_error_pct: profile,
            denial_probability: denial,
            rng_seed: seed,
            ..SimConfig::default()
        };
        let a = simulate(&inst.job, &inst.curve, &inst.trace, Policy::Greedy, &cfg).unwrap();
        let b = simulate(&inst.job, &inst.curve, &inst.trace, Policy::Greedy, &cfg).unwrap();
        prop_assert_eq!(&a, &b);

        let timeline_carbon: f64 = a.timeline.iter().map(|s| s.carbon_g).sum();
        prop_assert!((timeline_carbon - a.carbon_g).abs() <= 1e-9 * a.carbon_g.max(1.0));
        let timeline_work: f64 = a.timeline.iter().map(|s| s.work_done).sum();
        prop_assert!((timeline_work - a.work_done).abs() <= 1e-9 * a.work_done.max(1.0));
        prop_assert!(a.work_done <= a.work_required + 1e-9);
        if a.met_deadline {
            prop_assert!(a.work_done >= a.work_required - 1e-9);
        }
        for s in &a.timeline {
            prop_assert!(s.granted_servers <= s.requested_servers);
            prop_assert!(s.granted_servers <= inst.job.max_servers);
            prop_assert!(s.slot < inst.job.completion_slot);
        }
    }
}
