//! Instance generators and experiment drivers for the acceptance gate.

use carbonscale::profile::CurveShape;
use carbonscale::{CarbonTrace, JobSpec, MarginalCapacityCurve, Policy, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub job: JobSpec,
    pub curve: MarginalCapacityCurve,
    pub trace: CarbonTrace,
}

pub fn job(l: f64, m: u32, max: u32, window: usize) -> JobSpec {
    JobSpec {
        name: "job".into(),
        arrival_slot: 0,
        base_length_slots: l,
        min_servers: m,
        max_servers: max,
        completion_slot: window,
        power: None,
    }
}

/// Non-increasing marginals starting at 1, each a random fraction of the last.
pub fn random_curve(rng: &mut impl Rng, m: u32, max: u32) -> MarginalCapacityCurve {
    let mut values = vec![1.0];
    while values.len() < (max - m + 1) as usize {
        let last: f64 = *values.last().unwrap();
        values.push(last * rng.random_range(0.05..=1.0));
    }
    MarginalCapacityCurve::new(m, max, values).expect("generated curve is valid")
}

pub fn random_trace(rng: &mut impl Rng, n: usize) -> CarbonTrace {
    CarbonTrace::hourly("random", (0..n).map(|_| rng.random_range(1.0..500.0)).collect()).unwrap()
}

/// Random small instance with `m = 1`, `n` in `[2, 6]`, `M` in `[1, 3]` and a
/// job length drawn uniformly up to the window length.
pub fn random_small_instance(rng: &mut impl Rng) -> Instance {
    let n = rng.random_range(2..=6usize);
    let max = rng.random_range(1..=3u32);
    let curve = random_curve(rng, 1, max);
    let trace = random_trace(rng, n);
    let l = rng.random_range(0.05..=1.0) * n as f64;
    Instance {
        job: job(l, 1, max, n),
        curve,
        trace,
    }
}

/// `mean + amplitude * sin(2 pi t / 24)` plus uniform noise of `+-noise`.
pub fn diurnal_trace(len: usize, mean: f64, amplitude: f64, noise: f64, seed: u64) -> CarbonTrace {
    let mut r = rng(seed);
    let values = (0..len)
        .map(|t| {
            let base = mean + amplitude * (t as f64 * std::f64::consts::TAU / 24.0).sin();
            let jitter = if noise > 0.0 {
                r.random_range(-noise..=noise)
            } else {
                0.0
            };
            (base + jitter).max(1.0)
        })
        .collect();
    CarbonTrace::hourly("diurnal", values).unwrap()
}

/// Carbon of one simulated run, or `None` when it could not be planned.
pub fn sim_carbon(inst: &Instance, policy: Policy, config: &SimConfig) -> Option<f64> {
    carbonscale::sim::simulate(&inst.job, &inst.curve, &inst.trace, policy, config)
        .ok()
        .map(|r| r.carbon_g)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn p95(xs: &[f64]) -> f64 {
    carbonscale::trace::nearest_rank(xs, 95.0)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// The forecast-error setting: a 24-slot job on a noisy diurnal trace with
/// half a job length of slack and a nearly linear curve.
pub fn forecast_instance() -> Instance {
    Instance {
        job: job(24.0, 1, 4, 36),
        curve: MarginalCapacityCurve::synthetic(CurveShape::Diminishing { decay: 0.95 }, 1, 4).unwrap(),
        trace: diurnal_trace(36, 300.0, 150.0, 20.0, 7),
    }
}

#[derive(Debug, Clone)]
pub struct OverheadStats {
    /// Per-seed relative overhead over the perfect-information run.
    pub overheads: Vec<f64>,
}

impl OverheadStats {
    pub fn mean(&self) -> f64 {
        mean(&self.overheads)
    }
    pub fn p95(&self) -> f64 {
        p95(&self.overheads)
    }
}

/// Relative carbon overhead of `config` (seeded `base_seed + i`) over the
/// zero-error run of the same policy, across `seeds` runs.
pub fn overheads(inst: &Instance, policy: Policy, config: &SimConfig, seeds: u64, base_seed: u64) -> OverheadStats {
    let perfect = sim_carbon(inst, policy, &SimConfig::default()).expect("perfect run plans");
    let overheads = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let cfg = SimConfig {
                rng_seed: base_seed + i,
                ..config.clone()
            };
            sim_carbon(inst, policy, &cfg).expect("run plans") / perfect - 1.0
        })
        .collect();
    OverheadStats { overheads }
}

/// Denial setting: a 12-slot job with one job length of slack on a diurnal
/// trace, with the given curve.
pub fn denial_instance(curve: MarginalCapacityCurve) -> Instance {
    let max = curve.max_servers();
    Instance {
        job: job(12.0, 1, max, 24),
        curve,
        trace: diurnal_trace(24, 300.0, 150.0, 20.0, 11),
    }
}

/// Traces sharing one mean with amplitude rising from 0 to `0.9 * mean`.
pub fn cov_family(count: usize, len: usize, mean: f64, seed: u64) -> Vec<CarbonTrace> {
    (0..count)
        .map(|k| {
            let amplitude = 0.9 * mean * k as f64 / (count - 1) as f64;
            diurnal_trace(len, mean, amplitude, 0.0, seed + k as u64)
        })
        .collect()
}
