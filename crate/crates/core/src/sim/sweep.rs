//! Parameter and start-time sweeps over [`simulate`].
//!
//! Runs fan out across threads; results are always returned in input order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{extrapolate_curve, simulate, SimConfig, SimResult};
use crate::profile::MarginalCapacityCurve;
use crate::scheduler::{JobSpec, Policy};
use crate::trace::CarbonTrace;

pub const SWEEP_CSV_HEADER: &str = "axis_value,policy,seed,carbon_g,compute_slot_hours,completion_slot,met_deadline";

/// The knob a sweep turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Window length `T - t` in slots.
    CompletionTime,
    /// Base length `l`; the window keeps the template's `(T - t) / l` ratio.
    JobLength,
    /// Maximum servers `M`; the curve is extrapolated or truncated to match.
    ClusterSize,
    /// `k` for static-scale policies; other policies are unaffected.
    ScaleFactor,
    Denial,
    ForecastError,
    ProfileError,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| format!("unknown sweep axis `{s}`"))
    }
}

/// One simulation run of a sweep. `result` is `Err` when the cell could not be
/// planned (for example an infeasible window).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub axis_value: f64,
    pub policy: Policy,
    pub seed: u64,
    #[serde(serialize_with = "outcome")]
    pub result: Result<RunSummary, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub carbon_g: f64,
    pub compute_slot_hours: f64,
    pub completion_slot: f64,
    pub met_deadline: bool,
}

impl From<&SimResult> for RunSummary {
    fn from(r: &SimResult) -> Self {
        Self {
            carbon_g: r.carbon_g,
            compute_slot_hours: r.compute_slot_hours,
            completion_slot: r.completion_slot,
            met_deadline: r.met_deadline,
        }
    }
}

/// Aggregate over the seeds of one (axis value, policy) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub axis_value: f64,
    pub policy: Policy,
    pub runs: usize,
    /// Runs that could not be planned; set means the cell is infeasible.
    pub infeasible: usize,
    pub error: Option<String>,
    pub mean_carbon_g: Option<f64>,
    pub p95_carbon_g: Option<f64>,
    pub mean_compute_slot_hours: Option<f64>,
    pub mean_completion_slot: Option<f64>,
    pub deadline_met_fraction: Option<f64>,
    /// `100 * (1 - carbon / agnostic carbon)` against the agnostic cell of the same value.
    pub savings_vs_agnostic_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub axis: Axis,
    pub records: Vec<SweepRecord>,
    pub cells: Vec<CellSummary>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            match &r.result {
                Ok(s) => out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.axis_value,
                    csv_field(&r.policy.to_string()),
                    r.seed,
                    s.carbon_g,
                    s.compute_slot_hours,
                    s.completion_slot,
                    s.met_deadline
                )),
                Err(_) => out.push_str(&format!(
                    "{},{},{},,,,false\n",
                    r.axis_value,
                    csv_field(&r.policy.to_string()),
                    r.seed
                )),
            }
        }
        out
    }
}

/// `Ok` as the bare summary, `Err` as `{"error": message}`.
fn outcome<S: serde::Serializer>(r: &Result<RunSummary, String>, s: S) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Failed<'a> {
        error: &'a str,
    }
    match r {
        Ok(summary) => summary.serialize(s),
        Err(e) => Failed { error: e }.serialize(s),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') {
        format!("\"{s}\"")
    } else {
        s.to_string()
    }
}

/// Nearest-rank 95th percentile.
fn p95(values: &[f64]) -> f64 {
    crate::trace::nearest_rank(values, 95.0)
}

struct Cell {
    job: JobSpec,
    curve: MarginalCapacityCurve,
    config: SimConfig,
    policy: Policy,
}

fn apply_axis(
    axis: Axis,
    value: f64,
    job: &JobSpec,
    curve: &MarginalCapacityCurve,
    config: &SimConfig,
    policy: Policy,
) -> Result<Cell, String> {
    let mut cell = Cell {
        job: job.clone(),
        curve: curve.clone(),
        config: config.clone(),
        policy,
    };
    let count = |v: f64| -> Result<u32, String> {
        if v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) {
            Ok(v as u32)
        } else {
            Err(format!("axis value {v} must be a non-negative integer"))
        }
    };
    match axis {
        Axis::CompletionTime => {
            cell.job.completion_slot = job.arrival_slot + count(value)? as usize;
        }
        Axis::JobLength => {
            let ratio = job.window_len() as f64 / job.base_length_slots;
            cell.job.base_length_slots = value;
            cell.job.completion_slot = job.arrival_slot + (value * ratio - crate::WORK_EPS).ceil().max(0.0) as usize;
        }
        Axis::ClusterSize => {
            let max = count(value)?;
            cell.job.max_servers = max;
            cell.curve = if max > curve.max_servers() {
                extrapolate_curve(curve, max)
            } else {
                curve.truncated(max).map_err(|e| e.to_string())?
            };
        }
        Axis::ScaleFactor => {
            if let Policy::StaticScale { .. } = policy {
                cell.policy = Policy::StaticScale { k: count(value)? };
            }
        }
        Axis::Denial => cell.config.denial_probability = value,
        Axis::ForecastError => cell.config.forecast_error_pct = value,
        Axis::ProfileError => cell.config.profile_error_pct = value,
    }
    Ok(cell)
}

fn summarize(axis_value: f64, policy: Policy, runs: &[&SweepRecord]) -> CellSummary {
    let ok: Vec<&RunSummary> = runs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
    let error = runs.iter().find_map(|r| r.result.as_ref().err().cloned());
    let mean = |f: fn(&RunSummary) -> f64| -> Option<f64> {
        (!ok.is_empty()).then(|| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64)
    };
    let carbons: Vec<f64> = ok.iter().map(|r| r.carbon_g).collect();
    CellSummary {
        axis_value,
        policy,
        runs: runs.len(),
        infeasible: runs.len() - ok.len(),
        error,
        mean_carbon_g: mean(|r| r.carbon_g),
        p95_carbon_g: (!carbons.is_empty()).then(|| p95(&carbons)),
        mean_compute_slot_hours: mean(|r| r.compute_slot_hours),
        mean_completion_slot: mean(|r| r.completion_slot),
        deadline_met_fraction: mean(|r| if r.met_deadline { 1.0 } else { 0.0 }),
        savings_vs_agnostic_pct: None,
    }
}

fn savings_pct(carbon: f64, agnostic: f64) -> Option<f64> {
    (agnostic > 0.0).then(|| 100.0 * (1.0 - carbon / agnostic))
}

/// Runs every `(value, policy)` cell over `runs` seeds starting at
/// `config.rng_seed`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_parameter(
    job: &JobSpec,
    curve: &MarginalCapacityCurve,
    trace: &CarbonTrace,
    axis: Axis,
    values: &[f64],
    policies: &[Policy],
    config: &SimConfig,
    runs: usize,
) -> SweepTable {
    let runs = runs.max(1);
    let tasks: Vec<(f64, Policy, u64)> = values
        .iter()
        .flat_map(|&v| {
            policies
                .iter()
                .flat_map(move |&p| (0..runs as u64).map(move |i| (v, p, config.rng_seed.wrapping_add(i))))
        })
        .collect();
    let records: Vec<SweepRecord> = tasks
        .par_iter()
        .map(|&(value, policy, seed)| {
            let result = apply_axis(axis, value, job, curve, config, policy).and_then(|cell| {
                let cfg = SimConfig {
                    rng_seed: seed,
                    ..cell.config
                };
                simulate(&cell.job, &cell.curve, trace, cell.policy, &cfg)
                    .map(|r| RunSummary::from(&r))
                    .map_err(|e| e.to_string())
            });
            SweepRecord {
                axis_value: value,
                policy,
                seed,
                result,
            }
        })
        .collect();

    let mut cells: Vec<CellSummary> = records
        .chunks(runs)
        .map(|chunk| summarize(chunk[0].axis_value, chunk[0].policy, &chunk.iter().collect::<Vec<_>>()))
        .collect();
    for row in cells.chunks_mut(policies.len().max(1)) {
        let agnostic = row
            .iter()
            .find(|c| c.policy == Policy::Agnostic)
            .and_then(|c| c.mean_carbon_g);
        if let Some(a) = agnostic {
            for c in row.iter_mut() {
                c.savings_vs_agnostic_pct = c.mean_carbon_g.and_then(|x| savings_pct(x, a));
            }
        }
    }
    SweepTable { axis, records, cells }
}

/// One start offset of a start-time sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartRow {
    pub start_slot: usize,
    pub policies: Vec<StartCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartCell {
    pub policy: Policy,
    #[serde(serialize_with = "outcome")]
    pub result: Result<RunSummary, String>,
    pub savings_vs_agnostic_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartSweep {
    pub rows: Vec<StartRow>,
    /// Start offsets skipped because the window ran past the end of the trace.
    pub omitted: usize,
}

/// Shifts `job` to every `stride`-th start slot whose window fits in `trace`
/// and simulates each policy there. Savings are against the agnostic run at
/// the same start (computed even when agnostic is not among `policies`).
pub fn sweep_start_times(
    job: &JobSpec,
    curve: &MarginalCapacityCurve,
    trace: &CarbonTrace,
    policies: &[Policy],
    config: &SimConfig,
    stride: usize,
) -> StartSweep {
    let stride = stride.max(1);
    let window = job.window_len();
    let starts: Vec<usize> = (0..trace.len()).step_by(stride).collect();
    let fits: Vec<usize> = starts.iter().copied().filter(|s| s + window <= trace.len()).collect();
    let omitted = starts.len() - fits.len();

    let rows = fits
        .par_iter()
        .map(|&start| {
            let shifted = JobSpec {
                arrival_slot: start,
                completion_slot: start + window,
                ..job.clone()
            };
            let run = |p: Policy| {
                simulate(&shifted, curve, trace, p, config)
                    .map(|r| RunSummary::from(&r))
                    .map_err(|e| e.to_string())
            };
            let agnostic = run(Policy::Agnostic).ok().map(|r| r.carbon_g);
            let policies = policies
                .iter()
                .map(|&p| {
                    let result = run(p);
                    let savings = match (&result, agnostic) {
                        (Ok(r), Some(a)) => savings_pct(r.carbon_g, a),
                        _ => None,
                    };
                    StartCell {
                        policy: p,
                        result,
                        savings_vs_agnostic_pct: savings,
                    }
                })
                .collect();
            StartRow {
                start_slot: start,
                policies,
            }
        })
        .collect();
    StartSweep { rows, omitted }
}
