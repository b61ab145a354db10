use std::fmt::Write as _;
use std::path::Path;

use anyhow::anyhow;
use carbonscale::scheduler::{planned_carbon, AccountingMode, ScheduleMetrics};
use carbonscale::sim::{self, Axis, SimConfig, StartSweep};
use carbonscale::{CarbonTrace, Policy, RegionStats, SimResult};
use carbonscale_advisor::{AdvisorConfig, AppState, ConfigFlags};
use serde::Serialize;

use crate::inputs::{self, invalid, runtime, Outcome};
use crate::{Format, ScheduleArgs, ServeArgs, SimFlags, SimulateArgs, SweepArgs};

fn emit(text: &str, out: Option<&Path>) -> Outcome {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| runtime(anyhow!("{}: {e}", path.display()))),
        None => {
            println!("{}", text.trim_end());
            Ok(())
        }
    }
}

fn json<T: Serialize>(value: &T) -> Outcome<String> {
    serde_json::to_string_pretty(value).map_err(runtime)
}

#[derive(Serialize)]
struct ScheduleOut {
    policy: Policy,
    mode: AccountingMode,
    window_start: usize,
    allocations: Vec<u32>,
    work_required: f64,
    metrics: ScheduleMetrics,
}

pub fn schedule(args: ScheduleArgs) -> Outcome {
    let inp = inputs::load(&args.job)?;
    let policy = inputs::policy(&args.policy, args.k)?;
    let schedule = policy.plan(&inp.job, &inp.curve, &inp.trace)?;
    let work = inp.job.base_length_slots;
    let metrics = planned_carbon(&schedule, &inp.curve, &inp.trace, work, inp.job.power, inp.mode);
    let out = ScheduleOut {
        policy,
        mode: inp.mode,
        window_start: schedule.window_start,
        allocations: schedule.allocations,
        work_required: work,
        metrics,
    };
    emit(&json(&out)?, args.out.as_deref())
}

fn sim_config(flags: &SimFlags, mode: AccountingMode) -> Outcome<SimConfig> {
    let cfg = SimConfig {
        forecast_error_pct: flags.forecast_error,
        profile_error_pct: flags.profile_error,
        denial_probability: flags.denial,
        recompute_threshold: flags.recompute_threshold,
        recompute: !flags.no_recompute,
        refresh_horizon_slots: flags.refresh_horizon,
        accounting_mode: mode,
        scaling_overhead_secs: flags.overhead_secs,
        rng_seed: flags.seed,
    };
    cfg.validate().map_err(invalid)?;
    Ok(cfg)
}

const TIMELINE_HEADER: &str =
    "slot,requested_servers,granted_servers,intensity_actual,intensity_forecast,work_done,carbon_g,recomputed";
const RUNS_HEADER: &str =
    "run,seed,carbon_g,compute_slot_hours,completion_slot,met_deadline,recomputations,denied_servers";

#[derive(Serialize)]
struct RunRow {
    seed: u64,
    carbon_g: f64,
    compute_slot_hours: f64,
    completion_slot: f64,
    met_deadline: bool,
    recomputations: usize,
    denied_servers: u32,
}

#[derive(Serialize)]
struct RunsSummary {
    runs: usize,
    mean_carbon_g: f64,
    p95_carbon_g: f64,
    mean_compute_slot_hours: f64,
    mean_completion_slot: f64,
    deadline_met_fraction: f64,
}

fn summarize(rows: &[RunRow]) -> RunsSummary {
    let n = rows.len() as f64;
    let carbons: Vec<f64> = rows.iter().map(|r| r.carbon_g).collect();
    RunsSummary {
        runs: rows.len(),
        mean_carbon_g: carbons.iter().sum::<f64>() / n,
        p95_carbon_g: carbonscale::trace::nearest_rank(&carbons, 95.0),
        mean_compute_slot_hours: rows.iter().map(|r| r.compute_slot_hours).sum::<f64>() / n,
        mean_completion_slot: rows.iter().map(|r| r.completion_slot).sum::<f64>() / n,
        deadline_met_fraction: rows.iter().filter(|r| r.met_deadline).count() as f64 / n,
    }
}

fn timeline_csv(r: &SimResult) -> String {
    let mut out = format!("{TIMELINE_HEADER}\n");
    for s in &r.timeline {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.slot,
            s.requested_servers,
            s.granted_servers,
            s.intensity_actual,
            s.intensity_forecast,
            s.work_done,
            s.carbon_g,
            s.recomputed
        );
    }
    out
}

pub fn simulate(args: SimulateArgs) -> Outcome {
    let inp = inputs::load(&args.job)?;
    let policy = inputs::policy(&args.policy, args.k)?;
    let cfg = sim_config(&args.sim, inp.mode)?;
    if args.runs == 0 {
        return Err(invalid(anyhow!("--runs must be at least 1")));
    }
    if args.runs == 1 {
        let r = sim::simulate(&inp.job, &inp.curve, &inp.trace, policy, &cfg)?;
        let text = match args.format {
            Format::Json => json(&r)?,
            Format::Csv => timeline_csv(&r),
        };
        return emit(&text, None);
    }

    let mut rows = Vec::new();
    for i in 0..args.runs {
        let seed = cfg.rng_seed.wrapping_add(i);
        let run_cfg = SimConfig {
            rng_seed: seed,
            ..cfg.clone()
        };
        let r = sim::simulate(&inp.job, &inp.curve, &inp.trace, policy, &run_cfg)?;
        rows.push(RunRow {
            seed,
            carbon_g: r.carbon_g,
            compute_slot_hours: r.compute_slot_hours,
            completion_slot: r.completion_slot,
            met_deadline: r.met_deadline,
            recomputations: r.recomputations,
            denied_servers: r.denied_servers,
        });
    }
    let summary = summarize(&rows);
    let text = match args.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                policy: Policy,
                runs: &'a [RunRow],
                summary: &'a RunsSummary,
            }
            json(&Out {
                policy,
                runs: &rows,
                summary: &summary,
            })?
        }
        Format::Csv => {
            let mut out = format!("{RUNS_HEADER}\n");
            for (i, r) in rows.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{i},{},{},{},{},{},{},{}",
                    r.seed,
                    r.carbon_g,
                    r.compute_slot_hours,
                    r.completion_slot,
                    r.met_deadline,
                    r.recomputations,
                    r.denied_servers
                );
            }
            let _ = writeln!(
                out,
                "mean,,{},{},{},{},,",
                summary.mean_carbon_g,
                summary.mean_compute_slot_hours,
                summary.mean_completion_slot,
                summary.deadline_met_fraction
            );
            let _ = writeln!(out, "p95,,{},,,,,", summary.p95_carbon_g);
            out
        }
    };
    emit(&text, None)
}

const START_HEADER: &str =
    "start_slot,policy,carbon_g,compute_slot_hours,completion_slot,met_deadline,savings_vs_agnostic_pct";

fn start_csv(s: &StartSweep) -> String {
    let mut out = format!("{START_HEADER}\n");
    for row in &s.rows {
        for cell in &row.policies {
            let savings = cell.savings_vs_agnostic_pct.map(|v| v.to_string()).unwrap_or_default();
            let _ = match &cell.result {
                Ok(r) => writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    row.start_slot,
                    cell.policy,
                    r.carbon_g,
                    r.compute_slot_hours,
                    r.completion_slot,
                    r.met_deadline,
                    savings
                ),
                Err(_) => writeln!(out, "{},{},,,,false,", row.start_slot, cell.policy),
            };
        }
    }
    out
}

pub fn sweep(args: SweepArgs) -> Outcome {
    let inp = inputs::load(&args.job)?;
    let cfg = sim_config(&args.sim, inp.mode)?;
    let policies = args
        .policies
        .iter()
        .map(|p| inputs::policy(p, None))
        .collect::<Outcome<Vec<Policy>>>()?;
    if args.runs == 0 {
        return Err(invalid(anyhow!("--runs must be at least 1")));
    }
    if args.axis.replace('-', "_") == "start_time" {
        if args.stride == 0 {
            return Err(invalid(anyhow!("--stride must be at least 1")));
        }
        let s = sim::sweep_start_times(&inp.job, &inp.curve, &inp.trace, &policies, &cfg, args.stride);
        let text = match args.format {
            Format::Json => json(&s)?,
            Format::Csv => start_csv(&s),
        };
        return emit(&text, None);
    }
    let axis: Axis = args.axis.parse().map_err(|e: String| invalid(anyhow!(e)))?;
    if args.values.is_empty() {
        return Err(invalid(anyhow!("--values is required for axis {}", args.axis)));
    }
    let table = sim::sweep_parameter(
        &inp.job,
        &inp.curve,
        &inp.trace,
        axis,
        &args.values,
        &policies,
        &cfg,
        args.runs,
    );
    let text = match args.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                axis: Axis,
                cells: &'a [sim::CellSummary],
            }
            json(&Out {
                axis,
                cells: &table.cells,
            })?
        }
        Format::Csv => table.to_csv(),
    };
    emit(&text, None)
}

pub fn stats(path: &Path) -> Outcome {
    #[derive(Serialize)]
    struct Out<'a> {
        region: &'a str,
        slots: usize,
        #[serde(flatten)]
        stats: RegionStats,
    }
    let trace = CarbonTrace::from_path(path).map_err(invalid)?;
    emit(
        &json(&Out {
            region: trace.region(),
            slots: trace.len(),
            stats: trace.region_stats(),
        })?,
        None,
    )
}

pub fn serve(args: ServeArgs) -> Outcome {
    let config = AdvisorConfig::from_env(ConfigFlags {
        traces: args.traces,
        addr: args.addr,
        sweep_cell_budget: args.sweep_budget,
    })
    .map_err(|e| invalid(anyhow!(e)))?;
    let addr = config.socket_addr().map_err(|e| invalid(anyhow!(e)))?;
    let library = config.load_library().map_err(invalid)?;
    for f in library.failures() {
        eprintln!("warning: {}: {}", f.file, f.message);
    }
    let state = AppState::new(library, config.sweep_cell_budget);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| runtime(anyhow!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(runtime)?;
        eprintln!("listening on http://{local}");
        carbonscale_advisor::serve(listener, state).await.map_err(runtime)
    })
}
