//! Request and response bodies, validation, and the handlers behind them.

use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use carbonscale::fixture::{CurveRef, FixtureError, JobDocument};
use carbonscale::scheduler::SchedError;
use carbonscale::sim::{self, Axis, SlotRecord, StartSweep, SweepTable};
use carbonscale::{CarbonTrace, JobSpec, MarginalCapacityCurve, Policy, SimConfig, WORK_EPS};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::library::TraceLibrary;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApiError {
    Validation(Vec<FieldError>),
    NotFound(String),
    Infeasible {
        policy: Option<Policy>,
        required: f64,
        achievable: f64,
    },
    TooLarge {
        cells: usize,
        budget: usize,
    },
    Internal(String),
}

impl ApiError {
    fn field(field: &str, message: impl Into<String>) -> Self {
        ApiError::Validation(vec![FieldError {
            field: field.to_string(),
            message: message.into(),
        }])
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Validation(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Infeasible { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn body(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            ApiError::Validation(fields) => json!({"error": "invalid request", "fields": fields}),
            ApiError::NotFound(what) => json!({"error": what}),
            ApiError::Infeasible {
                policy,
                required,
                achievable,
            } => json!({
                "error": "job cannot finish before its completion slot",
                "policy": policy,
                "required_work": required,
                "max_achievable_work": achievable,
            }),
            ApiError::TooLarge { cells, budget } => json!({
                "error": "sweep exceeds the cell budget",
                "cells": cells,
                "budget": budget,
            }),
            ApiError::Internal(message) => json!({"error": message}),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.status(), &self.body())
    }
}

pub(crate) fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match serde_json::to_vec(body) {
        Ok(bytes) => (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// Deserializes `bytes`, reporting the JSON path of the first bad field.
pub(crate) fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::field(if path == "." { "body" } else { &path }, e.inner().to_string())
    })?;
    de.end().map_err(|e| ApiError::field("body", e.to_string()))?;
    Ok(value)
}

fn default_policies() -> Vec<Policy> {
    vec![Policy::Agnostic, Policy::Greedy]
}

/// A what-if scenario. Slot indices in `job` count from `start_offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRequest {
    /// Region id from the trace library. Exclusive with `intensities`.
    #[serde(default)]
    pub region: Option<String>,
    /// Inline hourly trace.
    #[serde(default)]
    pub intensities: Option<Vec<f64>>,
    #[serde(default)]
    pub start_offset: usize,
    pub job: JobDocument,
    /// Preset name or inline curve; falls back to `job.curve`.
    #[serde(default)]
    pub curve: Option<CurveRef>,
    #[serde(default = "default_policies")]
    pub policies: Vec<Policy>,
    #[serde(default)]
    pub config: SimConfig,
}

pub(crate) struct Scenario {
    pub trace: CarbonTrace,
    pub job: JobSpec,
    pub curve: MarginalCapacityCurve,
    pub policies: Vec<Policy>,
    pub config: SimConfig,
}

impl SimulateRequest {
    pub(crate) fn scenario(&self, library: &TraceLibrary) -> Result<Scenario, ApiError> {
        let full = match (&self.region, &self.intensities) {
            (Some(region), None) => library
                .get(region)
                .cloned()
                .ok_or_else(|| ApiError::NotFound(format!("unknown region `{region}`")))?,
            (None, Some(values)) => CarbonTrace::hourly("inline", values.clone())
                .map_err(|e| ApiError::field("intensities", e.to_string()))?,
            _ => {
                return Err(ApiError::field(
                    "region",
                    "give exactly one of `region` or `intensities`",
                ))
            }
        };
        if self.start_offset >= full.len() {
            return Err(ApiError::field(
                "start_offset",
                format!(
                    "offset {} is past the end of a {}-slot trace",
                    self.start_offset,
                    full.len()
                ),
            ));
        }
        let trace = full
            .slice(self.start_offset, full.len() - self.start_offset)
            .map_err(|e| ApiError::Internal(e.to_string()))?;

        let curve_ref = self
            .curve
            .as_ref()
            .or(self.job.curve.as_ref())
            .ok_or_else(|| ApiError::field("curve", "a curve preset or inline curve is required"))?;
        let loaded = curve_ref.load().map_err(|e| match e {
            FixtureError::UnknownPreset(name) => ApiError::NotFound(format!("unknown curve preset `{name}`")),
            other => ApiError::field("curve", other.to_string()),
        })?;
        let job = self
            .job
            .job(loaded.power)
            .map_err(|e| ApiError::field("job.power_watts", e.to_string()))?;
        validate_job(&job, trace.len())?;
        if loaded.curve.min_servers() != job.min_servers || loaded.curve.max_servers() < job.max_servers {
            return Err(ApiError::field(
                "curve",
                format!(
                    "curve covers servers {}..={} but the job needs {}..={}",
                    loaded.curve.min_servers(),
                    loaded.curve.max_servers(),
                    job.min_servers,
                    job.max_servers
                ),
            ));
        }
        self.config
            .validate()
            .map_err(|e| ApiError::field("config", e.to_string()))?;
        if self.policies.is_empty() {
            return Err(ApiError::field("policies", "at least one policy is required"));
        }
        let mut policies = Vec::with_capacity(self.policies.len() + 1);
        if !self.policies.contains(&Policy::Agnostic) {
            policies.push(Policy::Agnostic);
        }
        for p in &self.policies {
            if !policies.contains(p) {
                policies.push(*p);
            }
        }
        Ok(Scenario {
            trace,
            job,
            curve: loaded.curve,
            policies,
            config: self.config.clone(),
        })
    }
}

fn validate_job(job: &JobSpec, trace_len: usize) -> Result<(), ApiError> {
    let mut errors = Vec::new();
    let mut push = |field: &str, message: String| {
        errors.push(FieldError {
            field: field.to_string(),
            message,
        })
    };
    let l = job.base_length_slots;
    if !(l > 0.0 && l.is_finite()) {
        push("job.base_length_slots", format!("must be positive, got {l}"));
    }
    if job.min_servers == 0 {
        push("job.min_servers", "must be at least 1".into());
    }
    if job.max_servers < job.min_servers {
        push(
            "job.max_servers",
            format!("{} is below min_servers {}", job.max_servers, job.min_servers),
        );
    }
    if l.is_finite() && (job.completion_slot as f64) < job.arrival_slot as f64 + l - WORK_EPS {
        push(
            "job.completion_slot",
            format!(
                "{} is earlier than arrival_slot + base_length_slots = {}",
                job.completion_slot,
                job.arrival_slot as f64 + l
            ),
        );
    } else if job.completion_slot > trace_len {
        push(
            "job.completion_slot",
            format!(
                "{} runs past the {trace_len} slots available after start_offset",
                job.completion_slot
            ),
        );
    }
    if !errors.is_empty() {
        return Err(ApiError::Validation(errors));
    }
    job.validate().map_err(|e| ApiError::field("job", e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceExcerpt {
    pub region: String,
    /// Offset of `intensities[0]` from the start of the scenario.
    pub first_slot: usize,
    pub start: String,
    pub slot_hours: f64,
    pub intensities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutedSchedule {
    pub window_start: usize,
    /// Servers actually granted in each slot from `window_start` on.
    pub allocations: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub carbon_g: f64,
    pub compute_slot_hours: f64,
    pub completion_slot: f64,
    pub met_deadline: bool,
    pub work_done: f64,
    pub recomputations: usize,
    pub denied_servers: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyResult {
    pub policy: Policy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ExecutedSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    pub savings_vs_agnostic_pct: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub timeline: Vec<SlotRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateResponse {
    pub trace: TraceExcerpt,
    pub work_required: f64,
    pub results: Vec<PolicyResult>,
    pub warnings: Vec<String>,
}

pub(crate) fn simulate(req: &SimulateRequest, library: &TraceLibrary) -> Result<SimulateResponse, ApiError> {
    let sc = req.scenario(library)?;
    let work = sc.job.base_length_slots;
    let achievable = sc.job.window_len() as f64 * sc.curve.capacity(sc.job.max_servers);
    if work > achievable + WORK_EPS {
        return Err(ApiError::Infeasible {
            policy: None,
            required: work,
            achievable,
        });
    }

    let mut warnings = Vec::new();
    if !sc.curve.is_monotone() {
        warnings.push("curve is not monotone".to_string());
    }
    let mut runs = Vec::with_capacity(sc.policies.len());
    for &p in &sc.policies {
        match sim::simulate(&sc.job, &sc.curve, &sc.trace, p, &sc.config) {
            Ok(r) => runs.push((p, Ok(r))),
            Err(sim::SimError::Plan(SchedError::Infeasible { required, achievable })) => {
                return Err(ApiError::Infeasible {
                    policy: Some(p),
                    required,
                    achievable,
                })
            }
            Err(e) => runs.push((p, Err(e.to_string()))),
        }
    }
    let agnostic = runs
        .iter()
        .find(|(p, _)| *p == Policy::Agnostic)
        .and_then(|(_, r)| r.as_ref().ok())
        .map(|r| r.carbon_g);

    let mut last_slot = sc.job.completion_slot;
    let results = runs
        .into_iter()
        .map(|(policy, run)| match run {
            Ok(r) => {
                if !r.met_deadline {
                    warnings.push(format!("{policy} did not finish by slot {}", sc.job.completion_slot));
                }
                if let Some(last) = r.timeline.last() {
                    last_slot = last_slot.max(last.slot + 1);
                }
                PolicyResult {
                    policy,
                    schedule: Some(ExecutedSchedule {
                        window_start: sc.job.arrival_slot,
                        allocations: r.timeline.iter().map(|s| s.granted_servers).collect(),
                    }),
                    metrics: Some(Metrics {
                        carbon_g: r.carbon_g,
                        compute_slot_hours: r.compute_slot_hours,
                        completion_slot: r.completion_slot,
                        met_deadline: r.met_deadline,
                        work_done: r.work_done,
                        recomputations: r.recomputations,
                        denied_servers: r.denied_servers,
                    }),
                    savings_vs_agnostic_pct: agnostic.filter(|a| *a > 0.0).map(|a| 100.0 * (1.0 - r.carbon_g / a)),
                    timeline: r.timeline,
                    error: None,
                }
            }
            Err(e) => {
                warnings.push(format!("{policy}: {e}"));
                PolicyResult {
                    policy,
                    schedule: None,
                    metrics: None,
                    savings_vs_agnostic_pct: None,
                    timeline: Vec::new(),
                    error: Some(e),
                }
            }
        })
        .collect();

    let first = sc.job.arrival_slot;
    Ok(SimulateResponse {
        trace: TraceExcerpt {
            region: sc.trace.region().to_string(),
            first_slot: first,
            start: sc.trace.slot_start(first).to_rfc3339(),
            slot_hours: sc.trace.slot_hours(),
            intensities: sc.trace.intensities()[first..last_slot].to_vec(),
        },
        work_required: work,
        results,
        warnings,
    })
}

/// What a sweep varies: a scenario parameter or the start slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Parameter(Axis),
    StartTime,
}

impl<'de> Deserialize<'de> for SweepAxis {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.replace('-', "_") == "start_time" {
            Ok(SweepAxis::StartTime)
        } else {
            s.parse().map(SweepAxis::Parameter).map_err(serde::de::Error::custom)
        }
    }
}

/// The sweep-only part of a sweep request body; the rest is a
/// [`SimulateRequest`].
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub runs: usize,
}

fn one() -> usize {
    1
}

const SWEEP_KEYS: [&str; 4] = ["axis", "values", "stride", "runs"];

/// Splits a sweep body into its scenario and sweep parts.
pub(crate) fn parse_sweep(bytes: &[u8]) -> Result<(SimulateRequest, SweepSpec), ApiError> {
    let mut value: serde_json::Value = parse_body(bytes)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| ApiError::field("body", "expected a JSON object"))?;
    let mut spec = serde_json::Map::new();
    for key in SWEEP_KEYS {
        if let Some(v) = obj.remove(key) {
            spec.insert(key.to_string(), v);
        }
    }
    let spec_bytes = serde_json::to_vec(&spec).map_err(|e| ApiError::Internal(e.to_string()))?;
    let spec: SweepSpec = parse_body(&spec_bytes)?;
    let scenario_bytes = serde_json::to_vec(&value).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok((parse_body(&scenario_bytes)?, spec))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SweepResponse {
    Parameter(SweepTable),
    StartTime {
        axis: &'static str,
        stride: usize,
        #[serde(flatten)]
        sweep: StartSweep,
    },
}

pub(crate) fn sweep(
    req: &SimulateRequest,
    spec: &SweepSpec,
    library: &TraceLibrary,
    budget: usize,
) -> Result<SweepResponse, ApiError> {
    let sc = req.scenario(library)?;
    if spec.runs == 0 {
        return Err(ApiError::field("runs", "must be at least 1"));
    }
    match spec.axis {
        SweepAxis::Parameter(axis) => {
            if spec.values.is_empty() {
                return Err(ApiError::field("values", "at least one axis value is required"));
            }
            if let Some(v) = spec.values.iter().find(|v| !v.is_finite()) {
                return Err(ApiError::field("values", format!("{v} is not a finite number")));
            }
            let cells = spec.values.len() * sc.policies.len() * spec.runs;
            if cells > budget {
                return Err(ApiError::TooLarge { cells, budget });
            }
            Ok(SweepResponse::Parameter(sim::sweep_parameter(
                &sc.job,
                &sc.curve,
                &sc.trace,
                axis,
                &spec.values,
                &sc.policies,
                &sc.config,
                spec.runs,
            )))
        }
        SweepAxis::StartTime => {
            if spec.stride == 0 {
                return Err(ApiError::field("stride", "must be at least 1"));
            }
            let starts = sc.trace.len().div_ceil(spec.stride);
            let cells = starts * (sc.policies.len() + 1);
            if cells > budget {
                return Err(ApiError::TooLarge { cells, budget });
            }
            let template = JobSpec {
                arrival_slot: 0,
                completion_slot: sc.job.window_len(),
                ..sc.job.clone()
            };
            Ok(SweepResponse::StartTime {
                axis: "start_time",
                stride: spec.stride,
                sweep: sim::sweep_start_times(&template, &sc.curve, &sc.trace, &sc.policies, &sc.config, spec.stride),
            })
        }
    }
}
