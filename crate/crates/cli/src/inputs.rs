use std::path::Path;

use anyhow::anyhow;
use carbonscale::fixture::{CurveDocument, CurveRef, JobDocument};
use carbonscale::scheduler::{AccountingMode, SchedError};
use carbonscale::sim::SimError;
use carbonscale::{CarbonTrace, JobSpec, MarginalCapacityCurve, Policy, PowerModel};

use crate::JobArgs;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Validation = 2,
    Infeasible = 3,
    Runtime = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

pub type Outcome<T = ()> = Result<T, Failure>;

pub fn invalid(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        kind: Kind::Validation,
        error: error.into(),
    }
}

pub fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        kind: Kind::Runtime,
        error: error.into(),
    }
}

impl From<SchedError> for Failure {
    fn from(e: SchedError) -> Self {
        let kind = match e {
            SchedError::Infeasible { .. } => Kind::Infeasible,
            _ => Kind::Validation,
        };
        Failure { kind, error: e.into() }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Plan(e) => e.into(),
            other => invalid(other),
        }
    }
}

pub struct Inputs {
    pub trace: CarbonTrace,
    pub job: JobSpec,
    pub curve: MarginalCapacityCurve,
    pub mode: AccountingMode,
}

pub fn curve_ref(arg: &str) -> Outcome<CurveRef> {
    let path = Path::new(arg);
    if path.exists() {
        Ok(CurveRef::Inline(CurveDocument::from_path(path).map_err(invalid)?))
    } else {
        Ok(CurveRef::Preset(arg.to_string()))
    }
}

pub fn load(args: &JobArgs) -> Outcome<Inputs> {
    let trace = CarbonTrace::from_path(&args.trace).map_err(invalid)?;
    let mut doc = JobDocument::from_path(&args.job).map_err(invalid)?;
    if let Some(v) = args.arrival {
        doc.arrival_slot = v;
    }
    if let Some(v) = args.length {
        doc.base_length_slots = v;
    }
    if let Some(v) = args.min_servers {
        doc.min_servers = v;
    }
    if let Some(v) = args.max_servers {
        doc.max_servers = v;
    }
    if let Some(v) = args.completion {
        doc.completion_slot = v;
    }
    let curve = args.curve.as_deref().map(curve_ref).transpose()?;
    let (mut job, loaded) = doc.resolve(curve.as_ref()).map_err(invalid)?;
    if let Some(w) = args.power {
        job.power = Some(PowerModel::new(w).map_err(invalid)?);
    }
    job.validate()?;
    Ok(Inputs {
        trace,
        job,
        curve: loaded.curve,
        mode: args.mode.into(),
    })
}

/// `--policy static --k 3` and `--policy 'static(3)'` are the same.
pub fn policy(name: &str, k: Option<u32>) -> Outcome<Policy> {
    let bare = name.trim().replace('-', "_");
    match (bare.as_str(), k) {
        ("static" | "static_scale", Some(k)) => Ok(Policy::StaticScale { k }),
        ("static" | "static_scale", None) => Err(invalid(anyhow!("policy `{name}` needs --k"))),
        (_, Some(_)) if !bare.starts_with("static") => Err(invalid(anyhow!("--k only applies to the static policy"))),
        _ => name.parse::<Policy>().map_err(invalid),
    }
}
