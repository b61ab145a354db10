//! File formats for curves and jobs, plus a small library of named curves.
//!
//! A curve document carries either raw throughput samples or explicit
//! marginals:
//!
//! ```json
//! {"name": "example-diminishing", "m": 1, "M": 2, "mc": [1.0, 0.7]}
//! {"name": "measured", "m": 1, "M": 4, "throughput": {"1": 10, "2": 18, "4": 30}, "power_watts": 60}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{MarginalCapacityCurve, PowerModel, ProfileError, ThroughputProfile};
use crate::scheduler::JobSpec;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {message}")]
    Parse { context: String, message: String },
    #[error("curve `{name}`: {source}")]
    Curve {
        name: String,
        #[source]
        source: ProfileError,
    },
    #[error("curve `{0}` must give exactly one of `throughput` or `mc`")]
    CurveSource(String),
    #[error("unknown curve preset `{0}`")]
    UnknownPreset(String),
    #[error("job has no curve; pass one inline, by preset name, or separately")]
    MissingCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveDocument {
    #[serde(default)]
    pub name: String,
    pub m: u32,
    #[serde(rename = "M")]
    pub max: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<BTreeMap<u32, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_watts: Option<f64>,
}

/// A validated curve with its optional power rating.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadedCurve {
    pub name: String,
    pub curve: MarginalCapacityCurve,
    pub power: Option<PowerModel>,
}

impl CurveDocument {
    pub fn from_json(text: &str, context: &str) -> Result<Self, FixtureError> {
        parse_json(text, context)
    }

    pub fn from_path(path: &Path) -> Result<Self, FixtureError> {
        let text = read(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn load(&self) -> Result<LoadedCurve, FixtureError> {
        let wrap = |source| FixtureError::Curve {
            name: self.name.clone(),
            source,
        };
        let curve = match (&self.throughput, &self.mc) {
            (Some(samples), None) => ThroughputProfile::new(self.m, self.max, samples.clone())
                .and_then(|p| p.to_curve())
                .map_err(wrap)?,
            (None, Some(mc)) => MarginalCapacityCurve::new(self.m, self.max, mc.clone()).map_err(wrap)?,
            _ => return Err(FixtureError::CurveSource(self.name.clone())),
        };
        let power = self.power_watts.map(PowerModel::new).transpose().map_err(wrap)?;
        Ok(LoadedCurve {
            name: self.name.clone(),
            curve,
            power,
        })
    }
}

/// Either a preset name or an inline document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurveRef {
    Preset(String),
    Inline(CurveDocument),
}

impl CurveRef {
    pub fn load(&self) -> Result<LoadedCurve, FixtureError> {
        match self {
            CurveRef::Preset(name) => preset(name)
                .ok_or_else(|| FixtureError::UnknownPreset(name.clone()))?
                .load(),
            CurveRef::Inline(doc) => doc.load(),
        }
    }
}

/// Job file: the job fields, optionally with its curve and power rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobDocument {
    #[serde(default)]
    pub name: String,
    pub arrival_slot: usize,
    pub base_length_slots: f64,
    pub min_servers: u32,
    pub max_servers: u32,
    pub completion_slot: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_watts: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveRef>,
}

impl JobDocument {
    pub fn from_json(text: &str, context: &str) -> Result<Self, FixtureError> {
        parse_json(text, context)
    }

    pub fn from_path(path: &Path) -> Result<Self, FixtureError> {
        let text = read(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// The job with power resolved: the job's own rating wins over the curve's.
    pub fn job(&self, curve_power: Option<PowerModel>) -> Result<JobSpec, FixtureError> {
        let power = match self.power_watts {
            Some(w) => Some(PowerModel::new(w).map_err(|source| FixtureError::Curve {
                name: self.name.clone(),
                source,
            })?),
            None => curve_power,
        };
        Ok(JobSpec {
            name: self.name.clone(),
            arrival_slot: self.arrival_slot,
            base_length_slots: self.base_length_slots,
            min_servers: self.min_servers,
            max_servers: self.max_servers,
            completion_slot: self.completion_slot,
            power,
        })
    }

    /// Resolves the job and its curve. `curve` overrides the embedded one.
    pub fn resolve(&self, curve: Option<&CurveRef>) -> Result<(JobSpec, LoadedCurve), FixtureError> {
        let loaded = curve
            .or(self.curve.as_ref())
            .ok_or(FixtureError::MissingCurve)?
            .load()?;
        let job = self.job(loaded.power)?;
        Ok((job, loaded))
    }
}

fn read(path: &Path) -> Result<String, FixtureError> {
    std::fs::read_to_string(path).map_err(|source| FixtureError::Read {
        path: path.display().to_string(),
        source,
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, context: &str) -> Result<T, FixtureError> {
    serde_json::from_str(text).map_err(|e| FixtureError::Parse {
        context: context.to_string(),
        message: e.to_string(),
    })
}

fn geometric(name: &str, max: u32, decay: f64, watts: Option<f64>) -> CurveDocument {
    CurveDocument {
        name: name.to_string(),
        m: 1,
        max,
        throughput: None,
        mc: Some((0..max as i32).map(|k| decay.powi(k)).collect()),
        power_watts: watts,
    }
}

pub const PRESET_NAMES: [&str; 7] = [
    "example-flat",
    "example-diminishing",
    "nbody-100k",
    "nbody-10k",
    "resnet18",
    "efficientnet-b1",
    "vgg16",
];

/// Named curves. The two `example-*` curves are the two-server worked example;
/// the workload curves are synthetic stand-ins shaped like the measured ones
/// (near-linear through steeply diminishing) with the listed power ratings.
pub fn preset(name: &str) -> Option<CurveDocument> {
    let doc = match name {
        "example-flat" => CurveDocument {
            name: name.into(),
            m: 1,
            max: 2,
            throughput: None,
            mc: Some(vec![1.0, 1.0]),
            power_watts: None,
        },
        "example-diminishing" => CurveDocument {
            name: name.into(),
            m: 1,
            max: 2,
            throughput: None,
            mc: Some(vec![1.0, 0.7]),
            power_watts: None,
        },
        "nbody-100k" => geometric(name, 8, 0.98, Some(60.0)),
        "nbody-10k" => geometric(name, 8, 0.6, Some(60.0)),
        "resnet18" => geometric(name, 8, 0.97, Some(210.0)),
        "efficientnet-b1" => geometric(name, 8, 0.8, Some(210.0)),
        "vgg16" => geometric(name, 8, 0.5, Some(210.0)),
        _ => return None,
    };
    Some(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_load() {
        for name in PRESET_NAMES {
            let c = preset(name).unwrap().load().unwrap();
            assert!(c.curve.is_monotone(), "{name}");
            assert_eq!(c.curve.values()[0], 1.0);
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn throughput_document() {
        let doc = CurveDocument::from_json(
            r#"{"name": "t", "m": 1, "M": 3, "throughput": {"1": 10, "3": 24}, "power_watts": 60}"#,
            "inline",
        )
        .unwrap();
        let c = doc.load().unwrap();
        assert_eq!(c.curve.values(), &[1.0, 0.7, 0.7]);
        assert_eq!(c.power.unwrap().per_server_watts, 60.0);
    }

    #[test]
    fn bad_documents() {
        let both = r#"{"m": 1, "M": 1, "mc": [1.0], "throughput": {"1": 1}}"#;
        assert!(matches!(
            CurveDocument::from_json(both, "x").unwrap().load(),
            Err(FixtureError::CurveSource(_))
        ));
        let rising = r#"{"m": 1, "M": 2, "mc": [1.0, 1.2]}"#;
        assert!(matches!(
            CurveDocument::from_json(rising, "x").unwrap().load(),
            Err(FixtureError::Curve { .. })
        ));
        assert!(CurveDocument::from_json(r#"{"m": 1, "M": 1, "mc": [1], "extra": 0}"#, "x").is_err());
    }

    #[test]
    fn job_documents() {
        let text = r#"{"arrival_slot": 0, "base_length_slots": 2, "min_servers": 1,
                       "max_servers": 2, "completion_slot": 3, "curve": "example-diminishing"}"#;
        let doc = JobDocument::from_json(text, "job").unwrap();
        let (job, curve) = doc.resolve(None).unwrap();
        assert_eq!(job.completion_slot, 3);
        assert_eq!(curve.curve.values(), &[1.0, 0.7]);
        assert!(job.power.is_none());

        let nbody = CurveRef::Preset("nbody-100k".into());
        let (job, _) = doc.resolve(Some(&nbody)).unwrap();
        assert_eq!(job.power.unwrap().per_server_watts, 60.0);

        let missing = JobDocument {
            curve: None,
            ..doc.clone()
        };
        assert!(matches!(missing.resolve(None), Err(FixtureError::MissingCurve)));
        let unknown = CurveRef::Preset("warp".into());
        assert!(matches!(
            doc.resolve(Some(&unknown)),
            Err(FixtureError::UnknownPreset(_))
        ));
    }
}
