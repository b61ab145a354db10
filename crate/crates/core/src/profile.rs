//! Marginal capacity curves and the throughput profiles they are built from.
//!
//! Values are in "baseline units": the minimum allocation of `m` servers does
//! exactly one unit of work per slot, so `MC_m == 1` and a job of length `l`
//! slots needs `l` units. Every `MC_j` for `j > m` is the extra work per slot
//! contributed by the `j`-th server, in the same unit.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound applied to perturbed or extrapolated marginals.
pub const MIN_MARGINAL: f64 = 1e-6;

const MONOTONE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("invalid server bounds: m = {m}, M = {max} (need 1 <= m <= M)")]
    Bounds { m: u32, max: u32 },
    #[error("expected {expected} marginal values for servers {m}..={max}, got {got}")]
    Length {
        m: u32,
        max: u32,
        expected: usize,
        got: usize,
    },
    #[error("first marginal must be 1 (baseline capacity), got {0}")]
    Normalization(f64),
    #[error("marginal for server {server} must be positive and finite, got {value}")]
    NonPositive { server: u32, value: f64 },
    #[error("marginal capacity increases at server counts {servers:?}")]
    NotMonotone { servers: Vec<u32> },
    #[error("throughput profile has no sample for {0} servers")]
    MissingSample(u32),
    #[error("throughput sample at {server} servers is outside [m, M]")]
    SampleOutOfRange { server: u32 },
    #[error("throughput at {server} servers must be positive and finite, got {value}")]
    BadThroughput { server: u32, value: f64 },
    #[error("throughput drops from {prev} to {value} at {server} servers")]
    ThroughputDecreases { server: u32, prev: f64, value: f64 },
    #[error("decay factor {0} outside (0, 1]")]
    Decay(f64),
    #[error("power rating must be positive, got {0} W")]
    Power(f64),
}

/// Measured throughput (work units per slot) at a subset of server counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputProfile {
    samples: BTreeMap<u32, f64>,
    min_servers: u32,
    max_servers: u32,
    /// Minutes each level was run while profiling. Informational only.
    pub alpha_minutes: f64,
    /// Server-count stride between profiled levels.
    pub beta: u32,
}

impl ThroughputProfile {
    pub fn new(min_servers: u32, max_servers: u32, samples: BTreeMap<u32, f64>) -> Result<Self, ProfileError> {
        check_bounds(min_servers, max_servers)?;
        for bound in [min_servers, max_servers] {
            if !samples.contains_key(&bound) {
                return Err(ProfileError::MissingSample(bound));
            }
        }
        let mut prev: Option<f64> = None;
        for (&server, &value) in &samples {
            if server < min_servers || server > max_servers {
                return Err(ProfileError::SampleOutOfRange { server });
            }
            if !(value > 0.0 && value.is_finite()) {
                return Err(ProfileError::BadThroughput { server, value });
            }
            if let Some(p) = prev {
                if value < p {
                    return Err(ProfileError::ThroughputDecreases { server, prev: p, value });
                }
            }
            prev = Some(value);
        }
        let beta = samples
            .keys()
            .zip(samples.keys().skip(1))
            .map(|(a, b)| b - a)
            .max()
            .unwrap_or(1);
        Ok(Self {
            samples,
            min_servers,
            max_servers,
            alpha_minutes: 0.0,
            beta,
        })
    }

    pub fn samples(&self) -> &BTreeMap<u32, f64> {
        &self.samples
    }

    /// Throughput at every level `m..=M`, filling unprofiled levels by linear
    /// interpolation between the nearest profiled neighbours.
    pub fn interpolated(&self) -> Vec<f64> {
        let points: Vec<(u32, f64)> = self.samples.iter().map(|(k, v)| (*k, *v)).collect();
        (self.min_servers..=self.max_servers)
            .map(|j| {
                let hi = points.partition_point(|(s, _)| *s < j);
                let (s1, t1) = points[hi];
                if s1 == j {
                    return t1;
                }
                let (s0, t0) = points[hi - 1];
                t0 + (t1 - t0) * f64::from(j - s0) / f64::from(s1 - s0)
            })
            .collect()
    }

    /// Converts measurements to a normalized marginal capacity curve.
    pub fn to_curve(&self) -> Result<MarginalCapacityCurve, ProfileError> {
        let th = self.interpolated();
        let base = th[0];
        let mut values = Vec::with_capacity(th.len());
        values.push(1.0);
        values.extend(th.windows(2).map(|w| (w[1] - w[0]) / base));
        // Flat throughput segments give zero marginals; keep them strictly positive.
        for v in values.iter_mut() {
            *v = v.max(MIN_MARGINAL);
        }
        MarginalCapacityCurve::new(self.min_servers, self.max_servers, values)
    }
}

/// Constant per-server power draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub per_server_watts: f64,
}

impl PowerModel {
    pub fn new(per_server_watts: f64) -> Result<Self, ProfileError> {
        if per_server_watts > 0.0 && per_server_watts.is_finite() {
            Ok(Self { per_server_watts })
        } else {
            Err(ProfileError::Power(per_server_watts))
        }
    }

    /// kWh drawn by one server over one slot.
    pub fn kwh_per_server_slot(&self, slot_hours: f64) -> f64 {
        self.per_server_watts * slot_hours / 1000.0
    }
}

/// Shape of a generated test curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CurveShape {
    Linear,
    Diminishing { decay: f64 },
}

/// `MC_m..=MC_M` in baseline units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalCapacityCurve {
    min_servers: u32,
    max_servers: u32,
    values: Vec<f64>,
}

/// A curve with noise applied; may violate monotonicity.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedCurve {
    pub curve: MarginalCapacityCurve,
    pub monotone: bool,
}

fn check_bounds(m: u32, max: u32) -> Result<(), ProfileError> {
    if m >= 1 && max >= m {
        Ok(())
    } else {
        Err(ProfileError::Bounds { m, max })
    }
}

impl MarginalCapacityCurve {
    /// Validated constructor: `values[0] == 1`, all positive, non-increasing.
    pub fn new(min_servers: u32, max_servers: u32, values: Vec<f64>) -> Result<Self, ProfileError> {
        let mut curve = Self::unchecked(min_servers, max_servers, values)?;
        if (curve.values[0] - 1.0).abs() > 1e-9 {
            return Err(ProfileError::Normalization(curve.values[0]));
        }
        curve.values[0] = 1.0;
        let bad = curve.monotonicity_violations();
        if !bad.is_empty() {
            return Err(ProfileError::NotMonotone { servers: bad });
        }
        Ok(curve)
    }

    /// Shape and positivity checks only.
    pub(crate) fn unchecked(min_servers: u32, max_servers: u32, values: Vec<f64>) -> Result<Self, ProfileError> {
        check_bounds(min_servers, max_servers)?;
        let expected = (max_servers - min_servers + 1) as usize;
        if values.len() != expected {
            return Err(ProfileError::Length {
                m: min_servers,
                max: max_servers,
                expected,
                got: values.len(),
            });
        }
        for (k, &value) in values.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ProfileError::NonPositive {
                    server: min_servers + k as u32,
                    value,
                });
            }
        }
        Ok(Self {
            min_servers,
            max_servers,
            values,
        })
    }

    pub fn synthetic(shape: CurveShape, min_servers: u32, max_servers: u32) -> Result<Self, ProfileError> {
        check_bounds(min_servers, max_servers)?;
        let n = (max_servers - min_servers + 1) as i32;
        let values = match shape {
            CurveShape::Linear => vec![1.0; n as usize],
            CurveShape::Diminishing { decay } => {
                if !(decay > 0.0 && decay <= 1.0) {
                    return Err(ProfileError::Decay(decay));
                }
                (0..n).map(|k| decay.powi(k)).collect()
            }
        };
        Self::new(min_servers, max_servers, values)
    }

    pub fn min_servers(&self) -> u32 {
        self.min_servers
    }

    pub fn max_servers(&self) -> u32 {
        self.max_servers
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `MC_j`; `j` must lie in `[m, M]`.
    pub fn marginal(&self, servers: u32) -> f64 {
        self.values[(servers - self.min_servers) as usize]
    }

    /// Work per slot at `servers` allocated: `Σ_{j=m}^{servers} MC_j`, zero below `m`.
    pub fn capacity(&self, servers: u32) -> f64 {
        if servers < self.min_servers {
            return 0.0;
        }
        let top = servers.min(self.max_servers);
        self.values[..=(top - self.min_servers) as usize].iter().sum()
    }

    /// Server counts `j` where `MC_j > MC_{j-1}`.
    pub fn monotonicity_violations(&self) -> Vec<u32> {
        self.values
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] > w[0] * (1.0 + MONOTONE_TOL))
            .map(|(k, _)| self.min_servers + k as u32 + 1)
            .collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.monotonicity_violations().is_empty()
    }

    /// Closest non-increasing curve (pool-adjacent-violators), rescaled so the
    /// first value is 1 again.
    pub fn monotonize(&self) -> Self {
        // blocks of (sum, count)
        let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(self.values.len());
        for &v in &self.values {
            blocks.push((v, 1));
            while blocks.len() > 1 {
                let (s1, n1) = blocks[blocks.len() - 1];
                let (s0, n0) = blocks[blocks.len() - 2];
                if s1 / n1 as f64 > s0 / n0 as f64 {
                    blocks.pop();
                    *blocks.last_mut().unwrap() = (s0 + s1, n0 + n1);
                } else {
                    break;
                }
            }
        }
        let mut values: Vec<f64> = blocks
            .iter()
            .flat_map(|&(s, n)| std::iter::repeat_n(s / n as f64, n))
            .collect();
        let first = values[0];
        for v in values.iter_mut() {
            *v /= first;
        }
        values[0] = 1.0;
        Self {
            min_servers: self.min_servers,
            max_servers: self.max_servers,
            values,
        }
    }

    /// Scales each marginal by an independent `1 + u`, `u ~ U[-X%, X%]`, then
    /// renormalizes so the first value is 1. Monotonicity is reported, not enforced.
    pub fn perturb(&self, error_pct: f64, seed: u64) -> PerturbedCurve {
        if error_pct <= 0.0 {
            return PerturbedCurve {
                curve: self.clone(),
                monotone: self.is_monotone(),
            };
        }
        let bound = error_pct / 100.0;
        let mut rng = crate::seeded_rng(seed, 2);
        let mut values: Vec<f64> = self
            .values
            .iter()
            .map(|v| v * (1.0 + rng.random_range(-bound..=bound)))
            .collect();
        let first = values[0].max(MIN_MARGINAL);
        for v in values.iter_mut() {
            *v = (*v / first).max(MIN_MARGINAL);
        }
        values[0] = 1.0;
        let curve = Self {
            min_servers: self.min_servers,
            max_servers: self.max_servers,
            values,
        };
        let monotone = curve.is_monotone();
        PerturbedCurve { curve, monotone }
    }

    /// Same curve restricted to (or, via `extend`, grown to) `max_servers`.
    pub fn truncated(&self, max_servers: u32) -> Result<Self, ProfileError> {
        check_bounds(self.min_servers, max_servers)?;
        let keep = (max_servers - self.min_servers + 1) as usize;
        if keep > self.values.len() {
            return Err(ProfileError::Length {
                m: self.min_servers,
                max: max_servers,
                expected: keep,
                got: self.values.len(),
            });
        }
        Ok(Self {
            min_servers: self.min_servers,
            max_servers,
            values: self.values[..keep].to_vec(),
        })
    }

    /// Replaces the marginal at each listed level with `truth`'s value.
    pub fn corrected_with(&self, truth: &Self, levels: impl IntoIterator<Item = u32>) -> Self {
        let mut out = self.clone();
        for j in levels {
            if j >= self.min_servers && j <= self.max_servers && j <= truth.max_servers {
                out.values[(j - self.min_servers) as usize] = truth.marginal(j);
            }
        }
        out
    }
}
