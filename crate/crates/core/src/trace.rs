//! Grid carbon-intensity traces.
//!
//! A [`CarbonTrace`] is one region's intensity series at a fixed slot spacing.
//! Every other module addresses time in whole slots relative to the trace
//! origin; the slot duration only matters when energy is converted to grams.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, TimeDelta, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Header line of the trace CSV format.
pub const CSV_HEADER: [&str; 2] = ["timestamp", "carbon_intensity_avg"];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("empty trace")]
    Empty,
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("slice of {len} slots at offset {start} exceeds trace of {available} slots")]
    OutOfBounds { start: usize, len: usize, available: usize },
    #[error("invalid trace: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<TraceError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Carbon intensity (gCO2eq/kWh) per slot for a single region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarbonTrace {
    region: String,
    start: DateTime<Utc>,
    #[serde(rename = "slot_duration_secs", serialize_with = "ser_secs")]
    slot_duration: TimeDelta,
    intensities: Vec<f64>,
}

fn ser_secs<S: serde::Serializer>(d: &TimeDelta, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_i64(d.num_seconds())
}

/// Summary statistics used to rank regions by how much there is to shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub mean: f64,
    pub std_dev: f64,
    pub coefficient_of_variation: f64,
}

impl CarbonTrace {
    pub fn new(
        region: impl Into<String>,
        start: DateTime<Utc>,
        slot_duration: TimeDelta,
        intensities: Vec<f64>,
    ) -> Result<Self, TraceError> {
        if intensities.is_empty() {
            return Err(TraceError::Empty);
        }
        if slot_duration <= TimeDelta::zero() {
            return Err(TraceError::Invalid("slot duration must be positive".into()));
        }
        if let Some(i) = intensities.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(TraceError::Invalid(format!(
                "slot {i} has intensity {} (must be finite and non-negative)",
                intensities[i]
            )));
        }
        Ok(Self {
            region: region.into(),
            start,
            slot_duration,
            intensities,
        })
    }

    /// Hourly trace anchored at the Unix epoch; handy for synthetic data.
    pub fn hourly(region: impl Into<String>, intensities: Vec<f64>) -> Result<Self, TraceError> {
        Self::new(region, DateTime::UNIX_EPOCH, TimeDelta::hours(1), intensities)
    }

    pub fn region(&self) -> &str {
        &self.region
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn slot_duration(&self) -> TimeDelta {
        self.slot_duration
    }

    /// Slot length in hours, used for kWh and compute-hour conversions.
    pub fn slot_hours(&self) -> f64 {
        self.slot_duration.num_milliseconds() as f64 / 3_600_000.0
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    /// Timestamp at which `slot` begins.
    pub fn slot_start(&self, slot: usize) -> DateTime<Utc> {
        self.start + self.slot_duration * slot as i32
    }

    pub fn with_region(mut self, region: impl Into<String>) -> Self {
        self.region = region.into();
        self
    }

    /// Parses the trace CSV format. The region name is not part of the file.
    pub fn parse_csv<R: Read>(region: &str, input: R) -> Result<Self, TraceError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(input);

        let mut records = reader.records();
        let header = match records.next() {
            None => return Err(TraceError::Empty),
            Some(r) => r?,
        };
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(TraceError::Parse {
                line: 1,
                reason: format!("expected header `{}`", CSV_HEADER.join(",")),
            });
        }

        let mut stamps: Vec<DateTime<Utc>> = Vec::new();
        let mut values = Vec::new();
        for record in records {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() == 1 && record.get(0) == Some("") {
                continue;
            }
            let err = |reason: String| TraceError::Parse { line, reason };
            if record.len() != 2 {
                return Err(err(format!("expected 2 fields, found {}", record.len())));
            }
            let ts = DateTime::parse_from_rfc3339(&record[0])
                .map_err(|e| err(format!("bad timestamp `{}`: {e}", &record[0])))?
                .with_timezone(&Utc);
            let value: f64 = record[1]
                .parse()
                .map_err(|_| err(format!("bad intensity `{}`", &record[1])))?;
            if !value.is_finite() || value < 0.0 {
                return Err(err(format!("intensity {value} must be finite and non-negative")));
            }
            if let Some(prev) = stamps.last() {
                if ts <= *prev {
                    return Err(err("timestamps must be strictly increasing".into()));
                }
                let spacing = ts - *prev;
                if stamps.len() >= 2 {
                    let expected = stamps[1] - stamps[0];
                    if spacing != expected {
                        return Err(err(format!(
                            "slot spacing {}s differs from {}s",
                            spacing.num_seconds(),
                            expected.num_seconds()
                        )));
                    }
                }
            }
            stamps.push(ts);
            values.push(value);
        }

        let Some(&start) = stamps.first() else {
            return Err(TraceError::Empty);
        };
        let slot = if stamps.len() >= 2 {
            stamps[1] - stamps[0]
        } else {
            TimeDelta::hours(1)
        };
        Self::new(region, start, slot, values)
    }

    /// Reads a trace file; the region is the file stem.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref();
        let region = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let wrap = |e: TraceError| TraceError::File {
            path: path.display().to_string(),
            source: Box::new(e),
        };
        let file = std::fs::File::open(path).map_err(|e| wrap(e.into()))?;
        Self::parse_csv(&region, std::io::BufReader::new(file)).map_err(wrap)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TraceError> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(CSV_HEADER)?;
        for (i, v) in self.intensities.iter().enumerate() {
            let ts = self.slot_start(i).to_rfc3339_opts(SecondsFormat::AutoSi, true);
            writer.write_record([ts, v.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Population mean, population standard deviation and their ratio.
    pub fn region_stats(&self) -> RegionStats {
        let n = self.intensities.len() as f64;
        let mean = self.intensities.iter().sum::<f64>() / n;
        let var = self.intensities.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std_dev = var.sqrt();
        let coefficient_of_variation = if mean > 0.0 { std_dev / mean } else { 0.0 };
        RegionStats {
            mean,
            std_dev,
            coefficient_of_variation,
        }
    }

    pub fn slice(&self, start_slot: usize, len: usize) -> Result<Self, TraceError> {
        let end = start_slot.checked_add(len);
        if len == 0 || end.is_none_or(|e| e > self.len()) {
            return Err(TraceError::OutOfBounds {
                start: start_slot,
                len,
                available: self.len(),
            });
        }
        Ok(Self {
            region: self.region.clone(),
            start: self.slot_start(start_slot),
            slot_duration: self.slot_duration,
            intensities: self.intensities[start_slot..start_slot + len].to_vec(),
        })
    }

    /// Multiplies every slot by an independent `1 + u`, `u ~ U[-X%, X%]`,
    /// clamping at zero.
    pub fn perturb_forecast(&self, error_pct: f64, seed: u64) -> Result<Self, TraceError> {
        self.perturb_range(error_pct, seed, 0)
    }

    /// Like [`perturb_forecast`](Self::perturb_forecast) but leaves the first
    /// `keep` slots untouched.
    pub fn perturb_range(&self, error_pct: f64, seed: u64, keep: usize) -> Result<Self, TraceError> {
        if !(error_pct >= 0.0 && error_pct.is_finite()) {
            return Err(TraceError::Invalid(format!(
                "forecast error {error_pct}% must be a non-negative number"
            )));
        }
        let mut out = self.clone();
        if error_pct == 0.0 {
            return Ok(out);
        }
        let bound = error_pct / 100.0;
        let mut rng = crate::seeded_rng(seed, 1);
        for v in out.intensities.iter_mut().skip(keep) {
            let u: f64 = rng.random_range(-bound..=bound);
            *v = (*v * (1.0 + u)).max(0.0);
        }
        Ok(out)
    }

    /// Nearest-rank percentile over `slots`; `p` in `[0, 100]`.
    pub fn percentile(&self, slots: std::ops::Range<usize>, p: f64) -> f64 {
        nearest_rank(&self.intensities[slots], p)
    }

    /// Replaces the values from `from` onwards; callers keep them finite and non-negative.
    pub(crate) fn overwrite_from(&mut self, from: usize, values: &[f64]) {
        self.intensities[from..].copy_from_slice(values);
    }
}

/// Nearest-rank percentile: the smallest value with at least `p`% of the data
/// at or below it.
pub fn nearest_rank(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty set");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p.clamp(0.0, 100.0) / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(rows: &[(&str, &str)]) -> String {
        let mut s = String::from("timestamp,carbon_intensity_avg\n");
        for (t, v) in rows {
            s.push_str(&format!("{t},{v}\n"));
        }
        s
    }

    #[test]
    fn parses_two_hourly_rows() {
        let text = csv(&[("2022-01-01T00:00:00Z", "10.0"), ("2022-01-01T01:00:00Z", "100.0")]);
        let t = CarbonTrace::parse_csv("x", text.as_bytes()).unwrap();
        assert_eq!(t.intensities(), &[10.0, 100.0]);
        assert_eq!(t.slot_duration(), TimeDelta::hours(1));
        assert_eq!(t.slot_hours(), 1.0);
    }

    #[test]
    fn empty_input_is_rejected() {
        let err = CarbonTrace::parse_csv("x", "".as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "empty trace");
        let err = CarbonTrace::parse_csv("x", "timestamp,carbon_intensity_avg\n".as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "empty trace");
    }

    #[test]
    fn negative_intensity_names_line() {
        let text = csv(&[("2022-01-01T00:00:00Z", "10"), ("2022-01-01T01:00:00Z", "-5")]);
        let err = CarbonTrace::parse_csv("x", text.as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn rejects_gaps_and_disorder() {
        let gap = csv(&[
            ("2022-01-01T00:00:00Z", "1"),
            ("2022-01-01T01:00:00Z", "1"),
            ("2022-01-01T03:00:00Z", "1"),
        ]);
        assert!(matches!(
            CarbonTrace::parse_csv("x", gap.as_bytes()),
            Err(TraceError::Parse { line: 4, .. })
        ));
        let back = csv(&[("2022-01-01T01:00:00Z", "1"), ("2022-01-01T00:00:00Z", "1")]);
        assert!(matches!(
            CarbonTrace::parse_csv("x", back.as_bytes()),
            Err(TraceError::Parse { line: 3, .. })
        ));
        let junk = csv(&[("2022-01-01T00:00:00Z", "abc")]);
        assert!(matches!(
            CarbonTrace::parse_csv("x", junk.as_bytes()),
            Err(TraceError::Parse { line: 2, .. })
        ));
        let header = "time,ci\n2022-01-01T00:00:00Z,1\n";
        assert!(matches!(
            CarbonTrace::parse_csv("x", header.as_bytes()),
            Err(TraceError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn quarter_hour_spacing() {
        let text = csv(&[
            ("2022-01-01T00:00:00Z", "1"),
            ("2022-01-01T00:15:00Z", "2"),
            ("2022-01-01T00:30:00Z", "3"),
        ]);
        let t = CarbonTrace::parse_csv("x", text.as_bytes()).unwrap();
        assert_eq!(t.slot_hours(), 0.25);
    }

    #[test]
    fn stats_hand_computed() {
        let t = CarbonTrace::hourly("x", vec![10.0, 100.0, 20.0]).unwrap();
        let s = t.region_stats();
        assert!((s.mean - 130.0 / 3.0).abs() < 1e-12);
        // population variance = (33.33^2 + 56.67^2 + 23.33^2) / 3 = 1622.22
        assert!((s.std_dev - 40.27681991198191).abs() < 1e-9);
        assert!((s.coefficient_of_variation - 0.929465074891890).abs() < 1e-9);

        let flat = CarbonTrace::hourly("x", vec![50.0; 3]).unwrap().region_stats();
        assert_eq!(flat.coefficient_of_variation, 0.0);
        let zero = CarbonTrace::hourly("x", vec![0.0; 3]).unwrap().region_stats();
        assert_eq!((zero.mean, zero.coefficient_of_variation), (0.0, 0.0));
    }

    #[test]
    fn slicing() {
        let t = CarbonTrace::hourly("x", vec![10.0, 100.0, 20.0]).unwrap();
        let s = t.slice(1, 2).unwrap();
        assert_eq!(s.intensities(), &[100.0, 20.0]);
        assert_eq!(s.start(), t.start() + TimeDelta::hours(1));
        assert_eq!(t.slice(0, 3).unwrap(), t);
        assert!(matches!(t.slice(3, 1), Err(TraceError::OutOfBounds { .. })));
        assert!(t.slice(usize::MAX, 2).is_err());
    }

    #[test]
    fn perturbation_identity_and_determinism() {
        let t = CarbonTrace::hourly("x", vec![10.0, 100.0, 20.0, 0.0]).unwrap();
        assert_eq!(t.perturb_forecast(0.0, 9).unwrap(), t);
        let a = t.perturb_forecast(30.0, 7).unwrap();
        let b = t.perturb_forecast(30.0, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, t.perturb_forecast(30.0, 8).unwrap());
        for (p, v) in a.intensities().iter().zip(t.intensities()) {
            assert!(*p >= v * 0.7 - 1e-12 && *p <= v * 1.3 + 1e-12);
        }
        assert!(t.perturb_forecast(-1.0, 1).is_err());
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v = [10.0, 100.0, 20.0, 15.0];
        assert_eq!(nearest_rank(&v, 50.0), 15.0);
        assert_eq!(nearest_rank(&v, 100.0), 100.0);
        assert_eq!(nearest_rank(&v, 0.0), 10.0);
        assert_eq!(nearest_rank(&v, 25.0), 10.0);
        assert_eq!(nearest_rank(&v, 26.0), 15.0);
    }
}
