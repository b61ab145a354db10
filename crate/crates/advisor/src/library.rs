use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use carbonscale::CarbonTrace;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("trace directory {path}: {source}")]
    Dir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trace directory {0} is not a directory")]
    NotADir(PathBuf),
}

/// A trace file that was present but could not be parsed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadFailure {
    pub file: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionSummary {
    pub region: String,
    pub slots: usize,
    pub start: String,
    pub mean: f64,
    pub std_dev: f64,
    pub cov: f64,
}

/// Read-only set of regional traces, keyed by file stem.
#[derive(Debug, Clone, Default)]
pub struct TraceLibrary {
    traces: BTreeMap<String, CarbonTrace>,
    failures: Vec<LoadFailure>,
}

impl TraceLibrary {
    pub fn from_traces(traces: impl IntoIterator<Item = CarbonTrace>) -> Self {
        Self {
            traces: traces.into_iter().map(|t| (t.region().to_string(), t)).collect(),
            failures: Vec::new(),
        }
    }

    /// Loads every `*.csv` in `dir`. Files that fail to parse are remembered
    /// and reported by [`regions`](Self::regions) rather than aborting startup.
    pub fn load_dir(dir: &Path) -> Result<Self, LibraryError> {
        let meta = std::fs::metadata(dir).map_err(|source| LibraryError::Dir {
            path: dir.to_path_buf(),
            source,
        })?;
        if !meta.is_dir() {
            return Err(LibraryError::NotADir(dir.to_path_buf()));
        }
        let entries = std::fs::read_dir(dir).map_err(|source| LibraryError::Dir {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
            .collect();
        files.sort();

        let mut lib = Self::default();
        for file in files {
            match CarbonTrace::from_path(&file) {
                Ok(trace) => {
                    lib.traces.insert(trace.region().to_string(), trace);
                }
                Err(e) => lib.failures.push(LoadFailure {
                    file: file.display().to_string(),
                    message: e.to_string(),
                }),
            }
        }
        Ok(lib)
    }

    pub fn get(&self, region: &str) -> Option<&CarbonTrace> {
        self.traces.get(region)
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn failures(&self) -> &[LoadFailure] {
        &self.failures
    }

    /// Regions sorted by mean intensity, lowest first.
    pub fn regions(&self) -> Result<Vec<RegionSummary>, &LoadFailure> {
        if let Some(f) = self.failures.first() {
            return Err(f);
        }
        let mut out: Vec<RegionSummary> = self
            .traces
            .values()
            .map(|t| {
                let s = t.region_stats();
                RegionSummary {
                    region: t.region().to_string(),
                    slots: t.len(),
                    start: t.start().to_rfc3339(),
                    mean: s.mean,
                    std_dev: s.std_dev,
                    cov: s.coefficient_of_variation,
                }
            })
            .collect();
        out.sort_by(|a, b| a.mean.total_cmp(&b.mean).then_with(|| a.region.cmp(&b.region)));
        Ok(out)
    }
}
