use std::path::{Path, PathBuf};

use carbonscale::fixture::{preset, CurveDocument, CurveRef, JobDocument, PRESET_NAMES};
use carbonscale::CarbonTrace;

fn dir(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn files(rel: &str, ext: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir(rel))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    out.sort();
    out
}

#[test]
fn every_curve_fixture_loads() {
    let curves = files("curves", "json");
    assert!(curves.len() >= 5);
    for path in curves {
        let doc = CurveDocument::from_path(&path).unwrap();
        let loaded = doc.load().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(loaded.curve.is_monotone(), "{}", path.display());
        assert_eq!(loaded.curve.marginal(loaded.curve.min_servers()), 1.0);
    }
}

#[test]
fn every_trace_fixture_loads() {
    let traces = files("traces", "csv");
    assert_eq!(traces.len(), 4);
    for path in traces {
        let trace = CarbonTrace::from_path(&path).unwrap();
        assert_eq!(trace.len(), 168, "{}", path.display());
        assert_eq!(trace.slot_hours(), 1.0);
        assert!(trace.intensities().iter().all(|v| *v > 0.0));
    }
}

#[test]
fn worked_example_fixture_resolves() {
    let doc = JobDocument::from_path(&dir("worked-example/job.json")).unwrap();
    let (job, loaded) = doc.resolve(None).unwrap();
    assert_eq!(job.base_length_slots, 2.0);
    assert_eq!(job.completion_slot, 3);
    assert_eq!(loaded.curve.values(), &[1.0, 0.7]);

    let flat = CurveRef::Inline(CurveDocument::from_path(&dir("worked-example/curve-flat.json")).unwrap());
    let (_, loaded) = doc.resolve(Some(&flat)).unwrap();
    assert_eq!(loaded.curve.values(), &[1.0, 1.0]);

    let trace = CarbonTrace::from_path(dir("worked-example/trace.csv")).unwrap();
    assert_eq!(trace.intensities(), &[10.0, 100.0, 20.0]);
}

#[test]
fn presets_are_listed_and_load() {
    for name in PRESET_NAMES {
        let doc = preset(name).unwrap();
        doc.load().unwrap();
        assert!(CurveRef::Preset(name.to_string()).load().is_ok());
    }
    assert!(preset("nope").is_none());
    assert!(CurveRef::Preset("nope".into()).load().is_err());
}
