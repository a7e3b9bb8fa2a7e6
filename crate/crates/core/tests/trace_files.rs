mod common;

use std::io::Write;

use carbon_sched::model::intensity_to_trace_units;
use carbon_sched::{load_trace, Error};

fn write(contents: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(contents.as_bytes()).unwrap();
    f
}

#[test]
fn bundled_trace_is_valid() {
    let t = load_trace(&common::bundled_trace()).unwrap();
    assert_eq!(t.regions.len(), 5);
    assert!(t.slots() >= 1500);
    // the dirtiest region backs the cloud
    let map = t.map_regions(5);
    let means: Vec<f64> = (0..5).map(|r| t.region_mean(r)).collect();
    assert!(means.iter().all(|m| *m <= means[map[0]]));
    let mut edges = map[1..].to_vec();
    edges.sort();
    edges.dedup();
    assert_eq!(edges.len(), 4);
    for series in &t.intensity {
        assert!(series.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn two_row_file_round_trips_units() {
    let f = write("timestamp,region_id,intensity_g_per_kwh\n2022-03-01T00:00:00Z,x,350\n2022-03-01T00:30:00Z,x,0\n");
    let t = load_trace(f.path()).unwrap();
    assert_eq!(t.slots(), 2);
    assert!((intensity_to_trace_units(t.intensity[0][0]) - 350.0).abs() < 1e-9);
    assert_eq!(t.intensity[0][1], 0.0);
}

#[test]
fn errors_name_file_and_line() {
    let f = write("timestamp,region_id,intensity_g_per_kwh\n2022-03-01T00:00:00Z,x,1\n2022-03-01T00:45:00Z,x,1\n");
    match load_trace(f.path()) {
        Err(Error::Validation(msg)) => {
            assert!(msg.contains("line 3"), "{msg}");
            assert!(msg.contains(&f.path().display().to_string()), "{msg}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_trace(&dir.path().join("nope.csv")), Err(Error::Io { .. })));
}

#[test]
fn short_rows_rejected() {
    let f = write("timestamp,region_id,intensity_g_per_kwh\n2022-03-01T00:00:00Z,x\n");
    assert!(load_trace(f.path()).is_err());
}
