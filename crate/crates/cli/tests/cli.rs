use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aoaloc::sim::report::{read_metrics, read_records, read_rows};
use aoaloc_cli::commands::{records_path, CrlbRow, FailureRow, RaytraceRow, SeedCountRow};
use tempfile::TempDir;

fn run(dir: &Path, config: &str, extra: &[&str]) -> Output {
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_aoaloc"))
        .arg("--config")
        .arg(&path)
        .args(extra)
        .output()
        .unwrap()
}

fn run_to(dir: &Path, config: &str, name: &str) -> PathBuf {
    let out = dir.join(name);
    let o = run(dir, config, &["--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn error_record(o: &Output) -> serde_json::Value {
    assert!(!o.status.success());
    serde_json::from_slice(&o.stderr).unwrap()
}

#[test]
fn minimal_los_config_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = "command = \"simulate-los\"\nn = 8\nsigma_deg = 2\ntrials = 1000\nseed = 7\n";
    let out = run_to(dir.path(), cfg, "los.csv");
    let cells = read_metrics(std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(cells.len(), 1);
    assert_eq!(cells[0].trial_count, 1000);
    assert!((cells[0].rms_error / cells[0].crlb_rms - 1.0).abs() < 0.1);
    let records = read_records(std::fs::File::open(records_path(&out)).unwrap()).unwrap();
    assert_eq!(records.len(), 1000);
}

#[test]
fn out_of_range_alpha_is_named() {
    let dir = TempDir::new().unwrap();
    let cfg = "command = \"simulate-nlos\"\nn = 8\nsigma_deg = 2\ntrials = 10\nalpha = 1.5\n";
    let e = error_record(&run(dir.path(), cfg, &[]));
    assert_eq!(e["error"], "ValidationError");
    assert_eq!(e["key"], "alpha");
}

#[test]
fn missing_command_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let e = error_record(&run(dir.path(), "n = 8\nsigma_deg = 2\n", &[]));
    assert_eq!(e["error"], "ParseError");
    assert_eq!(e["key"], "command");
    let e = error_record(&run(dir.path(), "command = [\n", &[]));
    assert_eq!(e["error"], "ParseError");
}

#[test]
fn failure_table_matches_the_closed_form() {
    let dir = TempDir::new().unwrap();
    let cfg = "command = \"failure-prob\"\nn = 8\nalpha = 0.25\nm_min = 1\nm_max = 13\n";
    let out = run_to(dir.path(), cfg, "fp.csv");
    let rows: Vec<FailureRow> = read_rows(std::fs::File::open(out).unwrap()).unwrap();
    assert_eq!(rows.len(), 13);
    assert_eq!(rows[0].m, 1);
    assert!((rows[0].exact - 13.0 / 28.0).abs() < 1e-12);
    assert_eq!(format!("{:.4}", rows[0].exact), "0.4643");
    // All 13 outlier pairs drawn: 1 / C(28, 13).
    assert!((rows[12].exact * 37_442_160.0 - 1.0).abs() < 1e-9, "{}", rows[12].exact);
    for r in &rows {
        assert!(r.lower <= r.exact + 1e-15 && r.exact <= r.upper + 1e-15, "{r:?}");
    }
}

#[test]
fn crlb_map_peaks_at_the_center() {
    let dir = TempDir::new().unwrap();
    let out = run_to(dir.path(), "command = \"crlb-map\"\nn = 8\nsigma_deg = 2\n", "map.csv");
    let rows: Vec<CrlbRow> = read_rows(std::fs::File::open(out).unwrap()).unwrap();
    assert_eq!(rows.len(), 41 * 41);
    let cell = rows[1].x - rows[0].x;
    let peak = rows.iter().max_by(|a, b| a.crlb_trace.total_cmp(&b.crlb_trace)).unwrap();
    assert!(peak.x.abs() <= cell + 1e-12 && peak.y.abs() <= cell + 1e-12, "{peak:?}");
    let sigma = 2f64.to_radians();
    assert!((peak.crlb_trace / (4.0 * sigma * sigma / 8.0) - 1.0).abs() < 1e-9);
}

#[test]
fn choose_m_reports_both_modes() {
    let dir = TempDir::new().unwrap();
    let cfg = "command = \"choose-m\"\nn = 8\nalpha = 0.25\ntarget_pfail = 0.001\n";
    let o = run(dir.path(), cfg, &[]);
    assert!(o.status.success());
    let rows: Vec<SeedCountRow> = read_rows(o.stdout.as_slice()).unwrap();
    let modes: Vec<&str> = rows.iter().map(|r| r.mode.as_str()).collect();
    assert_eq!(modes, ["exact", "bound"]);
    assert_eq!(rows[0].m, 8);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = "command = \"simulate-nlos\"\nn = [6, 8]\nsigma_deg = 2\ntrials = 50\nalpha = [0, 0.25]\n\
               outliers = \"bernoulli\"\nseed = 3\n";
    let a = run_to(dir.path(), cfg, "a.csv");
    let b = dir.path().join("b.csv");
    let o = run(dir.path(), cfg, &["--out", b.to_str().unwrap(), "--threads", "2"]);
    assert!(o.status.success());
    for (x, y) in [(a.clone(), b.clone()), (records_path(&a), records_path(&b))] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let c = dir.path().join("c.csv");
    assert!(run(dir.path(), cfg, &["--out", c.to_str().unwrap(), "--seed", "4"]).status.success());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn raytrace_rows_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = "command = \"raytrace\"\nscene = \"narrowband\"\ntrials = 50\n";
    let out = run_to(dir.path(), cfg, "rt.csv");
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "source,x,y,mode,rms,pruned");
    let rows: Vec<RaytraceRow> = read_rows(text.as_bytes()).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.source.as_str()).collect();
    assert_eq!(names, ["A", "B", "C", "D"]);
    let mut again = Vec::new();
    aoaloc::sim::report::write_rows(&mut again, &rows).unwrap();
    assert_eq!(String::from_utf8(again).unwrap(), text);
}
