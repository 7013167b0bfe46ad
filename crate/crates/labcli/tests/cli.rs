//! End-to-end checks of the `mvlab` binary: exit codes, the output file
//! contract, plot/table consistency, and report-mode reproduction.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mvlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

fn qv_only_scenario() -> &'static str {
    r#"
name = "one"
dimension = 1
seed = 11
replications = 2
horizon = 0.1
dt = 0.01
n_ladder = [16]
delta_ladder = [0.5]

[coefficients]
drift = "zero"
sigma = 1.0
sigma_bar = 0.0

[init]
kind = "gaussian"
std = 1.0

[grid]
half_width = 6.0
resolution = 64

[test_functions]
hermite = [2]

[diagnostics]
qv = true
"#
}

#[test]
fn missing_and_invalid_configs_exit_one() {
    let out = mvlab(&["validate", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "name = \"x\"\nnot toml at all [");
    let out = mvlab(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    // Parses but violates the ladder ordering rule.
    let body = qv_only_scenario().replace("n_ladder = [16]", "n_ladder = [32, 16]");
    let unordered = write_config(dir.path(), "unordered.toml", &body);
    let out = mvlab(&["validate", unordered.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_ladder"));
}

#[test]
fn validate_prints_the_grid_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "ok.toml", qv_only_scenario());
    let out = mvlab(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("valid"));
    assert!(stdout.contains("1 x 1"));
}

#[test]
fn single_cell_study_emits_exactly_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "one.toml", qv_only_scenario());
    let out_dir = dir.path().join("out");
    let out = mvlab(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    // One diagnostic, one cell, no common noise: the raw paths, the one
    // table, and the manifest, nothing else.
    assert_eq!(
        listing(&out_dir),
        vec!["manifest.json", "qv_one.csv", "raw_one_n16_k0.csv"]
    );
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"status\": \"ok\""));

    // With common noise switched on, the shared path joins the export.
    let noisy = qv_only_scenario().replace("sigma_bar = 0.0", "sigma_bar = 0.5");
    let path = write_config(dir.path(), "noisy.toml", &noisy);
    let noisy_dir = dir.path().join("noisy");
    let out = mvlab(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        noisy_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        listing(&noisy_dir),
        vec![
            "common_one_n16_k0.csv",
            "manifest.json",
            "qv_one.csv",
            "raw_one_n16_k0.csv"
        ]
    );
}

#[test]
fn disabled_diagnostics_leave_only_the_manifest() {
    let body = qv_only_scenario().replace("qv = true", "qv = false");
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "quiet.toml", &body);
    let out_dir = dir.path().join("out");
    let out = mvlab(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(listing(&out_dir), vec!["manifest.json"]);
}

#[test]
fn a_blowing_up_study_exits_two_and_records_the_failure() {
    let body = r#"
name = "boom"
dimension = 1
seed = 3
replications = 1
horizon = 1.0
dt = 0.5
n_ladder = [8]
delta_ladder = [0.5]

[coefficients]
drift = "constant"
drift_scale = 1e308
sigma = 1.0
sigma_bar = 0.0

[init]
kind = "point"
mean = 1.7e308

[grid]
half_width = 6.0
resolution = 64

[test_functions]
hermite = [1]

[diagnostics]
qv = true
"#;
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "boom.toml", body);
    let out_dir = dir.path().join("out");
    let out = mvlab(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "stdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"status\": \"failed\""));
    assert!(manifest.contains("\"stage\": \"cell\""));
}

#[test]
fn svg_axis_ranges_match_the_csv_extremes() {
    let body = r#"
name = "curves"
dimension = 1
seed = 5
replications = 2
horizon = 0.2
dt = 0.01
n_ladder = [16, 32]
delta_ladder = [0.5]

[coefficients]
drift = "zero"
sigma = 1.0
sigma_bar = 0.0

[init]
kind = "gaussian"
std = 1.0

[grid]
half_width = 6.0
resolution = 64

[test_functions]

[diagnostics]
regularity = true

[output]
directory = "out"
formats = ["csv", "svg"]
"#;
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "curves.toml", body);
    let out_dir = dir.path().join("out");
    let out = mvlab(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let csv = fs::read_to_string(out_dir.join("regularity_curves.csv")).unwrap();
    let mut ts: Vec<f64> = Vec::new();
    let mut norms: Vec<f64> = Vec::new();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        ts.push(cols[4].parse().unwrap());
        norms.push(cols[5].parse().unwrap());
    }
    assert!(ts.len() >= 8, "expected a real curve, got {} rows", ts.len());
    let fold = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(*x), hi.max(*x))
            })
    };
    let (t_lo, t_hi) = fold(&ts);
    let (y_lo, y_hi) = fold(&norms);

    let svg = fs::read_to_string(out_dir.join("regularity_curves.svg")).unwrap();
    assert!(svg.contains(&format!("data-x-min=\"{t_lo}\"")), "{svg:.200}");
    assert!(svg.contains(&format!("data-x-max=\"{t_hi}\"")));
    assert!(svg.contains(&format!("data-y-min=\"{y_lo}\"")));
    assert!(svg.contains(&format!("data-y-max=\"{y_hi}\"")));
}

#[test]
fn report_rebuilds_byte_identical_tables_from_raw_paths() {
    let body = r#"
name = "redo"
dimension = 1
seed = 9
replications = 3
horizon = 0.1
dt = 0.01
n_ladder = [16, 32]
delta_ladder = [0.5]

[coefficients]
drift = "convolution_kernel"
sigma = 1.0
sigma_bar = 0.5

[init]
kind = "gaussian"
std = 1.0

[grid]
half_width = 6.0
resolution = 64

[test_functions]
hermite = [2]

[diagnostics]
martingale = true
qv = true
distances = true
"#;
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "redo.toml", body);
    let out_dir = dir.path().join("out");
    let out = mvlab(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let tables = [
        "martingale_redo.csv",
        "qv_redo.csv",
        "distances_redo.csv",
        "manifest.json",
    ];
    let mut originals: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for name in tables {
        originals.insert(name, fs::read(out_dir.join(name)).unwrap());
        fs::remove_file(out_dir.join(name)).unwrap();
    }

    let out = mvlab(&[
        "report",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for (name, bytes) in &originals {
        let rebuilt = fs::read(out_dir.join(name)).unwrap();
        assert_eq!(&rebuilt, bytes, "{name} changed across the rebuild");
    }
}

#[test]
fn seed_override_changes_the_manifest_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "one.toml", qv_only_scenario());
    let out_dir = dir.path().join("out");
    let out = mvlab(&[
        "run",
        path.to_str().unwrap(),
        "--seed",
        "4242",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 4242"));
}
