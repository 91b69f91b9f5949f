use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use canalnav_core::commands::result_files;
use canalnav_core::dynamics::{Param, ParamSet};
use canalnav_core::io::{parse_params, read_segments, write_point_cloud, write_trial_file};
use canalnav_core::perception::PointCloud;
use canalnav_core::sysid::{generate_trial, TrialSpec};

fn canalnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canalnav"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_trials(dir: &Path, kinds: &[TrialSpec]) -> PathBuf {
    let truth = ParamSet::simulation_boat();
    let mut cfg = String::new();
    for (i, spec) in kinds.iter().enumerate() {
        let d = generate_trial(spec, &truth, [0.0; 6], 0).unwrap();
        let name = format!("trial{i}.csv");
        write_trial_file(&dir.join(&name), &d).unwrap();
        cfg.push_str(&format!(
            "[[trial]]\nkind = \"{}\"\nfile = \"{name}\"\n\n",
            spec.kind().as_str()
        ));
    }
    // start from the truth scaled by 1.4 so the fit has work to do
    let mut guess = truth;
    for p in Param::ALL {
        guess.set(p, truth.get(p) * 1.4);
    }
    guess.c = truth.c;
    canalnav_core::io::write_params(&dir.join("guess.txt"), &guess).unwrap();
    let path = dir.join("sysid.toml");
    fs::write(&path, format!("initial_params = \"guess.txt\"\n\n{cfg}")).unwrap();
    path
}

fn wall_cloud(walls: &[([f64; 2], [f64; 2])], z: f64) -> PointCloud {
    let mut pts = Vec::new();
    for (a, b) in walls {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let n = (len / 0.05) as usize;
        for i in 0..=n {
            let t = i as f64 / n as f64;
            pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), z]);
        }
    }
    PointCloud::new(pts)
}

#[test]
fn sysid_fits_synthetic_trials_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_trials(
        dir.path(),
        &[
            TrialSpec::acceleration(),
            TrialSpec::deceleration(),
            TrialSpec::zigzag(),
        ],
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = canalnav(&["sysid", "--config", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let fitted = parse_params(&fs::read_to_string(a.join("params.txt")).unwrap()).unwrap();
    let truth = ParamSet::simulation_boat();
    // the surge fit pins c / m11 and the drag ratios
    let rel = |x: f64, y: f64| ((x - y) / y).abs();
    assert!(rel(fitted.x_u / fitted.m11, truth.x_u / truth.m11) < 1e-2);
    assert!(rel(fitted.c / fitted.m11, truth.c / truth.m11) < 1e-2);
    assert!(a.join("report.json").exists() && a.join("residuals.csv").exists());
    assert_eq!(result_files(&a).unwrap(), result_files(&b).unwrap());
}

#[test]
fn sysid_without_surge_trials_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_trials(dir.path(), &[TrialSpec::zigzag()]);
    let out = dir.path().join("out");
    let o = canalnav(&["sysid", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("acceleration or deceleration"));
}

#[test]
fn missing_scenario_file_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = canalnav(&[
        "simulate",
        "--config",
        "/nonexistent/scenario.toml",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
}

#[test]
fn malformed_scenario_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "name = \"x\"\nduration = \"long\"\n").unwrap();
    let o = canalnav(&["simulate", "--config", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("line 2"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = canalnav(&["simulate", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let o = canalnav(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn bundled_scenario_simulates_without_collision() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("canal.toml");
    let out = dir.path().join("run");
    let o = canalnav(&["simulate", "--config", s(&cfg), "--out", s(&out), "--duration", "150"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["collision"], serde_json::Value::Bool(false));
    for f in ["manifest.json", "log.csv", "separation.csv", "timing.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let again = dir.path().join("again");
    let o = canalnav(&["simulate", "--config", s(&cfg), "--out", s(&again), "--duration", "150"]);
    assert!(o.status.success());
    assert_eq!(result_files(&out).unwrap(), result_files(&again).unwrap());
}

#[test]
fn compare_reports_three_controllers() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("short.toml");
    let text = fs::read_to_string(scenarios().join("canal_offset.toml"))
        .unwrap()
        .replace("duration = 600.0", "duration = 30.0");
    fs::write(&sc, text).unwrap();
    let out = dir.path().join("cmp");
    let o = canalnav(&["compare", "--config", s(&sc), "--out", s(&out), "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    for c in ["nmpc", "baseline1", "baseline2"] {
        assert!(out.join(c).join("log.csv").exists());
        assert!(String::from_utf8_lossy(&o.stdout).contains(c));
    }
}

#[test]
fn detect_finds_corridor_walls() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = wall_cloud(&[([-30.0, 7.5], [30.0, 7.5]), ([-30.0, -7.5], [30.0, -7.5])], 1.0);
    let input = dir.path().join("cloud.csv");
    let mut buf = Vec::new();
    write_point_cloud(&mut buf, &cloud).unwrap();
    fs::write(&input, buf).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = canalnav(&["detect", "--input", s(&input), "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let segs = read_segments(fs::File::open(a.join("segments.csv")).unwrap()).unwrap();
    assert_eq!(segs.len(), 2);
    let dtheta = (segs[0].theta - segs[1].theta).abs();
    assert!(dtheta.min(std::f64::consts::PI - dtheta) < 2f64.to_radians());
    assert!(a.join("grid.pgm").exists());
    assert_eq!(result_files(&a).unwrap(), result_files(&b).unwrap());
}

#[test]
fn detect_on_filtered_out_cloud_warns_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = wall_cloud(&[([-30.0, 7.5], [30.0, 7.5])], 10.0);
    let input = dir.path().join("high.csv");
    let mut buf = Vec::new();
    write_point_cloud(&mut buf, &cloud).unwrap();
    fs::write(&input, buf).unwrap();
    let out = dir.path().join("o");
    let o = canalnav(&["detect", "--input", s(&input), "--out", s(&out)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let segs = read_segments(fs::File::open(out.join("segments.csv")).unwrap()).unwrap();
    assert!(segs.is_empty());
}
