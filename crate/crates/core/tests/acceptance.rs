//! Acceptance suite. Runs every criterion, prints one line each and exits
//! nonzero when a criterion fails that is not listed in `EXPECTED_RED`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use canalnav_core::baselines::PlanStatus;
use canalnav_core::commands::{
    cmd_compare, cmd_detect, cmd_simulate, cmd_sysid, result_files, ComparisonRow, SimulateOverrides,
};
use canalnav_core::dynamics::{
    augmented_rhs, augmented_rhs_jacobian, kinetic_energy, rk4_augmented, rk4_augmented_sensitivity, rk4_step,
    ActuatorState, AugInput, AugState, Param, ParamSet, VesselState,
};
use canalnav_core::geometry::Point;
use canalnav_core::io::{write_params, write_point_cloud, write_trial_file};
use canalnav_core::ocp::{
    margin_linearization, obstacle_constraint_gradient, obstacle_constraint_value, Circle, NmpcConfig,
};
use canalnav_core::perception::{detect_segments, point_segment_distance, LineSegment, PerceptionConfig, PointCloud};
use canalnav_core::sim::{simulate, ControllerKind, Scenario};
use canalnav_core::sysid::{generate_trial, identify_surge, identify_sway_yaw, SysIdConfig, TrialSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria known to be unattainable; they still run and report.
const EXPECTED_RED: [u32; 1] = [1];

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

// ------------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let truth = ParamSet::simulation_boat();
    let surge_trials = vec![
        generate_trial(&TrialSpec::acceleration(), &truth, [0.0; 6], 0).map_err(|e| e.to_string())?,
        generate_trial(&TrialSpec::deceleration(), &truth, [0.0; 6], 0).map_err(|e| e.to_string())?,
    ];
    let zigzag = vec![generate_trial(&TrialSpec::zigzag(), &truth, [0.0; 6], 0).map_err(|e| e.to_string())?];

    let mut guess = truth;
    for (p, f) in Param::SURGE.iter().zip([1.5, 0.5, 1.5, 0.5]) {
        guess.set(*p, truth.get(*p) * f);
    }
    let dominant = [Param::M22, Param::M33, Param::Yv, Param::Nr, Param::Yvv, Param::Nrr];
    for (p, f) in dominant.iter().zip([1.3, 0.7, 1.3, 0.7, 1.3, 0.7]) {
        guess.set(*p, truth.get(*p) * f);
    }

    let t = Instant::now();
    let surge = identify_surge(&surge_trials, &SysIdConfig::surge(guess)).map_err(|e| e.to_string())?;
    let t_surge = t.elapsed();
    let t = Instant::now();
    let sway = identify_sway_yaw(&zigzag, &surge.fitted, &SysIdConfig::sway_yaw(guess)).map_err(|e| e.to_string())?;
    let t_sway = t.elapsed();
    let f = sway.fitted;

    let mut worst = Vec::new();
    let mut ok = t_surge < Duration::from_secs(60) && t_sway < Duration::from_secs(60);
    for (params, tol) in [(&Param::SURGE[..], 0.05), (&dominant[..], 0.10)] {
        for p in params {
            let e = rel(f.get(*p), truth.get(*p));
            ok &= e <= tol;
            worst.push(format!("{} {:.1}%", p.key(), 100.0 * e));
        }
    }
    check(
        ok,
        format!(
            "system-id round trip: fits {:.1} s / {:.1} s; errors {}",
            t_surge.as_secs_f64(),
            t_sway.as_secs_f64(),
            worst.join(", ")
        ),
    )
}

// ------------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let p = ParamSet::reference_boat();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let idle = ActuatorState::new(0.0, 0.0);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let mut s = VesselState::new(
            0.0,
            0.0,
            rng.random_range(-PI..PI),
            rng.random_range(-6.0..8.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-0.5..0.5),
        );
        let mut e = kinetic_energy(&s, &p);
        for _ in 0..600 {
            s = rk4_step(&s, &idle, &p, 0.1).map_err(|e| e.to_string())?;
            let next = kinetic_energy(&s, &p);
            worst = worst.max((next - e) / e.max(1e-300));
            e = next;
        }
    }
    check(
        worst <= 1e-9,
        format!("energy dissipation: largest relative step increase {worst:.2e} over 100 x 600 steps"),
    )
}

// ------------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let cfg = NmpcConfig::default();
    let clearance = cfg.clearance();
    let fixtures = [
        LineSegment::new(0.0, 0.0, 0.0, 20.0),
        LineSegment::new(12.0, -4.0, 0.7, 15.0),
        LineSegment::new(-30.0, 8.0, 2.2, 25.0),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ok = true;
    let mut parts = Vec::new();
    for seg in &fixtures {
        let half_a = 4.0 * (seg.length / 2.0 + clearance);
        let half_b = 4.0 * clearance;
        let (s, c) = seg.theta.sin_cos();
        let n = 100_000;
        let mut agree = 0;
        let mut worst_band: f64 = 0.0;
        for _ in 0..n {
            let a = rng.random_range(-half_a..half_a);
            let b = rng.random_range(-half_b..half_b);
            let p = Point::new(seg.x_c + a * c - b * s, seg.y_c + a * s + b * c);
            let quartic = obstacle_constraint_value(&p, seg, 0.0, &cfg) >= 0.0;
            let d = point_segment_distance(p.x, p.y, seg);
            if quartic == (d >= clearance) {
                agree += 1;
            } else {
                worst_band = worst_band.max((d - clearance).abs());
            }
        }
        let frac = agree as f64 / n as f64;
        ok &= frac >= 0.97 && worst_band <= 0.5;
        parts.push(format!(
            "l={} {:.2}% band {:.2} m",
            seg.length,
            100.0 * frac,
            worst_band
        ));
    }
    check(ok, format!("quartic fidelity: {}", parts.join("; ")))
}

// --------------------------------------------------------------- 4 5 6

struct Comparison {
    rows: Vec<ComparisonRow>,
    elapsed: Duration,
}

fn comparison() -> &'static Result<Comparison, String> {
    static CELL: OnceLock<Result<Comparison, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let t = Instant::now();
        let rows =
            cmd_compare(&scenario_dir().join("canal_offset.toml"), dir.path(), None).map_err(|e| e.to_string())?;
        Ok(Comparison {
            rows,
            elapsed: t.elapsed(),
        })
    })
}

fn row(c: &Comparison, kind: ControllerKind) -> Result<&ComparisonRow, String> {
    let r = c.rows.iter().find(|r| r.controller == kind).ok_or("missing row")?;
    r.outcome
        .as_ref()
        .map_err(|e| format!("{} failed: {e}", kind.as_str()))?;
    Ok(r)
}

fn criterion_4() -> Outcome {
    let c = comparison().as_ref().map_err(|e| e.clone())?;
    let nmpc = row(c, ControllerKind::Nmpc)?.metrics().unwrap();
    let b1 = row(c, ControllerKind::Baseline1)?.metrics().unwrap();
    let ok = !nmpc.collision
        && nmpc.min_separation_bow >= 4.5
        && nmpc.min_separation_stern >= 4.5
        && b1.min_separation < nmpc.min_separation;
    check(
        ok,
        format!(
            "closed-loop safety: nmpc bow {:.2} m stern {:.2} m collision {}; baseline1 {:.2} m; reference path {:.2} m",
            nmpc.min_separation_bow,
            nmpc.min_separation_stern,
            nmpc.collision,
            b1.min_separation,
            nmpc.reference_min_separation
        ),
    )
}

fn criterion_5() -> Outcome {
    let c = comparison().as_ref().map_err(|e| e.clone())?;
    let nmpc = row(c, ControllerKind::Nmpc)?.metrics().unwrap();
    let b1 = row(c, ControllerKind::Baseline1)?.metrics().unwrap();
    let ok = nmpc.control_effort < b1.control_effort && c.elapsed < Duration::from_secs(600);
    check(
        ok,
        format!(
            "control effort: nmpc {:.2} < baseline1 {:.2}; comparison took {:.0} s",
            nmpc.control_effort,
            b1.control_effort,
            c.elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Outcome {
    let c = comparison().as_ref().map_err(|e| e.clone())?;
    let (mean, max) = row(c, ControllerKind::Nmpc)?.solve_times().unwrap();
    check(
        mean <= 0.100 && max <= 0.250,
        format!(
            "solver timing: mean {:.2} ms, max {:.2} ms per cycle",
            mean * 1e3,
            max * 1e3
        ),
    )
}

// ------------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let cfg = NmpcConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_c: f64 = 0.0;
    let mut worst_m: f64 = 0.0;
    for _ in 0..100 {
        let seg = LineSegment::new(
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(0.0..PI),
            rng.random_range(1.0..30.0),
        );
        let p = Point::new(
            seg.x_c + rng.random_range(-25.0..25.0),
            seg.y_c + rng.random_range(-25.0..25.0),
        );
        let slack = rng.random_range(0.0..4.0);
        let lin = obstacle_constraint_gradient(&p, &seg, slack, &cfg);
        let g = |q: Point, s: f64| obstacle_constraint_value(&q, &seg, s, &cfg);
        let h = 1e-6;
        let fd = [
            (g(p + Point::new(h, 0.0), slack) - g(p - Point::new(h, 0.0), slack)) / (2.0 * h),
            (g(p + Point::new(0.0, h), slack) - g(p - Point::new(0.0, h), slack)) / (2.0 * h),
            (g(p, slack + h) - g(p, slack - h)) / (2.0 * h),
        ];
        for (a, f) in [lin.d_px, lin.d_py, lin.d_slack].iter().zip(fd) {
            worst_c = worst_c.max((a - f).abs() / f.abs().max(1.0));
        }

        let (x, y, psi) = (p.x, p.y, rng.random_range(-PI..PI));
        let circle = if rng.random_bool(0.5) {
            Circle::Bow
        } else {
            Circle::Stern
        };
        let m = |x: f64, y: f64, psi: f64, s: f64| margin_linearization(x, y, psi, circle, &seg, s, &cfg).value;
        let ml = margin_linearization(x, y, psi, circle, &seg, slack, &cfg);
        let fd = [
            (m(x + h, y, psi, slack) - m(x - h, y, psi, slack)) / (2.0 * h),
            (m(x, y + h, psi, slack) - m(x, y - h, psi, slack)) / (2.0 * h),
            (m(x, y, psi + h, slack) - m(x, y, psi - h, slack)) / (2.0 * h),
            (m(x, y, psi, slack + h) - m(x, y, psi, slack - h)) / (2.0 * h),
        ];
        for (a, f) in [ml.d_x, ml.d_y, ml.d_psi, ml.d_slack].iter().zip(fd) {
            worst_c = worst_c.max((a - f).abs() / f.abs().max(1.0));
        }
    }

    let p = ParamSet::simulation_boat();
    for _ in 0..100 {
        let x = AugState::from_column_slice(&[
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-PI..PI),
            rng.random_range(-2.0..6.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.3..0.3),
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
        ]);
        let w = AugInput::new(rng.random_range(-10.0..10.0), rng.random_range(-40.0..40.0));
        let (a, b) = augmented_rhs_jacobian(&x, &p);
        let (_, jx, jw) = rk4_augmented_sensitivity(&x, &w, &p, 1.0);
        for i in 0..8 {
            let h = 1e-6 * x[i].abs().max(1.0);
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let f_rhs = (augmented_rhs(&xp, &w, &p) - augmented_rhs(&xm, &w, &p)) / (2.0 * h);
            let f_rk = (rk4_augmented(&xp, &w, &p, 1.0) - rk4_augmented(&xm, &w, &p, 1.0)) / (2.0 * h);
            worst_m = worst_m.max((a.column(i) - f_rhs).amax() / f_rhs.amax().max(1.0));
            worst_m = worst_m.max((jx.column(i) - f_rk).amax() / f_rk.amax().max(1.0));
        }
        for i in 0..2 {
            let h = 1e-6 * w[i].abs().max(1.0);
            let mut wp = w;
            let mut wm = w;
            wp[i] += h;
            wm[i] -= h;
            let f_rhs = (augmented_rhs(&x, &wp, &p) - augmented_rhs(&x, &wm, &p)) / (2.0 * h);
            let f_rk = (rk4_augmented(&x, &wp, &p, 1.0) - rk4_augmented(&x, &wm, &p, 1.0)) / (2.0 * h);
            worst_m = worst_m.max((b.column(i) - f_rhs).amax() / f_rhs.amax().max(1.0));
            worst_m = worst_m.max((jw.column(i) - f_rk).amax() / f_rk.amax().max(1.0));
        }
    }
    check(
        worst_c <= 1e-5 && worst_m <= 1e-4,
        format!("derivatives: constraint rel err {worst_c:.1e}, dynamics rel err {worst_m:.1e}"),
    )
}

// ------------------------------------------------------------------- 8

fn wall_points(walls: &[(Point, Point)], rotation: f64) -> PointCloud {
    let (s, c) = rotation.sin_cos();
    let mut pts = Vec::new();
    for (a, b) in walls {
        let n = ((b - a).norm() / 0.05) as usize;
        for i in 0..=n {
            let q = a + (b - a) * (i as f64 / n as f64);
            for z in [0.3, 1.0, 1.7] {
                pts.push([c * q.x - s * q.y, s * q.x + c * q.y, z]);
            }
        }
    }
    PointCloud::new(pts)
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Largest angle, center and length errors after matching each truth
/// segment to its nearest detection.
fn match_errors(truth: &[LineSegment], found: &[LineSegment]) -> Result<(f64, f64, f64), String> {
    if found.len() != truth.len() {
        return Err(format!("{} segments found, {} expected", found.len(), truth.len()));
    }
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for t in truth {
        let f = found
            .iter()
            .min_by(|a, b| {
                (a.center() - t.center())
                    .norm()
                    .total_cmp(&(b.center() - t.center()).norm())
            })
            .unwrap();
        worst.0 = worst.0.max(angle_diff(f.theta, t.theta));
        worst.1 = worst.1.max((f.center() - t.center()).norm());
        worst.2 = worst.2.max((f.length - t.length).abs());
    }
    Ok(worst)
}

fn criterion_8() -> Outcome {
    let cfg = PerceptionConfig::default();
    let cell = cfg.resolution;
    let corridor = [
        (Point::new(-30.0, 7.5), Point::new(30.0, 7.5)),
        (Point::new(-30.0, -7.5), Point::new(30.0, -7.5)),
    ];
    let corner = [
        (Point::new(0.0, 10.0), Point::new(30.0, 10.0)),
        (Point::new(30.0, 10.0), Point::new(30.0, -20.0)),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, walls) in [("corridor", &corridor), ("L-corner", &corner)] {
        let truth: Vec<LineSegment> = walls.iter().map(|(a, b)| LineSegment::from_endpoints(*a, *b)).collect();
        let (_, found) = detect_segments(&wall_points(walls, 0.0), &cfg);
        let (da, dc, dl) = match_errors(&truth, &found)?;
        ok &= da <= 2f64.to_radians() && dc <= cell + 1e-9 && dl <= 2.0 * cell + 1e-9;
        parts.push(format!("{name} {:.2} deg {:.3} m {:.3} m", da.to_degrees(), dc, dl));
    }
    let rot = 30f64.to_radians();
    let (_, base) = detect_segments(&wall_points(&corridor, 0.0), &cfg);
    let (_, turned) = detect_segments(&wall_points(&corridor, rot), &cfg);
    if base.len() != turned.len() || base.is_empty() {
        return Err(format!("rotation: {} vs {} segments", base.len(), turned.len()));
    }
    let mut worst_rot: f64 = 0.0;
    for b in &base {
        let expect = Point::new(
            b.x_c * rot.cos() - b.y_c * rot.sin(),
            b.x_c * rot.sin() + b.y_c * rot.cos(),
        );
        let t = turned
            .iter()
            .min_by(|p, q| (p.center() - expect).norm().total_cmp(&(q.center() - expect).norm()))
            .unwrap();
        worst_rot = worst_rot.max(angle_diff(t.theta, b.theta + rot));
    }
    ok &= worst_rot <= 2f64.to_radians();
    parts.push(format!("rotation {:.2} deg", worst_rot.to_degrees()));
    check(ok, format!("perception: {}", parts.join("; ")))
}

// ------------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let mut files: Vec<PathBuf> = std::fs::read_dir(scenario_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    let results: Vec<Result<String, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = files
            .iter()
            .map(|f| {
                s.spawn(move || -> Result<(bool, String), String> {
                    let mut sc = Scenario::load(f).map_err(|e| e.to_string())?;
                    sc.controller = ControllerKind::Baseline2;
                    let world = sc.world().map_err(|e| e.to_string())?;
                    let log = simulate(&sc, &world).map_err(|e| e.to_string())?;
                    let used: Vec<_> = log
                        .plans
                        .iter()
                        .filter(|p| p.status != PlanStatus::Infeasible)
                        .collect();
                    let bad = used
                        .iter()
                        .filter(|p| p.heading_cost > p.j1 + 1e-6 || p.min_margin < -1e-3)
                        .count();
                    let name = f.file_name().unwrap().to_string_lossy().into_owned();
                    Ok((
                        bad == 0 && !used.is_empty(),
                        format!("{name} {}/{} plans ok", used.len() - bad, used.len()),
                    ))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| match h.join() {
                Ok(Ok((true, m))) => Ok(m),
                Ok(Ok((false, m))) => Err(m),
                Ok(Err(e)) => Err(e),
                Err(_) => Err("panicked".into()),
            })
            .collect()
    });
    let ok = results.iter().all(|r| r.is_ok());
    let parts: Vec<String> = results
        .into_iter()
        .map(|r| r.unwrap_or_else(|e| format!("FAILED {e}")))
        .collect();
    check(ok, format!("lexicographic baseline: {}", parts.join("; ")))
}

// ------------------------------------------------------------------ 10

fn criterion_10() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = root.path();
    let err = |e: &dyn std::fmt::Display| e.to_string();

    // sysid inputs
    let truth = ParamSet::simulation_boat();
    let mut cfg = String::from("initial_params = \"guess.txt\"\nmax_iters = 50\n\n");
    for (i, spec) in [TrialSpec::acceleration(), TrialSpec::zigzag()].iter().enumerate() {
        let d = generate_trial(spec, &truth, [0.0, 0.0, 0.0, 0.01, 0.005, 0.002], i as u64).map_err(|e| err(&e))?;
        write_trial_file(&dir.join(format!("t{i}.csv")), &d).map_err(|e| err(&e))?;
        cfg.push_str(&format!(
            "[[trial]]\nkind = \"{}\"\nfile = \"t{i}.csv\"\n\n",
            spec.kind().as_str()
        ));
    }
    write_params(&dir.join("guess.txt"), &canalnav_core::sysid::hull_initial_guess()).map_err(|e| err(&e))?;
    std::fs::write(dir.join("sysid.toml"), cfg).map_err(|e| err(&e))?;

    // detect input
    let cloud = wall_points(
        &[
            (Point::new(-30.0, 7.5), Point::new(30.0, 7.5)),
            (Point::new(-30.0, -7.5), Point::new(30.0, -7.5)),
        ],
        0.1,
    );
    let mut buf = Vec::new();
    write_point_cloud(&mut buf, &cloud).map_err(|e| err(&e))?;
    std::fs::write(dir.join("cloud.csv"), buf).map_err(|e| err(&e))?;

    // short versions of the bundled scenarios
    for name in ["canal_offset.toml", "corridor_lidar.toml"] {
        let text = std::fs::read_to_string(scenario_dir().join(name)).map_err(|e| err(&e))?;
        let text = text
            .replace("duration = 600.0", "duration = 40.0")
            .replace("duration = 200.0", "duration = 40.0");
        std::fs::write(dir.join(name), text).map_err(|e| err(&e))?;
    }

    let run = |tag: &str, out: &Path| -> Result<(), String> {
        match tag {
            "sysid" => cmd_sysid(&dir.join("sysid.toml"), out, Some(1)).map(|_| ()),
            "simulate" => {
                cmd_simulate(&dir.join("corridor_lidar.toml"), out, &SimulateOverrides::default()).map(|_| ())
            }
            "compare" => cmd_compare(&dir.join("canal_offset.toml"), out, Some(9)).map(|_| ()),
            _ => cmd_detect(None, Some(&dir.join("cloud.csv")), out, None).map(|_| ()),
        }
        .map_err(|e| err(&e))
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for tag in ["sysid", "simulate", "compare", "detect"] {
        let (a, b) = (dir.join(format!("{tag}-a")), dir.join(format!("{tag}-b")));
        run(tag, &a)?;
        run(tag, &b)?;
        let fa = result_files(&a).map_err(|e| err(&e))?;
        let fb = result_files(&b).map_err(|e| err(&e))?;
        let same = !fa.is_empty() && fa == fb;
        ok &= same;
        parts.push(format!(
            "{tag} {} files {}",
            fa.len(),
            if same { "identical" } else { "DIFFER" }
        ));
    }
    check(ok, format!("reproducibility: {}", parts.join(", ")))
}

// --------------------------------------------------------------- driver

fn main() {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let results: Vec<(u32, Outcome)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|(n, f)| {
                let f = *f;
                (*n, s.spawn(move || std::panic::catch_unwind(f)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(n, h)| {
                let r = match h.join() {
                    Ok(Ok(r)) => r,
                    _ => Err("panicked".into()),
                };
                (n, r)
            })
            .collect()
    });

    let mut unexpected = 0;
    for (n, r) in &results {
        let red = EXPECTED_RED.contains(n);
        match (r, red) {
            (Ok(m), false) => println!("criterion {n:>2}: PASS  {m}"),
            (Err(m), false) => {
                unexpected += 1;
                println!("criterion {n:>2}: FAIL  {m}");
            }
            (Err(m), true) => println!("criterion {n:>2}: FAIL  (expected, see decisions ledger) {m}"),
            (Ok(m), true) => {
                unexpected += 1;
                println!("criterion {n:>2}: PASS  (listed as expected red; update the list) {m}");
            }
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criteria did not match their expected outcome");
        std::process::exit(1);
    }
}
