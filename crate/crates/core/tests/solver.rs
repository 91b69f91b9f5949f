use canalnav_core::dynamics::{ActuatorState, ParamSet, VesselState};
use canalnav_core::ocp::{assemble, obstacle_margin, safety_circle_centers, NmpcConfig, WaypointPath};
use canalnav_core::perception::LineSegment;
use canalnav_core::solver::{RtiSolver, SolveStatus, SqpOptions};

fn walls(half_width: f64) -> Vec<LineSegment> {
    let mut segs = Vec::new();
    for i in 0..12 {
        let xc = -30.0 + 20.0 * i as f64;
        segs.push(LineSegment::new(xc, half_width, 0.0, 20.0));
        segs.push(LineSegment::new(xc, -half_width, 0.0, 20.0));
    }
    segs
}

fn min_clearance(
    states: &[canalnav_core::dynamics::AugState],
    segs: &[LineSegment],
    cfg: &NmpcConfig,
    from: usize,
) -> f64 {
    let mut worst = f64::INFINITY;
    for x in &states[from..] {
        let (b, s) = safety_circle_centers(x[0], x[1], x[2], cfg);
        for seg in segs {
            for p in [b, s] {
                worst = worst.min(obstacle_margin(&p, seg, 0.0, cfg));
            }
        }
    }
    worst
}

fn solve_offset(offset: f64) -> (canalnav_core::solver::SolveResult, Vec<LineSegment>, NmpcConfig) {
    let cfg = NmpcConfig::default();
    let p = ParamSet::simulation_boat();
    let path = WaypointPath::from_xy(&[[0.0, 0.0], [400.0, 0.0]]).unwrap();
    let segs = walls(7.5);
    let pose = VesselState::new(0.0, offset, 0.0, 2.0, 0.0, 0.0);
    let act = ActuatorState::new(30.0, 0.0);
    let ocp = assemble(&pose, &act, &path, &segs, &cfg, &p, None).unwrap();
    let res = RtiSolver::new(SqpOptions::converged()).solve(&ocp);
    (res, ocp.segments, cfg)
}

#[test]
fn feasible_offset_keeps_full_clearance() {
    let (res, segs, cfg) = solve_offset(2.0);
    assert_eq!(res.status, SolveStatus::Optimal, "{:?}", res.status);
    let worst = min_clearance(&res.states, &segs, &cfg, 0);
    assert!(worst >= -1e-3, "clearance deficit {worst}");
    assert!(res.slacks.iter().all(|s| s.abs() < 1e-6), "{:?}", res.slacks);
}

#[test]
fn three_metre_offset_recovers_after_initial_violation() {
    let (res, segs, cfg) = solve_offset(3.0);
    assert_eq!(res.status, SolveStatus::Optimal, "{:?}", res.status);
    // the initial pose sits 0.5 m inside the clearance band; the slack
    // absorbs it until the vessel has moved away from the wall
    assert!(res.slacks[0] > 0.4);
    let first_clear = (0..res.slacks.len())
        .find(|&k| res.slacks[k..].iter().all(|s| *s < 1e-6))
        .unwrap();
    assert!(first_clear <= 8, "slack active until stage {first_clear}");
    let worst = min_clearance(&res.states, &segs, &cfg, first_clear);
    assert!(worst >= -1e-3, "clearance deficit {worst}");
}
