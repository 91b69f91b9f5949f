use canalnav_core::geometry::{OrientedBox, Point};
use canalnav_core::sim::{
    run_closed_loop, simulate, CanalPiece, CanalSpec, ControllerKind, InitialState, PerceptionMode, PoseNoise,
    Scenario, Termination, HULL_BREADTH, HULL_LENGTH,
};

fn corridor(length: f64, controller: ControllerKind) -> Scenario {
    Scenario {
        name: "corridor".into(),
        controller,
        duration: 300.0,
        canal: Some(CanalSpec {
            pieces: vec![CanalPiece::Straight { length }],
            ..CanalSpec::default()
        }),
        ..Scenario::default()
    }
}

#[test]
fn nmpc_holds_the_centerline_of_a_straight_corridor() {
    let sc = corridor(300.0, ControllerKind::Nmpc);
    let (log, m) = run_closed_loop(&sc).unwrap();
    assert_eq!(m.termination, Termination::PathComplete);
    assert!(!m.collision);
    // skip the first 10 s of transient
    let tail: Vec<f64> = log
        .ticks
        .iter()
        .filter(|t| t.time >= 10.0)
        .map(|t| t.cross_track)
        .collect();
    let rms = (tail.iter().map(|e| e * e).sum::<f64>() / tail.len() as f64).sqrt();
    assert!(rms < 0.2, "cross-track rms {rms}");
}

#[test]
fn walls_closer_than_the_hull_end_in_a_reported_collision() {
    let sc = Scenario {
        name: "narrow".into(),
        duration: 60.0,
        walls: vec![vec![[-50.0, 2.0], [200.0, 2.0]], vec![[-50.0, -2.0], [200.0, -2.0]]],
        waypoints: vec![[0.0, 0.0], [150.0, 0.0]],
        initial: Some(InitialState {
            psi: 0.1,
            u: 2.0,
            ..InitialState::default()
        }),
        ..Scenario::default()
    };
    let (log, m) = run_closed_loop(&sc).unwrap();
    assert_eq!(log.termination, Termination::Collision);
    assert!(m.collision);
    assert!(m.max_slack > 0.0);
    assert!(m.min_separation < sc.nmpc.clearance());
}

#[test]
fn identical_scenarios_give_identical_logs() {
    let mut sc = corridor(120.0, ControllerKind::Nmpc);
    sc.duration = 30.0;
    sc.seed = 7;
    sc.pose_noise = Some(PoseNoise::default());
    sc.sensor.mode = PerceptionMode::Lidar;
    sc.sensor.range_noise_std = 0.02;
    let world = sc.world().unwrap();
    let a = simulate(&sc, &world).unwrap();
    let b = simulate(&sc, &world).unwrap();
    assert!(a == b);
    let mut buf_a = Vec::new();
    let mut buf_b = Vec::new();
    a.write_csv(&mut buf_a).unwrap();
    b.write_csv(&mut buf_b).unwrap();
    assert_eq!(buf_a, buf_b);

    sc.seed = 8;
    let c = simulate(&sc, &world).unwrap();
    assert!(a != c);
}

#[test]
fn sensor_mode_separation_tracks_precise_mode() {
    let mut sc = corridor(200.0, ControllerKind::Nmpc);
    sc.canal.as_mut().unwrap().waypoint_offset = 2.0;
    let (_, precise) = run_closed_loop(&sc).unwrap();
    sc.sensor.mode = PerceptionMode::Lidar;
    let (_, lidar) = run_closed_loop(&sc).unwrap();
    assert!(!precise.collision && !lidar.collision);
    assert!(
        (precise.min_separation - lidar.min_separation).abs() <= 0.5,
        "{} vs {}",
        precise.min_separation,
        lidar.min_separation
    );
}

#[test]
fn commanded_rates_respect_their_bounds() {
    let mut sc = corridor(300.0, ControllerKind::Nmpc);
    sc.canal.as_mut().unwrap().pieces = vec![
        CanalPiece::Straight { length: 80.0 },
        CanalPiece::Arc {
            radius: 60.0,
            angle_deg: 60.0,
        },
        CanalPiece::Straight { length: 80.0 },
    ];
    for kind in [ControllerKind::Nmpc, ControllerKind::Baseline1] {
        sc.controller = kind;
        let (log, m) = run_closed_loop(&sc).unwrap();
        assert!(!m.collision, "{kind:?}");
        for t in &log.ticks {
            assert!(t.command.throttle_rate.abs() <= sc.nmpc.throttle_rate_max + 1e-9);
            assert!(t.command.steering_rate.abs() <= sc.nmpc.steering_rate_max + 1e-9);
            assert!(t.actuators.throttle.abs() <= 100.0 && t.actuators.steering.abs() <= 100.0);
        }
    }
}

#[test]
fn hull_stays_clear_of_walls_when_no_collision_is_flagged() {
    let mut sc = corridor(200.0, ControllerKind::Nmpc);
    sc.canal.as_mut().unwrap().waypoint_offset = 3.0;
    sc.plant_drag_scale = 1.2;
    let world = sc.world().unwrap();
    let log = simulate(&sc, &world).unwrap();
    assert_ne!(log.termination, Termination::Collision);
    for t in &log.ticks {
        let hull = OrientedBox {
            center: Point::new(t.state.x, t.state.y),
            heading: t.state.psi,
            length: HULL_LENGTH,
            breadth: HULL_BREADTH,
        };
        for e in &world.edges {
            let (a, b) = e.endpoints();
            assert!(!hull.intersects_segment(&a, &b), "contact at t = {}", t.time);
        }
    }
}
