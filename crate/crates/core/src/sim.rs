//! Closed-loop simulation: plant integration, a 2D scanner against the canal
//! walls, controller orchestration at 10 Hz and run metrics.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::baselines::{
    baseline1_step, lexi_plan_warm, plan_goal, BaselineConfig, KinematicState, LexiPlan, PlanStatus, TrackerState,
};
use crate::dynamics::{augmented_step, ActuatorState, ParamSet, RateInput, VesselState};
use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Point};
use crate::io::read_params;
use crate::ocp::{assemble, safety_circle_centers, segments_in_range, NmpcConfig, WaypointPath};
use crate::perception::{
    detect_segments, point_segment_distance, segments_to_world, LineSegment, PerceptionConfig, PointCloud,
};
use crate::solver::{shift_warm_start_by, RtiSolver, SolveResult, SolveStatus, SqpOptions};

/// Control period [s].
pub const CONTROL_DT: f64 = 0.1;
pub const HULL_LENGTH: f64 = 7.9;
pub const HULL_BREADTH: f64 = 2.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    #[default]
    Nmpc,
    Baseline1,
    Baseline2,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [
        ControllerKind::Nmpc,
        ControllerKind::Baseline1,
        ControllerKind::Baseline2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Nmpc => "nmpc",
            ControllerKind::Baseline1 => "baseline1",
            ControllerKind::Baseline2 => "baseline2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerceptionMode {
    /// Exact wall pieces within the detection radius.
    #[default]
    Precise,
    /// Simulated scan through the detection pipeline.
    Lidar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    pub mode: PerceptionMode,
    pub range_min: f64,
    pub range_max: f64,
    pub angular_resolution_deg: f64,
    pub range_noise_std: f64,
    /// Height band of the wall faces above the waterline [m].
    pub wall_height: [f64; 2],
    pub perception: PerceptionConfig,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            mode: PerceptionMode::Precise,
            range_min: 0.5,
            range_max: 120.0,
            angular_resolution_deg: 0.5,
            range_noise_std: 0.0,
            wall_height: [0.0, 2.0],
            perception: PerceptionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseNoise {
    pub sigma_xy: f64,
    pub sigma_psi_deg: f64,
}

impl Default for PoseNoise {
    fn default() -> Self {
        Self {
            sigma_xy: 0.01,
            sigma_psi_deg: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialState {
    pub x: f64,
    pub y: f64,
    /// Heading [rad].
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub r: f64,
    #[serde(rename = "n_T")]
    pub throttle: f64,
    #[serde(rename = "n_S")]
    pub steering: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CanalPiece {
    Straight {
        length: f64,
    },
    /// Positive angles turn left.
    Arc {
        radius: f64,
        angle_deg: f64,
    },
}

/// Constant-width canal built from straights and circular bends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanalSpec {
    pub width: f64,
    pub start: [f64; 2],
    pub heading_deg: f64,
    pub pieces: Vec<CanalPiece>,
    pub waypoint_spacing: f64,
    /// Lateral shift of the waypoints, positive toward the left wall [m].
    pub waypoint_offset: f64,
    /// Vertex spacing of the wall polylines along bends [m].
    pub wall_spacing: f64,
}

impl Default for CanalSpec {
    fn default() -> Self {
        Self {
            width: 15.0,
            start: [0.0, 0.0],
            heading_deg: 0.0,
            pieces: vec![CanalPiece::Straight { length: 1000.0 }],
            waypoint_spacing: 25.0,
            waypoint_offset: 0.0,
            wall_spacing: 5.0,
        }
    }
}

struct Centerline {
    points: Vec<(Point, f64)>,
    waypoint_marks: Vec<(Point, f64)>,
}

impl CanalSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if !(self.width > 0.0) {
            return bad("canal width must be > 0".into());
        }
        if !(self.waypoint_spacing > 0.0 && self.wall_spacing > 0.0) {
            return bad("canal spacings must be > 0".into());
        }
        if self.pieces.is_empty() {
            return bad("canal needs at least one piece".into());
        }
        for (i, p) in self.pieces.iter().enumerate() {
            match *p {
                CanalPiece::Straight { length } if !(length > 0.0) => {
                    return bad(format!("piece {i}: length must be > 0"));
                }
                CanalPiece::Arc { radius, angle_deg } if !(radius > self.width / 2.0) || angle_deg == 0.0 => {
                    return bad(format!(
                        "piece {i}: radius must exceed half the width and angle be nonzero"
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| match *p {
                CanalPiece::Straight { length } => length,
                CanalPiece::Arc { radius, angle_deg } => radius * angle_deg.to_radians().abs(),
            })
            .sum()
    }

    fn centerline(&self) -> Centerline {
        let mut pos = Point::new(self.start[0], self.start[1]);
        let mut heading = self.heading_deg.to_radians();
        let mut points = vec![(pos, heading)];
        let mut marks = vec![(pos, heading)];
        let mut travelled = 0.0;
        let mut next_mark = self.waypoint_spacing;
        for piece in &self.pieces {
            let (len, curvature) = match *piece {
                CanalPiece::Straight { length } => (length, 0.0),
                CanalPiece::Arc { radius, angle_deg } => {
                    (radius * angle_deg.to_radians().abs(), angle_deg.signum() / radius)
                }
            };
            let start_pos = pos;
            let start_heading = heading;
            let at = |s: f64| -> (Point, f64) {
                if curvature == 0.0 {
                    (
                        start_pos + Point::new(start_heading.cos(), start_heading.sin()) * s,
                        start_heading,
                    )
                } else {
                    let h = start_heading + curvature * s;
                    let d = Point::new(h.sin() - start_heading.sin(), start_heading.cos() - h.cos()) / curvature;
                    (start_pos + d, h)
                }
            };
            let steps = if curvature == 0.0 {
                1
            } else {
                (len / self.wall_spacing).ceil().max(1.0) as usize
            };
            for k in 1..=steps {
                points.push(at(len * k as f64 / steps as f64));
            }
            while next_mark < travelled + len - 1e-9 {
                marks.push(at(next_mark - travelled));
                next_mark += self.waypoint_spacing;
            }
            travelled += len;
            (pos, heading) = at(len);
        }
        if marks.last().is_some_and(|(p, _)| (p - pos).norm() > 1e-6) {
            marks.push((pos, heading));
        }
        Centerline {
            points,
            waypoint_marks: marks,
        }
    }
}

fn offset(p: Point, heading: f64, d: f64) -> Point {
    p + Point::new(-heading.sin(), heading.cos()) * d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub controller: ControllerKind,
    /// Simulated time limit [s].
    pub duration: f64,
    pub seed: u64,
    pub canal: Option<CanalSpec>,
    /// Explicit wall polylines, added to the canal walls if both are given.
    pub walls: Vec<Vec<[f64; 2]>>,
    /// Explicit waypoints; replaces the generated ones when nonempty.
    pub waypoints: Vec<[f64; 2]>,
    pub initial: Option<InitialState>,
    pub nmpc: NmpcConfig,
    pub baseline: BaselineConfig,
    pub sensor: SensorSpec,
    pub pose_noise: Option<PoseNoise>,
    /// Parameter file (relative to the scenario file); the built-in boat
    /// when absent.
    pub params_file: Option<PathBuf>,
    /// Scale applied to the plant's drag coefficients only.
    pub plant_drag_scale: f64,
    /// Longest wall piece handed to the controller [m].
    pub wall_piece_length: f64,
    /// Largest chord deviation of a wall piece from its polyline [m].
    pub wall_piece_tolerance: f64,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: String::new(),
            controller: ControllerKind::Nmpc,
            duration: 600.0,
            seed: 0,
            canal: None,
            walls: Vec::new(),
            waypoints: Vec::new(),
            initial: None,
            nmpc: NmpcConfig::default(),
            baseline: BaselineConfig::default(),
            sensor: SensorSpec::default(),
            pose_noise: None,
            params_file: None,
            plant_drag_scale: 1.0,
            wall_piece_length: 20.0,
            wall_piece_tolerance: 0.25,
            base_dir: None,
        }
    }
}

/// Resolved geometry of a scenario.
#[derive(Debug, Clone)]
pub struct World {
    pub walls: Vec<Vec<Point>>,
    /// Every wall edge as a segment, used for separation and contact.
    pub edges: Vec<LineSegment>,
    /// Wall pieces handed to the controller in precise mode.
    pub pieces: Vec<LineSegment>,
    pub waypoints: Vec<Point>,
    pub initial: VesselState,
    pub initial_actuators: ActuatorState,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut s =
            Self::from_toml_str(&text).map_err(|e| Error::InvalidScenario(format!("{}: {e}", path.display())))?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Controller model; the plant uses the same constants with drag scaled
    /// by `plant_drag_scale`.
    pub fn params(&self) -> Result<ParamSet> {
        match &self.params_file {
            None => Ok(ParamSet::simulation_boat()),
            Some(p) => {
                let full = match &self.base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                read_params(&full)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if !(self.duration > 0.0) {
            return bad("duration must be > 0".into());
        }
        if !(self.plant_drag_scale > 0.0) {
            return bad("plant_drag_scale must be > 0".into());
        }
        if !(self.wall_piece_length > 0.0 && self.wall_piece_tolerance > 0.0) {
            return bad("wall piece length and tolerance must be > 0".into());
        }
        let s = &self.sensor;
        if !(s.range_min >= 0.0 && s.range_max > s.range_min) {
            return bad("sensor range must satisfy 0 <= range_min < range_max".into());
        }
        if !(s.angular_resolution_deg > 0.0 && s.range_noise_std >= 0.0) {
            return bad("sensor resolution must be > 0 and noise >= 0".into());
        }
        if !(s.wall_height[1] >= s.wall_height[0]) {
            return bad("wall_height must be [low, high]".into());
        }
        if let Some(n) = &self.pose_noise {
            if !(n.sigma_xy >= 0.0 && n.sigma_psi_deg >= 0.0) {
                return bad("pose noise must be >= 0".into());
            }
        }
        if let Some(c) = &self.canal {
            c.validate()?;
        }
        self.nmpc.validate()?;
        self.baseline.validate()?;
        Ok(())
    }

    pub fn world(&self) -> Result<World> {
        self.validate()?;
        let mut walls: Vec<Vec<Point>> = Vec::new();
        let mut waypoints: Vec<Point> = Vec::new();
        let mut initial = None;
        if let Some(c) = &self.canal {
            let line = c.centerline();
            let half = c.width / 2.0;
            walls.push(line.points.iter().map(|(p, h)| offset(*p, *h, half)).collect());
            walls.push(line.points.iter().map(|(p, h)| offset(*p, *h, -half)).collect());
            waypoints = line
                .waypoint_marks
                .iter()
                .map(|(p, h)| offset(*p, *h, c.waypoint_offset))
                .collect();
            let (p0, h0) = line.points[0];
            initial = Some(InitialState {
                x: p0.x,
                y: p0.y,
                psi: h0,
                u: self.nmpc.u_ref,
                ..InitialState::default()
            });
        }
        for w in &self.walls {
            walls.push(w.iter().map(|p| Point::new(p[0], p[1])).collect());
        }
        if !self.waypoints.is_empty() {
            waypoints = self.waypoints.iter().map(|p| Point::new(p[0], p[1])).collect();
        }
        if walls.iter().any(|w| w.len() < 2) {
            return Err(Error::InvalidScenario("every wall needs at least two points".into()));
        }
        if walls.iter().flatten().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidScenario("non-finite wall vertex".into()));
        }
        WaypointPath::new(waypoints.clone()).map_err(|e| Error::InvalidScenario(e.to_string()))?;

        let params = self.params()?;
        let (initial, acts) = match (self.initial, initial) {
            (Some(i), _) => (i, ActuatorState::new(i.throttle, i.steering)),
            (None, Some(i)) => (i, ActuatorState::new(steady_throttle(&params, i.u), 0.0)),
            (None, None) => return Err(Error::InvalidScenario("initial state required without a canal".into())),
        };
        let pose = VesselState::new(initial.x, initial.y, initial.psi, initial.u, initial.v, initial.r);
        if !pose.is_finite() {
            return Err(Error::InvalidScenario("non-finite initial state".into()));
        }

        let edges: Vec<LineSegment> = walls
            .iter()
            .flat_map(|w| {
                w.windows(2)
                    .filter(|e| e[0] != e[1])
                    .map(|e| LineSegment::from_endpoints(e[0], e[1]))
            })
            .collect();
        if hull_contact(&pose, &edges) {
            return Err(Error::InvalidScenario("initial hull footprint touches a wall".into()));
        }
        let pieces = walls
            .iter()
            .flat_map(|w| wall_pieces(w, self.wall_piece_length, self.wall_piece_tolerance))
            .collect();
        Ok(World {
            walls,
            edges,
            pieces,
            waypoints,
            initial: pose,
            initial_actuators: acts,
        })
    }
}

/// Throttle whose steady surge speed is `u` (bisection on the steady-state
/// balance).
pub fn steady_throttle(p: &ParamSet, u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 100.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if p.steady_surge_speed(mid) > u {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Splits a polyline into chords no longer than `max_len` whose interior
/// vertices stay within `tol` of the chord.
pub fn wall_pieces(wall: &[Point], max_len: f64, tol: f64) -> Vec<LineSegment> {
    let mut dense: Vec<Point> = vec![wall[0]];
    for e in wall.windows(2) {
        let n = ((e[1] - e[0]).norm() / max_len).ceil().max(1.0) as usize;
        for k in 1..=n {
            dense.push(e[0] + (e[1] - e[0]) * (k as f64 / n as f64));
        }
    }
    dense.dedup();
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < dense.len() {
        let mut end = start + 1;
        while end + 1 < dense.len() {
            let cand = end + 1;
            let a = dense[start];
            let b = dense[cand];
            let fits = (b - a).norm() <= max_len + 1e-9
                && dense[start + 1..cand]
                    .iter()
                    .all(|p| crate::geometry::distance_to_segment(p, &a, &b) <= tol);
            if !fits {
                break;
            }
            end = cand;
        }
        out.push(LineSegment::from_endpoints(dense[start], dense[end]));
        start = end;
    }
    out
}

fn hull_contact(pose: &VesselState, edges: &[LineSegment]) -> bool {
    let hull = OrientedBox {
        center: Point::new(pose.x, pose.y),
        heading: pose.psi,
        length: HULL_LENGTH,
        breadth: HULL_BREADTH,
    };
    let reach = 0.5 * HULL_LENGTH.hypot(HULL_BREADTH);
    edges.iter().any(|e| {
        point_segment_distance(pose.x, pose.y, e) <= reach && {
            let (a, b) = e.endpoints();
            hull.intersects_segment(&a, &b)
        }
    })
}

/// 2D ray fan from the vessel against the wall polylines; points in the
/// body frame with heights drawn from the wall band.
pub fn lidar_scan(pose: &VesselState, walls: &[Vec<Point>], spec: &SensorSpec, rng: &mut ChaCha8Rng) -> PointCloud {
    let origin = Point::new(pose.x, pose.y);
    let rays = (360.0 / spec.angular_resolution_deg).round().max(1.0) as usize;
    let edges: Vec<(Point, Point)> = walls
        .iter()
        .flat_map(|w| w.windows(2).map(|e| (e[0], e[1])))
        .filter(|(a, b)| crate::geometry::distance_to_segment(&origin, a, b) <= spec.range_max)
        .collect();
    let noise = (spec.range_noise_std > 0.0).then(|| Normal::new(0.0, spec.range_noise_std).unwrap());
    let [z_lo, z_hi] = spec.wall_height;
    let mut points = Vec::new();
    if edges.is_empty() {
        return PointCloud::new(points);
    }
    for k in 0..rays {
        let bearing = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / rays as f64;
        let dir = Point::new((pose.psi + bearing).cos(), (pose.psi + bearing).sin());
        let hit = edges
            .iter()
            .filter_map(|(a, b)| crate::geometry::ray_segment_intersection(&origin, &dir, a, b))
            .fold(f64::INFINITY, f64::min);
        if !(hit >= spec.range_min && hit <= spec.range_max) {
            continue;
        }
        let range = match &noise {
            Some(n) => hit + n.sample(rng),
            None => hit,
        };
        let z = if z_hi > z_lo {
            Uniform::new(z_lo, z_hi).unwrap().sample(rng)
        } else {
            z_lo
        };
        points.push([range * bearing.cos(), range * bearing.sin(), z]);
    }
    PointCloud::new(points)
}

/// Smallest distance from the bow and stern circle centers to any segment;
/// `+∞` for an empty list.
pub fn closest_separation(pose: &VesselState, segments: &[LineSegment], cfg: &NmpcConfig) -> (f64, f64) {
    let (bow, stern) = safety_circle_centers(pose.x, pose.y, pose.psi, cfg);
    segments.iter().fold((f64::INFINITY, f64::INFINITY), |(db, ds), s| {
        (
            db.min(point_segment_distance(bow.x, bow.y, s)),
            ds.min(point_segment_distance(stern.x, stern.y, s)),
        )
    })
}

/// `Σ wᵀ R w` over the logged rate commands.
pub fn control_effort(log: &SimLog, r: [f64; 2]) -> f64 {
    log.ticks
        .iter()
        .map(|t| r[0] * t.command.throttle_rate.powi(2) + r[1] * t.command.steering_rate.powi(2))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    PathComplete,
    Timeout,
    Collision,
    Diverged,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::PathComplete => "path-complete",
            Termination::Timeout => "timeout",
            Termination::Collision => "collision",
            Termination::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub time: f64,
    pub state: VesselState,
    pub actuators: ActuatorState,
    pub command: RateInput,
    pub segments: usize,
    pub slack_max: f64,
    /// Distances from the safety-circle centers to the true walls.
    pub d_bow: f64,
    pub d_stern: f64,
    pub cross_track: f64,
    pub status: &'static str,
}

/// One accepted or rejected plan of the lexicographic baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanAudit {
    pub time: f64,
    pub j1: f64,
    pub heading_cost: f64,
    pub min_margin: f64,
    pub endpoint_error: f64,
    pub status: PlanStatus,
}

#[derive(Debug, Clone)]
pub struct SimLog {
    pub controller: ControllerKind,
    pub ticks: Vec<TickRecord>,
    pub termination: Termination,
    pub plans: Vec<PlanAudit>,
    /// Wall-clock controller time per tick [s]; kept apart from the records
    /// so that logs of identical runs compare equal.
    pub solve_times: Vec<f64>,
}

impl PartialEq for SimLog {
    fn eq(&self, other: &Self) -> bool {
        self.controller == other.controller
            && self.ticks == other.ticks
            && self.termination == other.termination
            && self.plans == other.plans
    }
}

impl SimLog {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "t",
            "x",
            "y",
            "psi",
            "u",
            "v",
            "r",
            "n_T",
            "n_S",
            "dn_T",
            "dn_S",
            "segments",
            "slack_max",
            "status",
        ])?;
        for t in &self.ticks {
            let s = &t.state;
            let mut row: Vec<String> = [
                t.time,
                s.x,
                s.y,
                s.psi,
                s.u,
                s.v,
                s.r,
                t.actuators.throttle,
                t.actuators.steering,
                t.command.throttle_rate,
                t.command.steering_rate,
            ]
            .iter()
            .map(|v| v.to_string())
            .collect();
            row.push(t.segments.to_string());
            row.push(t.slack_max.to_string());
            row.push(t.status.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Per-tick bow/stern distances to the walls.
    pub fn write_separation_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "x", "y", "d_bow", "d_stern"])?;
        for t in &self.ticks {
            wtr.write_record([t.time, t.state.x, t.state.y, t.d_bow, t.d_stern].map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_timing_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "solve_time"])?;
        for (t, dt) in self.ticks.iter().zip(&self.solve_times) {
            wtr.write_record([t.time.to_string(), format!("{dt:.6}")])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_plans_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "j1", "heading_cost", "min_margin", "endpoint_error", "status"])?;
        for p in &self.plans {
            let status = match p.status {
                PlanStatus::Optimal => "optimal",
                PlanStatus::StageOneFallback => "stage-one",
                PlanStatus::Infeasible => "infeasible",
            };
            wtr.write_record([
                p.time.to_string(),
                p.j1.to_string(),
                p.heading_cost.to_string(),
                p.min_margin.to_string(),
                p.endpoint_error.to_string(),
                status.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn mean_solve_time(&self) -> f64 {
        if self.solve_times.is_empty() {
            0.0
        } else {
            self.solve_times.iter().sum::<f64>() / self.solve_times.len() as f64
        }
    }

    pub fn max_solve_time(&self) -> f64 {
        self.solve_times.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub controller: ControllerKind,
    pub termination: Termination,
    pub collision: bool,
    pub simulated_time: f64,
    pub ticks: usize,
    pub min_separation_bow: f64,
    pub min_separation_stern: f64,
    pub min_separation: f64,
    pub p05_separation_bow: f64,
    pub p05_separation_stern: f64,
    /// Smallest separation along the reference path itself.
    pub reference_min_separation: f64,
    pub control_effort: f64,
    pub cross_track_rms: f64,
    pub max_cross_track: f64,
    pub max_slack: f64,
    pub solver_failures: usize,
    pub max_throttle_rate: f64,
    pub max_steering_rate: f64,
    pub plans: usize,
    pub infeasible_plans: usize,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}

fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::INFINITY;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((v.len() - 1) as f64 * q).round() as usize;
    v[idx]
}

/// Smallest bow/stern separation along the reference, sampled every metre
/// with the leg heading.
pub fn reference_separation(waypoints: &[Point], edges: &[LineSegment], cfg: &NmpcConfig) -> f64 {
    let mut best = f64::INFINITY;
    for w in waypoints.windows(2) {
        let d = w[1] - w[0];
        let len = d.norm();
        if len == 0.0 {
            continue;
        }
        let heading = d.y.atan2(d.x);
        let n = len.ceil() as usize;
        for k in 0..=n {
            let p = w[0] + d * (k as f64 / n as f64);
            let pose = VesselState::new(p.x, p.y, heading, 0.0, 0.0, 0.0);
            let near = segments_in_range(edges, p.x, p.y, cfg.detection_radius);
            let (b, s) = closest_separation(&pose, &near, cfg);
            best = best.min(b).min(s);
        }
    }
    best
}

pub fn compute_metrics(log: &SimLog, world: &World, cfg: &NmpcConfig) -> Metrics {
    let bows: Vec<f64> = log.ticks.iter().map(|t| t.d_bow).collect();
    let sterns: Vec<f64> = log.ticks.iter().map(|t| t.d_stern).collect();
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let xt: Vec<f64> = log.ticks.iter().map(|t| t.cross_track).collect();
    let rms = if xt.is_empty() {
        0.0
    } else {
        (xt.iter().map(|e| e * e).sum::<f64>() / xt.len() as f64).sqrt()
    };
    Metrics {
        controller: log.controller,
        termination: log.termination,
        collision: log.termination == Termination::Collision,
        simulated_time: log.ticks.last().map_or(0.0, |t| t.time),
        ticks: log.ticks.len(),
        min_separation_bow: min(&bows),
        min_separation_stern: min(&sterns),
        min_separation: min(&bows).min(min(&sterns)),
        p05_separation_bow: percentile(&bows, 0.05),
        p05_separation_stern: percentile(&sterns, 0.05),
        reference_min_separation: reference_separation(&world.waypoints, &world.edges, cfg),
        control_effort: control_effort(log, cfg.r),
        cross_track_rms: rms,
        max_cross_track: xt.iter().copied().fold(0.0, f64::max),
        max_slack: log.ticks.iter().map(|t| t.slack_max).fold(0.0, f64::max),
        solver_failures: log.ticks.iter().filter(|t| t.status == "solver-failure").count(),
        max_throttle_rate: log
            .ticks
            .iter()
            .map(|t| t.command.throttle_rate.abs())
            .fold(0.0, f64::max),
        max_steering_rate: log
            .ticks
            .iter()
            .map(|t| t.command.steering_rate.abs())
            .fold(0.0, f64::max),
        plans: log.plans.len(),
        infeasible_plans: log.plans.iter().filter(|p| p.status == PlanStatus::Infeasible).count(),
    }
}

struct TickOutput {
    command: RateInput,
    slack_max: f64,
    status: &'static str,
}

enum Controller {
    Nmpc {
        solver: RtiSolver,
        prev: Option<SolveResult>,
    },
    Baseline1 {
        solver: RtiSolver,
        prev: Option<SolveResult>,
        planned: Option<WaypointPath>,
        tracker: TrackerState,
        next_replan: f64,
    },
    Baseline2 {
        plan: Option<LexiPlan>,
        planned: Option<WaypointPath>,
        tracker: TrackerState,
        next_replan: f64,
    },
}

struct Context<'a> {
    scenario: &'a Scenario,
    params: ParamSet,
    reference: &'a WaypointPath,
}

/// One RTI cycle; `None` on solver failure.
fn nmpc_cycle(
    ctx: &Context,
    solver: &mut RtiSolver,
    prev: &mut Option<SolveResult>,
    pose: &VesselState,
    act: &ActuatorState,
    segments: &[LineSegment],
    shift: f64,
) -> Result<Option<SolveResult>> {
    let cfg = &ctx.scenario.nmpc;
    let warm = prev.as_ref().map(|p| shift_warm_start_by(p, shift / cfg.sample_time));
    let ocp = assemble(pose, act, ctx.reference, segments, cfg, &ctx.params, warm.as_ref())?;
    let res = solver.solve(&ocp);
    if res.status == SolveStatus::InfeasibleQp || res.inputs.iter().any(|w| !w.iter().all(|v| v.is_finite())) {
        *prev = None;
        solver.reset();
        return Ok(None);
    }
    *prev = Some(res.clone());
    Ok(Some(res))
}

fn path_from_points(points: impl Iterator<Item = Point>) -> Option<WaypointPath> {
    let mut pts: Vec<Point> = Vec::new();
    for p in points {
        if pts.last().is_none_or(|q| (p - q).norm() > 1e-3) {
            pts.push(p);
        }
    }
    WaypointPath::new(pts).ok()
}

/// Path for the tracker: the latest plan, or the reference before the
/// first plan exists.
fn track_target(planned: &mut Option<WaypointPath>, reference: &WaypointPath, pose: &VesselState) -> WaypointPath {
    match planned.as_mut() {
        Some(p) => {
            let _ = p.update_progress(pose.x, pose.y);
            p.clone()
        }
        None => reference.clone(),
    }
}

impl Controller {
    fn new(kind: ControllerKind, act: &ActuatorState, cfg: &BaselineConfig) -> Self {
        let tracker = TrackerState::bumpless(act.throttle, &cfg.speed_gains);
        match kind {
            ControllerKind::Nmpc => Controller::Nmpc {
                solver: RtiSolver::new(SqpOptions::rti()),
                prev: None,
            },
            ControllerKind::Baseline1 => Controller::Baseline1 {
                solver: RtiSolver::new(SqpOptions::rti()),
                prev: None,
                planned: None,
                tracker,
                next_replan: 0.0,
            },
            ControllerKind::Baseline2 => Controller::Baseline2 {
                plan: None,
                planned: None,
                tracker,
                next_replan: 0.0,
            },
        }
    }

    fn step(
        &mut self,
        ctx: &Context,
        time: f64,
        pose: &VesselState,
        act: &ActuatorState,
        segments: &[LineSegment],
        audits: &mut Vec<PlanAudit>,
    ) -> Result<TickOutput> {
        let sc = ctx.scenario;
        let hold = TickOutput {
            command: RateInput::default(),
            slack_max: 0.0,
            status: "solver-failure",
        };
        match self {
            Controller::Nmpc { solver, prev } => {
                match nmpc_cycle(ctx, solver, prev, pose, act, segments, CONTROL_DT)? {
                    None => Ok(hold),
                    Some(res) => {
                        let w = res.first_input();
                        Ok(TickOutput {
                            command: RateInput::new(w[0], w[1]),
                            slack_max: res.slacks.iter().copied().fold(0.0, f64::max),
                            status: res.status.as_str(),
                        })
                    }
                }
            }
            Controller::Baseline1 {
                solver,
                prev,
                planned,
                tracker,
                next_replan,
            } => {
                let mut status = "tracking";
                if time + 1e-9 >= *next_replan {
                    let shift = sc.baseline.replan_period;
                    match nmpc_cycle(ctx, solver, prev, pose, act, segments, shift)? {
                        Some(res) => {
                            let pts = std::iter::once(Point::new(pose.x, pose.y))
                                .chain(res.states.iter().skip(1).map(|s| Point::new(s[0], s[1])));
                            if let Some(p) = path_from_points(pts) {
                                *planned = Some(p);
                                status = "replanned";
                            }
                        }
                        None => status = "plan-failure",
                    }
                    *next_replan += sc.baseline.replan_period;
                }
                let path = track_target(planned, ctx.reference, pose);
                let cmd = baseline1_step(pose, act, &path, tracker, &sc.baseline, &sc.nmpc, CONTROL_DT)?;
                Ok(TickOutput {
                    command: cmd,
                    slack_max: 0.0,
                    status,
                })
            }
            Controller::Baseline2 {
                plan,
                planned,
                tracker,
                next_replan,
            } => {
                let mut status = "tracking";
                if time + 1e-9 >= *next_replan {
                    let cfg = &sc.baseline;
                    status = "plan-failure";
                    if let Some(goal) = plan_goal(pose, ctx.reference, segments, cfg, &sc.nmpc) {
                        let steps = (cfg.replan_period / cfg.sampling).round() as usize;
                        let guess = plan.as_ref().map(|p| p.shifted_inputs(steps));
                        let start = KinematicState::from(pose);
                        if let Ok(p) = lexi_plan_warm(&start, &goal, segments, cfg, &sc.nmpc, guess.as_deref()) {
                            audits.push(PlanAudit {
                                time,
                                j1: p.j1,
                                heading_cost: p.heading_cost(),
                                min_margin: p.min_margin,
                                endpoint_error: p.endpoint_error,
                                status: p.status,
                            });
                            if p.status != PlanStatus::Infeasible {
                                if let Ok(path) = p.to_path() {
                                    *planned = Some(path);
                                    *plan = Some(p);
                                    status = "replanned";
                                }
                            }
                        }
                    }
                    *next_replan += cfg.replan_period;
                }
                let path = track_target(planned, ctx.reference, pose);
                let cmd = baseline1_step(pose, act, &path, tracker, &sc.baseline, &sc.nmpc, CONTROL_DT)?;
                Ok(TickOutput {
                    command: cmd,
                    slack_max: 0.0,
                    status,
                })
            }
        }
    }
}

/// Runs the scenario at 10 Hz until the last waypoint, the time limit or
/// hull contact with a wall.
pub fn run_closed_loop(scenario: &Scenario) -> Result<(SimLog, Metrics)> {
    let world = scenario.world()?;
    let log = simulate(scenario, &world)?;
    let metrics = compute_metrics(&log, &world, &scenario.nmpc);
    Ok((log, metrics))
}

pub fn simulate(scenario: &Scenario, world: &World) -> Result<SimLog> {
    let params = scenario.params()?;
    let plant = params.with_drag_scaled(scenario.plant_drag_scale);
    let reference = WaypointPath::new(world.waypoints.clone())?;
    let mut progress = reference.clone();
    let mut lidar_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    lidar_rng.set_stream(1);
    let mut pose_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    pose_rng.set_stream(2);

    let mut state = world.initial;
    let mut act = world.initial_actuators;
    let mut controller = Controller::new(scenario.controller, &act, &scenario.baseline);
    let mut ticks = Vec::new();
    let mut solve_times = Vec::new();
    let mut plans = Vec::new();
    let n_ticks = (scenario.duration / CONTROL_DT).round() as usize;
    let mut termination = Termination::Timeout;
    let cfg = &scenario.nmpc;

    for k in 0..n_ticks {
        let time = k as f64 * CONTROL_DT;
        if progress.update_progress(state.x, state.y).is_err() {
            termination = Termination::PathComplete;
            break;
        }
        let measured = match &scenario.pose_noise {
            None => state,
            Some(n) => {
                let mut m = state;
                if n.sigma_xy > 0.0 {
                    let d = Normal::new(0.0, n.sigma_xy).unwrap();
                    m.x += d.sample(&mut pose_rng);
                    m.y += d.sample(&mut pose_rng);
                }
                if n.sigma_psi_deg > 0.0 {
                    m.psi += Normal::new(0.0, n.sigma_psi_deg.to_radians())
                        .unwrap()
                        .sample(&mut pose_rng);
                }
                m
            }
        };
        let segments = match scenario.sensor.mode {
            PerceptionMode::Precise => segments_in_range(&world.pieces, measured.x, measured.y, cfg.detection_radius),
            PerceptionMode::Lidar => {
                let cloud = lidar_scan(&state, &world.walls, &scenario.sensor, &mut lidar_rng);
                let (_, body) = detect_segments(&cloud, &scenario.sensor.perception);
                segments_to_world(&body, &measured)
            }
        };

        let ctx = Context {
            scenario,
            params,
            reference: &progress,
        };
        let clock = std::time::Instant::now();
        let out = match controller.step(&ctx, time, &measured, &act, &segments, &mut plans) {
            Ok(o) => o,
            Err(Error::PathComplete) => {
                termination = Termination::PathComplete;
                break;
            }
            Err(e) => return Err(e),
        };
        solve_times.push(clock.elapsed().as_secs_f64());

        let near = segments_in_range(&world.edges, state.x, state.y, cfg.detection_radius + 20.0);
        let (d_bow, d_stern) = closest_separation(&state, &near, cfg);
        ticks.push(TickRecord {
            time,
            state,
            actuators: act,
            command: out.command,
            segments: segments.len(),
            slack_max: out.slack_max,
            d_bow,
            d_stern,
            cross_track: progress.cross_track_error(state.x, state.y),
            status: out.status,
        });

        let (next, next_act) = augmented_step(&state, &act, &out.command, &plant, CONTROL_DT)?;
        state = next;
        act = next_act;
        if !state.is_finite() {
            termination = Termination::Diverged;
            break;
        }
        if hull_contact(&state, &near) {
            termination = Termination::Collision;
            break;
        }
    }
    Ok(SimLog {
        controller: scenario.controller,
        ticks,
        termination,
        plans,
        solve_times,
    })
}

/// The bundled canal: 1 km, 15 m wide, two bends.
pub fn bundled_canal(waypoint_offset: f64) -> CanalSpec {
    CanalSpec {
        waypoint_offset,
        pieces: vec![
            CanalPiece::Straight { length: 250.0 },
            CanalPiece::Arc {
                radius: 120.0,
                angle_deg: 45.0,
            },
            CanalPiece::Straight { length: 200.0 },
            CanalPiece::Arc {
                radius: 120.0,
                angle_deg: -45.0,
            },
            CanalPiece::Straight { length: 361.5 },
        ],
        ..CanalSpec::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn corridor(width: f64, length: f64) -> Vec<Vec<Point>> {
        vec![
            vec![Point::new(-length, width / 2.0), Point::new(length, width / 2.0)],
            vec![Point::new(-length, -width / 2.0), Point::new(length, -width / 2.0)],
        ]
    }

    #[test]
    fn scan_in_corridor() {
        let walls = corridor(15.0, 200.0);
        let spec = SensorSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = VesselState::new(0.0, 0.0, 0.3, 0.0, 0.0, 0.0);
        let cloud = lidar_scan(&pose, &walls, &spec, &mut rng);
        let min = cloud
            .points
            .iter()
            .map(|p| p[0].hypot(p[1]))
            .fold(f64::INFINITY, f64::min);
        // the fan has a ray within 0.25° of each wall normal
        assert!((min - 7.5).abs() < 7.5 * (1.0 / (0.25f64.to_radians().cos()) - 1.0) + 1e-9);
        assert!(cloud.points.iter().all(|p| (0.0..=2.0).contains(&p[2])));
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(lidar_scan(&pose, &walls, &spec, &mut rng2), cloud);
        let far = VesselState::new(0.0, 500.0, 0.0, 0.0, 0.0, 0.0);
        assert!(lidar_scan(&far, &walls, &spec, &mut rng).is_empty());
    }

    #[test]
    fn separation_examples() {
        let cfg = NmpcConfig::default();
        let segs = [
            LineSegment::new(0.0, 7.5, 0.0, 100.0),
            LineSegment::new(0.0, -7.5, 0.0, 100.0),
        ];
        let pose = VesselState::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let (b, s) = closest_separation(&pose, &segs, &cfg);
        assert_abs_diff_eq!(b, 7.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s, 7.5, epsilon = 1e-12);
        assert_eq!(closest_separation(&pose, &[], &cfg), (f64::INFINITY, f64::INFINITY));
    }

    #[test]
    fn effort_examples() {
        let rec = |w: RateInput| TickRecord {
            time: 0.0,
            state: VesselState::default(),
            actuators: ActuatorState::default(),
            command: w,
            segments: 0,
            slack_max: 0.0,
            d_bow: 0.0,
            d_stern: 0.0,
            cross_track: 0.0,
            status: "",
        };
        let mut log = SimLog {
            controller: ControllerKind::Nmpc,
            ticks: vec![rec(RateInput::default())],
            termination: Termination::Timeout,
            plans: vec![],
            solve_times: vec![],
        };
        assert_eq!(control_effort(&log, [1e-4, 1e-4]), 0.0);
        log.ticks = vec![rec(RateInput::new(10.0, 0.0))];
        assert_abs_diff_eq!(control_effort(&log, [1e-4, 1e-4]), 0.01, epsilon = 1e-15);
    }

    #[test]
    fn canal_geometry() {
        let spec = bundled_canal(0.0);
        assert_abs_diff_eq!(spec.length(), 1000.0, epsilon = 0.5);
        let sc = Scenario {
            canal: Some(spec),
            ..Scenario::default()
        };
        let world = sc.world().unwrap();
        assert_eq!(world.walls.len(), 2);
        // every centerline waypoint sits half a width from both walls
        for w in &world.waypoints {
            let d = world
                .edges
                .iter()
                .map(|e| point_segment_distance(w.x, w.y, e))
                .fold(f64::INFINITY, f64::min);
            assert!((d - 7.5).abs() < 0.05, "{d}");
        }
        for p in &world.pieces {
            assert!(p.length <= 20.0 + 1e-9);
        }
    }

    #[test]
    fn wall_pieces_follow_polyline() {
        let wall = vec![Point::new(0.0, 0.0), Point::new(50.0, 0.0)];
        let pieces = wall_pieces(&wall, 20.0, 0.25);
        assert_eq!(pieces.len(), 3);
        assert_abs_diff_eq!(pieces.iter().map(|p| p.length).sum::<f64>(), 50.0, epsilon = 1e-9);
    }

    #[test]
    fn scenario_toml_errors_have_lines() {
        let err = Scenario::from_toml_str("duration = 10\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let sc = Scenario {
            canal: Some(bundled_canal(3.0)),
            ..Scenario::default()
        };
        let back = Scenario::from_toml_str(&sc.to_toml_string()).unwrap();
        assert_eq!(back, sc);
    }
}
