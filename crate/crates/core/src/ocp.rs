//! Finite-horizon optimal control problem for the augmented vessel model.
//!
//! Multiple-shooting transcription over `N_p` stages of length `T_s`:
//! states `x_0..x_Np` (8-dim), actuator rates `u_0..u_{Np-1}` and one slack
//! per stage shared by that stage's obstacle constraints. The cost tracks a
//! reference running along the waypoint path at the target speed. Every line
//! segment near the vessel contributes a quartic super-ellipse exclusion
//! constraint for both the bow and the stern safety circle.

use serde::{Deserialize, Serialize};

use crate::dynamics::{pack, wrap_angle, ActuatorState, AugInput, AugState, ParamSet, VesselState, AUG_STATES};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::perception::LineSegment;

/// Smallest allowed perpendicular semi-axis of the exclusion region [m].
pub const DENOMINATOR_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmpcConfig {
    #[serde(rename = "N_p")]
    pub horizon: usize,
    #[serde(rename = "T_s")]
    pub sample_time: f64,
    #[serde(rename = "Q")]
    pub q: [f64; AUG_STATES],
    /// Terminal weight; `Q·N_p` when absent.
    #[serde(rename = "Q_T", skip_serializing_if = "Option::is_none")]
    pub q_terminal: Option<[f64; AUG_STATES]>,
    #[serde(rename = "R")]
    pub r: [f64; 2],
    pub rho: f64,
    #[serde(rename = "n_T_max")]
    pub throttle_max: f64,
    #[serde(rename = "n_S_max")]
    pub steering_max: f64,
    #[serde(rename = "dn_T_max")]
    pub throttle_rate_max: f64,
    #[serde(rename = "dn_S_max")]
    pub steering_rate_max: f64,
    #[serde(rename = "R_b")]
    pub safety_radius: f64,
    #[serde(rename = "d_p")]
    pub separation: f64,
    pub l_b: f64,
    pub l_s: f64,
    pub u_ref: f64,
    pub detection_radius: f64,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            horizon: 25,
            sample_time: 1.0,
            q: [1.0, 1.0, 500.0, 10.0, 0.0, 1000.0, 0.0, 0.0],
            q_terminal: None,
            r: [1e-4, 1e-4],
            rho: 1e4,
            throttle_max: 100.0,
            steering_max: 100.0,
            throttle_rate_max: 10.0,
            steering_rate_max: 40.0,
            safety_radius: 3.0,
            separation: 2.0,
            l_b: 2.0,
            l_s: 2.0,
            u_ref: 2.0,
            detection_radius: 50.0,
        }
    }
}

impl NmpcConfig {
    pub fn terminal_weights(&self) -> [f64; AUG_STATES] {
        self.q_terminal
            .unwrap_or_else(|| self.q.map(|w| w * self.horizon as f64))
    }

    /// `R_b + d_p`.
    pub fn clearance(&self) -> f64 {
        self.safety_radius + self.separation
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.horizon < 1 {
            return bad("N_p must be >= 1");
        }
        if !(self.sample_time > 0.0) {
            return bad("T_s must be > 0");
        }
        let terminal = self.terminal_weights();
        if self
            .q
            .iter()
            .chain(&self.r)
            .chain(terminal.iter())
            .any(|w| !(*w >= 0.0))
        {
            return bad("weights must be >= 0");
        }
        if !(self.rho > 0.0) {
            return bad("rho must be > 0");
        }
        for (name, v) in [
            ("R_b", self.safety_radius),
            ("d_p", self.separation),
            ("l_b", self.l_b),
            ("l_s", self.l_s),
        ] {
            if !(v > 0.0) {
                return bad(&format!("{name} must be > 0"));
            }
        }
        for (name, v) in [
            ("n_T_max", self.throttle_max),
            ("n_S_max", self.steering_max),
            ("dn_T_max", self.throttle_rate_max),
            ("dn_S_max", self.steering_rate_max),
        ] {
            if !(v > 0.0) {
                return bad(&format!("{name} must be > 0"));
            }
        }
        Ok(())
    }
}

/// Ordered waypoints with the index of the leg currently being followed.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointPath {
    waypoints: Vec<Point>,
    active_leg: usize,
    finished: bool,
}

/// Foot of the perpendicular from a pose onto a leg.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub leg: usize,
    pub point: Point,
    /// Position along the leg in [0, 1].
    pub t: f64,
    /// Signed lateral offset, positive to the left of the leg direction.
    pub cross_track: f64,
}

impl WaypointPath {
    pub fn new(waypoints: Vec<Point>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidPath("need at least two waypoints".into()));
        }
        for (i, w) in waypoints.windows(2).enumerate() {
            if (w[1] - w[0]).norm() == 0.0 {
                return Err(Error::InvalidPath(format!("waypoints {i} and {} coincide", i + 1)));
            }
        }
        if waypoints.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidPath("non-finite waypoint".into()));
        }
        Ok(Self {
            waypoints,
            active_leg: 0,
            finished: false,
        })
    }

    pub fn from_xy(points: &[[f64; 2]]) -> Result<Self> {
        Self::new(points.iter().map(|p| Point::new(p[0], p[1])).collect())
    }

    pub fn waypoints(&self) -> &[Point] {
        &self.waypoints
    }

    pub fn num_legs(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn active_leg(&self) -> usize {
        self.active_leg
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn leg(&self, i: usize) -> (Point, Point) {
        (self.waypoints[i], self.waypoints[i + 1])
    }

    pub fn leg_length(&self, i: usize) -> f64 {
        let (a, b) = self.leg(i);
        (b - a).norm()
    }

    pub fn project_on_leg(&self, leg: usize, x: f64, y: f64) -> Projection {
        let (a, b) = self.leg(leg);
        let d = b - a;
        let p = Point::new(x, y);
        let t = ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        let foot = a + d * t;
        let dir = d / d.norm();
        let rel = p - a;
        Projection {
            leg,
            point: foot,
            t,
            cross_track: dir.x * rel.y - dir.y * rel.x,
        }
    }

    /// Projection onto the active leg.
    pub fn project(&self, x: f64, y: f64) -> Projection {
        self.project_on_leg(self.active_leg, x, y)
    }

    /// Advances the active leg while the projection sits at a leg's end.
    /// Returns [`Error::PathComplete`] once the final waypoint is reached.
    pub fn update_progress(&mut self, x: f64, y: f64) -> Result<()> {
        if self.finished {
            return Err(Error::PathComplete);
        }
        loop {
            let proj = self.project(x, y);
            if proj.t < 1.0 {
                return Ok(());
            }
            if self.active_leg + 1 >= self.num_legs() {
                self.finished = true;
                return Err(Error::PathComplete);
            }
            self.active_leg += 1;
        }
    }

    /// Arc length from the path start to the projection of `(x, y)` on the
    /// active leg.
    pub fn arc_length_at(&self, x: f64, y: f64) -> f64 {
        let proj = self.project(x, y);
        let before: f64 = (0..self.active_leg).map(|i| self.leg_length(i)).sum();
        before + proj.t * self.leg_length(self.active_leg)
    }

    pub fn total_length(&self) -> f64 {
        (0..self.num_legs()).map(|i| self.leg_length(i)).sum()
    }

    /// Leg containing arc length `s` (the last leg beyond the end).
    pub fn leg_at_arc_length(&self, s: f64) -> usize {
        let mut acc = 0.0;
        for i in 0..self.num_legs() {
            acc += self.leg_length(i);
            if s < acc {
                return i;
            }
        }
        self.num_legs() - 1
    }

    /// Point at arc length `s`, extrapolated along the last leg.
    pub fn point_at_arc_length(&self, s: f64) -> (Point, f64) {
        let mut acc = 0.0;
        for i in 0..self.num_legs() {
            let len = self.leg_length(i);
            if s < acc + len || i + 1 == self.num_legs() {
                let (a, b) = self.leg(i);
                let dir = (b - a) / len;
                return (a + dir * (s - acc).max(0.0), dir.y.atan2(dir.x));
            }
            acc += len;
        }
        unreachable!("path has at least one leg")
    }

    /// Cross-track error to the closest leg at or after the active one.
    pub fn cross_track_error(&self, x: f64, y: f64) -> f64 {
        (self.active_leg..self.num_legs())
            .map(|i| self.project_on_leg(i, x, y).cross_track.abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Four-quadrant heading of the leg from `a` to `b`.
pub fn reference_heading(a: Point, b: Point) -> Result<f64> {
    let d = b - a;
    if d.norm() == 0.0 {
        return Err(Error::InvalidPath("coincident waypoints".into()));
    }
    Ok(d.y.atan2(d.x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    /// `[x_r, y_r, ψ_r, u_r, 0, 0, 0, 0]` for stages 0..=N_p.
    pub points: Vec<AugState>,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Reference starting at the projection of the pose on the active leg and
/// marching `u_ref·T_s` per stage along the heading of the leg that contains
/// the stage's arc length.
pub fn build_reference(path: &WaypointPath, pose: &VesselState, cfg: &NmpcConfig) -> Result<ReferenceTrajectory> {
    if path.is_finished() {
        return Err(Error::PathComplete);
    }
    let proj = path.project(pose.x, pose.y);
    let s0 = path.arc_length_at(pose.x, pose.y);
    let step = cfg.u_ref * cfg.sample_time;
    let heading_at = |s: f64| -> Result<f64> {
        let (a, b) = path.leg(path.leg_at_arc_length(s).max(path.active_leg()));
        reference_heading(a, b)
    };

    // keep reference headings on the same branch as the vessel heading
    let unwrap_near = |h: f64, near: f64| near + wrap_angle(h - near);

    let mut points = Vec::with_capacity(cfg.horizon + 1);
    let mut pos = proj.point;
    let mut heading = unwrap_near(heading_at(s0)?, pose.psi);
    for i in 0..=cfg.horizon {
        if i > 0 {
            pos += Point::new(heading.cos(), heading.sin()) * step;
            heading = unwrap_near(heading_at(s0 + i as f64 * step)?, heading);
        }
        points.push(AugState::from_column_slice(&[
            pos.x, pos.y, heading, cfg.u_ref, 0.0, 0.0, 0.0, 0.0,
        ]));
    }
    Ok(ReferenceTrajectory { points })
}

fn weighted_error(x: &AugState, r: &AugState, w: &[f64; AUG_STATES]) -> f64 {
    (0..AUG_STATES)
        .map(|i| {
            let e = if i == 2 { wrap_angle(x[i] - r[i]) } else { x[i] - r[i] };
            w[i] * e * e
        })
        .sum()
}

pub fn stage_cost(x: &AugState, r: &AugState, u: &AugInput, slack: f64, cfg: &NmpcConfig) -> f64 {
    weighted_error(x, r, &cfg.q) + cfg.r[0] * u[0] * u[0] + cfg.r[1] * u[1] * u[1] + cfg.rho * slack * slack
}

pub fn terminal_cost(x: &AugState, r: &AugState, slack: f64, cfg: &NmpcConfig) -> f64 {
    weighted_error(x, r, &cfg.terminal_weights()) + cfg.rho * slack * slack
}

/// Bow (`p_b`) and stern (`p_s`) safety-circle centers.
pub fn safety_circle_centers(x: f64, y: f64, psi: f64, cfg: &NmpcConfig) -> (Point, Point) {
    let (s, c) = psi.sin_cos();
    (
        Point::new(x + cfg.l_b * c, y + cfg.l_b * s),
        Point::new(x - cfg.l_s * c, y - cfg.l_s * s),
    )
}

/// Quartic exclusion value `g`; the constraint holds when `g ≥ 0`.
pub fn obstacle_constraint_value(p: &Point, seg: &LineSegment, slack: f64, cfg: &NmpcConfig) -> f64 {
    obstacle_constraint_gradient(p, seg, slack, cfg).value
}

/// `g` and its partial derivatives with respect to the circle center and the
/// slack.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintLinearization {
    pub value: f64,
    pub d_px: f64,
    pub d_py: f64,
    pub d_slack: f64,
}

pub fn obstacle_constraint_gradient(
    p: &Point,
    seg: &LineSegment,
    slack: f64,
    cfg: &NmpcConfig,
) -> ConstraintLinearization {
    let (s, c) = seg.theta.sin_cos();
    let dx = p.x - seg.x_c;
    let dy = p.y - seg.y_c;
    let along = dx * c + dy * s;
    let across = -dx * s + dy * c;
    let a_den = seg.length / 2.0 + cfg.clearance();
    let raw_b = cfg.clearance() - slack;
    let floored = raw_b < DENOMINATOR_FLOOR;
    let b_den = raw_b.max(DENOMINATOR_FLOOR);
    let qa = along / a_den;
    let qb = across / b_den;
    let value = qa.powi(4) + qb.powi(4) - 1.0;
    let d_along = 4.0 * qa.powi(3) / a_den;
    let d_across = 4.0 * qb.powi(3) / b_den;
    ConstraintLinearization {
        value,
        d_px: d_along * c - d_across * s,
        d_py: d_along * s + d_across * c,
        d_slack: if floored { 0.0 } else { 4.0 * qb.powi(4) / b_den },
    }
}

/// Smallest slack for which the circle at `p` satisfies the constraint of
/// `seg`, capped where the denominator floor makes it unreachable.
pub fn required_slack(p: &Point, seg: &LineSegment, cfg: &NmpcConfig) -> f64 {
    let (s, c) = seg.theta.sin_cos();
    let dx = p.x - seg.x_c;
    let dy = p.y - seg.y_c;
    let along = (dx * c + dy * s) / (seg.length / 2.0 + cfg.clearance());
    let across = (-dx * s + dy * c).abs();
    let rest = 1.0 - along.powi(4);
    if rest <= 0.0 {
        return 0.0;
    }
    let b_needed = across / rest.powf(0.25);
    (cfg.clearance() - b_needed).clamp(0.0, cfg.clearance() - DENOMINATOR_FLOOR)
}

/// Metric form of the constraint, `(R_b + d_p)·((g + 1)^¼ − 1)`: zero on the
/// boundary, equal to the clearance surplus along the segment normal.
pub fn obstacle_margin(p: &Point, seg: &LineSegment, slack: f64, cfg: &NmpcConfig) -> f64 {
    let g = obstacle_constraint_value(p, seg, slack, cfg);
    cfg.clearance() * ((g + 1.0).max(0.0).powf(0.25) - 1.0)
}

/// Linearization of [`obstacle_margin`] with respect to the vessel pose
/// `(x, y, ψ)` of the given circle, and the slack.
#[derive(Debug, Clone, Copy)]
pub struct MarginLinearization {
    pub value: f64,
    pub d_x: f64,
    pub d_y: f64,
    pub d_psi: f64,
    pub d_slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Circle {
    Bow,
    Stern,
}

pub fn margin_linearization(
    x: f64,
    y: f64,
    psi: f64,
    circle: Circle,
    seg: &LineSegment,
    slack: f64,
    cfg: &NmpcConfig,
) -> MarginLinearization {
    let (bow, stern) = safety_circle_centers(x, y, psi, cfg);
    let (p, offset) = match circle {
        Circle::Bow => (bow, cfg.l_b),
        Circle::Stern => (stern, -cfg.l_s),
    };
    let lin = obstacle_constraint_gradient(&p, seg, slack, cfg);
    let base = (lin.value + 1.0).max(1e-12);
    let k = cfg.clearance() * 0.25 * base.powf(-0.75);
    let (s, c) = psi.sin_cos();
    // ∂p/∂ψ = offset·(−sin ψ, cos ψ)
    let d_psi_g = lin.d_px * (-offset * s) + lin.d_py * (offset * c);
    MarginLinearization {
        value: cfg.clearance() * (base.powf(0.25) - 1.0),
        d_x: k * lin.d_px,
        d_y: k * lin.d_py,
        d_psi: k * d_psi_g,
        d_slack: k * lin.d_slack,
    }
}

/// Initial guess / warm start for the decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Guess {
    pub states: Vec<AugState>,
    pub inputs: Vec<AugInput>,
    pub slacks: Vec<f64>,
}

impl Guess {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    fn consistent_with(&self, n: usize) -> bool {
        self.inputs.len() == n && self.states.len() == n + 1 && self.slacks.len() == n + 1
    }
}

#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub x_init: AugState,
    pub reference: ReferenceTrajectory,
    /// Segments within the detection radius (inertial frame).
    pub segments: Vec<LineSegment>,
    pub config: NmpcConfig,
    pub params: ParamSet,
    pub guess: Guess,
}

impl OcpProblem {
    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// Two circles per segment at every stage 0..=N_p.
    pub fn num_obstacle_constraints(&self) -> usize {
        2 * self.segments.len() * (self.horizon() + 1)
    }

    pub fn num_decision_variables(&self) -> usize {
        let n = self.horizon();
        AUG_STATES * (n + 1) + 2 * n + (n + 1)
    }
}

/// Segments whose center lies within `radius` of the vessel.
pub fn segments_in_range(segments: &[LineSegment], x: f64, y: f64, radius: f64) -> Vec<LineSegment> {
    segments
        .iter()
        .filter(|s| ((s.x_c - x).powi(2) + (s.y_c - y).powi(2)).sqrt() <= radius)
        .copied()
        .collect()
}

/// Builds the OCP for the current pose. Without a warm start the states
/// follow the reference (actuators held at their current values), inputs
/// and slacks are zero.
pub fn assemble(
    pose: &VesselState,
    act: &ActuatorState,
    path: &WaypointPath,
    segments: &[LineSegment],
    cfg: &NmpcConfig,
    params: &ParamSet,
    warm_start: Option<&Guess>,
) -> Result<OcpProblem> {
    cfg.validate()?;
    params.validate()?;
    if !pose.is_finite() {
        return Err(Error::InvalidConfig("non-finite pose".into()));
    }
    let reference = build_reference(path, pose, cfg)?;
    let x_init = pack(pose, act);
    let n = cfg.horizon;
    let guess = match warm_start {
        Some(g) if g.consistent_with(n) => {
            let mut g = g.clone();
            g.states[0] = x_init;
            g
        }
        _ => {
            let mut states: Vec<AugState> = reference
                .points
                .iter()
                .map(|r| {
                    let mut s = *r;
                    s[6] = act.throttle;
                    s[7] = act.steering;
                    s
                })
                .collect();
            states[0] = x_init;
            Guess {
                states,
                inputs: vec![AugInput::zeros(); n],
                slacks: vec![0.0; n + 1],
            }
        }
    };
    Ok(OcpProblem {
        x_init,
        reference,
        segments: segments_in_range(segments, pose.x, pose.y, cfg.detection_radius),
        config: cfg.clone(),
        params: *params,
        guess,
    })
}
