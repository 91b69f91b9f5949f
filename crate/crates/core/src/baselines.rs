//! Comparison controllers: line-of-sight guidance with PID tracking, and a
//! two-stage lexicographic planner on a unicycle model.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_angle, ActuatorState, RateInput, VesselState};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::ocp::{margin_linearization, segments_in_range, Circle, NmpcConfig, WaypointPath};
use crate::perception::LineSegment;
use crate::qp::{solve_qp_warm, ConstraintRef, QpOptions, QpProblem, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub k_p: f64,
    #[serde(default)]
    pub k_i: f64,
    #[serde(default)]
    pub k_d: f64,
    /// Bound on the integral term `k_i·∫e`.
    pub integrator_limit: f64,
    pub output_limit: f64,
}

impl PidGains {
    /// Critically damped on a 10° heading step of the built-in boat.
    pub fn heading() -> Self {
        Self {
            k_p: 8.0,
            k_i: 0.0,
            k_d: 4.0,
            integrator_limit: 100.0,
            output_limit: 100.0,
        }
    }

    pub fn speed() -> Self {
        Self {
            k_p: 25.0,
            k_i: 5.0,
            k_d: 0.0,
            integrator_limit: 100.0,
            output_limit: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.k_p, self.k_i, self.k_d].iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::InvalidConfig("PID gains must be >= 0".into()));
        }
        if !(self.integrator_limit > 0.0 && self.output_limit > 0.0) {
            return Err(Error::InvalidConfig("PID limits must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

/// One PID update; the integral term and the output are clamped.
pub fn pid_step(error: f64, state: &mut PidState, gains: &PidGains, dt: f64) -> f64 {
    if gains.k_i > 0.0 {
        let bound = gains.integrator_limit / gains.k_i;
        state.integral = (state.integral + error * dt).clamp(-bound, bound);
    }
    let derivative = match state.prev_error {
        Some(prev) if dt > 0.0 => (error - prev) / dt,
        _ => 0.0,
    };
    state.prev_error = Some(error);
    let out = gains.k_p * error + gains.k_i * state.integral + gains.k_d * derivative;
    out.clamp(-gains.output_limit, gains.output_limit)
}

/// PID on a heading error in radians, wrapped to (−π, π] and applied in
/// degrees, so heading gains are per degree.
pub fn heading_pid_step(error: f64, state: &mut PidState, gains: &PidGains, dt: f64) -> f64 {
    let e = wrap_angle(error).to_degrees();
    // keep the derivative continuous across the ±180° seam
    if let Some(prev) = state.prev_error.as_mut() {
        *prev = e - wrap_angle((e - *prev).to_radians()).to_degrees();
    }
    pid_step(e, state, gains, dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(rename = "N_b")]
    pub horizon: usize,
    pub sampling: f64,
    pub target_speed: f64,
    pub u_max: f64,
    pub r_max: f64,
    pub lookahead: f64,
    /// Distance along the reference path to the planner's end point [m].
    pub goal_distance: f64,
    /// Period between replans [s].
    pub replan_period: f64,
    pub heading_gains: PidGains,
    pub speed_gains: PidGains,
    pub max_sqp_iters: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            sampling: 0.5,
            target_speed: 2.0,
            u_max: 4.0,
            r_max: 0.1,
            lookahead: 15.8,
            goal_distance: 50.0,
            replan_period: 1.0,
            heading_gains: PidGains::heading(),
            speed_gains: PidGains::speed(),
            max_sqp_iters: 100,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidConfig("N_b must be >= 1".into()));
        }
        for (name, v) in [
            ("sampling", self.sampling),
            ("target_speed", self.target_speed),
            ("u_max", self.u_max),
            ("r_max", self.r_max),
            ("lookahead", self.lookahead),
            ("goal_distance", self.goal_distance),
            ("replan_period", self.replan_period),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        self.heading_gains.validate()?;
        self.speed_gains.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl KinematicState {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Self { x, y, psi }
    }

    fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.psi)
    }

    fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<&VesselState> for KinematicState {
    fn from(s: &VesselState) -> Self {
        Self::new(s.x, s.y, s.psi)
    }
}

fn kin_rhs(x: &Vector3<f64>, u: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new(u[0] * x[2].cos(), u[0] * x[2].sin(), u[1])
}

fn kin_jacobians(x: &Vector3<f64>, u: &Vector2<f64>) -> (Matrix3<f64>, Matrix3x2<f64>) {
    let (s, c) = x[2].sin_cos();
    let mut a = Matrix3::zeros();
    a[(0, 2)] = -u[0] * s;
    a[(1, 2)] = u[0] * c;
    let b = Matrix3x2::new(c, 0.0, s, 0.0, 0.0, 1.0);
    (a, b)
}

/// RK4 step of the unicycle model under speed `u[0]` and turn rate `u[1]`.
pub fn kinematic_step(s: &KinematicState, u: [f64; 2], dt: f64) -> KinematicState {
    let (next, _, _) = kin_rk4(&s.vector(), &Vector2::new(u[0], u[1]), dt);
    KinematicState::from_vector(&next)
}

fn kin_rk4(x: &Vector3<f64>, u: &Vector2<f64>, dt: f64) -> (Vector3<f64>, Matrix3<f64>, Matrix3x2<f64>) {
    let eye = Matrix3::identity();
    let k1 = kin_rhs(x, u);
    let (a1, b1) = kin_jacobians(x, u);
    let x2 = x + k1 * (0.5 * dt);
    let k2 = kin_rhs(&x2, u);
    let (a2, b2) = kin_jacobians(&x2, u);
    let d2x = a2 * (eye + a1 * (0.5 * dt));
    let d2u = a2 * b1 * (0.5 * dt) + b2;
    let x3 = x + k2 * (0.5 * dt);
    let k3 = kin_rhs(&x3, u);
    let (a3, b3) = kin_jacobians(&x3, u);
    let d3x = a3 * (eye + d2x * (0.5 * dt));
    let d3u = a3 * d2u * (0.5 * dt) + b3;
    let x4 = x + k3 * dt;
    let k4 = kin_rhs(&x4, u);
    let (a4, b4) = kin_jacobians(&x4, u);
    let d4x = a4 * (eye + d3x * dt);
    let d4u = a4 * d3u * dt + b4;
    let h = dt / 6.0;
    (
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * h,
        eye + (a1 + d2x * 2.0 + d3x * 2.0 + d4x) * h,
        (b1 + d2u * 2.0 + d3u * 2.0 + d4u) * h,
    )
}

/// Heading toward the path point `lookahead` metres beyond the projection
/// of the pose on the active leg.
pub fn los_heading(pose: &VesselState, path: &WaypointPath, lookahead: f64) -> Result<f64> {
    if !(lookahead > 0.0) {
        return Err(Error::InvalidConfig("lookahead must be > 0".into()));
    }
    let s = path.arc_length_at(pose.x, pose.y);
    let (target, _) = path.point_at_arc_length(s + lookahead);
    let d = target - Point::new(pose.x, pose.y);
    Ok(d.y.atan2(d.x))
}

/// PID integrators of the tracking controller.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrackerState {
    pub heading: PidState,
    pub speed: PidState,
}

impl TrackerState {
    /// Preloads the speed integrator so the first command holds `throttle`.
    pub fn bumpless(throttle: f64, gains: &PidGains) -> Self {
        let mut s = Self::default();
        if gains.k_i > 0.0 {
            s.speed.integral = throttle / gains.k_i;
        }
        s
    }
}

/// LOS heading and speed PIDs; each PID yields an actuator set-point that
/// is reached at the largest admissible rate.
pub fn baseline1_step(
    pose: &VesselState,
    act: &ActuatorState,
    planned: &WaypointPath,
    tracker: &mut TrackerState,
    cfg: &BaselineConfig,
    limits: &NmpcConfig,
    dt: f64,
) -> Result<RateInput> {
    let desired = los_heading(pose, planned, cfg.lookahead)?;
    // positive steering yaws the hull clockwise, hence the sign flip
    let steer_target = -heading_pid_step(desired - pose.psi, &mut tracker.heading, &cfg.heading_gains, dt);
    let throttle_target = pid_step(cfg.target_speed - pose.u, &mut tracker.speed, &cfg.speed_gains, dt);
    let rate = |target: f64, current: f64, limit: f64, max_rate: f64| {
        let target = target.clamp(-limit, limit);
        ((target - current) / dt).clamp(-max_rate, max_rate)
    };
    Ok(RateInput::new(
        rate(
            throttle_target,
            act.throttle,
            limits.throttle_max,
            limits.throttle_rate_max,
        ),
        rate(
            steer_target,
            act.steering,
            limits.steering_max,
            limits.steering_rate_max,
        ),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    Optimal,
    /// Stage 2 could not honour the heading-cost cap; the stage-1 plan is
    /// returned.
    StageOneFallback,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct LexiPlan {
    pub states: Vec<KinematicState>,
    /// `(u_i, r_i)` for each interval.
    pub inputs: Vec<[f64; 2]>,
    /// Optimal heading cost `Σ r_i²` of stage 1.
    pub j1: f64,
    /// Speed cost `Σ u_i²` of the returned plan.
    pub j2: f64,
    pub status: PlanStatus,
    pub endpoint_error: f64,
    /// Smallest constraint margin over nodes 1..=N_b [m].
    pub min_margin: f64,
}

impl LexiPlan {
    /// Inputs advanced by `steps` intervals, the last one repeated.
    pub fn shifted_inputs(&self, steps: usize) -> Vec<[f64; 2]> {
        let n = self.inputs.len();
        (0..n).map(|i| self.inputs[(i + steps).min(n - 1)]).collect()
    }

    pub fn heading_cost(&self) -> f64 {
        self.inputs.iter().map(|u| u[1] * u[1]).sum()
    }

    pub fn to_path(&self) -> Result<WaypointPath> {
        let mut pts: Vec<Point> = Vec::new();
        for s in &self.states {
            let p = Point::new(s.x, s.y);
            if pts.last().is_none_or(|q| (p - q).norm() > 1e-3) {
                pts.push(p);
            }
        }
        WaypointPath::new(pts)
    }
}

#[derive(Clone, Copy)]
enum Stage {
    Heading,
    Speed { cap: f64 },
}

struct PlanProblem<'a> {
    start: Vector3<f64>,
    goal: Vector3<f64>,
    segments: &'a [LineSegment],
    cfg: &'a BaselineConfig,
    clearance: &'a NmpcConfig,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum RowKey {
    Endpoint(usize),
    Obstacle(usize, usize, usize),
    Cap,
}

const PROXIMAL: f64 = 1e-4;
/// Stage-1 pull of the speeds toward their mean, which the heading cost
/// leaves undetermined.
const SPEED_REGULARIZATION: f64 = 1e-3;
/// Obstacle rows farther than this from activity are left out of the QP.
const ROW_MARGIN: f64 = 5.0;
const ELASTIC_PENALTY: f64 = 1e6;
/// Slack on the stage-two heading cap.
const CAP_TOLERANCE: f64 = 5e-7;
/// Per-iteration bound on speed changes.
const TRUST_RADIUS: f64 = 0.5;

impl PlanProblem<'_> {
    fn n(&self) -> usize {
        self.cfg.horizon
    }

    fn mean_speed(&self) -> f64 {
        (self.goal.xy() - self.start.xy()).norm() / (self.n() as f64 * self.cfg.sampling)
    }

    fn rollout(&self, u: &[Vector2<f64>]) -> Vec<Vector3<f64>> {
        let mut xs = vec![self.start];
        for w in u {
            let (next, _, _) = kin_rk4(xs.last().unwrap(), w, self.cfg.sampling);
            xs.push(next);
        }
        xs
    }

    fn endpoint_residual(&self, xs: &[Vector3<f64>]) -> Vector3<f64> {
        let e = xs[self.n()] - self.goal;
        Vector3::new(e[0], e[1], wrap_angle(e[2]))
    }

    fn margins(&self, xs: &[Vector3<f64>]) -> f64 {
        let mut worst = f64::INFINITY;
        for x in &xs[1..] {
            for seg in self.segments {
                for c in [Circle::Bow, Circle::Stern] {
                    worst = worst.min(margin_linearization(x[0], x[1], x[2], c, seg, 0.0, self.clearance).value);
                }
            }
        }
        worst
    }

    fn objective(&self, u: &[Vector2<f64>], stage: Stage) -> f64 {
        match stage {
            Stage::Heading => u
                .iter()
                .map(|w| w[1] * w[1] + SPEED_REGULARIZATION * (w[0] - self.mean_speed()).powi(2))
                .sum(),
            Stage::Speed { .. } => u.iter().map(|w| w[0] * w[0]).sum(),
        }
    }

    fn merit(&self, u: &[Vector2<f64>], stage: Stage, penalty: f64) -> f64 {
        let xs = self.rollout(u);
        let mut infeas = self.endpoint_residual(&xs).lp_norm(1) + (-self.margins(&xs)).max(0.0);
        if let Stage::Speed { cap } = stage {
            let jr: f64 = u.iter().map(|w| w[1] * w[1]).sum();
            infeas += (jr - cap).max(0.0);
        }
        self.objective(u, stage) + penalty * infeas
    }

    /// Sensitivity of the final state to every input.
    fn endpoint_jacobian(&self, u: &[Vector2<f64>]) -> (Vector3<f64>, DMatrix<f64>) {
        let n = u.len();
        let mut x = self.start;
        let mut g = DMatrix::<f64>::zeros(3, 2 * n);
        for (k, w) in u.iter().enumerate() {
            let (next, a, b) = kin_rk4(&x, w, self.cfg.sampling);
            let a = DMatrix::from_column_slice(3, 3, a.as_slice());
            g = &a * &g;
            for j in 0..2 {
                for i in 0..3 {
                    g[(i, 2 * k + j)] += b[(i, j)];
                }
            }
            x = next;
        }
        (x, g)
    }

    /// Minimum-norm Newton steps onto the end-point constraint.
    fn project_endpoint(&self, mut u: Vec<Vector2<f64>>, steps: usize) -> Vec<Vector2<f64>> {
        for _ in 0..steps {
            let (x, g) = self.endpoint_jacobian(&u);
            let e = x - self.goal;
            let e = DVector::from_vec(vec![e[0], e[1], wrap_angle(e[2])]);
            if e.amax() <= 1e-10 {
                break;
            }
            let Some(inv) = (&g * g.transpose()).try_inverse() else {
                break;
            };
            let d = -(g.transpose() * inv * e);
            for (k, w) in u.iter_mut().enumerate() {
                w[0] += d[2 * k];
                w[1] += d[2 * k + 1];
            }
        }
        u
    }

    /// Gauss–Newton SQP over the inputs. Returns the inputs and whether the
    /// hard constraints hold at the end.
    fn solve(&self, mut u: Vec<Vector2<f64>>, stage: Stage) -> (Vec<Vector2<f64>>, bool) {
        let n = self.n();
        let nv = 2 * n;
        // one elastic variable relaxes the obstacle rows and the cap
        let ne = nv + 1;
        let dt = self.cfg.sampling;
        let mut cap_multiplier = 0.0f64;
        // previous active set keyed by (stage index, segment, circle) so it
        // survives the row filtering
        let mut prev_active: Vec<(RowKey, bool)> = Vec::new();
        let mut prev_bounds: Vec<ConstraintRef> = Vec::new();
        for _ in 0..self.cfg.max_sqp_iters {
            // condensed sensitivities
            let mut xs = vec![self.start];
            let mut g: Vec<DMatrix<f64>> = vec![DMatrix::zeros(3, nv)];
            for k in 0..n {
                let (next, a, b) = kin_rk4(&xs[k], &u[k], dt);
                let a = DMatrix::from_column_slice(3, 3, a.as_slice());
                let mut gk = &a * &g[k];
                for j in 0..2 {
                    for i in 0..3 {
                        gk[(i, 2 * k + j)] += b[(i, j)];
                    }
                }
                xs.push(next);
                g.push(gk);
            }

            let (wu, wr) = match stage {
                Stage::Heading => (SPEED_REGULARIZATION, 1.0),
                Stage::Speed { .. } => (1.0, cap_multiplier.max(1.0)),
            };
            let mut h = DMatrix::<f64>::zeros(ne, ne);
            let mut grad = DVector::<f64>::zeros(ne);
            h[(nv, nv)] = PROXIMAL;
            grad[nv] = ELASTIC_PENALTY;
            for k in 0..n {
                h[(2 * k, 2 * k)] = 2.0 * wu + PROXIMAL;
                h[(2 * k + 1, 2 * k + 1)] = 2.0 * wr + PROXIMAL;
                grad[2 * k] = match stage {
                    Stage::Heading => 2.0 * wu * (u[k][0] - self.mean_speed()),
                    Stage::Speed { .. } => 2.0 * wu * u[k][0],
                };
                grad[2 * k + 1] = match stage {
                    Stage::Heading => 2.0 * u[k][1],
                    Stage::Speed { .. } => 0.0,
                };
            }
            let mut lo_x = DVector::zeros(ne);
            let mut up_x = DVector::zeros(ne);
            up_x[nv] = f64::INFINITY;
            for k in 0..n {
                lo_x[2 * k] = (-self.cfg.u_max - u[k][0]).max(-TRUST_RADIUS);
                up_x[2 * k] = (self.cfg.u_max - u[k][0]).min(TRUST_RADIUS);
                lo_x[2 * k + 1] = -self.cfg.r_max - u[k][1];
                up_x[2 * k + 1] = self.cfg.r_max - u[k][1];
            }
            let jr: f64 = u.iter().map(|w| w[1] * w[1]).sum();
            if let Stage::Speed { cap } = stage {
                if cap <= 1e-12 {
                    // the cap pins every turn rate at zero
                    for k in 0..n {
                        lo_x[2 * k + 1] = -u[k][1];
                        up_x[2 * k + 1] = -u[k][1];
                    }
                }
            }

            let mut rows: Vec<(DVector<f64>, f64, f64)> = Vec::new();
            let mut keys: Vec<RowKey> = Vec::new();
            let e = self.endpoint_residual(&xs);
            for i in 0..3 {
                let row = g[n].row(i).transpose().insert_row(nv, 0.0);
                rows.push((row, -e[i], -e[i]));
                keys.push(RowKey::Endpoint(i));
            }
            for k in 1..=n {
                let x = &xs[k];
                for (si, seg) in self.segments.iter().enumerate() {
                    for (ci, c) in [Circle::Bow, Circle::Stern].into_iter().enumerate() {
                        let m = margin_linearization(x[0], x[1], x[2], c, seg, 0.0, self.clearance);
                        let row = (g[k].row(0) * m.d_x + g[k].row(1) * m.d_y + g[k].row(2) * m.d_psi).transpose();
                        if m.value < ROW_MARGIN && row.amax() > 1e-12 {
                            rows.push((row.insert_row(nv, 1.0), -m.value, f64::INFINITY));
                            keys.push(RowKey::Obstacle(k, si, ci));
                        }
                    }
                }
            }
            let cap_row = match stage {
                Stage::Speed { cap } if cap > 1e-12 => {
                    let mut row = DVector::zeros(ne);
                    for k in 0..n {
                        row[2 * k + 1] = 2.0 * u[k][1];
                    }
                    row[nv] = -1.0;
                    rows.push((row, f64::NEG_INFINITY, cap - jr));
                    keys.push(RowKey::Cap);
                    Some(rows.len() - 1)
                }
                _ => None,
            };
            let mut a = DMatrix::zeros(rows.len(), ne);
            let mut lo = DVector::zeros(rows.len());
            let mut up = DVector::zeros(rows.len());
            for (i, (row, l, hi)) in rows.into_iter().enumerate() {
                a.row_mut(i).copy_from(&row.transpose());
                lo[i] = l;
                up[i] = hi;
            }
            let qp = QpProblem::new(h, grad)
                .with_bounds(lo_x, up_x)
                .with_constraints(a, lo, up);
            let mut hint = prev_bounds.clone();
            for (key, upper) in &prev_active {
                if let Some(i) = keys.iter().position(|k| k == key) {
                    hint.push(ConstraintRef::Row(i, *upper));
                }
            }
            let sol = solve_qp_warm(&qp, &hint, QpOptions::default());
            if sol.status != QpStatus::Optimal {
                break;
            }
            if let Some(ci) = cap_row {
                cap_multiplier = sol
                    .active
                    .iter()
                    .zip(&sol.multipliers)
                    .find(|(c, _)| **c == ConstraintRef::Row(ci, true))
                    .map(|(_, m)| m.abs())
                    .unwrap_or(0.0);
            }
            prev_bounds.clear();
            prev_active.clear();
            for c in &sol.active {
                match *c {
                    ConstraintRef::Row(i, upper) => prev_active.push((keys[i], upper)),
                    var => prev_bounds.push(var),
                }
            }
            let d = sol.x.rows(0, nv).into_owned();
            let lambda = sol
                .active
                .iter()
                .zip(&sol.multipliers)
                .filter(|(c, _)| matches!(c, ConstraintRef::Row(..)))
                .fold(0.0f64, |m, (_, l)| m.max(l.abs()));
            let penalty = (2.0 * lambda).max(1.0);
            let base = self.merit(&u, stage, penalty);
            let mut alpha = 1.0;
            let mut trial = u.clone();
            let mut accepted = false;
            for attempt in 0..20 {
                trial = (0..n)
                    .map(|k| u[k] + Vector2::new(d[2 * k], d[2 * k + 1]) * alpha)
                    .collect();
                if self.merit(&trial, stage, penalty) < base {
                    accepted = true;
                    break;
                }
                if attempt == 0 {
                    // second-order correction on the end point
                    let corrected = self.project_endpoint(trial.clone(), 1);
                    if self.merit(&corrected, stage, penalty) < base {
                        trial = corrected;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                let xs = self.rollout(&u);
                if self.endpoint_residual(&xs).amax() <= 1e-8 && self.margins(&xs) >= -1e-6 {
                    break;
                }
            }
            let before = self.objective(&u, stage);
            u = trial;
            let xs = self.rollout(&u);
            let feasible = self.endpoint_residual(&xs).amax() <= 1e-8 && self.margins(&xs) >= -1e-6;
            if feasible && (before - self.objective(&u, stage)).abs() <= 1e-9 * before.max(1.0) {
                break;
            }
            if d.amax() * alpha < 1e-7 || d.amax() < 1e-6 {
                break;
            }
        }
        let mut u = self.project_endpoint(u, 5);
        for w in u.iter_mut() {
            w[0] = w[0].clamp(-self.cfg.u_max, self.cfg.u_max);
            w[1] = w[1].clamp(-self.cfg.r_max, self.cfg.r_max);
        }
        let xs = self.rollout(&u);
        let ok = self.endpoint_residual(&xs).amax() <= 1e-6 && self.margins(&xs) >= -1e-3;
        (u, ok)
    }
}

/// Two-stage plan from `x_i` to `x_f`: stage 1 minimizes `Σ r²`, stage 2
/// minimizes `Σ u²` without exceeding the stage-1 heading cost.
pub fn lexi_plan(
    x_i: &KinematicState,
    x_f: &KinematicState,
    segments: &[LineSegment],
    cfg: &BaselineConfig,
    clearance: &NmpcConfig,
) -> Result<LexiPlan> {
    lexi_plan_warm(x_i, x_f, segments, cfg, clearance, None)
}

/// [`lexi_plan`] starting stage 1 from `guess` (one `(u, r)` per interval).
pub fn lexi_plan_warm(
    x_i: &KinematicState,
    x_f: &KinematicState,
    segments: &[LineSegment],
    cfg: &BaselineConfig,
    clearance: &NmpcConfig,
    guess: Option<&[[f64; 2]]>,
) -> Result<LexiPlan> {
    cfg.validate()?;
    let n = cfg.horizon;
    let span = n as f64 * cfg.sampling;
    let start = x_i.vector();
    let goal = x_f.vector();
    let dist = (goal.xy() - start.xy()).norm();
    if dist > cfg.u_max * span {
        return Err(Error::InvalidConfig(format!(
            "end point {dist:.1} m away is out of reach in {span} s"
        )));
    }
    let segments = segments_in_range(segments, x_i.x, x_i.y, clearance.detection_radius + dist);
    let prob = PlanProblem {
        start,
        goal,
        segments: &segments,
        cfg,
        clearance,
    };
    let guess: Vec<Vector2<f64>> = match guess {
        Some(g) if g.len() == n => g
            .iter()
            .map(|w| Vector2::new(w[0].clamp(-cfg.u_max, cfg.u_max), w[1].clamp(-cfg.r_max, cfg.r_max)))
            .collect(),
        _ => vec![
            Vector2::new(
                dist / span,
                (wrap_angle(goal[2] - start[2]) / span).clamp(-cfg.r_max, cfg.r_max)
            );
            n
        ],
    };
    let (u1, ok1) = prob.solve(guess, Stage::Heading);
    let finish = |u: &[Vector2<f64>], status: PlanStatus, j1: f64| {
        let xs = prob.rollout(u);
        LexiPlan {
            states: xs.iter().map(KinematicState::from_vector).collect(),
            inputs: u.iter().map(|w| [w[0], w[1]]).collect(),
            j1,
            j2: u.iter().map(|w| w[0] * w[0]).sum(),
            status,
            endpoint_error: prob.endpoint_residual(&xs).amax(),
            min_margin: prob.margins(&xs),
        }
    };
    let j1: f64 = u1.iter().map(|w| w[1] * w[1]).sum();
    if !ok1 {
        return Ok(finish(&u1, PlanStatus::Infeasible, j1));
    }
    let cap = j1 + CAP_TOLERANCE;
    let (u2, ok2) = prob.solve(u1.clone(), Stage::Speed { cap });
    let j_r2: f64 = u2.iter().map(|w| w[1] * w[1]).sum();
    if ok2 && j_r2 <= j1 + 1e-6 {
        Ok(finish(&u2, PlanStatus::Optimal, j1))
    } else {
        Ok(finish(&u1, PlanStatus::StageOneFallback, j1))
    }
}

/// End point for the planner: the path point `goal_distance` ahead, moved
/// sideways by the smallest offset that clears every segment.
pub fn plan_goal(
    pose: &VesselState,
    path: &WaypointPath,
    segments: &[LineSegment],
    cfg: &BaselineConfig,
    clearance: &NmpcConfig,
) -> Option<KinematicState> {
    let s = path.arc_length_at(pose.x, pose.y);
    let (p, heading) = path.point_at_arc_length(s + cfg.goal_distance);
    let normal = Point::new(-heading.sin(), heading.cos());
    let near = segments_in_range(segments, p.x, p.y, clearance.detection_radius);
    let ok = |q: Point| {
        near.iter().all(|seg| {
            [Circle::Bow, Circle::Stern]
                .iter()
                .all(|c| margin_linearization(q.x, q.y, heading, *c, seg, 0.0, clearance).value >= 0.05)
        })
    };
    for step in 0..=200 {
        let off = step as f64 * 0.05;
        for sign in [1.0, -1.0] {
            let q = p + normal * (sign * off);
            if ok(q) {
                return Some(KinematicState::new(q.x, q.y, heading));
            }
            if step == 0 {
                break;
            }
        }
    }
    None
}
