//! 3-DOF surge/sway/yaw vessel model.
//!
//! ```text
//! M ν̇ + C(ν) ν + D(ν) ν = τ_c
//! η̇ = R(ψ) ν
//! ```
//!
//! with η = [x, y, ψ], ν = [u, v, r] and τ_c produced by a single outboard
//! motor (throttle `n_T`, steering `n_S`, both in percent).
//!
//! The control model works on the augmented state
//! `[x, y, ψ, u, v, r, n_T, n_S]` driven by actuator rates `[ṅ_T, ṅ_S]`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AUG_STATES: usize = 8;
pub const AUG_INPUTS: usize = 2;

pub type AugState = SVector<f64, AUG_STATES>;
pub type AugInput = Vector2<f64>;
pub type AugJacobianX = SMatrix<f64, AUG_STATES, AUG_STATES>;
pub type AugJacobianU = SMatrix<f64, AUG_STATES, AUG_INPUTS>;

/// Actuator command limit in percent.
pub const ACTUATOR_LIMIT: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VesselState {
    pub x: f64,
    pub y: f64,
    /// Heading, kept unwrapped.
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub r: f64,
}

impl VesselState {
    pub fn new(x: f64, y: f64, psi: f64, u: f64, v: f64, r: f64) -> Self {
        Self { x, y, psi, u, v, r }
    }

    pub fn at_rest(x: f64, y: f64, psi: f64) -> Self {
        Self::new(x, y, psi, 0.0, 0.0, 0.0)
    }

    pub fn nu(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, self.r)
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.psi, self.u, self.v, self.r]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Heading wrapped to (−π, π].
    pub fn heading_wrapped(&self) -> f64 {
        wrap_angle(self.psi)
    }

    fn axpy(&self, h: f64, d: &VesselState) -> VesselState {
        VesselState::new(
            self.x + h * d.x,
            self.y + h * d.y,
            self.psi + h * d.psi,
            self.u + h * d.u,
            self.v + h * d.v,
            self.r + h * d.r,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActuatorState {
    /// Throttle `n_T` in percent.
    pub throttle: f64,
    /// Steering wheel `n_S` in percent.
    pub steering: f64,
}

impl ActuatorState {
    pub fn new(throttle: f64, steering: f64) -> Self {
        Self { throttle, steering }
    }

    pub fn clamped(self) -> Self {
        Self::new(
            self.throttle.clamp(-ACTUATOR_LIMIT, ACTUATOR_LIMIT),
            self.steering.clamp(-ACTUATOR_LIMIT, ACTUATOR_LIMIT),
        )
    }
}

/// Actuator rates in percent per second.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RateInput {
    pub throttle_rate: f64,
    pub steering_rate: f64,
}

impl RateInput {
    pub fn new(throttle_rate: f64, steering_rate: f64) -> Self {
        Self {
            throttle_rate,
            steering_rate,
        }
    }

    pub fn as_vector(&self) -> AugInput {
        Vector2::new(self.throttle_rate, self.steering_rate)
    }
}

/// Control forces and moment in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub surge: f64,
    pub sway: f64,
    pub yaw: f64,
}

/// Hydrodynamic and actuation constants of the vessel.
///
/// Drag coefficients follow the dissipative sign convention (all ≤ 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub m11: f64,
    pub m22: f64,
    pub m33: f64,
    pub x_u: f64,
    pub y_v: f64,
    pub y_r: f64,
    pub n_v: f64,
    pub n_r: f64,
    pub x_uu: f64,
    pub y_vv: f64,
    pub y_rr: f64,
    pub n_vv: f64,
    pub n_rr: f64,
    pub c: f64,
    /// Lever arm from the body origin to the outboard motor [m].
    pub l_y: f64,
    /// Maximum motor angle [rad].
    pub delta_max: f64,
}

/// Index of each identifiable constant, in the order used by the
/// identification routines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    C,
    M11,
    M22,
    M33,
    Xu,
    Yv,
    Yr,
    Nv,
    Nr,
    Xuu,
    Yvv,
    Yrr,
    Nvv,
    Nrr,
}

impl Param {
    pub const ALL: [Param; 14] = [
        Param::C,
        Param::M11,
        Param::M22,
        Param::M33,
        Param::Xu,
        Param::Yv,
        Param::Yr,
        Param::Nv,
        Param::Nr,
        Param::Xuu,
        Param::Yvv,
        Param::Yrr,
        Param::Nvv,
        Param::Nrr,
    ];

    pub const SURGE: [Param; 4] = [Param::M11, Param::Xu, Param::Xuu, Param::C];

    pub const SWAY_YAW: [Param; 10] = [
        Param::M22,
        Param::M33,
        Param::Yv,
        Param::Yr,
        Param::Nv,
        Param::Nr,
        Param::Yvv,
        Param::Yrr,
        Param::Nvv,
        Param::Nrr,
    ];

    /// Key used in parameter files.
    pub fn key(self) -> &'static str {
        match self {
            Param::C => "c",
            Param::M11 => "m11",
            Param::M22 => "m22",
            Param::M33 => "m33",
            Param::Xu => "X_u",
            Param::Yv => "Y_v",
            Param::Yr => "Y_r",
            Param::Nv => "N_v",
            Param::Nr => "N_r",
            Param::Xuu => "X_u|u|",
            Param::Yvv => "Y_v|v|",
            Param::Yrr => "Y_r|r|",
            Param::Nvv => "N_v|v|",
            Param::Nrr => "N_r|r|",
        }
    }
}

/// Top speed used to fold the throttle-to-shaft-speed slope into `c`.
pub const FULL_THROTTLE_SPEED: f64 = 15.0 * 1852.0 / 3600.0;

impl ParamSet {
    /// Identified constants of the 7.9 m cruise boat, with `c` expressed per
    /// squared throttle percent.
    pub fn reference_boat() -> Self {
        Self {
            m11: 1.9149e3,
            m22: 1.8238e3,
            m33: 1.9351e3,
            x_u: -29.220,
            y_v: -3.6284e3,
            y_r: -1.6080e-4,
            n_v: -1.3102e-4,
            n_r: -2.1940e3,
            x_uu: -54.344,
            y_vv: -282.62,
            y_rr: -0.0025,
            n_vv: -0.0010,
            n_rr: -206.44,
            c: 1.3331e-5,
            l_y: 3.0,
            delta_max: 25f64.to_radians(),
        }
    }

    /// The same hull with the throttle-to-shaft-speed slope folded into `c`
    /// so that full throttle settles at 15 knots. This is the model used by
    /// the simulator, the trial generator and the controllers.
    pub fn simulation_boat() -> Self {
        let mut p = Self::reference_boat();
        let u = FULL_THROTTLE_SPEED;
        p.c = (-p.x_u * u - p.x_uu * u * u) / (ACTUATOR_LIMIT * ACTUATOR_LIMIT);
        p
    }

    pub fn get(&self, which: Param) -> f64 {
        match which {
            Param::C => self.c,
            Param::M11 => self.m11,
            Param::M22 => self.m22,
            Param::M33 => self.m33,
            Param::Xu => self.x_u,
            Param::Yv => self.y_v,
            Param::Yr => self.y_r,
            Param::Nv => self.n_v,
            Param::Nr => self.n_r,
            Param::Xuu => self.x_uu,
            Param::Yvv => self.y_vv,
            Param::Yrr => self.y_rr,
            Param::Nvv => self.n_vv,
            Param::Nrr => self.n_rr,
        }
    }

    pub fn set(&mut self, which: Param, value: f64) {
        let slot = match which {
            Param::C => &mut self.c,
            Param::M11 => &mut self.m11,
            Param::M22 => &mut self.m22,
            Param::M33 => &mut self.m33,
            Param::Xu => &mut self.x_u,
            Param::Yv => &mut self.y_v,
            Param::Yr => &mut self.y_r,
            Param::Nv => &mut self.n_v,
            Param::Nr => &mut self.n_r,
            Param::Xuu => &mut self.x_uu,
            Param::Yvv => &mut self.y_vv,
            Param::Yrr => &mut self.y_rr,
            Param::Nvv => &mut self.n_vv,
            Param::Nrr => &mut self.n_rr,
        };
        *slot = value;
    }

    /// Scales every drag coefficient by `factor`.
    pub fn with_drag_scaled(mut self, factor: f64) -> Self {
        for p in [
            Param::Xu,
            Param::Yv,
            Param::Yr,
            Param::Nv,
            Param::Nr,
            Param::Xuu,
            Param::Yvv,
            Param::Yrr,
            Param::Nvv,
            Param::Nrr,
        ] {
            self.set(p, self.get(p) * factor);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite =
            Param::ALL.iter().all(|&p| self.get(p).is_finite()) && self.l_y.is_finite() && self.delta_max.is_finite();
        if !all_finite {
            return Err(Error::InvalidParameters("non-finite value".into()));
        }
        for (name, m) in [("m11", self.m11), ("m22", self.m22), ("m33", self.m33)] {
            if m <= 0.0 {
                return Err(Error::InvalidParameters(format!("{name} = {m} must be > 0")));
            }
        }
        for p in &Param::ALL[4..] {
            if self.get(*p) > 0.0 {
                return Err(Error::InvalidParameters(format!(
                    "{} = {} must be <= 0",
                    p.key(),
                    self.get(*p)
                )));
            }
        }
        if self.c <= 0.0 {
            return Err(Error::InvalidParameters(format!("c = {} must be > 0", self.c)));
        }
        if self.l_y <= 0.0 {
            return Err(Error::InvalidParameters(format!("l_y = {} must be > 0", self.l_y)));
        }
        if !(self.delta_max > 0.0 && self.delta_max < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidParameters(format!(
                "delta_max = {} rad outside (0, pi/2)",
                self.delta_max
            )));
        }
        Ok(())
    }

    pub fn inertia(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(self.m11, self.m22, self.m33))
    }

    /// Steering gain α = δ_max / 100 [rad / %].
    pub fn steering_gain(&self) -> f64 {
        self.delta_max / ACTUATOR_LIMIT
    }

    /// Steady surge speed under constant throttle with zero steering.
    pub fn steady_surge_speed(&self, throttle: f64) -> f64 {
        let thrust = self.c * throttle * throttle.abs();
        // X_uu u|u| + X_u u + thrust = 0, solved on the branch sharing thrust's sign
        let a = -self.x_uu;
        let b = -self.x_u;
        let f = thrust.abs();
        let speed = if a > 0.0 {
            (-b + (b * b + 4.0 * a * f).sqrt()) / (2.0 * a)
        } else if b > 0.0 {
            f / b
        } else {
            f64::INFINITY
        };
        speed.copysign(thrust)
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::simulation_boat()
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Body-to-inertial rotation.
pub fn rotation_matrix(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn coriolis_matrix(nu: &Vector3<f64>, p: &ParamSet) -> Matrix3<f64> {
    let (u, v) = (nu[0], nu[1]);
    Matrix3::new(0.0, 0.0, -p.m22 * v, 0.0, 0.0, p.m11 * u, p.m22 * v, -p.m11 * u, 0.0)
}

pub fn damping_matrix(nu: &Vector3<f64>, p: &ParamSet) -> Matrix3<f64> {
    let (au, av, ar) = (nu[0].abs(), nu[1].abs(), nu[2].abs());
    -Matrix3::new(
        p.x_u + p.x_uu * au,
        0.0,
        0.0,
        0.0,
        p.y_v + p.y_vv * av,
        p.y_r + p.y_rr * ar,
        0.0,
        p.n_v + p.n_vv * av,
        p.n_r + p.n_rr * ar,
    )
}

/// Outboard thrust. Thrust magnitude is `c·n_T·|n_T|` so reverse throttle
/// produces astern force.
pub fn thrust_map(act: &ActuatorState, p: &ParamSet) -> Wrench {
    let force = p.c * act.throttle * act.throttle.abs();
    let (s, c) = (p.steering_gain() * act.steering).sin_cos();
    let sway = force * s;
    Wrench {
        surge: force * c,
        sway,
        yaw: -p.l_y * sway,
    }
}

/// Body-frame accelerations ν̇ with M inverted on the diagonal.
fn body_acceleration(nu: &Vector3<f64>, tau: &Wrench, p: &ParamSet) -> Vector3<f64> {
    let (u, v, r) = (nu[0], nu[1], nu[2]);
    // -C(ν)ν - D(ν)ν written out
    let fx = tau.surge + p.m22 * v * r + (p.x_u + p.x_uu * u.abs()) * u;
    let fy = tau.sway - p.m11 * u * r + (p.y_v + p.y_vv * v.abs()) * v + (p.y_r + p.y_rr * r.abs()) * r;
    let fn_ = tau.yaw - (p.m22 - p.m11) * u * v + (p.n_v + p.n_vv * v.abs()) * v + (p.n_r + p.n_rr * r.abs()) * r;
    Vector3::new(fx / p.m11, fy / p.m22, fn_ / p.m33)
}

fn derivative_unchecked(s: &VesselState, act: &ActuatorState, p: &ParamSet) -> VesselState {
    let (sp, cp) = s.psi.sin_cos();
    let acc = body_acceleration(&s.nu(), &thrust_map(act, p), p);
    VesselState::new(cp * s.u - sp * s.v, sp * s.u + cp * s.v, s.r, acc[0], acc[1], acc[2])
}

/// Time derivative of the 6-state model.
pub fn state_derivative(s: &VesselState, act: &ActuatorState, p: &ParamSet) -> Result<VesselState> {
    p.validate()?;
    Ok(derivative_unchecked(s, act, p))
}

fn rk4_unchecked(s: &VesselState, act: &ActuatorState, p: &ParamSet, dt: f64) -> VesselState {
    let k1 = derivative_unchecked(s, act, p);
    let k2 = derivative_unchecked(&s.axpy(0.5 * dt, &k1), act, p);
    let k3 = derivative_unchecked(&s.axpy(0.5 * dt, &k2), act, p);
    let k4 = derivative_unchecked(&s.axpy(dt, &k3), act, p);
    let mut out = *s;
    for (h, k) in [(dt / 6.0, &k1), (dt / 3.0, &k2), (dt / 3.0, &k3), (dt / 6.0, &k4)] {
        out = out.axpy(h, k);
    }
    out
}

/// Classical RK4 step with the actuator held over `dt`.
pub fn rk4_step(s: &VesselState, act: &ActuatorState, p: &ParamSet, dt: f64) -> Result<VesselState> {
    p.validate()?;
    check_dt(dt)?;
    Ok(rk4_unchecked(s, act, p, dt))
}

/// RK4 step for parameter sets already validated by the caller.
pub(crate) fn rk4_step_trusted(s: &VesselState, act: &ActuatorState, p: &ParamSet, dt: f64) -> VesselState {
    rk4_unchecked(s, act, p, dt)
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("time step {dt} must be > 0")))
    }
}

/// Advances the 8-state model under constant actuator rates, then clamps the
/// actuator states to ±100 %.
pub fn augmented_step(
    s: &VesselState,
    act: &ActuatorState,
    rate: &RateInput,
    p: &ParamSet,
    dt: f64,
) -> Result<(VesselState, ActuatorState)> {
    p.validate()?;
    check_dt(dt)?;
    let x = pack(s, act);
    let next = rk4_augmented(&x, &rate.as_vector(), p, dt);
    let (s1, a1) = unpack(&next);
    Ok((s1, a1.clamped()))
}

pub fn pack(s: &VesselState, act: &ActuatorState) -> AugState {
    AugState::from_column_slice(&[s.x, s.y, s.psi, s.u, s.v, s.r, act.throttle, act.steering])
}

pub fn unpack(x: &AugState) -> (VesselState, ActuatorState) {
    (
        VesselState::new(x[0], x[1], x[2], x[3], x[4], x[5]),
        ActuatorState::new(x[6], x[7]),
    )
}

/// Right-hand side of the augmented model.
pub fn augmented_rhs(x: &AugState, w: &AugInput, p: &ParamSet) -> AugState {
    let (s, act) = unpack(x);
    let d = derivative_unchecked(&s, &act, p);
    AugState::from_column_slice(&[d.x, d.y, d.psi, d.u, d.v, d.r, w[0], w[1]])
}

/// Analytic Jacobians of [`augmented_rhs`] with respect to state and input.
pub fn augmented_rhs_jacobian(x: &AugState, p: &ParamSet) -> (AugJacobianX, AugJacobianU) {
    let (psi, u, v, r, nt, ns) = (x[2], x[3], x[4], x[5], x[6], x[7]);
    let (sp, cp) = psi.sin_cos();
    let mut a = AugJacobianX::zeros();

    a[(0, 2)] = -u * sp - v * cp;
    a[(0, 3)] = cp;
    a[(0, 4)] = -sp;
    a[(1, 2)] = u * cp - v * sp;
    a[(1, 3)] = sp;
    a[(1, 4)] = cp;
    a[(2, 5)] = 1.0;

    let (au, av, ar) = (u.abs(), v.abs(), r.abs());
    a[(3, 3)] = (p.x_u + 2.0 * p.x_uu * au) / p.m11;
    a[(3, 4)] = p.m22 * r / p.m11;
    a[(3, 5)] = p.m22 * v / p.m11;

    a[(4, 3)] = -p.m11 * r / p.m22;
    a[(4, 4)] = (p.y_v + 2.0 * p.y_vv * av) / p.m22;
    a[(4, 5)] = (-p.m11 * u + p.y_r + 2.0 * p.y_rr * ar) / p.m22;

    let dm = p.m22 - p.m11;
    a[(5, 3)] = -dm * v / p.m33;
    a[(5, 4)] = (-dm * u + p.n_v + 2.0 * p.n_vv * av) / p.m33;
    a[(5, 5)] = (p.n_r + 2.0 * p.n_rr * ar) / p.m33;

    let alpha = p.steering_gain();
    let force = p.c * nt * nt.abs();
    let dforce = 2.0 * p.c * nt.abs();
    let (sd, cd) = (alpha * ns).sin_cos();
    // τ_X, τ_Y, τ_N partials
    let (dx_nt, dx_ns) = (dforce * cd, -force * alpha * sd);
    let (dy_nt, dy_ns) = (dforce * sd, force * alpha * cd);
    a[(3, 6)] = dx_nt / p.m11;
    a[(3, 7)] = dx_ns / p.m11;
    a[(4, 6)] = dy_nt / p.m22;
    a[(4, 7)] = dy_ns / p.m22;
    a[(5, 6)] = -p.l_y * dy_nt / p.m33;
    a[(5, 7)] = -p.l_y * dy_ns / p.m33;

    let mut b = AugJacobianU::zeros();
    b[(6, 0)] = 1.0;
    b[(7, 1)] = 1.0;
    (a, b)
}

/// One RK4 step of the augmented model (no clamping).
pub fn rk4_augmented(x: &AugState, w: &AugInput, p: &ParamSet, dt: f64) -> AugState {
    let k1 = augmented_rhs(x, w, p);
    let k2 = augmented_rhs(&(x + k1 * (0.5 * dt)), w, p);
    let k3 = augmented_rhs(&(x + k2 * (0.5 * dt)), w, p);
    let k4 = augmented_rhs(&(x + k3 * dt), w, p);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// RK4 step together with its exact sensitivities `∂x⁺/∂x` and `∂x⁺/∂w`.
pub fn rk4_augmented_sensitivity(
    x: &AugState,
    w: &AugInput,
    p: &ParamSet,
    dt: f64,
) -> (AugState, AugJacobianX, AugJacobianU) {
    let eye = AugJacobianX::identity();

    let x1 = *x;
    let k1 = augmented_rhs(&x1, w, p);
    let (a1, b1) = augmented_rhs_jacobian(&x1, p);
    let dk1_x = a1;
    let dk1_w = b1;

    let x2 = x + k1 * (0.5 * dt);
    let k2 = augmented_rhs(&x2, w, p);
    let (a2, b2) = augmented_rhs_jacobian(&x2, p);
    let dk2_x = a2 * (eye + dk1_x * (0.5 * dt));
    let dk2_w = a2 * dk1_w * (0.5 * dt) + b2;

    let x3 = x + k2 * (0.5 * dt);
    let k3 = augmented_rhs(&x3, w, p);
    let (a3, b3) = augmented_rhs_jacobian(&x3, p);
    let dk3_x = a3 * (eye + dk2_x * (0.5 * dt));
    let dk3_w = a3 * dk2_w * (0.5 * dt) + b3;

    let x4 = x + k3 * dt;
    let k4 = augmented_rhs(&x4, w, p);
    let (a4, b4) = augmented_rhs_jacobian(&x4, p);
    let dk4_x = a4 * (eye + dk3_x * dt);
    let dk4_w = a4 * dk3_w * dt + b4;

    let h = dt / 6.0;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * h;
    let jx = eye + (dk1_x + dk2_x * 2.0 + dk3_x * 2.0 + dk4_x) * h;
    let jw = (dk1_w + dk2_w * 2.0 + dk3_w * 2.0 + dk4_w) * h;
    (next, jx, jw)
}

/// Kinetic energy ½ νᵀ M ν.
pub fn kinetic_energy(s: &VesselState, p: &ParamSet) -> f64 {
    0.5 * (p.m11 * s.u * s.u + p.m22 * s.v * s.v + p.m33 * s.r * s.r)
}
