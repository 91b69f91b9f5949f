//! Parameter identification from maneuvering trials.
//!
//! Surge constants are fitted on acceleration/deceleration steps, then the
//! sway-yaw constants on a zigzag with the surge constants held fixed. Both
//! fits minimize a weighted state-error sum with Levenberg–Marquardt in
//! coordinates normalized by the initial guess. Rollouts restart from the
//! measured state every `segment_length` samples.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_step_trusted, thrust_map, wrap_angle, ActuatorState, Param, ParamSet, VesselState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialKind {
    Acceleration,
    Deceleration,
    Zigzag,
}

impl TrialKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialKind::Acceleration => "acceleration",
            TrialKind::Deceleration => "deceleration",
            TrialKind::Zigzag => "zigzag",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "acceleration" => Some(TrialKind::Acceleration),
            "deceleration" => Some(TrialKind::Deceleration),
            "zigzag" => Some(TrialKind::Zigzag),
            _ => None,
        }
    }

    pub fn is_surge(self) -> bool {
        matches!(self, TrialKind::Acceleration | TrialKind::Deceleration)
    }
}

/// Uniformly sampled trial: `N + 1` states and `N` held actuator commands.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub kind: TrialKind,
    pub times: Vec<f64>,
    pub states: Vec<VesselState>,
    pub inputs: Vec<ActuatorState>,
}

impl TrialDataset {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDataset(m));
        if self.states.len() < 2 {
            return bad("need at least two samples".into());
        }
        if self.times.len() != self.states.len() {
            return bad(format!(
                "{} timestamps for {} states",
                self.times.len(),
                self.states.len()
            ));
        }
        if self.inputs.len() + 1 != self.states.len() {
            return bad(format!("{} inputs for {} states", self.inputs.len(), self.states.len()));
        }
        let dt = self.times[1] - self.times[0];
        if !(dt > 0.0) {
            return bad("timestamps must increase".into());
        }
        for (i, w) in self.times.windows(2).enumerate() {
            if !((w[1] - w[0] - dt).abs() <= 1e-6) {
                return bad(format!("non-uniform sampling at sample {}", i + 1));
            }
        }
        if self.states.iter().any(|s| !s.is_finite())
            || self
                .inputs
                .iter()
                .any(|a| !a.throttle.is_finite() || !a.steering.is_finite())
        {
            return bad("non-finite sample".into());
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SysIdConfig {
    /// Diagonal of the state weight over `(x, y, ψ, u, v, r)`.
    pub weights: [f64; 6],
    pub initial_guess: ParamSet,
    pub free: Vec<Param>,
    pub max_iters: usize,
    pub tolerance: f64,
    pub segment_length: usize,
}

impl SysIdConfig {
    pub fn surge(initial_guess: ParamSet) -> Self {
        Self {
            weights: [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            initial_guess,
            free: Param::SURGE.to_vec(),
            max_iters: 200,
            tolerance: 1e-10,
            segment_length: 50,
        }
    }

    pub fn sway_yaw(initial_guess: ParamSet) -> Self {
        Self {
            weights: [1.0, 1.0, 100.0, 0.0, 100.0, 100.0],
            initial_guess,
            free: Param::SWAY_YAW.to_vec(),
            ..Self::surge(initial_guess)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidConfig("state weights must be >= 0".into()));
        }
        if self.segment_length < 2 {
            return Err(Error::InvalidConfig("segment_length must be >= 2".into()));
        }
        for p in &self.free {
            if self.initial_guess.get(*p) == 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "free parameter {} has a zero guess",
                    p.key()
                )));
            }
        }
        self.initial_guess.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SysIdReport {
    pub fitted: ParamSet,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Unweighted RMS error per state over the segment-wise rollouts.
    pub rms: [f64; 6],
    pub iterations: usize,
    pub converged: bool,
}

/// Open-loop RK4 rollout; `inputs[i]` is held over `[t_i, t_i + dt)`.
pub fn simulate_rollout(x0: &VesselState, inputs: &[ActuatorState], p: &ParamSet, dt: f64) -> Result<Vec<VesselState>> {
    p.validate()?;
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("time step {dt} must be > 0")));
    }
    Ok(rollout_trusted(x0, inputs, p, dt))
}

fn rollout_trusted(x0: &VesselState, inputs: &[ActuatorState], p: &ParamSet, dt: f64) -> Vec<VesselState> {
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push(*x0);
    let mut s = *x0;
    for a in inputs {
        s = rk4_step_trusted(&s, a, p, dt);
        out.push(s);
    }
    out
}

fn state_error(pred: &VesselState, meas: &VesselState) -> [f64; 6] {
    [
        pred.x - meas.x,
        pred.y - meas.y,
        wrap_angle(pred.psi - meas.psi),
        pred.u - meas.u,
        pred.v - meas.v,
        pred.r - meas.r,
    ]
}

/// Segment-wise rollout predictions aligned with `data.states`.
fn segment_predictions(p: &ParamSet, data: &TrialDataset, segment_length: usize) -> Vec<VesselState> {
    let dt = data.dt();
    let n = data.inputs.len();
    let mut pred = Vec::with_capacity(n + 1);
    let mut start = 0;
    while start < n {
        let end = (start + segment_length).min(n);
        let seg = rollout_trusted(&data.states[start], &data.inputs[start..end], p, dt);
        let skip = if start == 0 { 0 } else { 1 };
        pred.extend_from_slice(&seg[skip..]);
        start = end;
    }
    if pred.is_empty() {
        pred.push(data.states[0]);
    }
    pred
}

fn residuals_into(p: &ParamSet, data: &[TrialDataset], cfg: &SysIdConfig, out: &mut Vec<f64>) {
    out.clear();
    let sw = cfg.weights.map(f64::sqrt);
    for d in data {
        let pred = segment_predictions(p, d, cfg.segment_length);
        for (a, b) in pred.iter().zip(&d.states) {
            let e = state_error(a, b);
            for i in 0..6 {
                if sw[i] > 0.0 {
                    out.push(sw[i] * e[i]);
                }
            }
        }
    }
}

/// Weighted squared state error over segment-wise rollouts.
pub fn sysid_cost(p: &ParamSet, data: &TrialDataset, cfg: &SysIdConfig) -> f64 {
    sysid_cost_multi(p, std::slice::from_ref(data), cfg)
}

pub fn sysid_cost_multi(p: &ParamSet, data: &[TrialDataset], cfg: &SysIdConfig) -> f64 {
    if p.validate().is_err() {
        return f64::INFINITY;
    }
    let mut r = Vec::new();
    residuals_into(p, data, cfg, &mut r);
    r.iter().map(|v| v * v).sum()
}

fn rms_errors(p: &ParamSet, data: &[TrialDataset], cfg: &SysIdConfig) -> [f64; 6] {
    let mut acc = [0.0; 6];
    let mut count = 0usize;
    for d in data {
        let pred = segment_predictions(p, d, cfg.segment_length);
        for (a, b) in pred.iter().zip(&d.states) {
            let e = state_error(a, b);
            for i in 0..6 {
                acc[i] += e[i] * e[i];
            }
            count += 1;
        }
    }
    acc.map(|s| (s / count.max(1) as f64).sqrt())
}

/// Fits surge constants on acceleration/deceleration trials.
pub fn identify_surge(data: &[TrialDataset], cfg: &SysIdConfig) -> Result<SysIdReport> {
    if data.is_empty() {
        return Err(Error::InvalidDataset("no surge trials given".into()));
    }
    for d in data {
        d.validate()?;
        if !d.kind.is_surge() {
            return Err(Error::InvalidDataset(format!(
                "{} trial given to surge identification",
                d.kind.as_str()
            )));
        }
    }
    let peak_u = data
        .iter()
        .flat_map(|d| d.states.iter().map(|s| s.u.abs()))
        .fold(0.0, f64::max);
    if peak_u < 1e-6 {
        return Err(Error::DegenerateData("surge speed never leaves zero".into()));
    }
    levenberg_marquardt(data, cfg)
}

/// Fits sway-yaw constants on zigzag trials with the surge constants of
/// `surge` held fixed.
pub fn identify_sway_yaw(data: &[TrialDataset], surge: &ParamSet, cfg: &SysIdConfig) -> Result<SysIdReport> {
    if data.is_empty() {
        return Err(Error::InvalidDataset("no zigzag trials given".into()));
    }
    for d in data {
        d.validate()?;
        if d.kind != TrialKind::Zigzag {
            return Err(Error::InvalidDataset(format!(
                "{} trial given to sway-yaw identification",
                d.kind.as_str()
            )));
        }
    }
    let peak_steer = data
        .iter()
        .flat_map(|d| d.inputs.iter().map(|a| a.steering.abs()))
        .fold(0.0, f64::max);
    if peak_steer < 1e-9 {
        return Err(Error::DegenerateData("steering never leaves zero".into()));
    }
    let mut cfg = cfg.clone();
    for p in Param::SURGE {
        cfg.initial_guess.set(p, surge.get(p));
    }
    cfg.free.retain(|p| !Param::SURGE.contains(p));
    levenberg_marquardt(data, &cfg)
}

fn levenberg_marquardt(data: &[TrialDataset], cfg: &SysIdConfig) -> Result<SysIdReport> {
    cfg.validate()?;
    let free = &cfg.free;
    // each free constant is optimized as a multiple of its initial magnitude
    // and kept on the sign side of its guess
    let scale: Vec<f64> = free.iter().map(|p| cfg.initial_guess.get(*p)).collect();
    let project = |theta: &mut DVector<f64>| {
        for (i, which) in free.iter().enumerate() {
            let floor = if matches!(which, Param::M11 | Param::M22 | Param::M33 | Param::C) {
                1e-6
            } else {
                0.0
            };
            theta[i] = theta[i].max(floor);
        }
    };
    let to_params = |theta: &DVector<f64>| {
        let mut p = cfg.initial_guess;
        for (i, which) in free.iter().enumerate() {
            p.set(*which, scale[i] * theta[i]);
        }
        p
    };
    let mut theta = DVector::from_element(free.len(), 1.0);
    let mut r = Vec::new();
    residuals_into(&to_params(&theta), data, cfg, &mut r);
    let initial_cost: f64 = r.iter().map(|v| v * v).sum();
    let mut cost = initial_cost;
    let mut lambda = 1e-3;
    let mut converged = free.is_empty() || cost == 0.0;
    let mut iterations = 0;
    let h = 1e-5;
    let (mut rp, mut rm) = (Vec::new(), Vec::new());

    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        let m = r.len();
        let mut jac = DMatrix::<f64>::zeros(m, free.len());
        for j in 0..free.len() {
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            residuals_into(&to_params(&tp), data, cfg, &mut rp);
            residuals_into(&to_params(&tm), data, cfg, &mut rm);
            for i in 0..m {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &rv;
        let diag_floor = 1e-6 * jtj.diagonal().max().max(1e-300);

        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..free.len() {
                a[(i, i)] += lambda * jtj[(i, i)].max(diag_floor);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = -chol.solve(&jtr);
            let mut trial = &theta + &step;
            project(&mut trial);
            let p_trial = to_params(&trial);
            let trial_cost = if p_trial.validate().is_ok() {
                residuals_into(&p_trial, data, cfg, &mut rp);
                rp.iter().map(|v| v * v).sum::<f64>()
            } else {
                f64::INFINITY
            };
            if trial_cost < cost {
                let rel = (cost - trial_cost) / cost.max(1e-300);
                theta = trial;
                std::mem::swap(&mut r, &mut rp);
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel < cfg.tolerance || step.amax() < 1e-8 || cost <= 1e-20 * initial_cost {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !accepted {
            // no descent direction left: a stationary point within tolerance
            converged = jtr.amax() <= 1e-6 * (1.0 + cost);
            break;
        }
    }

    let fitted = to_params(&theta);
    Ok(SysIdReport {
        fitted,
        initial_cost,
        final_cost: cost,
        rms: rms_errors(&fitted, data, cfg),
        iterations,
        converged,
    })
}

/// Maneuver to synthesize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrialSpec {
    /// Throttle steps from rest, each held until the surge acceleration
    /// settles.
    Acceleration { throttle_steps: Vec<f64> },
    /// Throttle steps starting from steady speed at the first step.
    Deceleration { throttle_steps: Vec<f64> },
    /// Steering toggled between `±steering` whenever the heading passes
    /// `±heading_deg`; stops after `overshoots` heading overshoots.
    Zigzag {
        throttle: f64,
        steering: f64,
        heading_deg: f64,
        overshoots: usize,
    },
}

impl TrialSpec {
    pub fn acceleration() -> Self {
        TrialSpec::Acceleration {
            throttle_steps: vec![31.0, 34.9, 38.6, 41.0, 50.6],
        }
    }

    pub fn deceleration() -> Self {
        TrialSpec::Deceleration {
            throttle_steps: vec![50.6, 39.4, 20.0],
        }
    }

    pub fn zigzag() -> Self {
        TrialSpec::Zigzag {
            throttle: 42.0,
            steering: 50.0,
            heading_deg: 20.0,
            overshoots: 3,
        }
    }

    pub fn kind(&self) -> TrialKind {
        match self {
            TrialSpec::Acceleration { .. } => TrialKind::Acceleration,
            TrialSpec::Deceleration { .. } => TrialKind::Deceleration,
            TrialSpec::Zigzag { .. } => TrialKind::Zigzag,
        }
    }
}

pub const TRIAL_DT: f64 = 0.1;
const SETTLED_ACCEL: f64 = 1e-3;
const MAX_STEP_DURATION: f64 = 600.0;

/// Simulates a maneuver at 10 Hz and adds Gaussian measurement noise with
/// per-state standard deviations `noise` (the true trajectory is noiseless).
pub fn generate_trial(spec: &TrialSpec, p: &ParamSet, noise: [f64; 6], seed: u64) -> Result<TrialDataset> {
    p.validate()?;
    let dt = TRIAL_DT;
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    match spec {
        TrialSpec::Acceleration { throttle_steps } | TrialSpec::Deceleration { throttle_steps } => {
            if throttle_steps.is_empty() {
                return Err(Error::InvalidConfig("no throttle steps".into()));
            }
            let mut s = VesselState::default();
            if matches!(spec, TrialSpec::Deceleration { .. }) {
                s.u = p.steady_surge_speed(throttle_steps[0]);
            }
            states.push(s);
            for &n_t in throttle_steps {
                let act = ActuatorState::new(n_t, 0.0);
                let max_steps = (MAX_STEP_DURATION / dt) as usize;
                for _ in 0..max_steps {
                    let next = rk4_step_trusted(&s, &act, p, dt);
                    inputs.push(act);
                    states.push(next);
                    let accel = (next.u - s.u) / dt;
                    s = next;
                    if accel.abs() < SETTLED_ACCEL {
                        break;
                    }
                }
            }
        }
        TrialSpec::Zigzag {
            throttle,
            steering,
            heading_deg,
            overshoots,
        } => {
            let mut s = VesselState::new(0.0, 0.0, 0.0, p.steady_surge_speed(*throttle), 0.0, 0.0);
            let threshold = heading_deg.to_radians();
            // heading direction produced by positive steering
            let turn = thrust_map(&ActuatorState::new(*throttle, steering.abs()), p)
                .yaw
                .signum();
            let mut command = steering.abs();
            let mut count = 0;
            states.push(s);
            let max_steps = (MAX_STEP_DURATION * 4.0 / dt) as usize;
            for _ in 0..max_steps {
                let act = ActuatorState::new(*throttle, command);
                let next = rk4_step_trusted(&s, &act, p, dt);
                inputs.push(act);
                states.push(next);
                let heading_dir = turn * command.signum();
                s = next;
                if s.psi * heading_dir >= threshold {
                    if count == *overshoots {
                        break;
                    }
                    command = -command;
                    count += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if noise.iter().any(|s| *s > 0.0) {
        let dists: Vec<Option<Normal<f64>>> = noise
            .iter()
            .map(|&sd| (sd > 0.0).then(|| Normal::new(0.0, sd).expect("finite std")))
            .collect();
        for s in states.iter_mut() {
            let mut a = s.to_array();
            for (v, d) in a.iter_mut().zip(&dists) {
                if let Some(d) = d {
                    *v += d.sample(&mut rng);
                }
            }
            *s = VesselState::from_array(a);
        }
    }
    let times = (0..states.len()).map(|i| i as f64 * dt).collect();
    Ok(TrialDataset {
        kind: spec.kind(),
        times,
        states,
        inputs,
    })
}

/// Number of heading extrema beyond `±threshold` in a trace.
pub fn count_overshoots(states: &[VesselState], threshold: f64) -> usize {
    states
        .windows(3)
        .filter(|w| {
            let (a, b, c) = (w[0].psi, w[1].psi, w[2].psi);
            (b > a && b >= c && b > threshold) || (b < a && b <= c && b < -threshold)
        })
        .count()
}

/// Largest heading excursion beyond the zigzag threshold [rad].
pub fn max_overshoot(states: &[VesselState], threshold: f64) -> f64 {
    states.iter().map(|s| s.psi.abs() - threshold).fold(0.0, f64::max)
}

/// Physically motivated starting point: rigid-body mass and yaw inertia of a
/// 7.9 m × 2.6 m, 1700 kg hull, with rough drag magnitudes.
pub fn hull_initial_guess() -> ParamSet {
    let mass = 1700.0;
    let (length, beam) = (7.9_f64, 2.6_f64);
    let mut p = ParamSet::simulation_boat();
    p.m11 = mass;
    p.m22 = mass;
    p.m33 = mass * (length * length + beam * beam) / 12.0;
    p.y_v = -2000.0;
    p.n_r = -2000.0;
    p.y_vv = -200.0;
    p.n_rr = -200.0;
    p.y_r = -1e-3;
    p.n_v = -1e-3;
    p.y_rr = -1e-3;
    p.n_vv = -1e-3;
    p
}

/// Least-squares fit of `X_u` and `X_u|u|` to settled speeds given `c`:
/// `−X_u·u − X_u|u|·u² = c·n_T²` on each plateau of the surge trials.
pub fn steady_state_drag_guess(data: &[TrialDataset], c: f64) -> Option<(f64, f64)> {
    let mut rows = Vec::new();
    for d in data.iter().filter(|d| d.kind.is_surge()) {
        for i in 1..d.inputs.len() {
            let last_of_step = i + 1 == d.inputs.len() || d.inputs[i + 1].throttle != d.inputs[i].throttle;
            if last_of_step && d.states[i + 1].u > 0.0 {
                let u = d.states[i + 1].u;
                let n = d.inputs[i].throttle;
                rows.push((u, u * u, c * n * n.abs()));
            }
        }
    }
    if rows.len() < 2 {
        return None;
    }
    let a = DMatrix::from_fn(rows.len(), 2, |i, j| if j == 0 { rows[i].0 } else { rows[i].1 });
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
    let sol = (a.transpose() * &a).cholesky()?.solve(&(a.transpose() * b));
    let (xu, xuu) = (-sol[0], -sol[1]);
    (xu < 0.0 && xuu < 0.0).then_some((xu, xuu))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_rollout() {
        let p = ParamSet::simulation_boat();
        let x0 = VesselState::new(1.0, 2.0, 0.3, 1.0, 0.0, 0.0);
        assert_eq!(simulate_rollout(&x0, &[], &p, 0.1).unwrap(), vec![x0]);
    }

    #[test]
    fn cost_zero_at_truth_and_with_null_weight() {
        let p = ParamSet::simulation_boat();
        let d = generate_trial(&TrialSpec::acceleration(), &p, [0.0; 6], 1).unwrap();
        let cfg = SysIdConfig::surge(p);
        assert!(sysid_cost(&p, &d, &cfg) <= 1e-9);
        let mut perturbed = p;
        perturbed.m11 *= 1.1;
        assert!(sysid_cost(&perturbed, &d, &cfg) > sysid_cost(&p, &d, &cfg));
        let mut null = cfg.clone();
        null.weights = [0.0; 6];
        assert_eq!(sysid_cost(&perturbed, &d, &null), 0.0);
    }

    #[test]
    fn acceleration_trial_settles_at_steady_speed() {
        let p = ParamSet::simulation_boat();
        let d = generate_trial(&TrialSpec::acceleration(), &p, [0.0; 6], 0).unwrap();
        // scalar root of c·n² = −X_u u − X_uu u|u| by bisection
        let f = |u: f64| p.c * 50.6 * 50.6 + p.x_u * u + p.x_uu * u * u;
        let (mut lo, mut hi) = (0.0, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let last = d.states.last().unwrap().u;
        assert!((last - lo).abs() < 0.01, "{last} vs {lo}");
        assert_eq!(d.inputs.last().unwrap().throttle, 50.6);
    }

    #[test]
    fn zigzag_has_three_overshoots() {
        let p = ParamSet::simulation_boat();
        let d = generate_trial(&TrialSpec::zigzag(), &p, [0.0; 6], 0).unwrap();
        assert_eq!(count_overshoots(&d.states, 20f64.to_radians()), 3);
        assert!(d.inputs.iter().any(|a| a.steering > 0.0) && d.inputs.iter().any(|a| a.steering < 0.0));
    }

    #[test]
    fn trials_are_deterministic() {
        let p = ParamSet::simulation_boat();
        let noise = [0.01, 0.01, 0.001, 0.01, 0.01, 0.001];
        let a = generate_trial(&TrialSpec::zigzag(), &p, noise, 9).unwrap();
        let b = generate_trial(&TrialSpec::zigzag(), &p, noise, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let p = ParamSet::simulation_boat();
        let still = TrialDataset {
            kind: TrialKind::Acceleration,
            times: vec![0.0, 0.1, 0.2],
            states: vec![VesselState::default(); 3],
            inputs: vec![ActuatorState::default(); 2],
        };
        assert!(matches!(
            identify_surge(&[still], &SysIdConfig::surge(p)),
            Err(Error::DegenerateData(_))
        ));
        let straight = generate_trial(
            &TrialSpec::Deceleration {
                throttle_steps: vec![40.0, 30.0],
            },
            &p,
            [0.0; 6],
            0,
        )
        .unwrap();
        let straight = TrialDataset {
            kind: TrialKind::Zigzag,
            ..straight
        };
        assert!(matches!(
            identify_sway_yaw(&[straight], &p, &SysIdConfig::sway_yaw(p)),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn dataset_validation() {
        let mut d = generate_trial(&TrialSpec::acceleration(), &ParamSet::simulation_boat(), [0.0; 6], 0).unwrap();
        assert!(d.validate().is_ok());
        d.times[3] += 0.01;
        assert!(matches!(d.validate(), Err(Error::InvalidDataset(_))));
    }
}
