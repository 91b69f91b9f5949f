//! Gauss–Newton SQP for [`OcpProblem`] with real-time-iteration support.
//!
//! Each iteration linearizes the shooting defects and the obstacle
//! constraints about the current iterate, condenses the states out, and
//! solves a dense QP over rate inputs and slacks.

use std::fs::File;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{rk4_augmented, rk4_augmented_sensitivity, wrap_angle, AugInput, AugState, AUG_STATES};
use crate::error::Result;
use crate::ocp::{
    margin_linearization, obstacle_margin, required_slack, safety_circle_centers, stage_cost, terminal_cost, Circle,
    Guess, OcpProblem,
};
use crate::qp::{kkt_residual, solve_qp_warm, ConstraintRef, QpOptions, QpProblem, QpStatus};

pub const HESSIAN_REGULARIZATION: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    InfeasibleQp,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max-iter",
            SolveStatus::InfeasibleQp => "infeasible-qp",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub inputs: Vec<AugInput>,
    pub states: Vec<AugState>,
    pub slacks: Vec<f64>,
    /// Cost of the inputs rolled out through the model (see [`plan_cost`]).
    pub objective: f64,
    pub status: SolveStatus,
    /// Wall-clock time [s].
    pub solve_time: f64,
    pub iterations: usize,
    pub qp_iterations: usize,
    pub active_set_size: usize,
    pub kkt_residual: f64,
}

impl SolveResult {
    pub fn as_guess(&self) -> Guess {
        Guess {
            states: self.states.clone(),
            inputs: self.inputs.clone(),
            slacks: self.slacks.clone(),
        }
    }

    /// Rate command for the current cycle.
    pub fn first_input(&self) -> AugInput {
        self.inputs.first().copied().unwrap_or_else(AugInput::zeros)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SqpOptions {
    pub max_iters: usize,
    /// Step-size tolerance; `None` runs exactly `max_iters` iterations.
    pub tolerance: Option<f64>,
    pub qp_max_iter: Option<usize>,
    /// Backtracking on an exact-penalty merit function instead of full steps.
    pub line_search: bool,
}

impl SqpOptions {
    pub fn rti() -> Self {
        Self {
            max_iters: 1,
            tolerance: None,
            qp_max_iter: None,
            line_search: false,
        }
    }

    pub fn converged() -> Self {
        Self {
            max_iters: 50,
            tolerance: Some(1e-6),
            qp_max_iter: None,
            line_search: true,
        }
    }
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self::rti()
    }
}

/// SQP solver with the previous active set kept as a QP warm start.
pub struct RtiSolver {
    pub options: SqpOptions,
    hint: Vec<ConstraintRef>,
    diagnostics: Option<csv::Writer<File>>,
}

impl RtiSolver {
    pub fn new(options: SqpOptions) -> Self {
        Self {
            options,
            hint: Vec::new(),
            diagnostics: None,
        }
    }

    /// Appends one CSV row per solve to `path`.
    pub fn with_diagnostics(mut self, path: &Path) -> Result<Self> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "objective",
            "kkt_residual",
            "active_set",
            "qp_iterations",
            "sqp_iterations",
            "status",
            "time",
        ])?;
        self.diagnostics = Some(w);
        Ok(self)
    }

    pub fn reset(&mut self) {
        self.hint.clear();
    }

    pub fn solve(&mut self, ocp: &OcpProblem) -> SolveResult {
        let start = Instant::now();
        let n = ocp.horizon();
        let mut it = Iterate {
            states: ocp.guess.states.clone(),
            inputs: ocp.guess.inputs.clone(),
            slacks: ocp.guess.slacks.iter().map(|s| s.max(0.0)).collect(),
        };
        it.states[0] = ocp.x_init;
        let mut status = SolveStatus::Optimal;
        let mut iterations = 0;
        let mut qp_iterations = 0;
        let mut active_size = 0;
        let mut kkt = 0.0;
        let mut converged = self.options.tolerance.is_none();

        for _ in 0..self.options.max_iters.max(1) {
            iterations += 1;
            let lin = linearize(ocp, &it);
            let qp = lin.qp;
            let sol = solve_qp_warm(
                &qp,
                &self.hint,
                QpOptions {
                    max_iter: self.options.qp_max_iter,
                },
            );
            qp_iterations += sol.iterations;
            match sol.status {
                QpStatus::Optimal => {}
                QpStatus::MaxIter => {
                    status = SolveStatus::MaxIter;
                    break;
                }
                QpStatus::Infeasible | QpStatus::InvalidProblem => {
                    status = SolveStatus::InfeasibleQp;
                    break;
                }
            }
            kkt = kkt_residual(&qp, &sol);
            active_size = sol.active.len();
            self.hint = sol.active.clone();

            let dx = &sol.x;
            let delta_states: Vec<AugState> = (0..=n)
                .map(|k| AugState::from_column_slice((&lin.c[k] + &lin.g[k] * dx.rows(0, 2 * n)).as_slice()))
                .collect();
            let step = delta_states
                .iter()
                .map(|d| d.amax())
                .chain(dx.iter().map(|v| v.abs()))
                .fold(0.0, f64::max);
            let alpha = if self.options.line_search {
                line_search(ocp, &it, &delta_states, dx)
            } else {
                1.0
            };
            it = it.stepped(&delta_states, dx, alpha);
            if let Some(tol) = self.options.tolerance {
                if step < tol {
                    converged = true;
                    break;
                }
            }
        }
        if status == SolveStatus::Optimal && !converged {
            status = SolveStatus::MaxIter;
        }

        clamp_rates(&mut it.inputs, ocp);
        let objective = plan_cost(ocp, &it.inputs);
        let result = SolveResult {
            inputs: it.inputs,
            states: it.states,
            slacks: it.slacks,
            objective,
            status,
            solve_time: start.elapsed().as_secs_f64(),
            iterations,
            qp_iterations,
            active_set_size: active_size,
            kkt_residual: kkt,
        };
        if let Some(w) = self.diagnostics.as_mut() {
            let _ = w.write_record([
                format!("{:.9e}", result.objective),
                format!("{:.3e}", result.kkt_residual),
                result.active_set_size.to_string(),
                result.qp_iterations.to_string(),
                result.iterations.to_string(),
                result.status.as_str().to_string(),
                format!("{:.6}", result.solve_time),
            ]);
            let _ = w.flush();
        }
        result
    }
}

/// One SQP pass with a fresh solver; `iters = 1` is a single real-time
/// iteration.
pub fn sqp_rti_step(ocp: &OcpProblem, iters: usize) -> SolveResult {
    let opts = SqpOptions {
        max_iters: iters.max(1),
        tolerance: None,
        qp_max_iter: None,
        line_search: false,
    };
    RtiSolver::new(opts).solve(ocp)
}

/// Shifts the previous solution by one stage, duplicating the last one.
pub fn shift_warm_start(prev: &SolveResult) -> Guess {
    shift_warm_start_by(prev, 1.0)
}

/// Shifts by a fraction of a stage with linear interpolation between
/// neighboring stages; used when the control period is shorter than `T_s`.
pub fn shift_warm_start_by(prev: &SolveResult, stages: f64) -> Guess {
    fn shift<T>(v: &[T], by: f64, lerp: impl Fn(&T, &T, f64) -> T) -> Vec<T> {
        let last = v.len() - 1;
        (0..v.len())
            .map(|k| {
                let pos = (k as f64 + by).min(last as f64);
                let i = pos.floor() as usize;
                let f = pos - i as f64;
                if i >= last || f == 0.0 {
                    lerp(&v[i.min(last)], &v[i.min(last)], 0.0)
                } else {
                    lerp(&v[i], &v[i + 1], f)
                }
            })
            .collect()
    }
    let by = stages.max(0.0);
    Guess {
        states: shift(&prev.states, by, |a, b, f| a + (b - a) * f),
        inputs: shift(&prev.inputs, by, |a, b, f| a + (b - a) * f),
        slacks: shift(&prev.slacks, by, |a, b, f| a + (b - a) * f),
    }
}

#[derive(Clone)]
struct Iterate {
    states: Vec<AugState>,
    inputs: Vec<AugInput>,
    slacks: Vec<f64>,
}

impl Iterate {
    fn stepped(&self, delta_states: &[AugState], dx: &DVector<f64>, alpha: f64) -> Iterate {
        let n = self.inputs.len();
        Iterate {
            states: self
                .states
                .iter()
                .zip(delta_states)
                .map(|(x, d)| x + d * alpha)
                .collect(),
            inputs: (0..n)
                .map(|k| self.inputs[k] + AugInput::new(dx[2 * k], dx[2 * k + 1]) * alpha)
                .collect(),
            slacks: (0..=n)
                .map(|k| (self.slacks[k] + alpha * dx[2 * n + k]).max(0.0))
                .collect(),
        }
    }
}

/// Cost plus `ρ`-weighted L1 infeasibility (defects, obstacle margins,
/// actuator bounds).
fn merit(ocp: &OcpProblem, it: &Iterate) -> f64 {
    let cfg = &ocp.config;
    let n = ocp.horizon();
    let mut infeas = (ocp.x_init - it.states[0]).lp_norm(1);
    for k in 0..n {
        let next = rk4_augmented(&it.states[k], &it.inputs[k], &ocp.params, cfg.sample_time);
        infeas += (next - it.states[k + 1]).lp_norm(1);
    }
    for (k, x) in it.states.iter().enumerate() {
        infeas += (x[6].abs() - cfg.throttle_max).max(0.0) + (x[7].abs() - cfg.steering_max).max(0.0);
        let (bow, stern) = safety_circle_centers(x[0], x[1], x[2], cfg);
        for seg in &ocp.segments {
            for p in [bow, stern] {
                infeas += (-obstacle_margin(&p, seg, it.slacks[k], cfg)).max(0.0);
            }
        }
    }
    evaluate_objective(ocp, it) + cfg.rho * infeas
}

fn line_search(ocp: &OcpProblem, it: &Iterate, delta_states: &[AugState], dx: &DVector<f64>) -> f64 {
    let base = merit(ocp, it);
    let mut alpha = 1.0;
    for _ in 0..12 {
        if merit(ocp, &it.stepped(delta_states, dx, alpha)) < base {
            return alpha;
        }
        alpha *= 0.5;
    }
    alpha
}

struct Linearization {
    qp: QpProblem,
    /// Affine state prediction `Δx_k = c_k + G_k·Δw`.
    c: Vec<DVector<f64>>,
    g: Vec<DMatrix<f64>>,
}

fn linearize(ocp: &OcpProblem, it: &Iterate) -> Linearization {
    let cfg = &ocp.config;
    let n = ocp.horizon();
    let nw = 2 * n;
    let nv = nw + n + 1;

    let mut c = Vec::with_capacity(n + 1);
    let mut g = Vec::with_capacity(n + 1);
    let c0 = ocp.x_init - it.states[0];
    c.push(DVector::from_column_slice(c0.as_slice()));
    g.push(DMatrix::<f64>::zeros(AUG_STATES, nw));
    for k in 0..n {
        let (next, a, b) = rk4_augmented_sensitivity(&it.states[k], &it.inputs[k], &ocp.params, cfg.sample_time);
        let a = DMatrix::from_column_slice(AUG_STATES, AUG_STATES, a.as_slice());
        let defect = next - it.states[k + 1];
        let ck = &a * &c[k] + DVector::from_column_slice(defect.as_slice());
        let mut gk = &a * &g[k];
        for j in 0..2 {
            for i in 0..AUG_STATES {
                gk[(i, 2 * k + j)] += b[(i, j)];
            }
        }
        c.push(ck);
        g.push(gk);
    }

    let mut h = DMatrix::<f64>::zeros(nv, nv);
    let mut grad = DVector::<f64>::zeros(nv);
    let q = cfg.q;
    let qt = cfg.terminal_weights();
    for k in 1..=n {
        let w = if k == n { &qt } else { &q };
        let mut e = &c[k] + DVector::from_column_slice(it.states[k].as_slice())
            - DVector::from_column_slice(ocp.reference.points[k].as_slice());
        e[2] = wrap_angle(e[2]);
        let cols = 2 * k;
        let gk = g[k].columns(0, cols);
        let mut wg = gk.clone_owned();
        for i in 0..AUG_STATES {
            wg.row_mut(i).scale_mut(w[i]);
        }
        let block = gk.transpose() * &wg;
        let mut hb = h.view_mut((0, 0), (cols, cols));
        hb += block;
        let we = DVector::from_iterator(AUG_STATES, (0..AUG_STATES).map(|i| w[i] * e[i]));
        let mut gb = grad.rows_mut(0, cols);
        gb += gk.transpose() * we;
    }
    for k in 0..n {
        for j in 0..2 {
            h[(2 * k + j, 2 * k + j)] += cfg.r[j];
            grad[2 * k + j] += cfg.r[j] * it.inputs[k][j];
        }
    }
    for k in 0..=n {
        h[(nw + k, nw + k)] += cfg.rho;
        grad[nw + k] += cfg.rho * it.slacks[k];
    }
    for i in 0..nv {
        h[(i, i)] += HESSIAN_REGULARIZATION;
    }
    // exact symmetry for the QP's check
    let h = (&h + h.transpose()) * 0.5;

    let mut lower_x = DVector::from_element(nv, f64::NEG_INFINITY);
    let mut upper_x = DVector::from_element(nv, f64::INFINITY);
    let rate_max = [cfg.throttle_rate_max, cfg.steering_rate_max];
    for k in 0..n {
        for j in 0..2 {
            lower_x[2 * k + j] = -rate_max[j] - it.inputs[k][j];
            upper_x[2 * k + j] = rate_max[j] - it.inputs[k][j];
        }
    }
    for k in 0..=n {
        lower_x[nw + k] = -it.slacks[k];
    }

    let mut rows: Vec<(DVector<f64>, f64, f64)> = Vec::new();
    let act_max = [cfg.throttle_max, cfg.steering_max];
    for k in 1..=n {
        for j in 0..2 {
            let idx = 6 + j;
            let base = it.states[k][idx] + c[k][idx];
            let mut row = DVector::zeros(nv);
            row.rows_mut(0, nw).copy_from(&g[k].row(idx).transpose());
            rows.push((row, -act_max[j] - base, act_max[j] - base));
        }
    }
    for k in 0..=n {
        let x = &it.states[k];
        for seg in &ocp.segments {
            for circle in [Circle::Bow, Circle::Stern] {
                let m = margin_linearization(x[0], x[1], x[2], circle, seg, it.slacks[k], cfg);
                let mut row = DVector::zeros(nv);
                for col in 0..2 * k {
                    row[col] = m.d_x * g[k][(0, col)] + m.d_y * g[k][(1, col)] + m.d_psi * g[k][(2, col)];
                }
                row[nw + k] = m.d_slack;
                if row.amax() < 1e-12 {
                    continue;
                }
                let base = m.value + m.d_x * c[k][0] + m.d_y * c[k][1] + m.d_psi * c[k][2];
                rows.push((row, -base, f64::INFINITY));
            }
        }
    }
    let mut a = DMatrix::zeros(rows.len(), nv);
    let mut lo = DVector::zeros(rows.len());
    let mut up = DVector::zeros(rows.len());
    for (i, (row, l, u)) in rows.into_iter().enumerate() {
        a.row_mut(i).copy_from(&row.transpose());
        lo[i] = l;
        up[i] = u;
    }
    let qp = QpProblem::new(h, grad)
        .with_bounds(lower_x, upper_x)
        .with_constraints(a, lo, up);
    Linearization { qp, c, g }
}

fn clamp_rates(inputs: &mut [AugInput], ocp: &OcpProblem) {
    let cfg = &ocp.config;
    for w in inputs {
        w[0] = w[0].clamp(-cfg.throttle_rate_max, cfg.throttle_rate_max);
        w[1] = w[1].clamp(-cfg.steering_rate_max, cfg.steering_rate_max);
    }
}

/// Cost of the plan: the inputs are rolled out from `x_init` and each stage
/// is charged the smallest slack that makes it feasible.
pub fn plan_cost(ocp: &OcpProblem, inputs: &[AugInput]) -> f64 {
    let cfg = &ocp.config;
    let n = ocp.horizon();
    let mut states = Vec::with_capacity(n + 1);
    states.push(ocp.x_init);
    for k in 0..n {
        states.push(rk4_augmented(&states[k], &inputs[k], &ocp.params, cfg.sample_time));
    }
    let slacks = states
        .iter()
        .map(|x| {
            let (bow, stern) = safety_circle_centers(x[0], x[1], x[2], cfg);
            ocp.segments
                .iter()
                .flat_map(|seg| [required_slack(&bow, seg, cfg), required_slack(&stern, seg, cfg)])
                .fold(0.0, f64::max)
        })
        .collect();
    evaluate_objective(
        ocp,
        &Iterate {
            states,
            inputs: inputs.to_vec(),
            slacks,
        },
    )
}

fn evaluate_objective(ocp: &OcpProblem, it: &Iterate) -> f64 {
    let n = ocp.horizon();
    let cfg = &ocp.config;
    let r = &ocp.reference.points;
    (0..n)
        .map(|k| stage_cost(&it.states[k], &r[k], &it.inputs[k], it.slacks[k], cfg))
        .sum::<f64>()
        + terminal_cost(&it.states[n], &r[n], it.slacks[n], cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ActuatorState, ParamSet, VesselState};
    use crate::ocp::{assemble, NmpcConfig, WaypointPath};

    fn on_reference_problem() -> OcpProblem {
        let p = ParamSet::simulation_boat();
        let cfg = NmpcConfig::default();
        let throttle = bisect(|t| p.steady_surge_speed(t) - cfg.u_ref, 0.0, 100.0);
        let pose = VesselState::new(0.0, 0.0, 0.0, cfg.u_ref, 0.0, 0.0);
        let path = WaypointPath::from_xy(&[[0.0, 0.0], [500.0, 0.0]]).unwrap();
        let act = ActuatorState::new(throttle, 0.0);
        let mut ocp = assemble(&pose, &act, &path, &[], &cfg, &p, None).unwrap();
        // reference carries zero actuator entries with zero weight; states
        // along the reference with the steady throttle are dynamically exact
        for k in 0..=cfg.horizon {
            ocp.guess.states[k][6] = throttle;
        }
        ocp
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn already_optimal_problem_stays_put() {
        let ocp = on_reference_problem();
        let res = sqp_rti_step(&ocp, 1);
        assert_eq!(res.status, SolveStatus::Optimal);
        for w in &res.inputs {
            assert!(w.amax() <= 1e-6, "{w:?}");
        }
        assert!(res.objective < 1e-6, "{}", res.objective);
    }

    #[test]
    fn shift_index_rule() {
        let ocp = on_reference_problem();
        let mut res = sqp_rti_step(&ocp, 1);
        for (k, w) in res.inputs.iter_mut().enumerate() {
            *w = AugInput::new(k as f64, -(k as f64));
        }
        let g = shift_warm_start(&res);
        assert_eq!(g.inputs.len(), 25);
        for k in 0..24 {
            assert_eq!(g.inputs[k], res.inputs[k + 1]);
        }
        assert_eq!(g.inputs[24], res.inputs[24]);
        assert_eq!(g.states.len(), 26);

        for w in res.inputs.iter_mut() {
            *w = AugInput::new(1.5, -2.0);
        }
        assert!(shift_warm_start(&res)
            .inputs
            .iter()
            .all(|w| *w == AugInput::new(1.5, -2.0)));
    }

    #[test]
    fn more_iterations_do_not_increase_cost() {
        let mut ocp = on_reference_problem();
        ocp.x_init[1] = 2.0;
        ocp.x_init[2] = 0.2;
        let one = sqp_rti_step(&ocp, 1);
        let ten = sqp_rti_step(&ocp, 10);
        assert!(
            ten.objective <= one.objective + 1e-9,
            "{} vs {}",
            ten.objective,
            one.objective
        );
    }

    #[test]
    fn rates_always_within_bounds() {
        let mut ocp = on_reference_problem();
        ocp.x_init[2] = 1.2;
        let res = sqp_rti_step(&ocp, 3);
        for w in &res.inputs {
            assert!(w[0].abs() <= 10.0 + 1e-9 && w[1].abs() <= 40.0 + 1e-9);
        }
        assert!(res.slacks.iter().all(|s| *s >= -1e-9));
    }

    #[test]
    fn deterministic() {
        let mut ocp = on_reference_problem();
        ocp.x_init[1] = -1.0;
        let a = sqp_rti_step(&ocp, 2);
        let b = sqp_rti_step(&ocp, 2);
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.states, b.states);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }
}
