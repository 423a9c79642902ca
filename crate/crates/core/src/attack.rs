//! Moment-based worst-case sensor attack.
//!
//! The attacker picks first/second moments of the falsified zone and
//! supply-air readings that maximize the expected squared tracking error of a
//! presumed flow trajectory, subject to the moment dynamics and an ambiguity
//! set around the true readings. The LP variables are laid out as
//! `x_1..x_T` (five moments each), then the step-one slacks, then two comfort
//! slacks per later step.

use crate::model::{MomentState, PowerCoeffs, SensorPair, ThermalCoeffs};
use crate::mpc::{solve_tracking_best_effort, MpcError, TrackingProblem};
use crate::opt::{solve_lp, LinearProgram, LpError, LpSolution, SparseMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LP_TOL: f64 = 1e-8;
pub const DEFAULT_ALPHA: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 20;
const RESAMPLES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid ambiguity set: {0}")]
    InvalidAmbiguity(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error("attack iteration did not converge in {} iterations", .0.iterations)]
    NotConverged(Box<AttackOutcome>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguityConfig {
    /// Mean tolerance on T^r (°C).
    pub epsilon: f64,
    /// Mean tolerance on T^sa (°C).
    pub gamma: f64,
    pub sigma_tr: f64,
    pub sigma_tsa: f64,
    pub t_r_lb: f64,
    pub t_r_ub: f64,
}

impl AmbiguityConfig {
    /// Equal tolerance on every moment bound.
    pub fn uniform(tol: f64, t_r_lb: f64, t_r_ub: f64) -> Self {
        Self {
            epsilon: tol,
            gamma: tol,
            sigma_tr: tol,
            sigma_tsa: tol,
            t_r_lb,
            t_r_ub,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let tols = [self.epsilon, self.gamma, self.sigma_tr, self.sigma_tsa];
        if tols.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(AttackError::InvalidAmbiguity("tolerances must be finite and >= 0".into()));
        }
        if !(self.t_r_lb < self.t_r_ub) {
            return Err(AttackError::InvalidAmbiguity("comfort bounds".into()));
        }
        Ok(())
    }

    pub fn is_degenerate(&self) -> bool {
        self.epsilon == 0.0 && self.gamma == 0.0 && self.sigma_tr == 0.0 && self.sigma_tsa == 0.0
    }
}

/// How the step-one moments are tied together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentRelaxation {
    /// Only the eight printed mean/variance/comfort rows. Second moments and
    /// the cross moment are otherwise unconstrained beyond nonnegativity.
    Printed,
    /// The printed rows plus tangent lower bounds on both second moments and
    /// McCormick envelopes on the cross moment, so the step-one moments are
    /// those of some joint distribution inside the tolerance box.
    #[default]
    Consistent,
}

/// Per-step data of one look-ahead window.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackWindow {
    pub power: Vec<PowerCoeffs>,
    pub thermal: Vec<ThermalCoeffs>,
    pub p_ref: Vec<f64>,
}

impl AttackWindow {
    pub fn from_tracking(p: &TrackingProblem) -> Self {
        Self {
            power: p.power.clone(),
            thermal: p.thermal.clone(),
            p_ref: p.p_ref.clone(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.p_ref.len()
    }
}

/// Objective weights on x_t.
pub fn objective_block(b: &PowerCoeffs, mdot: f64, p_ref: f64) -> [f64; 5] {
    let m2 = mdot * mdot;
    [
        2.0 * b.b1 * b.b2 * m2 - 2.0 * b.b2 * p_ref * mdot,
        b.b2 * b.b2 * m2,
        2.0 * b.b1 * b.b3 * m2 - 2.0 * b.b3 * p_ref * mdot,
        b.b3 * b.b3 * m2,
        2.0 * b.b2 * b.b3 * m2,
    ]
}

/// The part of E[(P − P^ref)²] that does not depend on the moments.
pub fn constant_term(b: &PowerCoeffs, mdot: f64, p_ref: f64) -> f64 {
    let e = b.b1 * mdot - p_ref;
    e * e
}

pub fn dynamics_block(c: &ThermalCoeffs, mdot: f64) -> [[f64; 5]; 5] {
    let p = c.pole(mdot);
    let g = c.c3 * mdot;
    [
        [p, 0.0, g, 0.0, 0.0],
        [2.0 * c.c0 * p, p * p, 2.0 * c.c0 * g, g * g, 2.0 * p * g],
        [0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, c.c0, g, p],
    ]
}

pub fn dynamics_offset(c: &ThermalCoeffs) -> [f64; 5] {
    [c.c0, c.c0 * c.c0, 0.0, 0.0, 0.0]
}

/// d(objective_block)/d(mdot)
pub(crate) fn objective_block_dm(b: &PowerCoeffs, mdot: f64, p_ref: f64) -> [f64; 5] {
    [
        4.0 * b.b1 * b.b2 * mdot - 2.0 * b.b2 * p_ref,
        2.0 * b.b2 * b.b2 * mdot,
        4.0 * b.b1 * b.b3 * mdot - 2.0 * b.b3 * p_ref,
        2.0 * b.b3 * b.b3 * mdot,
        4.0 * b.b2 * b.b3 * mdot,
    ]
}

/// d(dynamics_block)/d(mdot)
pub(crate) fn dynamics_block_dm(c: &ThermalCoeffs, mdot: f64) -> [[f64; 5]; 5] {
    let p = c.pole(mdot);
    let g = c.c3 * mdot;
    [
        [c.c2, 0.0, c.c3, 0.0, 0.0],
        [2.0 * c.c0 * c.c2, 2.0 * p * c.c2, 2.0 * c.c0 * c.c3, 2.0 * g * c.c3, 2.0 * (c.c2 * g + p * c.c3)],
        [0.0; 5],
        [0.0; 5],
        [0.0, 0.0, 0.0, c.c3, c.c2],
    ]
}

/// One inequality row `coeffs · x_1 + offset <= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IneqRow {
    pub coeffs: [f64; 5],
    pub offset: f64,
}

/// The eight printed step-one rows: comfort, mean box and variance caps.
pub fn printed_rows(amb: &AmbiguityConfig, center: SensorPair) -> [IneqRow; 8] {
    let lr = center.t_r - amb.epsilon;
    let ls = center.t_sa - amb.gamma;
    let row = |coeffs, offset| IneqRow { coeffs, offset };
    [
        row([1.0, 0.0, 0.0, 0.0, 0.0], -amb.t_r_ub),
        row([1.0, 0.0, 0.0, 0.0, 0.0], -(center.t_r + amb.epsilon)),
        row([0.0, 0.0, 1.0, 0.0, 0.0], -(center.t_sa + amb.gamma)),
        row([-1.0, 0.0, 0.0, 0.0, 0.0], amb.t_r_lb),
        row([-1.0, 0.0, 0.0, 0.0, 0.0], lr),
        row([0.0, 0.0, -1.0, 0.0, 0.0], ls),
        row([0.0, 1.0, 0.0, 0.0, 0.0], -amb.sigma_tr * amb.sigma_tr - lr * lr),
        row([0.0, 0.0, 0.0, 1.0, 0.0], -amb.sigma_tsa * amb.sigma_tsa - ls * ls),
    ]
}

/// Tangent and McCormick rows added by [`MomentRelaxation::Consistent`].
pub fn consistency_rows(amb: &AmbiguityConfig, center: SensorPair) -> Vec<IneqRow> {
    let (lr, ur) = (center.t_r - amb.epsilon, center.t_r + amb.epsilon);
    let (ls, us) = (center.t_sa - amb.gamma, center.t_sa + amb.gamma);
    let ss = amb.sigma_tr * amb.sigma_tsa;
    let row = |coeffs, offset| IneqRow { coeffs, offset };
    vec![
        // E[T²] >= 2a E[T] − a² at both ends of each mean box
        row([2.0 * lr, -1.0, 0.0, 0.0, 0.0], -lr * lr),
        row([2.0 * ur, -1.0, 0.0, 0.0, 0.0], -ur * ur),
        row([0.0, 0.0, 2.0 * ls, -1.0, 0.0], -ls * ls),
        row([0.0, 0.0, 2.0 * us, -1.0, 0.0], -us * us),
        // cross moment within the McCormick envelope widened by the covariance cap
        row([ls, 0.0, lr, 0.0, -1.0], -lr * ls - ss),
        row([us, 0.0, ur, 0.0, -1.0], -ur * us - ss),
        row([-ls, 0.0, -ur, 0.0, 1.0], ur * ls - ss),
        row([-us, 0.0, -lr, 0.0, 1.0], lr * us - ss),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackProgram {
    pub horizon: usize,
    pub relaxation: MomentRelaxation,
    pub mdot: Vec<f64>,
    /// c_t, one per step.
    pub c: Vec<[f64; 5]>,
    /// A_t for t = 1..T−1.
    pub a: Vec<[[f64; 5]; 5]>,
    /// B_t for t = 1..T−1.
    pub b: Vec<[f64; 5]>,
    /// Step-one inequality rows (printed rows first).
    pub step_one: Vec<IneqRow>,
    /// Σ_t V_t.
    pub v: f64,
    pub lp: LinearProgram,
    /// Index of the first dynamics row of step t is `5 (t − 1)`.
    pub n_dyn_rows: usize,
}

impl AttackProgram {
    pub fn n_step_one_rows(&self) -> usize {
        self.step_one.len()
    }

    /// Column of moment `k` of step `t` (0-based).
    pub fn col(t: usize, k: usize) -> usize {
        5 * t + k
    }

    /// LP objective plus V at the given step-one moments, propagated through
    /// the dynamics.
    pub fn value_at(&self, x1: &MomentState) -> f64 {
        let mut x = x1.to_array();
        let mut total = self.v;
        for t in 0..self.horizon {
            total += self.c[t].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            if t + 1 < self.horizon {
                let a = &self.a[t];
                let b = &self.b[t];
                let mut nx = [0.0; 5];
                for i in 0..5 {
                    nx[i] = a[i].iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() + b[i];
                }
                x = nx;
            }
        }
        total
    }
}

pub fn build_attack_program(
    win: &AttackWindow,
    mdot: &[f64],
    amb: &AmbiguityConfig,
    center: SensorPair,
    relaxation: MomentRelaxation,
) -> Result<AttackProgram, AttackError> {
    let t_len = win.horizon();
    if t_len == 0 {
        return Err(AttackError::DimensionMismatch("empty window".into()));
    }
    if win.power.len() != t_len || win.thermal.len() != t_len || mdot.len() != t_len {
        return Err(AttackError::DimensionMismatch(format!(
            "window {} / power {} / thermal {} / flow {}",
            t_len,
            win.power.len(),
            win.thermal.len(),
            mdot.len()
        )));
    }
    amb.validate()?;

    let c: Vec<[f64; 5]> = (0..t_len)
        .map(|t| objective_block(&win.power[t], mdot[t], win.p_ref[t]))
        .collect();
    let v = (0..t_len)
        .map(|t| constant_term(&win.power[t], mdot[t], win.p_ref[t]))
        .sum();
    let a: Vec<_> = (0..t_len - 1).map(|t| dynamics_block(&win.thermal[t], mdot[t])).collect();
    let b: Vec<_> = (0..t_len - 1).map(|t| dynamics_offset(&win.thermal[t])).collect();
    let mut step_one: Vec<IneqRow> = printed_rows(amb, center).to_vec();
    if relaxation == MomentRelaxation::Consistent {
        step_one.extend(consistency_rows(amb, center));
    }

    let k1 = step_one.len();
    let n_moment = 5 * t_len;
    let n_vars = n_moment + k1 + 2 * (t_len - 1);
    let n_dyn_rows = 5 * (t_len - 1);
    let n_rows = n_dyn_rows + k1 + 2 * (t_len - 1);
    let mut am = SparseMatrix::new(n_rows, n_vars);
    let mut offset = vec![0.0; n_rows];

    for t in 0..t_len - 1 {
        for i in 0..5 {
            let r = 5 * t + i;
            for k in 0..5 {
                am.add(r, AttackProgram::col(t, k), a[t][i][k]);
            }
            am.add(r, AttackProgram::col(t + 1, i), -1.0);
            offset[r] = b[t][i];
        }
    }
    for (j, row) in step_one.iter().enumerate() {
        let r = n_dyn_rows + j;
        for k in 0..5 {
            am.add(r, AttackProgram::col(0, k), row.coeffs[k]);
        }
        am.add(r, n_moment + j, 1.0);
        offset[r] = row.offset;
    }
    for t in 1..t_len {
        let r = n_dyn_rows + k1 + 2 * (t - 1);
        let s = n_moment + k1 + 2 * (t - 1);
        am.add(r, AttackProgram::col(t, 0), 1.0);
        am.add(r, s, 1.0);
        offset[r] = -amb.t_r_ub;
        am.add(r + 1, AttackProgram::col(t, 0), -1.0);
        am.add(r + 1, s + 1, 1.0);
        offset[r + 1] = amb.t_r_lb;
    }
    let mut objective = vec![0.0; n_vars];
    for t in 0..t_len {
        objective[5 * t..5 * t + 5].copy_from_slice(&c[t]);
    }
    Ok(AttackProgram {
        horizon: t_len,
        relaxation,
        mdot: mdot.to_vec(),
        c,
        a,
        b,
        step_one,
        v,
        lp: LinearProgram::new(objective, am, offset),
        n_dyn_rows,
    })
}

/// First-step Normal parameters of the falsified readings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackDistribution {
    pub mu_tr: f64,
    pub sigma_tr: f64,
    pub mu_tsa: f64,
    pub sigma_tsa: f64,
}

impl AttackDistribution {
    pub fn point(s: SensorPair) -> Self {
        Self {
            mu_tr: s.t_r,
            sigma_tr: 0.0,
            mu_tsa: s.t_sa,
            sigma_tsa: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCase {
    pub moments: Vec<MomentState>,
    pub distribution: AttackDistribution,
    /// LP optimum plus V: worst-case expected Σ (P − P^ref)² (W²).
    pub value: f64,
    pub solution: LpSolution,
}

fn std_from(second: f64, mean: f64, label: &str) -> f64 {
    let var = second - mean * mean;
    if var < 0.0 {
        if var < -1e-9 * (1.0 + second.abs()) {
            log::debug!("clamping negative {label} variance {var:e} to 0");
        }
        return 0.0;
    }
    var.sqrt()
}

pub fn solve_worst_case(prog: &AttackProgram) -> Result<WorstCase, AttackError> {
    let sol = solve_lp(&prog.lp, LP_TOL, LP_TOL)?;
    let moments: Vec<MomentState> = (0..prog.horizon)
        .map(|t| MomentState::from_slice(&sol.x[5 * t..5 * t + 5]))
        .collect();
    let m1 = &moments[0];
    let distribution = AttackDistribution {
        mu_tr: m1.e_tr,
        sigma_tr: std_from(m1.e_tr2, m1.e_tr, "T_r"),
        mu_tsa: m1.e_tsa,
        sigma_tsa: std_from(m1.e_tsa2, m1.e_tsa, "T_sa"),
    };
    Ok(WorstCase {
        moments,
        distribution,
        value: sol.objective + prog.v,
        solution: sol,
    })
}

/// Standard-normal draws reused across the iterations of one attack call.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalDraws {
    z_tr: [f64; RESAMPLES + 1],
    z_tsa: f64,
}

impl NormalDraws {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z_tr = [0.0; RESAMPLES + 1];
        for z in z_tr.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
        Self {
            z_tr,
            z_tsa: StandardNormal.sample(&mut rng),
        }
    }

    /// Falsified readings; zone samples outside the comfort band are redrawn
    /// up to ten times and then clamped.
    pub fn sample(&self, d: &AttackDistribution, lb: f64, ub: f64) -> SensorPair {
        let mut t_r = d.mu_tr + d.sigma_tr * self.z_tr[0];
        for z in &self.z_tr[1..] {
            if (lb..=ub).contains(&t_r) {
                break;
            }
            t_r = d.mu_tr + d.sigma_tr * z;
        }
        SensorPair::new(t_r.clamp(lb, ub), d.mu_tsa + d.sigma_tsa * self.z_tsa)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackOutcome {
    pub falsified: SensorPair,
    pub distribution: AttackDistribution,
    /// Worst-case solves performed.
    pub iterations: usize,
    pub converged: bool,
    /// ⟨Δṁ, Δṁ⟩ between consecutive presumed flow trajectories.
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSettings {
    pub alpha: f64,
    pub max_iter: usize,
    pub relaxation: MomentRelaxation,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            max_iter: DEFAULT_MAX_ITER,
            relaxation: MomentRelaxation::default(),
        }
    }
}

/// Alternates the presumed tracking solve with the worst-case LP until the
/// presumed flows settle.
///
/// `tracking` supplies the window data and bounds; its `initial` readings are
/// replaced by the current attack input on every pass.
pub fn run_stealthy_attack(
    true_sensors: SensorPair,
    tracking: &TrackingProblem,
    amb: &AmbiguityConfig,
    seed: u64,
    settings: &AttackSettings,
) -> Result<AttackOutcome, AttackError> {
    if settings.max_iter == 0 {
        return Err(AttackError::DimensionMismatch("max_iter must be >= 1".into()));
    }
    amb.validate()?;
    let draws = NormalDraws::new(seed);
    let win = AttackWindow::from_tracking(tracking);
    let mut problem = tracking.clone();
    problem.initial = true_sensors;
    let mut prev: Option<Vec<f64>> = None;
    let mut deltas = Vec::new();
    let mut last: Option<(SensorPair, AttackDistribution)> = None;
    for i in 1..=settings.max_iter + 1 {
        let (traj, _) = solve_tracking_best_effort(&problem)?;
        let mdot = traj.mdot;
        if let Some(p) = &prev {
            let d: f64 = mdot.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
            deltas.push(d);
            if d < settings.alpha {
                let (falsified, distribution) = last.expect("set on the previous pass");
                return Ok(AttackOutcome {
                    falsified,
                    distribution,
                    iterations: i - 1,
                    converged: true,
                    deltas,
                });
            }
        }
        if i > settings.max_iter {
            break;
        }
        let prog = build_attack_program(&win, &mdot, amb, true_sensors, settings.relaxation)?;
        let wc = solve_worst_case(&prog)?;
        let att = draws.sample(&wc.distribution, amb.t_r_lb, amb.t_r_ub);
        problem.initial = att;
        problem.warm_start = Some(mdot.clone());
        prev = Some(mdot);
        last = Some((att, wc.distribution));
    }
    let (falsified, distribution) = last.expect("at least one pass");
    Err(AttackError::NotConverged(Box::new(AttackOutcome {
        falsified,
        distribution,
        iterations: settings.max_iter,
        converged: false,
        deltas,
    })))
}

pub fn offset_attack(s: SensorPair, e_r: f64, e_sa: f64) -> SensorPair {
    SensorPair::new(s.t_r + e_r, s.t_sa + e_sa)
}
