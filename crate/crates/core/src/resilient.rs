//! Resilient tracking: choose flows that minimize the attacker's worst-case
//! expected tracking error.
//!
//! For fixed flows the inner attack LP is solved exactly and its multipliers
//! give both the dual objective `V + B'ᵀλ` and, by the envelope theorem, the
//! gradient of the optimal value with respect to the flows. The outer problem
//! is a local box-constrained descent on that value function; trial flows for
//! which the attack LP is infeasible count as +∞.

use crate::attack::{
    build_attack_program, dynamics_block_dm, objective_block_dm, AmbiguityConfig,
    AttackError, AttackProgram, AttackWindow, MomentRelaxation, LP_TOL,
};
use crate::model::SensorPair;
use crate::mpc::{solve_tracking_best_effort, ControlTrajectory, MpcError, TrackingProblem};
use crate::opt::{solve_box_nlp, solve_lp, BoxNlp, LpError, LpSolution, NlpError, NlpStatus};
use std::cell::Cell;
use thiserror::Error;

pub const RESILIENT_MAX_ITER: usize = 500;
pub const RESILIENT_TOL_KKT: f64 = 1e-6;
/// Relative tolerance of the upper-bound audit.
pub const CERT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResilientError {
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Nlp(#[from] NlpError),
    #[error("attack LP infeasible at every warm start")]
    InfeasibleWarmStart,
    #[error("certificate failed: {0}")]
    CertificateFailed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResilientProblem {
    /// Window data; `initial` holds the (possibly falsified) readings.
    pub tracking: TrackingProblem,
    pub ambiguity: AmbiguityConfig,
    pub relaxation: MomentRelaxation,
    pub warm_start: Option<ControlTrajectory>,
}

impl ResilientProblem {
    fn window(&self) -> AttackWindow {
        AttackWindow::from_tracking(&self.tracking)
    }

    pub fn program(&self, mdot: &[f64]) -> Result<AttackProgram, AttackError> {
        build_attack_program(&self.window(), mdot, &self.ambiguity, self.tracking.initial, self.relaxation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpperBoundCertificate {
    /// Primal attack optimum plus V at the certified flows (W²).
    pub primal_value: f64,
    /// Claimed objective V + B'ᵀλ (W²).
    pub dual_value: f64,
    /// (dual − primal) / (1 + |primal|)
    pub relative_gap: f64,
    pub dual_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResilientSolution {
    pub mdot: Vec<f64>,
    pub lambda: Vec<f64>,
    /// V(ṁ) + B'ᵀλ (W²).
    pub objective: f64,
    /// Projected-gradient norm of the scaled value function.
    pub kkt_residual: f64,
    pub status: NlpStatus,
    pub certificate: UpperBoundCertificate,
    /// Objective of the warm start, for the descent guarantee.
    pub warm_objective: f64,
    pub lp_solves: usize,
}

/// V(ṁ) + B'ᵀλ, with the program rebuilt from `mdot`.
pub fn dual_objective(mdot: &[f64], lambda: &[f64], problem: &ResilientProblem) -> Result<f64, AttackError> {
    let prog = problem.program(mdot)?;
    if lambda.len() != prog.lp.n_rows() {
        return Err(AttackError::DimensionMismatch(format!(
            "lambda has {} entries, program has {} rows",
            lambda.len(),
            prog.lp.n_rows()
        )));
    }
    Ok(prog.v + prog.lp.dual_objective(lambda))
}

struct Evaluation {
    value: f64,
    grad: Vec<f64>,
    solution: LpSolution,
}

fn evaluate(problem: &ResilientProblem, mdot: &[f64]) -> Result<Evaluation, AttackError> {
    let prog = problem.program(mdot)?;
    let sol = solve_lp(&prog.lp, LP_TOL, LP_TOL)?;
    let win = &problem.tracking;
    let n = mdot.len();
    let mut grad = vec![0.0; n];
    for t in 0..n {
        let b = &win.power[t];
        let x = &sol.x[5 * t..5 * t + 5];
        let dc = objective_block_dm(b, mdot[t], win.p_ref[t]);
        let dv = 2.0 * b.b1 * (b.b1 * mdot[t] - win.p_ref[t]);
        let mut g = dv + dc.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        if t + 1 < n {
            let da = dynamics_block_dm(&win.thermal[t], mdot[t]);
            for i in 0..5 {
                let row: f64 = da[i].iter().zip(x).map(|(a, b)| a * b).sum();
                g += sol.lambda[5 * t + i] * row;
            }
        }
        grad[t] = g;
    }
    Ok(Evaluation {
        value: sol.objective + prog.v,
        grad,
        solution: sol,
    })
}

/// Worst-case value V + LP* at `mdot` and its envelope gradient (W², W²·s/kg).
pub fn worst_case_value(problem: &ResilientProblem, mdot: &[f64]) -> Result<(f64, Vec<f64>), AttackError> {
    let e = evaluate(problem, mdot)?;
    Ok((e.value, e.grad))
}

fn is_infeasible(e: &AttackError) -> bool {
    matches!(e, AttackError::Lp(LpError::Infeasible { .. }))
}

/// Candidate starting flows: the warm start itself, then the same flows
/// clamped into comfort as seen from the low corner of the mean box, where
/// the ambiguity rows push the step-one means.
fn starts(problem: &ResilientProblem, warm: &[f64]) -> Vec<Vec<f64>> {
    let amb = &problem.ambiguity;
    let mut shifted = problem.tracking.clone();
    shifted.initial = SensorPair::new(
        problem.tracking.initial.t_r - amb.epsilon,
        problem.tracking.initial.t_sa - amb.gamma,
    );
    let mut low = warm.to_vec();
    shifted.comfort_clamp(&mut low);
    let mut floor = vec![problem.tracking.mdot_lb; warm.len()];
    shifted.comfort_clamp(&mut floor);
    vec![warm.to_vec(), low, floor]
}

pub fn solve_resilient(problem: &ResilientProblem) -> Result<ResilientSolution, ResilientError> {
    problem.tracking.validate()?;
    problem.ambiguity.validate()?;
    let warm = match &problem.warm_start {
        Some(w) => w.mdot.clone(),
        None => solve_tracking_best_effort(&problem.tracking)?.0.mdot,
    };
    let mut start = None;
    for cand in starts(problem, &warm) {
        match evaluate(problem, &cand) {
            Ok(e) => {
                start = Some((cand, e.value));
                break;
            }
            Err(e) if is_infeasible(&e) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let Some((m0, warm_objective)) = start else {
        return Err(ResilientError::InfeasibleWarmStart);
    };

    let scale = problem.tracking.objective_scale();
    let solves = Cell::new(0usize);
    let n = m0.len();
    let nlp = BoxNlp {
        objective: Box::new(|x: &[f64], g: &mut [f64]| {
            solves.set(solves.get() + 1);
            match evaluate(problem, x) {
                Ok(e) => {
                    for (gi, v) in g.iter_mut().zip(&e.grad) {
                        *gi = v * scale;
                    }
                    e.value * scale
                }
                Err(err) => {
                    log::trace!("resilient trial rejected: {err}");
                    g.iter_mut().for_each(|v| *v = 0.0);
                    f64::INFINITY
                }
            }
        }),
        ineq: None,
        projector: None,
        lower: vec![problem.tracking.mdot_lb; n],
        upper: vec![problem.tracking.mdot_ub; n],
        x0: m0,
    };
    let res = solve_box_nlp(nlp, RESILIENT_MAX_ITER, RESILIENT_TOL_KKT)?;
    let fin = evaluate(problem, &res.x)?;
    let objective = dual_objective(&res.x, &fin.solution.lambda, problem)?;
    let mut sol = ResilientSolution {
        mdot: res.x,
        lambda: fin.solution.lambda.clone(),
        objective,
        kkt_residual: res.pg_norm,
        status: res.status,
        certificate: UpperBoundCertificate {
            primal_value: fin.value,
            dual_value: objective,
            relative_gap: 0.0,
            dual_violation: 0.0,
        },
        warm_objective,
        lp_solves: solves.get() + 1,
    };
    sol.certificate = verify_upper_bound(&sol, problem)?;
    if sol.status != NlpStatus::Converged {
        log::debug!("resilient solve stopped at the iteration limit (pg {:.3e})", sol.kkt_residual);
    }
    Ok(sol)
}

/// Re-solves the attack LP at the returned flows and checks that the claimed
/// objective is a valid upper bound on the worst case.
pub fn verify_upper_bound(
    sol: &ResilientSolution,
    problem: &ResilientProblem,
) -> Result<UpperBoundCertificate, ResilientError> {
    let prog = problem.program(&sol.mdot)?;
    if sol.lambda.len() != prog.lp.n_rows() {
        return Err(ResilientError::CertificateFailed("multiplier length".into()));
    }
    let cmax = prog.lp.objective.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let dual_violation = prog.lp.dual_violation(&sol.lambda);
    if dual_violation > CERT_TOL * (1.0 + cmax) {
        return Err(ResilientError::CertificateFailed(format!(
            "dual infeasible by {dual_violation:.3e}"
        )));
    }
    let primal = solve_lp(&prog.lp, LP_TOL, LP_TOL).map_err(AttackError::from)?;
    let primal_value = primal.objective + prog.v;
    let dual_value = prog.v + prog.lp.dual_objective(&sol.lambda);
    let relative_gap = (dual_value - primal_value) / (1.0 + primal_value.abs());
    // both sides carry rounding from cancelling ~1e10 terms
    let slack = CERT_TOL * (1.0 + primal.objective.abs()) / (1.0 + primal_value.abs());
    if relative_gap < -slack.max(CERT_TOL) {
        return Err(ResilientError::CertificateFailed(format!(
            "claimed {dual_value:.6e} below primal {primal_value:.6e}"
        )));
    }
    Ok(UpperBoundCertificate {
        primal_value,
        dual_value,
        relative_gap,
        dual_violation,
    })
}
