//! Receding-horizon power tracking: choose supply-air flows over the window
//! so that predicted HVAC power follows the reference while the predicted
//! zone temperature stays inside the comfort band.

use crate::model::{hvac_power, zone_step, PowerCoeffs, SensorPair, ThermalCoeffs};
use crate::opt::{solve_box_nlp, BoxNlp, NlpError};
use thiserror::Error;

/// Comfort violation (°C) tolerated on predicted temperatures.
pub const COMFORT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("invalid tracking problem: {0}")]
    Invalid(String),
    /// No flow sequence keeps the predicted zone temperature in bounds. The
    /// least-violating trajectory found is attached.
    #[error("comfort bounds infeasible (violation {violation:.3e} °C)")]
    InfeasibleComfort {
        violation: f64,
        best: Box<ControlTrajectory>,
    },
    #[error("non-finite prediction")]
    NonFinitePrediction,
    #[error(transparent)]
    Nlp(#[from] NlpError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingProblem {
    /// Reference power per step (W).
    pub p_ref: Vec<f64>,
    pub power: Vec<PowerCoeffs>,
    pub thermal: Vec<ThermalCoeffs>,
    /// Readings at the start of the window.
    pub initial: SensorPair,
    pub t_r_lb: f64,
    pub t_r_ub: f64,
    pub mdot_lb: f64,
    pub mdot_ub: f64,
    /// Initial flow guess, typically the previous solution shifted one step.
    pub warm_start: Option<Vec<f64>>,
}

impl TrackingProblem {
    pub fn horizon(&self) -> usize {
        self.p_ref.len()
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let t = self.horizon();
        let bad = |m: &str| Err(MpcError::Invalid(m.to_string()));
        if t == 0 {
            return bad("horizon must be >= 1");
        }
        if self.power.len() != t || self.thermal.len() != t {
            return bad("coefficient sequences must match the horizon");
        }
        if self.p_ref.iter().any(|p| !p.is_finite()) {
            return bad("non-finite reference");
        }
        if !(self.mdot_lb >= 0.0 && self.mdot_lb < self.mdot_ub) {
            return bad("flow bounds");
        }
        if !(self.t_r_lb < self.t_r_ub) {
            return bad("comfort bounds");
        }
        if let Some(w) = &self.warm_start {
            if w.len() != t {
                return bad("warm start length");
            }
        }
        Ok(())
    }

    /// Supply-air reading held over the window.
    fn t_sa(&self) -> f64 {
        self.initial.t_sa
    }

    /// Zone temperatures T_1..T_{T+1}, T_1 being the reading.
    pub fn simulate(&self, mdot: &[f64]) -> Vec<f64> {
        let mut tr = Vec::with_capacity(mdot.len() + 1);
        tr.push(self.initial.t_r);
        for (t, &m) in mdot.iter().enumerate() {
            let s = SensorPair::new(tr[t], self.t_sa());
            tr.push(zone_step(&self.thermal[t], m, &s));
        }
        tr
    }

    pub fn predicted_power(&self, mdot: &[f64], tr: &[f64]) -> Vec<f64> {
        mdot.iter()
            .enumerate()
            .map(|(t, &m)| hvac_power(&self.power[t], m, &SensorPair::new(tr[t], self.t_sa())))
            .collect()
    }

    /// Σ (P_t − P^ref_t)² in W².
    pub fn objective(&self, mdot: &[f64]) -> f64 {
        let tr = self.simulate(mdot);
        self.predicted_power(mdot, &tr)
            .iter()
            .zip(&self.p_ref)
            .map(|(p, r)| (p - r) * (p - r))
            .sum()
    }

    /// Objective and its gradient by a backward adjoint sweep.
    pub fn objective_grad(&self, mdot: &[f64], grad: &mut [f64]) -> f64 {
        let tr = self.simulate(mdot);
        let s = self.t_sa();
        let n = mdot.len();
        let mut e = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut j = 0.0;
        for t in 0..n {
            let b = &self.power[t];
            g[t] = b.b1 + b.b2 * tr[t] + b.b3 * s;
            e[t] = mdot[t] * g[t] - self.p_ref[t];
            j += e[t] * e[t];
        }
        let mut adj = 0.0;
        for t in (0..n).rev() {
            let c = &self.thermal[t];
            grad[t] = 2.0 * e[t] * g[t] + adj * (c.c2 * tr[t] + c.c3 * s);
            adj = 2.0 * e[t] * mdot[t] * self.power[t].b2 + adj * c.pole(mdot[t]);
        }
        j
    }

    /// Largest comfort violation of T_2..T_{T+1}.
    pub fn comfort_violation(&self, tr: &[f64]) -> f64 {
        tr[1..]
            .iter()
            .map(|&x| (self.t_r_lb - x).max(x - self.t_r_ub).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Flow interval at step `t` that keeps T_{t+1} in the comfort band given
    /// T_t, intersected with the flow box. Empty intervals collapse onto the
    /// box endpoint that violates least.
    fn step_interval(&self, t: usize, tr_t: f64) -> (f64, f64) {
        let c = &self.thermal[t];
        let base = c.c0 + c.c1 * tr_t;
        let slope = c.c2 * tr_t + c.c3 * self.t_sa();
        let (mut lo, mut hi) = (self.mdot_lb, self.mdot_ub);
        if slope.abs() > 1e-300 {
            let a = (self.t_r_lb - base) / slope;
            let b = (self.t_r_ub - base) / slope;
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        } else if base < self.t_r_lb || base > self.t_r_ub {
            return (self.mdot_lb, self.mdot_lb);
        }
        if lo > hi {
            let viol = |m: f64| {
                let x = base + slope * m;
                (self.t_r_lb - x).max(x - self.t_r_ub)
            };
            let m = if viol(self.mdot_lb) <= viol(self.mdot_ub) {
                self.mdot_lb
            } else {
                self.mdot_ub
            };
            return (m, m);
        }
        (lo, hi)
    }

    /// Forward pass that clamps each flow into its comfort interval given the
    /// already-clamped past. Identity on comfort-feasible sequences.
    pub fn comfort_clamp(&self, mdot: &mut [f64]) {
        let mut tr = self.initial.t_r;
        for t in 0..mdot.len() {
            let (lo, hi) = self.step_interval(t, tr);
            mdot[t] = mdot[t].clamp(lo, hi);
            tr = zone_step(&self.thermal[t], mdot[t], &SensorPair::new(tr, self.t_sa()));
        }
    }

    /// Scale that turns W² objectives into (kg/s)².
    pub fn objective_scale(&self) -> f64 {
        let b = &self.power[0];
        let g = (b.b1 + b.b2 * self.initial.t_r + b.b3 * self.t_sa()).abs();
        if g > 1.0 {
            1.0 / (g * g)
        } else {
            1.0
        }
    }

    pub fn trajectory(&self, mdot: Vec<f64>) -> Result<ControlTrajectory, MpcError> {
        let tr = self.simulate(&mdot);
        if tr.iter().any(|v| !v.is_finite()) {
            return Err(MpcError::NonFinitePrediction);
        }
        let power = self.predicted_power(&mdot, &tr);
        let objective = power
            .iter()
            .zip(&self.p_ref)
            .map(|(p, r)| (p - r) * (p - r))
            .sum();
        Ok(ControlTrajectory {
            mdot,
            t_r: tr[1..].to_vec(),
            power,
            objective,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    /// Flow per step (kg/s).
    pub mdot: Vec<f64>,
    /// Predicted zone temperature after each step, T_2..T_{T+1} (°C).
    pub t_r: Vec<f64>,
    /// Predicted power per step (W).
    pub power: Vec<f64>,
    /// Σ (P_t − P^ref_t)² (W²).
    pub objective: f64,
}

pub fn first_step(tr: &ControlTrajectory) -> f64 {
    tr.mdot[0]
}

const ALT_ROUNDS: usize = 20;
const ALT_TOL: f64 = 1e-6;
const POLISH_TOL: f64 = 1e-10;
const NLP_MAX_ITER: usize = 500;

/// Freezes T^r at its current prediction and solves the per-step box least
/// squares, repeating until the flows settle.
fn alternate(p: &TrackingProblem, mut m: Vec<f64>) -> Result<Vec<f64>, MpcError> {
    let n = p.horizon();
    let s = p.t_sa();
    let scale = p.objective_scale();
    for _ in 0..ALT_ROUNDS {
        let tr = p.simulate(&m);
        if tr.iter().any(|v| !v.is_finite()) {
            return Err(MpcError::NonFinitePrediction);
        }
        let gains: Vec<f64> = (0..n)
            .map(|t| {
                let b = &p.power[t];
                b.b1 + b.b2 * tr[t] + b.b3 * s
            })
            .collect();
        let (lower, upper): (Vec<f64>, Vec<f64>) = (0..n).map(|t| p.step_interval(t, tr[t])).unzip();
        let p_ref = &p.p_ref;
        let g2 = gains.clone();
        let nlp = BoxNlp {
            objective: Box::new(move |x: &[f64], grad: &mut [f64]| {
                let mut f = 0.0;
                for t in 0..x.len() {
                    let e = x[t] * g2[t] - p_ref[t];
                    f += e * e * scale;
                    grad[t] = 2.0 * e * g2[t] * scale;
                }
                f
            }),
            ineq: None,
            projector: None,
            lower,
            upper,
            x0: m.clone(),
        };
        let sol = solve_box_nlp(nlp, NLP_MAX_ITER, ALT_TOL * 1e-3)?;
        let delta = sol.x.iter().zip(&m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        m = sol.x;
        if delta < ALT_TOL {
            break;
        }
    }
    Ok(m)
}

/// Local solve of the full tracking objective with comfort enforced through
/// [`TrackingProblem::comfort_clamp`].
pub(crate) fn polish(p: &TrackingProblem, m0: Vec<f64>) -> Result<Vec<f64>, MpcError> {
    let scale = p.objective_scale();
    let nlp = BoxNlp {
        objective: Box::new(|x: &[f64], g: &mut [f64]| {
            let f = p.objective_grad(x, g);
            for v in g.iter_mut() {
                *v *= scale;
            }
            f * scale
        }),
        ineq: None,
        projector: Some(Box::new(|x: &mut [f64]| p.comfort_clamp(x))),
        lower: vec![p.mdot_lb; p.horizon()],
        upper: vec![p.mdot_ub; p.horizon()],
        x0: m0,
    };
    Ok(solve_box_nlp(nlp, NLP_MAX_ITER, POLISH_TOL)?.x)
}

/// Minimizes the tracking objective; errors with the least-violating
/// trajectory attached when the comfort band cannot be met.
pub fn solve_tracking(p: &TrackingProblem) -> Result<ControlTrajectory, MpcError> {
    p.validate()?;
    let n = p.horizon();
    let mid = 0.5 * (p.mdot_lb + p.mdot_ub);
    let start = p.warm_start.clone().unwrap_or_else(|| vec![mid; n]);
    let alt = alternate(p, start)?;

    let mut constant = vec![mid; n];
    p.comfort_clamp(&mut constant);
    let mut best = alt;
    p.comfort_clamp(&mut best);
    if p.objective(&constant) < p.objective(&best) {
        best = constant;
    }
    let polished = polish(p, best.clone())?;
    if p.objective(&polished) <= p.objective(&best) {
        best = polished;
    }
    let traj = p.trajectory(best)?;
    let tr = p.simulate(&traj.mdot);
    let violation = p.comfort_violation(&tr);
    if violation > COMFORT_TOL {
        return Err(MpcError::InfeasibleComfort {
            violation,
            best: Box::new(traj),
        });
    }
    Ok(traj)
}

/// Like [`solve_tracking`] but returns the least-violating trajectory when
/// comfort is infeasible, together with the violation (°C).
pub fn solve_tracking_best_effort(p: &TrackingProblem) -> Result<(ControlTrajectory, f64), MpcError> {
    match solve_tracking(p) {
        Ok(t) => Ok((t, 0.0)),
        Err(MpcError::InfeasibleComfort { violation, best }) => Ok((*best, violation)),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opt::fd_gradient;

    fn stable_problem(p_ref: Vec<f64>) -> TrackingProblem {
        let n = p_ref.len();
        TrackingProblem {
            p_ref,
            power: vec![
                PowerCoeffs {
                    b1: 2450.2,
                    b2: 170.30,
                    b3: -243.29,
                };
                n
            ],
            thermal: vec![
                ThermalCoeffs {
                    c0: 0.2,
                    c1: 0.997,
                    c2: -0.03,
                    c3: 0.03,
                };
                n
            ],
            initial: SensorPair::new(24.0, 16.0),
            t_r_lb: 20.0,
            t_r_ub: 28.0,
            mdot_lb: 0.0,
            mdot_ub: 5.0,
            warm_start: None,
        }
    }

    #[test]
    fn exact_reference_recovered() {
        let s = SensorPair::new(24.0, 16.0);
        let p0 = stable_problem(vec![0.0]);
        let r = hvac_power(&p0.power[0], 2.0, &s);
        let p = stable_problem(vec![r]);
        let tr = solve_tracking(&p).unwrap();
        assert!((first_step(&tr) - 2.0).abs() < 1e-9, "{}", tr.mdot[0]);
        assert!(tr.objective < 1e-6);
    }

    #[test]
    fn unreachable_reference_clamps() {
        let p = stable_problem(vec![1e6]);
        let tr = solve_tracking(&p).unwrap();
        assert_eq!(tr.mdot[0], 5.0);
    }

    #[test]
    fn first_step_is_head() {
        let tr = ControlTrajectory {
            mdot: vec![2.0, 2.1, 2.2],
            t_r: vec![0.0; 3],
            power: vec![0.0; 3],
            objective: 0.0,
        };
        assert_eq!(first_step(&tr), 2.0);
    }

    #[test]
    fn adjoint_gradient_matches_fd() {
        let p = stable_problem(vec![4000.0, 7000.0, 3000.0, 9000.0]);
        let m = vec![1.3, 2.9, 0.7, 4.1];
        let mut g = vec![0.0; 4];
        p.objective_grad(&m, &mut g);
        let fd = fd_gradient(&mut |x: &[f64]| p.objective(x), &m, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn perfect_tracking_fixed_point() {
        let flows = [1.5, 2.5, 3.0, 2.0, 1.0];
        let p0 = stable_problem(vec![0.0; 5]);
        let tr = p0.simulate(&flows);
        let p_ref = p0.predicted_power(&flows, &tr);
        let p = stable_problem(p_ref);
        let sol = solve_tracking(&p).unwrap();
        assert!(sol.objective <= 1e-4, "{}", sol.objective);
    }

    #[test]
    fn comfort_is_enforced() {
        // at full flow the zone would fall below 23.5 within one step
        let mut p = stable_problem(vec![1e6; 3]);
        p.t_r_lb = 23.5;
        let sol = solve_tracking(&p).unwrap();
        assert!(sol.t_r.iter().all(|&x| x >= 23.5 - COMFORT_TOL));
        assert!(sol.mdot[0] < 5.0);
    }

    #[test]
    fn infeasible_comfort_reported() {
        let mut p = stable_problem(vec![5000.0; 2]);
        // even full flow leaves the zone near 28 after one step
        p.t_r_ub = 24.0;
        p.t_r_lb = 23.9;
        p.initial = SensorPair::new(30.0, 16.0);
        assert!(matches!(solve_tracking(&p), Err(MpcError::InfeasibleComfort { .. })));
    }
}
