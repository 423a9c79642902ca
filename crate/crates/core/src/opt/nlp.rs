//! Box-constrained local minimization by projected gradient with
//! Barzilai–Borwein steps and Armijo backtracking. An optional block of
//! linear inequalities `G x + h <= 0` is handled by an augmented-Lagrangian
//! outer loop around the box solver.

use thiserror::Error;

/// Objective callback: returns f(x) and writes ∇f(x) into `grad`.
pub type Objective<'a> = dyn FnMut(&[f64], &mut [f64]) -> f64 + 'a;

/// Dense inequality block `G x + h <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearIneq {
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

impl LinearIneq {
    fn values(&self, x: &[f64]) -> Vec<f64> {
        self.g
            .iter()
            .zip(&self.h)
            .map(|(row, h)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + h)
            .collect()
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.values(x).into_iter().fold(0.0, f64::max)
    }
}

/// Extra feasibility map applied after the box clamp, e.g. to pull a point
/// back into a state-constrained set. Must be the identity on feasible points.
pub type Projector<'a> = dyn FnMut(&mut [f64]) + 'a;

pub struct BoxNlp<'a> {
    pub objective: Box<Objective<'a>>,
    pub ineq: Option<LinearIneq>,
    pub projector: Option<Box<Projector<'a>>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlpStatus {
    Converged,
    /// Budget exhausted; the best iterate is returned.
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// ‖P(x − ∇f) − x‖∞ of the final (sub)problem.
    pub pg_norm: f64,
    pub iterations: usize,
    pub status: NlpStatus,
    /// Objective at each accepted iterate of the last inner solve.
    pub trace: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlpError {
    #[error("non-finite objective or gradient at the initial point")]
    NonFiniteObjective,
    #[error("malformed problem: {0}")]
    Malformed(String),
}

struct Feasible<'p, 'a> {
    lo: &'p [f64],
    hi: &'p [f64],
    extra: Option<&'p mut Box<Projector<'a>>>,
}

impl Feasible<'_, '_> {
    fn apply(&mut self, x: &mut [f64]) {
        for ((v, l), h) in x.iter_mut().zip(self.lo).zip(self.hi) {
            *v = v.clamp(*l, *h);
        }
        if let Some(p) = self.extra.as_mut() {
            p(x);
        }
    }

    fn pg_norm(&mut self, x: &[f64], g: &[f64], buf: &mut [f64]) -> f64 {
        for i in 0..x.len() {
            buf[i] = x[i] - g[i];
        }
        self.apply(buf);
        buf.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

struct Inner {
    x: Vec<f64>,
    f: f64,
    pg: f64,
    iters: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn box_descent(
    f: &mut dyn FnMut(&[f64], &mut [f64]) -> f64,
    feas: &mut Feasible<'_, '_>,
    x0: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<Inner, NlpError> {
    let n = x0.len();
    let mut x = x0.to_vec();
    feas.apply(&mut x);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(NlpError::NonFiniteObjective);
    }
    let mut trace = vec![fx];
    let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut step = if gmax > 0.0 { 1.0 / gmax } else { 1.0 };
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut iters = 0;
    let mut buf = vec![0.0; n];
    let mut pg = feas.pg_norm(&x, &g, &mut buf);
    while pg > tol && iters < max_iter {
        iters += 1;
        let mut t = step;
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..60 {
            for i in 0..n {
                xt[i] = x[i] - t * g[i];
            }
            feas.apply(&mut xt);
            let decrease: f64 = (0..n).map(|i| g[i] * (xt[i] - x[i])).sum();
            if decrease == 0.0 {
                break;
            }
            let ft = f(&xt, &mut gt);
            if ft.is_finite() && ft <= fx + 1e-4 * decrease {
                accepted = true;
                f_new = ft;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        // Barzilai–Borwein step for the next iteration
        let mut sy = 0.0;
        let mut ss = 0.0;
        for i in 0..n {
            let s = xt[i] - x[i];
            sy += s * (gt[i] - g[i]);
            ss += s * s;
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { (t * 4.0).min(1e12) };
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        fx = f_new;
        trace.push(fx);
        pg = feas.pg_norm(&x, &g, &mut buf);
    }
    Ok(Inner {
        x,
        f: fx,
        pg,
        iters,
        converged: pg <= tol,
        trace,
    })
}

pub fn solve_box_nlp(mut p: BoxNlp<'_>, max_iter: usize, tol_kkt: f64) -> Result<NlpSolution, NlpError> {
    let n = p.x0.len();
    if p.lower.len() != n || p.upper.len() != n {
        return Err(NlpError::Malformed("bound length mismatch".into()));
    }
    if p.lower.iter().zip(&p.upper).any(|(l, h)| l > h) {
        return Err(NlpError::Malformed("lower bound above upper bound".into()));
    }
    let Some(ineq) = p.ineq.take() else {
        let mut feas = Feasible {
            lo: &p.lower,
            hi: &p.upper,
            extra: p.projector.as_mut(),
        };
        let r = box_descent(&mut *p.objective, &mut feas, &p.x0, max_iter, tol_kkt)?;
        return Ok(NlpSolution {
            x: r.x,
            objective: r.f,
            pg_norm: r.pg,
            iterations: r.iters,
            status: if r.converged { NlpStatus::Converged } else { NlpStatus::IterationLimit },
            trace: r.trace,
        });
    };
    if ineq.g.len() != ineq.h.len() || ineq.g.iter().any(|r| r.len() != n) {
        return Err(NlpError::Malformed("inequality block shape".into()));
    }

    let m = ineq.h.len();
    let mut mu = vec![0.0; m];
    let mut rho = 10.0;
    let mut x = p.x0.clone();
    let mut total = 0;
    let mut last_viol = f64::INFINITY;
    let mut last = None;
    for _outer in 0..30 {
        let obj = &mut p.objective;
        let (mu_ref, ineq_ref) = (&mu, &ineq);
        let mut aug = |z: &[f64], grad: &mut [f64]| -> f64 {
            let mut v = obj(z, grad);
            for (k, (row, h)) in ineq_ref.g.iter().zip(&ineq_ref.h).enumerate() {
                let gk: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + h;
                let s = (gk + mu_ref[k] / rho).max(0.0);
                v += 0.5 * rho * s * s - mu_ref[k] * mu_ref[k] / (2.0 * rho);
                if s > 0.0 {
                    for (gi, a) in grad.iter_mut().zip(row) {
                        *gi += rho * s * a;
                    }
                }
            }
            v
        };
        let budget = max_iter.saturating_sub(total).max(1);
        let mut feas = Feasible {
            lo: &p.lower,
            hi: &p.upper,
            extra: p.projector.as_mut(),
        };
        let r = box_descent(&mut aug, &mut feas, &x, budget, tol_kkt)?;
        total += r.iters;
        x = r.x.clone();
        let gv = ineq.values(&x);
        let viol = gv.iter().fold(0.0f64, |a, v| a.max(*v));
        for k in 0..m {
            mu[k] = (mu[k] + rho * gv[k]).max(0.0);
        }
        let done = viol <= tol_kkt && r.converged;
        last = Some(r);
        if done || total >= max_iter {
            break;
        }
        if viol > 0.25 * last_viol {
            rho *= 10.0;
        }
        last_viol = viol;
    }
    let r = last.expect("at least one outer iteration");
    let mut g = vec![0.0; n];
    let f = (p.objective)(&x, &mut g);
    let converged = r.converged && ineq.max_violation(&x) <= tol_kkt;
    Ok(NlpSolution {
        x,
        objective: f,
        pg_norm: r.pg,
        iterations: total,
        status: if converged { NlpStatus::Converged } else { NlpStatus::IterationLimit },
        trace: r.trace,
    })
}

/// Central-difference gradient, used to validate analytic gradients.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut z = x.to_vec();
    (0..x.len())
        .map(|i| {
            let hi = h * (1.0 + x[i].abs());
            z[i] = x[i] + hi;
            let fp = f(&z);
            z[i] = x[i] - hi;
            let fm = f(&z);
            z[i] = x[i];
            (fp - fm) / (2.0 * hi)
        })
        .collect()
}
