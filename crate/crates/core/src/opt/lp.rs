//! Dense two-phase primal simplex for `max c'x  s.t.  A'x + B' = 0`.
//!
//! The problem is equilibrated with power-of-two row and column scales, solved
//! on a tableau, and the final basis is refactored with an LU decomposition to
//! recover accurate primal and dual values.
//!
//! Dual convention: with `lambda` the multiplier of `A'x + B' = 0`, the dual is
//! `min B'ᵀλ  s.t.  A'ᵀλ + c' <= 0` on sign-constrained columns and `= 0` on
//! free columns.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Row-sparse equality matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: vec![Vec::new(); nrows],
        }
    }

    /// Adds `v` to entry (i, j). Zeros are dropped.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.nrows && j < self.ncols, "index ({i}, {j}) out of range");
        if v == 0.0 {
            return;
        }
        let row = &mut self.rows[i];
        match row.iter_mut().find(|(c, _)| *c == j) {
            Some(e) => e.1 += v,
            None => row.push((j, v)),
        }
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|(c, _)| *c == j)
            .map_or(0.0, |e| e.1)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                out[j] += v * y[i];
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                m[(i, j)] = v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    /// Maximized objective c'.
    pub objective: Vec<f64>,
    pub a: SparseMatrix,
    /// Offset B' in `A'x + B' = 0`.
    pub offset: Vec<f64>,
    pub nonneg: Vec<bool>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>, a: SparseMatrix, offset: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            a,
            offset,
            nonneg: vec![true; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.offset.len()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.objective.len();
        if self.a.ncols != n || self.nonneg.len() != n || self.a.nrows != self.offset.len() {
            return Err(LpError::Malformed("dimension mismatch".into()));
        }
        let finite = self.objective.iter().chain(&self.offset).all(|v| v.is_finite())
            && self.a.rows.iter().flatten().all(|(_, v)| v.is_finite());
        if !finite {
            return Err(LpError::Malformed("non-finite coefficient".into()));
        }
        Ok(())
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        dot(&self.objective, x)
    }

    /// ‖A'x + B'‖∞
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        self.a
            .mul_vec(x)
            .iter()
            .zip(&self.offset)
            .map(|(ax, b)| (ax + b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest violation of the dual constraints at `lambda`.
    pub fn dual_violation(&self, lambda: &[f64]) -> f64 {
        let at = self.a.tr_mul_vec(lambda);
        at.iter()
            .zip(&self.objective)
            .zip(&self.nonneg)
            .map(|((a, c), &nn)| {
                let s = a + c;
                if nn {
                    s.max(0.0)
                } else {
                    s.abs()
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn dual_objective(&self, lambda: &[f64]) -> f64 {
        dot(&self.offset, lambda)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    /// ‖A'x + B'‖∞ relative to 1 + ‖B'‖∞.
    pub primal_residual: f64,
    /// Largest dual-constraint violation relative to 1 + ‖c'‖∞.
    pub dual_residual: f64,
    /// max_j |x_j (A'ᵀλ + c')_j| relative to 1 + |objective|.
    pub cs_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed LP: {0}")]
    Malformed(String),
    /// Carries the phase-one multipliers (in λ convention) as a certificate.
    #[error("LP infeasible (phase-one residual {residual:e})")]
    Infeasible { residual: f64, certificate: Vec<f64> },
    /// Carries a primal ray along which the objective grows without bound.
    #[error("LP unbounded")]
    Unbounded { ray: Vec<f64> },
    #[error("LP iteration limit ({0}) reached")]
    IterationLimit(usize),
    #[error("LP solution failed residual check: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    pub tol_feas: f64,
    pub tol_cs: f64,
    pub max_iter: Option<usize>,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_cs: 1e-8,
            max_iter: None,
        }
    }
}

pub fn solve_lp(lp: &LinearProgram, tol_feas: f64, tol_cs: f64) -> Result<LpSolution, LpError> {
    solve_lp_with(
        lp,
        &LpOptions {
            tol_feas,
            tol_cs,
            max_iter: None,
        },
    )
}

const PIVOT_TOL: f64 = 1e-9;
const DJ_TOL: f64 = 1e-9;
const DEGENERATE_SWITCH: usize = 50;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pow2_scale(max_abs: f64) -> f64 {
    if max_abs > 0.0 && max_abs.is_finite() {
        (-max_abs.log2().round()).exp2()
    } else {
        1.0
    }
}

/// Standard form `max c x, A x = b, x >= 0` after splitting free columns.
struct Standard {
    m: usize,
    n: usize,
    a: DMatrix<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    /// Original variable index and sign for each standard column.
    origin: Vec<(usize, f64)>,
}

fn to_standard(lp: &LinearProgram) -> Standard {
    let mut origin = Vec::new();
    for (j, &nn) in lp.nonneg.iter().enumerate() {
        origin.push((j, 1.0));
        if !nn {
            origin.push((j, -1.0));
        }
    }
    let m = lp.n_rows();
    let n = origin.len();
    let mut col_of = vec![Vec::new(); lp.n_vars()];
    for (k, &(j, s)) in origin.iter().enumerate() {
        col_of[j].push((k, s));
    }
    let mut a = DMatrix::zeros(m, n);
    for i in 0..m {
        for &(j, v) in lp.a.row(i) {
            for &(k, s) in &col_of[j] {
                a[(i, k)] = s * v;
            }
        }
    }
    let c = origin.iter().map(|&(j, s)| s * lp.objective[j]).collect();
    let b = lp.offset.iter().map(|v| -v).collect();
    Standard { m, n, a, b, c, origin }
}

struct Tableau {
    m: usize,
    /// structural + artificial columns
    ncol: usize,
    width: usize,
    t: Vec<f64>,
    /// objective (reduced-cost) row, width entries; last is -objective
    obj: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t[i * self.width + self.ncol]
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width;
        let p = self.t[r * w + q];
        let inv = 1.0 / p;
        for v in &mut self.t[r * w..(r + 1) * w] {
            *v *= inv;
        }
        self.t[r * w + q] = 1.0;
        let prow: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        let nz: Vec<usize> = (0..w).filter(|&j| prow[j] != 0.0).collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * w + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * w..(i + 1) * w];
            for &j in &nz {
                row[j] -= f * prow[j];
            }
            row[q] = 0.0;
        }
        let f = self.obj[q];
        if f != 0.0 {
            for &j in &nz {
                self.obj[j] -= f * prow[j];
            }
            self.obj[q] = 0.0;
        }
        self.basis[r] = q;
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded(usize),
    Limit,
}

/// Runs simplex pivots on `tab` over the columns allowed by `enterable`.
fn iterate(tab: &mut Tableau, enterable: &dyn Fn(usize) -> bool, iters: &mut usize, max_iter: usize) -> PhaseEnd {
    let mut degenerate_run = 0usize;
    loop {
        if *iters >= max_iter {
            return PhaseEnd::Limit;
        }
        let bland = degenerate_run > DEGENERATE_SWITCH;
        let mut q = None;
        let mut best = DJ_TOL;
        for j in 0..tab.ncol {
            if !enterable(j) {
                continue;
            }
            let d = tab.obj[j];
            if d > best {
                q = Some(j);
                if bland {
                    break;
                }
                best = d;
            }
        }
        let Some(q) = q else {
            return PhaseEnd::Optimal;
        };
        let mut r = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..tab.m {
            let a = tab.at(i, q);
            if a > PIVOT_TOL {
                let ratio = tab.rhs(i).max(0.0) / a;
                let better = match r {
                    None => true,
                    Some(k) => {
                        let tie = (ratio - best_ratio).abs() <= 1e-12 * (1.0 + best_ratio);
                        if tie {
                            tab.basis[i] < tab.basis[k]
                        } else {
                            ratio < best_ratio
                        }
                    }
                };
                if better {
                    r = Some(i);
                    best_ratio = ratio;
                }
            }
        }
        let Some(r) = r else {
            return PhaseEnd::Unbounded(q);
        };
        if best_ratio <= 0.0 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        tab.pivot(r, q);
        *iters += 1;
    }
}

pub fn solve_lp_with(lp: &LinearProgram, opts: &LpOptions) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let std = to_standard(lp);
    let (m, n) = (std.m, std.n);

    // power-of-two equilibration: rows, then columns
    let mut rs = vec![1.0; m];
    for (i, r) in rs.iter_mut().enumerate() {
        let mx = (0..n).map(|j| std.a[(i, j)].abs()).fold(0.0, f64::max);
        *r = pow2_scale(mx);
    }
    let mut cs = vec![1.0; n];
    for (j, s) in cs.iter_mut().enumerate() {
        let mx = (0..m).map(|i| (std.a[(i, j)] * rs[i]).abs()).fold(0.0, f64::max);
        *s = pow2_scale(mx);
    }
    let cmax = (0..n).map(|j| (std.c[j] * cs[j]).abs()).fold(0.0, f64::max);
    let cscale = pow2_scale(cmax);

    let ncol = n + m;
    let width = ncol + 1;
    let mut t = vec![0.0; m * width];
    let mut flip = vec![1.0; m];
    for i in 0..m {
        let bi = std.b[i] * rs[i];
        flip[i] = if bi < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i * width + j] = flip[i] * std.a[(i, j)] * rs[i] * cs[j];
        }
        t[i * width + n + i] = 1.0;
        t[i * width + ncol] = flip[i] * bi;
    }
    // phase one maximizes -sum(artificials)
    let mut obj = vec![0.0; width];
    for i in 0..m {
        for j in 0..n {
            obj[j] += t[i * width + j];
        }
        obj[ncol] += t[i * width + ncol];
    }
    let mut tab = Tableau {
        m,
        ncol,
        width,
        t,
        obj,
        basis: (n..n + m).collect(),
    };
    let max_iter = opts.max_iter.unwrap_or(50 * (m + n) + 1000);
    let mut iters = 0;

    let structural = |j: usize| j < n;
    match iterate(&mut tab, &structural, &mut iters, max_iter) {
        PhaseEnd::Limit => return Err(LpError::IterationLimit(iters)),
        // phase one is bounded below by zero
        PhaseEnd::Unbounded(_) | PhaseEnd::Optimal => {}
    }
    let bnorm = std.b.iter().zip(&rs).map(|(b, r)| (b * r).abs()).fold(0.0, f64::max);
    let infeas: f64 = (0..m).filter(|&i| tab.basis[i] >= n).map(|i| tab.rhs(i)).sum();
    if infeas > opts.tol_feas.max(1e-9) * (1.0 + bnorm) {
        // phase-one duals: y_i = -d_{n+i} in scaled, flipped coordinates
        let certificate = (0..m).map(|i| tab.obj[n + i] * flip[i] * rs[i]).collect();
        return Err(LpError::Infeasible {
            residual: infeas,
            certificate,
        });
    }

    // drive zero-level artificials out where possible
    for i in 0..m {
        if tab.basis[i] >= n {
            let q = (0..n)
                .filter(|&j| tab.at(i, j).abs() > 1e-7)
                .max_by(|&a, &b| tab.at(i, a).abs().total_cmp(&tab.at(i, b).abs()).then(b.cmp(&a)));
            if let Some(q) = q {
                tab.pivot(i, q);
            }
        }
    }

    // phase two objective row
    let cs_scaled: Vec<f64> = (0..n).map(|j| std.c[j] * cs[j] * cscale).collect();
    let mut obj = vec![0.0; width];
    obj[..n].copy_from_slice(&cs_scaled);
    for i in 0..m {
        let bj = tab.basis[i];
        let cb = if bj < n { cs_scaled[bj] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..width {
                obj[j] -= cb * tab.at(i, j);
            }
        }
    }
    for i in 0..m {
        obj[tab.basis[i]] = 0.0;
    }
    tab.obj = obj;
    match iterate(&mut tab, &structural, &mut iters, max_iter) {
        PhaseEnd::Limit => return Err(LpError::IterationLimit(iters)),
        PhaseEnd::Unbounded(q) => {
            let mut d = vec![0.0; n];
            d[q] = cs[q];
            for i in 0..m {
                let bj = tab.basis[i];
                if bj < n {
                    d[bj] = -tab.at(i, q) * cs[bj];
                }
            }
            let mut ray = vec![0.0; lp.n_vars()];
            for (k, &(j, s)) in std.origin.iter().enumerate() {
                ray[j] += s * d[k];
            }
            return Err(LpError::Unbounded { ray });
        }
        PhaseEnd::Optimal => {}
    }

    // refactor the final basis on the unscaled standard form
    let mut bmat = DMatrix::zeros(m, m);
    let mut cb = DVector::zeros(m);
    for (k, &bj) in tab.basis.iter().enumerate() {
        if bj < n {
            bmat.set_column(k, &std.a.column(bj));
            cb[k] = std.c[bj];
        } else {
            bmat[(bj - n, k)] = 1.0;
        }
    }
    let lu = bmat.clone().lu();
    let bvec = DVector::from_vec(std.b.clone());
    let (xb, y) = match (lu.solve(&bvec), bmat.transpose().lu().solve(&cb)) {
        (Some(xb), Some(y)) => (xb, y),
        _ => return Err(LpError::Numerical("singular final basis".into())),
    };
    let mut xs = vec![0.0; n];
    for (k, &bj) in tab.basis.iter().enumerate() {
        if bj < n {
            xs[bj] = xb[k].max(0.0);
        }
    }
    let mut x = vec![0.0; lp.n_vars()];
    for (k, &(j, s)) in std.origin.iter().enumerate() {
        x[j] += s * xs[k];
    }
    let lambda: Vec<f64> = y.iter().map(|v| -v).collect();

    let objective = lp.objective_at(&x);
    let dual_objective = lp.dual_objective(&lambda);
    let bscale = 1.0 + lp.offset.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cscale_abs = 1.0 + lp.objective.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let primal_residual = lp.primal_residual(&x) / bscale;
    let dual_residual = lp.dual_violation(&lambda) / cscale_abs;
    let slack = lp.a.tr_mul_vec(&lambda);
    let cs_residual = x
        .iter()
        .zip(slack.iter().zip(&lp.objective))
        .map(|(xj, (s, c))| (xj * (s + c)).abs())
        .fold(0.0, f64::max)
        / (1.0 + objective.abs());
    log::trace!(
        "lp {}x{}: {} pivots, obj {:e}, res p {:e} d {:e} cs {:e}",
        m,
        n,
        iters,
        objective,
        primal_residual,
        dual_residual,
        cs_residual
    );
    // the tableau is the primary oracle; a loose sanity band catches basis trouble
    let sanity = 1e-5;
    if primal_residual > sanity || dual_residual > sanity {
        return Err(LpError::Numerical(format!(
            "residuals primal {primal_residual:e} dual {dual_residual:e}"
        )));
    }
    if primal_residual > opts.tol_feas || cs_residual > opts.tol_cs {
        log::debug!("lp residuals above tolerance: p {primal_residual:e} cs {cs_residual:e}");
    }
    Ok(LpSolution {
        x,
        lambda,
        objective,
        dual_objective,
        primal_residual,
        dual_residual,
        cs_residual,
        iterations: iters,
    })
}
