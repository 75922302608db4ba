//! Bound-constrained augmented Lagrangian solver for equality-constrained NLPs.
//!
//! ```text
//! min f(z)  s.t.  c(z) = 0,  lb <= z <= ub
//! ```
//!
//! Outer loop: first-order multiplier updates `lambda += rho c` with penalty
//! growth when the violation does not shrink fast enough, and a shrinking
//! barrier weight. Inner loop: primal-dual log-barrier Newton on
//! `L_A(z) = f + lambda'c + rho/2 |c|^2` inside the box, with the Hessian
//! factored by a sparse Cholesky whose pattern never changes (fixed variables
//! get an identity row/column).

use nalgebra::DVector;
use nalgebra_sparse::factorization::{CscCholesky, CscSymbolicCholesky};
use nalgebra_sparse::pattern::SparsityPattern;
use serde::{Deserialize, Serialize};

/// A smooth NLP with simple bounds and equality constraints.
pub trait NlpProblem {
    fn n_vars(&self) -> usize;
    fn n_cons(&self) -> usize;
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    fn objective(&self, z: &[f64]) -> f64;
    fn objective_grad(&self, z: &[f64], g: &mut [f64]);
    fn constraints(&self, z: &[f64], c: &mut [f64]);
    /// `out += J(z)^T v`
    fn jac_t_prod(&self, z: &[f64], v: &[f64], out: &mut [f64]);
    /// Symmetric CSC pattern (both triangles) of the augmented Lagrangian Hessian.
    fn hessian_pattern(&self) -> &SparsityPattern;
    /// Values, in pattern order, of `H f + sum_j w_j H c_j + rho J'J`.
    fn al_hessian(&self, z: &[f64], w: &[f64], rho: f64, values: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlOptions {
    /// Violation within which a run still creeping towards feasibility may
    /// stop early.
    pub tol: f64,
    /// Largest violation accepted for an optimal exit.
    pub feas_accept: f64,
    /// Violation the outer loop aims for before declaring convergence.
    pub feas_target: f64,
    /// Lagrangian gradient norm aimed for.
    pub opt_target: f64,
    pub rho_init: f64,
    pub rho_max: f64,
    /// Initial and final barrier weight on the bounds.
    pub mu_init: f64,
    pub mu_min: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Consecutive outer iterations with violation above `feas_accept` and no
    /// progress before the problem is declared infeasible.
    pub stall_limit: usize,
}

impl Default for AlOptions {
    fn default() -> Self {
        AlOptions {
            tol: 1e-2,
            feas_accept: 1e-6,
            feas_target: 1e-7,
            opt_target: 1e-6,
            rho_init: 10.0,
            rho_max: 1e8,
            mu_init: 1e-1,
            mu_min: 1e-9,
            max_outer: 200,
            max_inner: 200,
            stall_limit: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct NlpResult {
    pub z: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub objective: f64,
    /// Infinity norm of the equality constraints.
    pub violation: f64,
    /// Infinity norm of the Lagrangian gradient net of bound multipliers.
    pub stationarity: f64,
    pub status: NlpStatus,
    /// Final penalty parameter.
    pub rho: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Penalty<'a, P: NlpProblem + ?Sized> {
    problem: &'a P,
    lambda: &'a [f64],
    rho: f64,
    c: Vec<f64>,
    w: Vec<f64>,
}

impl<'a, P: NlpProblem + ?Sized> Penalty<'a, P> {
    fn new(problem: &'a P, lambda: &'a [f64], rho: f64) -> Self {
        let m = problem.n_cons();
        Penalty { problem, lambda, rho, c: vec![0.0; m], w: vec![0.0; m] }
    }

    fn value(&mut self, z: &[f64]) -> f64 {
        self.problem.constraints(z, &mut self.c);
        let f = self.problem.objective(z);
        let lin: f64 = self.lambda.iter().zip(&self.c).map(|(l, c)| l * c).sum();
        let quad: f64 = self.c.iter().map(|c| c * c).sum();
        f + lin + 0.5 * self.rho * quad
    }

    /// Value and gradient; leaves `w = lambda + rho c` for the Hessian.
    fn value_grad(&mut self, z: &[f64], g: &mut [f64]) -> f64 {
        let v = self.value(z);
        for ((w, &l), &c) in self.w.iter_mut().zip(self.lambda).zip(&self.c) {
            *w = l + self.rho * c;
        }
        g.iter_mut().for_each(|x| *x = 0.0);
        self.problem.objective_grad(z, g);
        self.problem.jac_t_prod(z, &self.w, g);
        v
    }
}

/// Bound bookkeeping for the log barrier.
struct Bounds<'a> {
    lb: &'a [f64],
    ub: &'a [f64],
    fixed: Vec<bool>,
}

impl<'a> Bounds<'a> {
    fn new(lb: &'a [f64], ub: &'a [f64]) -> Self {
        let fixed = lb.iter().zip(ub).map(|(l, u)| l == u).collect();
        Bounds { lb, ub, fixed }
    }

    fn has_lower(&self, i: usize) -> bool {
        !self.fixed[i] && self.lb[i].is_finite()
    }

    fn has_upper(&self, i: usize) -> bool {
        !self.fixed[i] && self.ub[i].is_finite()
    }

    /// Moves `z` strictly inside the box.
    fn push_inside(&self, z: &mut [f64]) {
        for i in 0..z.len() {
            let (l, u) = (self.lb[i], self.ub[i]);
            if self.fixed[i] {
                z[i] = l;
                continue;
            }
            let width = u - l;
            if l.is_finite() {
                let gap = (1e-2 * l.abs().max(1.0)).min(0.5 * 1e-2 * width);
                z[i] = z[i].max(l + gap);
            }
            if u.is_finite() {
                let gap = (1e-2 * u.abs().max(1.0)).min(0.5 * 1e-2 * width);
                z[i] = z[i].min(u - gap);
            }
        }
    }

    fn barrier(&self, z: &[f64], mu: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..z.len() {
            if self.has_lower(i) {
                let s = z[i] - self.lb[i];
                if s <= 0.0 {
                    return f64::INFINITY;
                }
                acc -= s.ln();
            }
            if self.has_upper(i) {
                let s = self.ub[i] - z[i];
                if s <= 0.0 {
                    return f64::INFINITY;
                }
                acc -= s.ln();
            }
        }
        mu * acc
    }

    /// Largest step in `(0, 1]` keeping a fraction `1 - tau` of each slack.
    fn max_step(&self, z: &[f64], d: &[f64], tau: f64) -> f64 {
        let mut alpha: f64 = 1.0;
        for i in 0..z.len() {
            if self.has_lower(i) && d[i] < 0.0 {
                alpha = alpha.min(-tau * (z[i] - self.lb[i]) / d[i]);
            }
            if self.has_upper(i) && d[i] > 0.0 {
                alpha = alpha.min(tau * (self.ub[i] - z[i]) / d[i]);
            }
        }
        alpha
    }
}

fn max_dual_step(v: &[f64], dv: &[f64], tau: f64) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, &d)| d < 0.0)
        .fold(1.0, |a: f64, (&x, &d)| a.min(-tau * x / d))
}

/// Sparse Cholesky on a fixed pattern, with diagonal shifts on failure.
struct NewtonSystem {
    pattern: SparsityPattern,
    diag: Vec<usize>,
    values: Vec<f64>,
    work: Vec<f64>,
    factor: Option<CscCholesky<f64>>,
    factored: bool,
    last_shift: f64,
}

impl NewtonSystem {
    fn new(pattern: &SparsityPattern) -> Self {
        let n = pattern.major_dim();
        let diag = (0..n)
            .map(|j| {
                let lane = pattern.lane(j);
                let off = pattern.major_offsets()[j];
                off + lane.binary_search(&j).expect("hessian pattern holds the diagonal")
            })
            .collect();
        NewtonSystem {
            pattern: pattern.clone(),
            diag,
            values: vec![0.0; pattern.nnz()],
            work: vec![0.0; pattern.nnz()],
            factor: None,
            factored: false,
            last_shift: 0.0,
        }
    }

    /// Masks fixed variables out of `values` and factors `H + shift I`.
    fn factor(&mut self, fixed: &[bool]) -> bool {
        let n = self.pattern.major_dim();
        let offsets = self.pattern.major_offsets();
        let indices = self.pattern.minor_indices();
        for j in 0..n {
            for p in offsets[j]..offsets[j + 1] {
                let i = indices[p];
                if fixed[i] || fixed[j] {
                    self.values[p] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        let mut shift = 0.0;
        for _ in 0..40 {
            self.work.copy_from_slice(&self.values);
            for (j, &d) in self.diag.iter().enumerate() {
                if !fixed[j] {
                    self.work[d] += shift;
                }
            }
            let ok = match self.factor.as_mut() {
                Some(f) => f.refactor(&self.work).is_ok(),
                None => {
                    let symbolic = CscSymbolicCholesky::factor(self.pattern.clone());
                    match CscCholesky::factor_numerical(symbolic, &self.work) {
                        Ok(f) => {
                            self.factor = Some(f);
                            true
                        }
                        Err(_) => false,
                    }
                }
            };
            if ok {
                if shift > 0.0 {
                    self.last_shift = shift;
                }
                self.factored = true;
                return true;
            }
            shift = if shift > 0.0 {
                shift * if self.last_shift == 0.0 { 100.0 } else { 8.0 }
            } else if self.last_shift == 0.0 {
                1e-4
            } else {
                (self.last_shift / 3.0).max(1e-20)
            };
        }
        self.factored = false;
        false
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        debug_assert!(self.factored);
        let f = self.factor.as_ref().expect("factored");
        let b = DVector::from_column_slice(rhs);
        let x = f.solve(&b);
        x.as_slice().to_vec()
    }
}

struct BarrierState {
    z_lower: Vec<f64>,
    z_upper: Vec<f64>,
}

impl BarrierState {
    fn new(bounds: &Bounds<'_>, z: &[f64], mu: f64) -> Self {
        let n = z.len();
        let mut z_lower = vec![0.0; n];
        let mut z_upper = vec![0.0; n];
        for i in 0..n {
            if bounds.has_lower(i) {
                z_lower[i] = mu / (z[i] - bounds.lb[i]);
            }
            if bounds.has_upper(i) {
                z_upper[i] = mu / (bounds.ub[i] - z[i]);
            }
        }
        BarrierState { z_lower, z_upper }
    }

    /// Dual residual `g - zL + zU` and complementarity error against `mu`.
    fn errors(&self, bounds: &Bounds<'_>, z: &[f64], g: &[f64], mu: f64) -> (f64, f64) {
        let mut dual: f64 = 0.0;
        let mut comp: f64 = 0.0;
        for i in 0..z.len() {
            if bounds.fixed[i] {
                continue;
            }
            dual = dual.max((g[i] - self.z_lower[i] + self.z_upper[i]).abs());
            if bounds.has_lower(i) {
                comp = comp.max(((z[i] - bounds.lb[i]) * self.z_lower[i] - mu).abs());
            }
            if bounds.has_upper(i) {
                comp = comp.max(((bounds.ub[i] - z[i]) * self.z_upper[i] - mu).abs());
            }
        }
        (dual, comp)
    }
}

/// Primal-dual barrier Newton on the augmented Lagrangian for fixed `mu`.
fn minimize_barrier<P: NlpProblem + ?Sized>(
    pen: &mut Penalty<'_, P>,
    bounds: &Bounds<'_>,
    sys: &mut NewtonSystem,
    duals: &mut BarrierState,
    z: &mut [f64],
    mu: f64,
    tol: f64,
    max_iter: usize,
) -> (usize, bool) {
    let problem = pen.problem;
    let n = z.len();
    let (lb, ub) = (bounds.lb, bounds.ub);
    let mut g = vec![0.0; n];
    let mut gb = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut d_lower = vec![0.0; n];
    let mut d_upper = vec![0.0; n];
    let tau = (1.0 - mu).max(0.99);
    let mut value = pen.value_grad(z, &mut g) + bounds.barrier(z, mu);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let (dual, comp) = duals.errors(bounds, z, &g, mu);
        if dual.max(comp) <= tol {
            converged = true;
            break;
        }
        iterations += 1;
        problem.al_hessian(z, &pen.w, pen.rho, &mut sys.values);
        for i in 0..n {
            gb[i] = g[i];
            if bounds.fixed[i] {
                rhs[i] = 0.0;
                continue;
            }
            let mut sigma = 0.0;
            if bounds.has_lower(i) {
                let s = z[i] - lb[i];
                gb[i] -= mu / s;
                sigma += duals.z_lower[i] / s;
            }
            if bounds.has_upper(i) {
                let s = ub[i] - z[i];
                gb[i] += mu / s;
                sigma += duals.z_upper[i] / s;
            }
            sys.values[sys.diag[i]] += sigma;
            rhs[i] = -gb[i];
        }
        let d: Vec<f64> = if sys.factor(&bounds.fixed) {
            let mut d = sys.solve(&rhs);
            for i in 0..n {
                if bounds.fixed[i] {
                    d[i] = 0.0;
                }
            }
            d
        } else {
            rhs.clone()
        };
        let slope: f64 = gb.iter().zip(&d).map(|(a, b)| a * b).sum();
        let mut alpha = bounds.max_step(z, &d, tau);
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = z[i] + alpha * d[i];
            }
            let trial_value = pen.value(&trial) + bounds.barrier(&trial, mu);
            if trial_value.is_finite() && trial_value <= value + 1e-4 * alpha * slope.min(0.0) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        for i in 0..n {
            d_lower[i] = 0.0;
            d_upper[i] = 0.0;
            if bounds.has_lower(i) {
                let s = z[i] - lb[i];
                d_lower[i] = mu / s - duals.z_lower[i] - duals.z_lower[i] / s * d[i];
            }
            if bounds.has_upper(i) {
                let s = ub[i] - z[i];
                d_upper[i] = mu / s - duals.z_upper[i] + duals.z_upper[i] / s * d[i];
            }
        }
        let alpha_dual = max_dual_step(&duals.z_lower, &d_lower, tau)
            .min(max_dual_step(&duals.z_upper, &d_upper, tau));
        z.copy_from_slice(&trial);
        const KAPPA: f64 = 1e10;
        for i in 0..n {
            if bounds.has_lower(i) {
                let s = z[i] - lb[i];
                let v = duals.z_lower[i] + alpha_dual * d_lower[i];
                duals.z_lower[i] = v.clamp(mu / (KAPPA * s), KAPPA * mu / s);
            }
            if bounds.has_upper(i) {
                let s = ub[i] - z[i];
                let v = duals.z_upper[i] + alpha_dual * d_upper[i];
                duals.z_upper[i] = v.clamp(mu / (KAPPA * s), KAPPA * mu / s);
            }
        }
        let prev = value;
        value = pen.value_grad(z, &mut g) + bounds.barrier(z, mu);
        if (prev - value).abs() <= 1e-15 * (1.0 + value.abs()) && alpha < 1e-12 {
            break;
        }
    }
    pen.value_grad(z, &mut g);
    (iterations, converged)
}

/// Runs the augmented Lagrangian method from `z0`.
pub fn solve<P: NlpProblem + ?Sized>(problem: &P, z0: &[f64], opts: &AlOptions) -> NlpResult {
    solve_warm(problem, z0, None, opts)
}

/// Like [`solve`], optionally starting from multipliers and a penalty value.
pub fn solve_warm<P: NlpProblem + ?Sized>(
    problem: &P,
    z0: &[f64],
    warm: Option<(&[f64], f64)>,
    opts: &AlOptions,
) -> NlpResult {
    let n = problem.n_vars();
    let m = problem.n_cons();
    assert_eq!(z0.len(), n, "initial point has wrong length");
    let bounds = Bounds::new(problem.lower(), problem.upper());
    let mut z = z0.to_vec();
    bounds.push_inside(&mut z);
    let (mut lambda, mut rho) = match warm {
        Some((l, r)) => {
            assert_eq!(l.len(), m, "warm multipliers have wrong length");
            (l.to_vec(), r.clamp(opts.rho_init, opts.rho_max))
        }
        None => (vec![0.0; m], opts.rho_init),
    };
    let mut mu = opts.mu_init;
    let mut duals = BarrierState::new(&bounds, &z, mu);
    let mut sys = NewtonSystem::new(problem.hessian_pattern());
    let mut c = vec![0.0; m];
    let mut grad = vec![0.0; n];

    // inner tolerance and feasibility target of the outer schedule
    let mut omega = 1.0 / rho;
    let mut eta = 1.0 / rho.powf(0.1);
    let mut best_violation = f64::INFINITY;
    let mut stalled = 0usize;
    let mut best_stationarity = f64::INFINITY;
    let mut stationarity_stall = 0usize;
    let mut prev_objective = f64::INFINITY;
    let mut objective_stall = 0usize;
    let mut inner_total = 0;
    let mut status = NlpStatus::MaxIter;
    let mut outer = 0;
    let mut stationarity = f64::INFINITY;
    let mut violation = f64::INFINITY;

    while outer < opts.max_outer {
        outer += 1;
        let lambda_snapshot = lambda.clone();
        let mut pen = Penalty::new(problem, &lambda_snapshot, rho);
        let inner_tol = omega.max(10.0 * mu).max(0.1 * opts.opt_target);
        let (iterations, converged) = minimize_barrier(
            &mut pen,
            &bounds,
            &mut sys,
            &mut duals,
            &mut z,
            mu,
            inner_tol,
            opts.max_inner,
        );
        inner_total += iterations;

        problem.constraints(&z, &mut c);
        violation = inf_norm(&c);
        let accept = violation <= eta;
        if accept {
            for (l, &ci) in lambda.iter_mut().zip(&c) {
                *l += rho * ci;
            }
        }
        grad.iter_mut().for_each(|x| *x = 0.0);
        problem.objective_grad(&z, &mut grad);
        let w: Vec<f64> = if accept {
            lambda.clone()
        } else {
            lambda.iter().zip(&c).map(|(l, ci)| l + rho * ci).collect()
        };
        problem.jac_t_prod(&z, &w, &mut grad);
        let (dual, _) = duals.errors(&bounds, &z, &grad, mu);
        stationarity = dual.max(mu);

        if violation <= opts.feas_target && stationarity <= opts.opt_target {
            status = NlpStatus::Optimal;
            break;
        }
        if violation < 0.99 * best_violation {
            stalled = 0;
        } else {
            stalled += 1;
        }
        if violation <= opts.feas_accept && mu <= opts.mu_min {
            if stationarity < 0.99 * best_stationarity {
                best_stationarity = stationarity;
                stationarity_stall = 0;
            } else {
                stationarity_stall += 1;
            }
            if stationarity_stall >= 10 {
                status = NlpStatus::Optimal;
                break;
            }
        }
        let objective = problem.objective(&z);
        if (objective - prev_objective).abs() <= 1e-4 * (1.0 + objective.abs()) {
            objective_stall += 1;
        } else {
            objective_stall = 0;
        }
        prev_objective = objective;
        if objective_stall >= 10 {
            if violation <= opts.feas_accept {
                status = NlpStatus::Optimal;
                break;
            }
            // still creeping towards feasibility
            if stalled < 10 && violation <= opts.tol {
                break;
            }
        }
        if violation > opts.feas_accept && stalled >= opts.stall_limit {
            status = NlpStatus::Infeasible;
            break;
        }
        best_violation = best_violation.min(violation);
        if !converged {
            continue;
        }
        if accept {
            omega = (omega / rho).max(0.1 * opts.opt_target);
            eta = (eta / rho.powf(0.9)).max(opts.feas_target);
            mu = (0.2 * mu).min(mu.powf(1.5)).max(opts.mu_min);
        } else {
            rho = (rho * 10.0).min(opts.rho_max);
            omega = 1.0 / rho;
            eta = 0.1 / rho.powf(0.1);
        }
    }
    if status == NlpStatus::MaxIter && violation <= opts.feas_accept && stationarity.is_finite() {
        status = NlpStatus::Optimal;
    }
    NlpResult {
        objective: problem.objective(&z),
        z,
        multipliers: lambda,
        violation,
        stationarity,
        status,
        rho,
        outer_iterations: outer,
        inner_iterations: inner_total,
    }
}

/// Builds a symmetric CSC pattern from (row, col) pairs, adding the diagonal.
pub fn symmetric_pattern(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> SparsityPattern {
    let mut cols: Vec<Vec<usize>> = (0..n).map(|j| vec![j]).collect();
    for (i, j) in pairs {
        cols[j].push(i);
        cols[i].push(j);
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    offsets.push(0);
    for col in &mut cols {
        col.sort_unstable();
        col.dedup();
        indices.extend_from_slice(col);
        offsets.push(indices.len());
    }
    SparsityPattern::try_from_offsets_and_indices(n, n, offsets, indices)
        .expect("valid symmetric pattern")
}

/// Position of entry `(row, col)` in a CSC pattern's value array.
pub fn pattern_position(pattern: &SparsityPattern, row: usize, col: usize) -> usize {
    let off = pattern.major_offsets()[col];
    off + pattern.lane(col).binary_search(&row).expect("entry in pattern")
}
