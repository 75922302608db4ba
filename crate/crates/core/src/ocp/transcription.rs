//! Hermite-Simpson (separated form) transcription with free final time.
//!
//! Decision vector, interval by interval:
//! `[x_0 u_0 xm_0 um_0 | x_1 u_1 xm_1 um_1 | ... | x_K u_K | tf]`
//! so every interval touches a contiguous window of 15 entries plus `tf`,
//! which keeps the Hessian banded with one dense border row.
//!
//! Per interval with `h = tf (tau_{k+1} - tau_k)`:
//!
//! ```text
//! xm - (x_k + x_{k+1})/2 - h/8 (f_k - f_{k+1})        = 0
//! x_{k+1} - x_k - h/6 (f_k + 4 f_m + f_{k+1})         = 0
//! ```
//!
//! and the objective is Simpson's rule on `T` over the same samples.

use nalgebra_sparse::pattern::SparsityPattern;
use serde::{Deserialize, Serialize};

use super::mesh::Mesh;
use super::nlp::{pattern_position, symmetric_pattern, NlpProblem};
use super::OcProblem;
use crate::dynamics::{drift_hessian, drift_jacobian, drift_unchecked, StateVec};

/// Midpoint-interpolation and Simpson residuals of one state component over
/// an interval of length `h`.
pub fn hermite_simpson_residuals(x: [f64; 3], f: [f64; 3], h: f64) -> [f64; 2] {
    let [xk, xm, xk1] = x;
    let [fk, fm, fk1] = f;
    [
        xm - 0.5 * (xk + xk1) - h / 8.0 * (fk - fk1),
        xk1 - xk - h / 6.0 * (fk + 4.0 * fm + fk1),
    ]
}

/// Simpson's rule over an interval of length `h` from end and midpoint values.
pub fn simpson(y: [f64; 3], h: f64) -> f64 {
    h / 6.0 * (y[0] + 4.0 * y[1] + y[2])
}

const XK: usize = 0;
const UK: usize = 4;
const XM: usize = 5;
const UM: usize = 9;
const XK1: usize = 10;
const UK1: usize = 14;
const TF: usize = 15;
const LOCAL: usize = 16;
const BLOCK: usize = 10;
const T_IDX: usize = 1;
/// Upper bound placed on every state component.
const STATE_CAP: f64 = 1e3;

/// Index map of the flattened decision vector for `intervals` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub intervals: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        BLOCK * self.intervals + 6
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node_state(&self, k: usize) -> usize {
        BLOCK * k
    }

    pub fn node_control(&self, k: usize) -> usize {
        BLOCK * k + 4
    }

    pub fn mid_state(&self, k: usize) -> usize {
        debug_assert!(k < self.intervals);
        BLOCK * k + 5
    }

    pub fn mid_control(&self, k: usize) -> usize {
        debug_assert!(k < self.intervals);
        BLOCK * k + 9
    }

    pub fn tf(&self) -> usize {
        BLOCK * self.intervals + 5
    }

    fn local(&self, k: usize, l: usize) -> usize {
        if l == TF {
            self.tf()
        } else {
            BLOCK * k + l
        }
    }
}

/// Flat decision vector plus its layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpVector {
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl NlpVector {
    pub fn zeros(layout: Layout) -> Self {
        NlpVector { layout, data: vec![0.0; layout.len()] }
    }

    fn read(&self, at: usize) -> StateVec<f64> {
        StateVec::new(self.data[at], self.data[at + 1], self.data[at + 2], self.data[at + 3])
    }

    fn write(&mut self, at: usize, x: &StateVec<f64>) {
        self.data[at..at + 4].copy_from_slice(&x.to_array());
    }

    pub fn node_state(&self, k: usize) -> StateVec<f64> {
        self.read(self.layout.node_state(k))
    }

    pub fn set_node_state(&mut self, k: usize, x: &StateVec<f64>) {
        let at = self.layout.node_state(k);
        self.write(at, x);
    }

    pub fn mid_state(&self, k: usize) -> StateVec<f64> {
        self.read(self.layout.mid_state(k))
    }

    pub fn set_mid_state(&mut self, k: usize, x: &StateVec<f64>) {
        let at = self.layout.mid_state(k);
        self.write(at, x);
    }

    pub fn node_control(&self, k: usize) -> f64 {
        self.data[self.layout.node_control(k)]
    }

    pub fn set_node_control(&mut self, k: usize, u: f64) {
        let at = self.layout.node_control(k);
        self.data[at] = u;
    }

    pub fn mid_control(&self, k: usize) -> f64 {
        self.data[self.layout.mid_control(k)]
    }

    pub fn set_mid_control(&mut self, k: usize, u: f64) {
        let at = self.layout.mid_control(k);
        self.data[at] = u;
    }

    pub fn tf(&self) -> f64 {
        self.data[self.layout.tf()]
    }

    pub fn set_tf(&mut self, tf: f64) {
        let at = self.layout.tf();
        self.data[at] = tf;
    }
}

/// Samples and derivatives for one interval, computed from a raw vector.
struct IntervalEval {
    w: f64,
    h: f64,
    x: [StateVec<f64>; 3],
    u: [f64; 3],
    f: [[f64; 4]; 3],
    jx: [[[f64; 4]; 4]; 3],
    ju: [f64; 4],
}

/// The collocation NLP for one problem on one mesh.
pub struct Transcription {
    pub problem: OcProblem,
    pub mesh: Mesh,
    pub layout: Layout,
    lower: Vec<f64>,
    upper: Vec<f64>,
    pattern: SparsityPattern,
    positions: Vec<[usize; LOCAL * LOCAL]>,
}

impl Transcription {
    pub fn new(problem: &OcProblem, mesh: &Mesh) -> Self {
        let layout = Layout { intervals: mesh.intervals() };
        let n = layout.len();
        let mut lower = vec![0.0; n];
        let mut upper = vec![STATE_CAP; n];
        let (min_n, min_i) = problem.path_lower_bounds();
        let mut set_state = |at: usize| {
            lower[at] = min_n;
            lower[at + 2] = min_i;
        };
        for k in 0..=layout.intervals {
            set_state(layout.node_state(k));
            if k < layout.intervals {
                set_state(layout.mid_state(k));
            }
        }
        for k in 0..=layout.intervals {
            lower[layout.node_control(k)] = problem.u_min;
            upper[layout.node_control(k)] = problem.u_max;
            if k < layout.intervals {
                lower[layout.mid_control(k)] = problem.u_min;
                upper[layout.mid_control(k)] = problem.u_max;
            }
        }
        // fixed initial state
        let x0 = problem.x0.to_array();
        lower[..4].copy_from_slice(&x0);
        upper[..4].copy_from_slice(&x0);
        let last = layout.node_state(layout.intervals);
        upper[last + T_IDX] = problem.terminal_t_max;
        lower[last + T_IDX] = 0.0;
        lower[layout.tf()] = problem.tf_min;
        upper[layout.tf()] = problem.tf_max;

        let mut pairs = Vec::new();
        for k in 0..layout.intervals {
            for a in 0..LOCAL {
                for b in 0..=a {
                    pairs.push((layout.local(k, a), layout.local(k, b)));
                }
            }
        }
        let pattern = symmetric_pattern(n, pairs);
        let positions = (0..layout.intervals)
            .map(|k| {
                let mut pos = [0usize; LOCAL * LOCAL];
                for a in 0..LOCAL {
                    for b in 0..LOCAL {
                        pos[a * LOCAL + b] =
                            pattern_position(&pattern, layout.local(k, a), layout.local(k, b));
                    }
                }
                pos
            })
            .collect();
        Transcription {
            problem: problem.clone(),
            mesh: mesh.clone(),
            layout,
            lower,
            upper,
            pattern,
            positions,
        }
    }

    fn eval_interval(&self, z: &[f64], k: usize, with_jac: bool) -> IntervalEval {
        let base = BLOCK * k;
        let tf = z[self.layout.tf()];
        let w = self.mesh.width(k);
        let h = tf * w;
        let p = &self.problem.params;
        let st = |at: usize| StateVec::new(z[at], z[at + 1], z[at + 2], z[at + 3]);
        let x = [st(base + XK), st(base + XM), st(base + XK1)];
        let u = [z[base + UK], z[base + UM], z[base + UK1]];
        let f = [0, 1, 2].map(|s| drift_unchecked(p, &x[s], u[s]).to_array());
        let (jx, ju) = if with_jac {
            let j = [0, 1, 2].map(|s| drift_jacobian(p, &x[s]));
            ([j[0].0, j[1].0, j[2].0], j[0].1)
        } else {
            ([[[0.0; 4]; 4]; 3], [0.0, 0.0, 0.0, 1.0])
        };
        IntervalEval { w, h, x, u, f, jx, ju }
    }

    /// Residuals of interval `k`: four interpolation rows then four Simpson rows.
    fn residuals(&self, e: &IntervalEval) -> [f64; 8] {
        let mut r = [0.0; 8];
        let (xk, xm, xk1) = (e.x[0].to_array(), e.x[1].to_array(), e.x[2].to_array());
        let (fk, fm, fk1) = (e.f[0], e.f[1], e.f[2]);
        for j in 0..4 {
            let [mid, simpson] =
                hermite_simpson_residuals([xk[j], xm[j], xk1[j]], [fk[j], fm[j], fk1[j]], e.h);
            r[j] = mid;
            r[4 + j] = simpson;
        }
        r
    }

    fn local_jacobian(&self, e: &IntervalEval) -> [[f64; LOCAL]; 8] {
        let mut jac = [[0.0; LOCAL]; 8];
        let (h, w) = (e.h, e.w);
        let [jk, jm, jk1] = &e.jx;
        let ju = e.ju;
        let (fk, fm, fk1) = (e.f[0], e.f[1], e.f[2]);
        for r in 0..4 {
            let row = &mut jac[r];
            row[XM + r] += 1.0;
            for j in 0..4 {
                let d = if r == j { 1.0 } else { 0.0 };
                row[XK + j] += -0.5 * d - h / 8.0 * jk[r][j];
                row[XK1 + j] += -0.5 * d + h / 8.0 * jk1[r][j];
            }
            row[UK] += -h / 8.0 * ju[r];
            row[UK1] += h / 8.0 * ju[r];
            row[TF] += -w / 8.0 * (fk[r] - fk1[r]);

            let row = &mut jac[4 + r];
            for j in 0..4 {
                let d = if r == j { 1.0 } else { 0.0 };
                row[XK1 + j] += d - h / 6.0 * jk1[r][j];
                row[XK + j] += -d - h / 6.0 * jk[r][j];
                row[XM + j] += -4.0 * h / 6.0 * jm[r][j];
            }
            row[UK] += -h / 6.0 * ju[r];
            row[UM] += -4.0 * h / 6.0 * ju[r];
            row[UK1] += -h / 6.0 * ju[r];
            row[TF] += -w / 6.0 * (fk[r] + 4.0 * fm[r] + fk1[r]);
        }
        jac
    }

    /// Simpson weights of `T` in interval `k` (without `tf` and scale).
    fn quad_weights(&self, k: usize) -> [f64; 3] {
        let w = self.mesh.width(k);
        [w / 6.0, 4.0 * w / 6.0, w / 6.0]
    }

    /// `int_0^tf T dt` by Simpson's rule on node and midpoint samples (unscaled).
    pub fn tumor_integral(&self, z: &[f64]) -> f64 {
        let tf = z[self.layout.tf()];
        let mut acc = 0.0;
        for k in 0..self.layout.intervals {
            let base = BLOCK * k;
            let y = [z[base + XK + T_IDX], z[base + XM + T_IDX], z[base + XK1 + T_IDX]];
            acc += simpson(y, self.mesh.width(k));
        }
        tf * acc
    }

    /// Largest absolute collocation residual.
    pub fn max_defect(&self, z: &[f64]) -> f64 {
        let mut c = vec![0.0; self.n_cons()];
        self.constraints(z, &mut c);
        c.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest violation of the simple bounds (path, control, terminal, tf).
    pub fn max_bound_violation(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Per-interval error estimate: `h * max |x'_hermite - f(x_hermite, u_quad)|`
    /// at the quarter points of each interval.
    pub fn interval_errors(&self, z: &[f64]) -> Vec<f64> {
        (0..self.layout.intervals)
            .map(|k| {
                let e = self.eval_interval(z, k, false);
                let mut worst: f64 = 0.0;
                for s in [0.25, 0.75] {
                    let (x, dx) = hermite(&e, s);
                    let u = quadratic(e.u, s);
                    let f = drift_unchecked(&self.problem.params, &StateVec::from_array(x), u)
                        .to_array();
                    for j in 0..4 {
                        worst = worst.max((dx[j] - f[j]).abs());
                    }
                }
                e.h * worst
            })
            .collect()
    }

    /// State and control at normalized time `tau` from the collocation interpolants.
    pub fn interpolate(&self, z: &[f64], tau: f64) -> (StateVec<f64>, f64) {
        let nodes = self.mesh.nodes();
        let k = nodes.partition_point(|&v| v <= tau).clamp(1, self.layout.intervals) - 1;
        let e = self.eval_interval(z, k, false);
        let s = ((tau - nodes[k]) / e.w).clamp(0.0, 1.0);
        let (x, _) = hermite(&e, s);
        (StateVec::from_array(x), quadratic(e.u, s))
    }

    fn add_local(&self, k: usize, local: &[[f64; LOCAL]; LOCAL], values: &mut [f64]) {
        let pos = &self.positions[k];
        for a in 0..LOCAL {
            for b in 0..LOCAL {
                let v = local[a][b];
                if v != 0.0 {
                    values[pos[a * LOCAL + b]] += v;
                }
            }
        }
    }
}

/// Cubic Hermite state and its time derivative at fraction `s` of the interval.
fn hermite(e: &IntervalEval, s: f64) -> ([f64; 4], [f64; 4]) {
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let d00 = 6.0 * s2 - 6.0 * s;
    let d10 = 3.0 * s2 - 4.0 * s + 1.0;
    let d01 = -6.0 * s2 + 6.0 * s;
    let d11 = 3.0 * s2 - 2.0 * s;
    let (xk, xk1) = (e.x[0].to_array(), e.x[2].to_array());
    let (fk, fk1) = (e.f[0], e.f[2]);
    let mut x = [0.0; 4];
    let mut dx = [0.0; 4];
    for j in 0..4 {
        x[j] = h00 * xk[j] + h10 * e.h * fk[j] + h01 * xk1[j] + h11 * e.h * fk1[j];
        dx[j] = (d00 * xk[j] + d01 * xk1[j]) / e.h + d10 * fk[j] + d11 * fk1[j];
    }
    (x, dx)
}

fn quadratic(u: [f64; 3], s: f64) -> f64 {
    u[0] * (2.0 * s - 1.0) * (s - 1.0) + u[1] * 4.0 * s * (1.0 - s) + u[2] * s * (2.0 * s - 1.0)
}

impl NlpProblem for Transcription {
    fn n_vars(&self) -> usize {
        self.layout.len()
    }

    fn n_cons(&self) -> usize {
        8 * self.layout.intervals
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn objective(&self, z: &[f64]) -> f64 {
        self.problem.objective_scale * self.tumor_integral(z)
    }

    fn objective_grad(&self, z: &[f64], g: &mut [f64]) {
        g.iter_mut().for_each(|v| *v = 0.0);
        let scale = self.problem.objective_scale;
        let tf = z[self.layout.tf()];
        let mut d_tf = 0.0;
        for k in 0..self.layout.intervals {
            let base = BLOCK * k;
            let q = self.quad_weights(k);
            for (slot, qw) in [(XK, q[0]), (XM, q[1]), (XK1, q[2])] {
                g[base + slot + T_IDX] += scale * tf * qw;
                d_tf += scale * qw * z[base + slot + T_IDX];
            }
        }
        g[self.layout.tf()] = d_tf;
    }

    fn constraints(&self, z: &[f64], c: &mut [f64]) {
        for k in 0..self.layout.intervals {
            let e = self.eval_interval(z, k, false);
            c[8 * k..8 * k + 8].copy_from_slice(&self.residuals(&e));
        }
    }

    fn jac_t_prod(&self, z: &[f64], v: &[f64], out: &mut [f64]) {
        for k in 0..self.layout.intervals {
            let e = self.eval_interval(z, k, true);
            let jac = self.local_jacobian(&e);
            for (r, row) in jac.iter().enumerate() {
                let vr = v[8 * k + r];
                if vr == 0.0 {
                    continue;
                }
                for (l, &jl) in row.iter().enumerate() {
                    if jl != 0.0 {
                        out[self.layout.local(k, l)] += jl * vr;
                    }
                }
            }
        }
    }

    fn hessian_pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    fn al_hessian(&self, z: &[f64], w: &[f64], rho: f64, values: &mut [f64]) {
        values.iter_mut().for_each(|v| *v = 0.0);
        let p = &self.problem.params;
        let scale = self.problem.objective_scale;
        for k in 0..self.layout.intervals {
            let e = self.eval_interval(z, k, true);
            let jac = self.local_jacobian(&e);
            let mut hl = [[0.0; LOCAL]; LOCAL];
            // rho J'J
            for row in &jac {
                for a in 0..LOCAL {
                    if row[a] == 0.0 {
                        continue;
                    }
                    let ra = rho * row[a];
                    for b in 0..LOCAL {
                        hl[a][b] += ra * row[b];
                    }
                }
            }
            // constraint curvature
            let hs = [0, 1, 2].map(|s| drift_hessian(p, &e.x[s]));
            let (h, wd) = (e.h, e.w);
            let [jk, jm, jk1] = &e.jx;
            let ju = e.ju;
            for r in 0..4 {
                let wi = w[8 * k + r];
                let ws = w[8 * k + 4 + r];
                // (slot, coefficient on f in interp row, coefficient in simpson row)
                let terms = [
                    (XK, UK, &hs[0][r], &jk[r], -wi / 8.0 - ws / 6.0),
                    (XM, UM, &hs[1][r], &jm[r], -4.0 * ws / 6.0),
                    (XK1, UK1, &hs[2][r], &jk1[r], wi / 8.0 - ws / 6.0),
                ];
                for (xs, us, hess, jrow, coef) in terms {
                    if coef == 0.0 {
                        continue;
                    }
                    for a in 0..4 {
                        for b in 0..4 {
                            hl[xs + a][xs + b] += coef * h * hess[a][b];
                        }
                        let cross = coef * wd * jrow[a];
                        hl[TF][xs + a] += cross;
                        hl[xs + a][TF] += cross;
                    }
                    let cu = coef * wd * ju[r];
                    hl[TF][us] += cu;
                    hl[us][TF] += cu;
                }
            }
            // objective: scale * tf * sum q T
            let q = self.quad_weights(k);
            for (slot, qw) in [(XK, q[0]), (XM, q[1]), (XK1, q[2])] {
                hl[TF][slot + T_IDX] += scale * qw;
                hl[slot + T_IDX][TF] += scale * qw;
            }
            self.add_local(k, &hl, values);
        }
    }
}
