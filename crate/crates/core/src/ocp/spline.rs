use serde::{Deserialize, Serialize};

use crate::dynamics::{DoseSource, StateVec, U_MAX};

/// Piecewise-quadratic control through node, midpoint and next-node values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSpline {
    /// Interval boundaries in days.
    pub knots: Vec<f64>,
    /// `(u_k, u_mid, u_k+1)` per interval.
    pub coeffs: Vec<[f64; 3]>,
}

impl ControlSpline {
    pub fn tf(&self) -> f64 {
        *self.knots.last().expect("spline has knots")
    }

    /// Spline value at `t`; outside `[0, tf]` the nearest end value.
    pub fn eval(&self, t: f64) -> f64 {
        let k = match self.knots.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(k) => k.min(self.coeffs.len() - 1),
            Err(0) => return self.coeffs[0][0],
            Err(k) if k >= self.knots.len() => return self.coeffs[self.coeffs.len() - 1][2],
            Err(k) => k - 1,
        };
        self.eval_piece(k, t)
    }

    fn eval_piece(&self, k: usize, t: f64) -> f64 {
        let (a, b) = (self.knots[k], self.knots[k + 1]);
        let s = (t - a) / (b - a);
        let [u0, um, u1] = self.coeffs[k];
        // Lagrange basis on s = 0, 1/2, 1
        u0 * (2.0 * s - 1.0) * (s - 1.0) + um * 4.0 * s * (1.0 - s) + u1 * s * (2.0 * s - 1.0)
    }

    /// Integral over `[a, b]` (inside `[0, tf]`) of the spline clamped to `[lo, hi]`.
    pub fn clamped_integral(&self, a: f64, b: f64, lo: f64, hi: f64) -> f64 {
        const PANELS: usize = 8;
        let first = self.knots.partition_point(|&v| v <= a).saturating_sub(1);
        let mut acc = 0.0;
        for k in first..self.coeffs.len() {
            let (ka, kb) = (self.knots[k], self.knots[k + 1]);
            if ka >= b {
                break;
            }
            let (x0, x1) = (a.max(ka), b.min(kb));
            if x1 <= x0 {
                continue;
            }
            let h = (x1 - x0) / PANELS as f64;
            let f = |t: f64| self.eval_piece(k, t).clamp(lo, hi);
            for j in 0..PANELS {
                let p = x0 + j as f64 * h;
                acc += h / 6.0 * (f(p) + 4.0 * f(p + 0.5 * h) + f(p + h));
            }
        }
        acc
    }
}

/// Time-indexed schedule from an optimal control solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopPolicy {
    pub spline: ControlSpline,
    pub u_max: f64,
}

impl OpenLoopPolicy {
    pub fn new(spline: ControlSpline) -> Self {
        OpenLoopPolicy { spline, u_max: U_MAX }
    }

    /// Scheduled dose at time `t`: zero once treatment is over.
    pub fn at(&self, t: f64) -> f64 {
        if t > self.spline.tf() || t < 0.0 {
            return 0.0;
        }
        self.spline.eval(t).clamp(0.0, self.u_max)
    }

    /// Mean of the schedule over `[t, t + dt)`.
    pub fn mean_over(&self, t: f64, dt: f64) -> f64 {
        let a = t.max(0.0);
        let b = (t + dt).min(self.spline.tf());
        if b <= a {
            return 0.0;
        }
        self.spline.clamped_integral(a, b, 0.0, self.u_max) / dt
    }
}

impl DoseSource for OpenLoopPolicy {
    /// Holds the interval mean of the schedule, so the drug mass delivered over
    /// each control interval matches the continuous schedule.
    fn dose(&self, t: f64, _x: &StateVec<f64>, dt: f64) -> f64 {
        self.mean_over(t, dt)
    }
}
