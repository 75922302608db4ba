//! Tumor / immune / normal-cell competition model with a single chemotherapy drug.
//!
//! State `x = (N, T, I, C)`:
//!
//! ```text
//! dN = r2 N (1 - b2 N) - c4 N T - a3 N C
//! dT = r1 T (1 - b1 T) - c2 I T - c3 T N - a2 T C
//! dI = s + rho I T / (alpha + T) - c1 I T - d1 I - a1 I C
//! dC = -d2 C + u
//! ```
//!
//! The kernels (`drift`, `rk4_step`, `euler_maruyama_step`) are generic over the
//! scalar type; [`simulate`] rolls a dose source forward in `f64`.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Upper bound of the drug infusion rate, mg/(l day).
pub const U_MAX: f64 = 10.0;
/// Tumor level at or below which the tumor counts as exterminated.
pub const CURE_THRESHOLD: f64 = 1e-2;
/// Safety floor on normal and immune populations in the patient case.
pub const PATH_FLOOR: f64 = 0.4;

/// Which safety constraints apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// Exterminate the tumor, no constraints on the other populations.
    Case0,
    /// Keep normal and immune populations at or above a floor throughout.
    Patient,
}

const DEFAULT_CONFIG: &str = include_str!("../config/default.json");

/// Model coefficients for one patient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct PatientParams<S> {
    pub r1: S,
    pub r2: S,
    pub b1: S,
    pub b2: S,
    pub c1: S,
    pub c2: S,
    pub c3: S,
    pub c4: S,
    pub a1: S,
    pub a2: S,
    pub a3: S,
    pub d1: S,
    pub d2: S,
    pub s: S,
    pub rho: S,
    pub alpha: S,
}

/// Cell populations (normalized) and drug concentration (mg/l).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct StateVec<S> {
    pub n: S,
    pub t: S,
    pub i: S,
    pub c: S,
}

/// A patient file: coefficients plus the state at diagnosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Patient {
    pub params: PatientParams<f64>,
    pub x0: StateVec<f64>,
}

#[derive(Deserialize)]
struct RawPatient {
    params: PatientParams<f64>,
    x0: StateVec<f64>,
}

#[derive(Deserialize)]
struct DefaultDoc {
    patient: RawPatient,
}

impl Default for Patient {
    fn default() -> Self {
        Patient::nominal()
    }
}

impl Patient {
    /// Nominal patient shipped in `config/default.json`.
    pub fn nominal() -> Self {
        let doc: DefaultDoc =
            serde_json::from_str(DEFAULT_CONFIG).expect("embedded default config parses");
        Patient { params: doc.patient.params, x0: doc.patient.x0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !self.x0.is_finite() || !self.x0.is_nonnegative() {
            return Err(Error::InvalidParams(format!(
                "initial state must be finite and non-negative, got {:?}",
                self.x0
            )));
        }
        Ok(())
    }
}

impl<S: Scalar> PatientParams<S> {
    /// Nominal coefficients from the shipped default config.
    pub fn nominal() -> Self {
        Patient::nominal().params.cast()
    }

    pub fn cast<T: Scalar>(&self) -> PatientParams<T> {
        let f = |v: S| T::lit(v.as_f64());
        PatientParams {
            r1: f(self.r1),
            r2: f(self.r2),
            b1: f(self.b1),
            b2: f(self.b2),
            c1: f(self.c1),
            c2: f(self.c2),
            c3: f(self.c3),
            c4: f(self.c4),
            a1: f(self.a1),
            a2: f(self.a2),
            a3: f(self.a3),
            d1: f(self.d1),
            d2: f(self.d2),
            s: f(self.s),
            rho: f(self.rho),
            alpha: f(self.alpha),
        }
    }

    /// All coefficients zero except the strictly positive ones, which are one.
    /// Produces a drift that vanishes on `(N, 0, 0, 0)`-type states; handy in tests.
    pub fn inert() -> Self {
        let z = S::zero();
        PatientParams {
            r1: z,
            r2: z,
            b1: S::one(),
            b2: S::one(),
            c1: z,
            c2: z,
            c3: z,
            c4: z,
            a1: z,
            a2: z,
            a3: z,
            d1: z,
            d2: S::one(),
            s: z,
            rho: z,
            alpha: S::one(),
        }
    }

    fn fields(&self) -> [(&'static str, S); 16] {
        [
            ("r1", self.r1),
            ("r2", self.r2),
            ("b1", self.b1),
            ("b2", self.b2),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("c4", self.c4),
            ("a1", self.a1),
            ("a2", self.a2),
            ("a3", self.a3),
            ("d1", self.d1),
            ("d2", self.d2),
            ("s", self.s),
            ("rho", self.rho),
            ("alpha", self.alpha),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.fields() {
            if !v.is_finite() || v < S::zero() {
                return Err(Error::InvalidParams(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        for (name, v) in [("b1", self.b1), ("b2", self.b2), ("d2", self.d2), ("alpha", self.alpha)]
        {
            if v <= S::zero() {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl<S: Scalar> StateVec<S> {
    pub fn new(n: S, t: S, i: S, c: S) -> Self {
        StateVec { n, t, i, c }
    }

    pub fn from_array(a: [S; 4]) -> Self {
        StateVec::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [S; 4] {
        [self.n, self.t, self.i, self.c]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.to_array().iter().all(|&v| v >= S::zero())
    }

    /// `self + h * d`
    #[inline]
    pub fn axpy(self, h: S, d: Self) -> Self {
        StateVec {
            n: self.n + h * d.n,
            t: self.t + h * d.t,
            i: self.i + h * d.i,
            c: self.c + h * d.c,
        }
    }

    #[inline]
    pub fn clamp_nonnegative(self) -> Self {
        let z = S::zero();
        StateVec {
            n: self.n.max(z),
            t: self.t.max(z),
            i: self.i.max(z),
            c: self.c.max(z),
        }
    }

    pub fn cast<T: Scalar>(&self) -> StateVec<T> {
        StateVec {
            n: T::lit(self.n.as_f64()),
            t: T::lit(self.t.as_f64()),
            i: T::lit(self.i.as_f64()),
            c: T::lit(self.c.as_f64()),
        }
    }
}

impl StateVec<f64> {
    /// State at diagnosis used throughout: `(1, 0.7, 1, 0)`.
    pub fn diagnosis() -> Self {
        Patient::nominal().x0
    }
}

/// Right-hand side without input validation. Used inside integrators and the
/// collocation transcription where inputs are already known to be finite.
#[inline]
pub fn drift_unchecked<S: Scalar>(p: &PatientParams<S>, x: &StateVec<S>, u: S) -> StateVec<S> {
    let one = S::one();
    let StateVec { n, t, i, c } = *x;
    StateVec {
        n: p.r2 * n * (one - p.b2 * n) - p.c4 * n * t - p.a3 * n * c,
        t: p.r1 * t * (one - p.b1 * t) - p.c2 * i * t - p.c3 * t * n - p.a2 * t * c,
        i: p.s + p.rho * i * t / (p.alpha + t) - p.c1 * i * t - p.d1 * i - p.a1 * i * c,
        c: -p.d2 * c + u,
    }
}

/// Time derivative of the state under dose rate `u`.
pub fn drift<S: Scalar>(p: &PatientParams<S>, x: &StateVec<S>, u: S) -> Result<StateVec<S>> {
    if !x.is_finite() {
        return Err(Error::NonFinite { what: "drift state" });
    }
    if !u.is_finite() {
        return Err(Error::NonFinite { what: "drift dose" });
    }
    let d = drift_unchecked(p, x, u);
    if !d.is_finite() {
        return Err(Error::NonFinite { what: "drift output" });
    }
    Ok(d)
}

/// Jacobian of the drift: `jx[r][k] = d f_r / d x_k`, `ju[r] = d f_r / d u`.
pub fn drift_jacobian<S: Scalar>(
    p: &PatientParams<S>,
    x: &StateVec<S>,
) -> ([[S; 4]; 4], [S; 4]) {
    let one = S::one();
    let two = S::lit(2.0);
    let z = S::zero();
    let StateVec { n, t, i, c } = *x;
    let sat = p.alpha + t;
    let jx = [
        [
            p.r2 * (one - two * p.b2 * n) - p.c4 * t - p.a3 * c,
            -p.c4 * n,
            z,
            -p.a3 * n,
        ],
        [
            -p.c3 * t,
            p.r1 * (one - two * p.b1 * t) - p.c2 * i - p.c3 * n - p.a2 * c,
            -p.c2 * t,
            -p.a2 * t,
        ],
        [
            z,
            p.rho * i * p.alpha / (sat * sat) - p.c1 * i,
            p.rho * t / sat - p.c1 * t - p.d1 - p.a1 * c,
            -p.a1 * i,
        ],
        [z, z, z, -p.d2],
    ];
    (jx, [z, z, z, one])
}

/// Second derivatives of each drift component with respect to the state:
/// `h[r][k][l] = d^2 f_r / (d x_k d x_l)`. The drift is affine in `u`.
pub fn drift_hessian<S: Scalar>(p: &PatientParams<S>, x: &StateVec<S>) -> [[[S; 4]; 4]; 4] {
    let z = S::zero();
    let two = S::lit(2.0);
    let StateVec { t, i, .. } = *x;
    let mut h = [[[z; 4]; 4]; 4];
    // N equation
    h[0][0][0] = -two * p.r2 * p.b2;
    h[0][0][1] = -p.c4;
    h[0][1][0] = -p.c4;
    h[0][0][3] = -p.a3;
    h[0][3][0] = -p.a3;
    // T equation
    h[1][1][1] = -two * p.r1 * p.b1;
    h[1][1][2] = -p.c2;
    h[1][2][1] = -p.c2;
    h[1][1][0] = -p.c3;
    h[1][0][1] = -p.c3;
    h[1][1][3] = -p.a2;
    h[1][3][1] = -p.a2;
    // I equation
    let sat = p.alpha + t;
    let sat2 = sat * sat;
    h[2][1][1] = -two * p.rho * i * p.alpha / (sat2 * sat);
    let ti = p.rho * p.alpha / sat2 - p.c1;
    h[2][1][2] = ti;
    h[2][2][1] = ti;
    h[2][2][3] = -p.a1;
    h[2][3][2] = -p.a1;
    h
}

fn check_dt<S: Scalar>(dt: S) -> Result<()> {
    if !(dt > S::zero()) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

/// One classical Runge-Kutta step holding `u` constant, then clamping at zero.
pub fn rk4_step<S: Scalar>(
    p: &PatientParams<S>,
    x: &StateVec<S>,
    u: S,
    dt: S,
) -> Result<StateVec<S>> {
    check_dt(dt)?;
    let half = S::lit(0.5) * dt;
    let k1 = drift(p, x, u)?;
    let k2 = drift(p, &x.axpy(half, k1), u)?;
    let k3 = drift(p, &x.axpy(half, k2), u)?;
    let k4 = drift(p, &x.axpy(dt, k3), u)?;
    let two = S::lit(2.0);
    let sixth = dt / S::lit(6.0);
    let next = StateVec {
        n: x.n + sixth * (k1.n + two * k2.n + two * k3.n + k4.n),
        t: x.t + sixth * (k1.t + two * k2.t + two * k3.t + k4.t),
        i: x.i + sixth * (k1.i + two * k2.i + two * k3.i + k4.i),
        c: x.c + sixth * (k1.c + two * k2.c + two * k3.c + k4.c),
    };
    if !next.is_finite() {
        return Err(Error::NonFinite { what: "rk4 step" });
    }
    Ok(next.clamp_nonnegative())
}

/// One explicit Euler step, clamped at zero.
pub fn euler_step<S: Scalar>(
    p: &PatientParams<S>,
    x: &StateVec<S>,
    u: S,
    dt: S,
) -> Result<StateVec<S>> {
    check_dt(dt)?;
    let next = x.axpy(dt, drift(p, x, u)?);
    if !next.is_finite() {
        return Err(Error::NonFinite { what: "euler step" });
    }
    Ok(next.clamp_nonnegative())
}

/// Constant-magnitude noise on the tumor equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    /// Diffusion magnitude `G` on the T equation.
    pub g: f64,
    /// Seed of the Wiener increment stream.
    pub seed: u64,
}

impl DiffusionSpec {
    pub fn new(g: f64, seed: u64) -> Result<Self> {
        if !g.is_finite() || g < 0.0 {
            return Err(Error::InvalidArgument(format!("diffusion G must be >= 0, got {g}")));
        }
        Ok(DiffusionSpec { g, seed })
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Euler-Maruyama step: drift step on all components, then `T += G sqrt(dt) z`.
pub fn euler_maruyama_step<S: Scalar>(
    p: &PatientParams<S>,
    x: &StateVec<S>,
    u: S,
    dt: S,
    g: S,
    z: S,
) -> Result<StateVec<S>> {
    check_dt(dt)?;
    if !g.is_finite() || !z.is_finite() {
        return Err(Error::NonFinite { what: "euler-maruyama noise" });
    }
    let mut next = x.axpy(dt, drift(p, x, u)?);
    next.t += g * dt.sqrt() * z;
    if !next.is_finite() {
        return Err(Error::NonFinite { what: "euler-maruyama step" });
    }
    Ok(next.clamp_nonnegative())
}

/// Anything that prescribes a dose rate over the next control interval.
pub trait DoseSource {
    /// Dose rate to hold over `[t, t + dt)` given the raw state at `t`.
    fn dose(&self, t: f64, x: &StateVec<f64>, dt: f64) -> f64;
}

/// Constant infusion rate.
#[derive(Debug, Clone, Copy)]
pub struct ConstantDose(pub f64);

impl DoseSource for ConstantDose {
    fn dose(&self, _t: f64, _x: &StateVec<f64>, _dt: f64) -> f64 {
        self.0
    }
}

/// Integrator used between control decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SimMode {
    /// RK4 with `substeps` per control interval.
    Deterministic { substeps: usize },
    /// Explicit Euler with `substeps` per control interval.
    Euler { substeps: usize },
    /// Euler-Maruyama with `substeps` per control interval.
    Stochastic { spec: DiffusionSpec, substeps: usize },
}

impl SimMode {
    pub fn deterministic() -> Self {
        SimMode::Deterministic { substeps: 10 }
    }

    /// Euler-Maruyama on a 0.01-day grid for the 0.3-day control interval.
    pub fn stochastic(spec: DiffusionSpec) -> Self {
        SimMode::Stochastic { spec, substeps: 30 }
    }

    pub fn substeps(&self) -> usize {
        match *self {
            SimMode::Deterministic { substeps }
            | SimMode::Euler { substeps }
            | SimMode::Stochastic { substeps, .. } => substeps,
        }
    }
}

/// Advances one control interval of length `dt` under constant `u`, drawing
/// Wiener increments from `rng` in stochastic mode.
pub fn advance(
    p: &PatientParams<f64>,
    x: &StateVec<f64>,
    u: f64,
    dt: f64,
    mode: &SimMode,
    rng: &mut ChaCha8Rng,
) -> Result<StateVec<f64>> {
    check_dt(dt)?;
    let substeps = mode.substeps().max(1);
    let h = dt / substeps as f64;
    let mut y = *x;
    for _ in 0..substeps {
        y = match mode {
            SimMode::Deterministic { .. } => rk4_step(p, &y, u, h)?,
            SimMode::Euler { .. } => euler_step(p, &y, u, h)?,
            SimMode::Stochastic { spec, .. } => {
                let z: f64 = rng.sample(StandardNormal);
                euler_maruyama_step(p, &y, u, h, spec.g, z)?
            }
        };
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Control interval, days.
    pub dt: f64,
    pub max_days: f64,
    pub mode: SimMode,
    pub u_min: f64,
    pub u_max: f64,
    pub cure_threshold: f64,
    /// End the roll-out at the first step whose state is cured.
    pub stop_at_cure: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt: 0.3,
            max_days: 150.0,
            mode: SimMode::deterministic(),
            u_min: 0.0,
            u_max: U_MAX,
            cure_threshold: CURE_THRESHOLD,
            stop_at_cure: false,
        }
    }
}

impl SimOptions {
    pub fn n_steps(&self) -> usize {
        (self.max_days / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

/// Sampled roll-out: `times.len() == states.len() == controls.len() + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVec<f64>>,
    /// Dose rate held over `[times[k], times[k+1])`.
    pub controls: Vec<f64>,
    /// First sample time with `T <= cure_threshold`.
    pub cure_time: Option<f64>,
    /// Some requested dose fell outside the bounds and was saturated.
    pub saturated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> StateVec<f64> {
        *self.states.last().expect("trajectory holds the initial state")
    }

    pub fn min_by(&self, f: impl Fn(&StateVec<f64>) -> f64) -> f64 {
        self.states.iter().map(f).fold(f64::INFINITY, f64::min)
    }
}

/// Rolls `policy` forward from `x0`.
pub fn simulate(
    params: &PatientParams<f64>,
    policy: &dyn DoseSource,
    x0: StateVec<f64>,
    opts: &SimOptions,
) -> Result<Trajectory> {
    params.validate()?;
    check_dt(opts.dt)?;
    if !(opts.max_days > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "max_days must be positive, got {}",
            opts.max_days
        )));
    }
    if !x0.is_finite() || !x0.is_nonnegative() {
        return Err(Error::InvalidArgument(format!("invalid initial state {x0:?}")));
    }
    let mut rng = match opts.mode {
        SimMode::Stochastic { spec, .. } => spec.rng(),
        _ => ChaCha8Rng::seed_from_u64(0),
    };
    let steps = opts.n_steps();
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps),
        cure_time: None,
        saturated: false,
    };
    traj.times.push(0.0);
    traj.states.push(x0);
    if x0.t <= opts.cure_threshold {
        traj.cure_time = Some(0.0);
        if opts.stop_at_cure {
            return Ok(traj);
        }
    }
    let mut x = x0;
    for k in 0..steps {
        let t = k as f64 * opts.dt;
        let requested = policy.dose(t, &x, opts.dt);
        if !requested.is_finite() {
            return Err(Error::NonFinite { what: "policy dose" });
        }
        let u = requested.clamp(opts.u_min, opts.u_max);
        if u != requested {
            traj.saturated = true;
        }
        x = advance(params, &x, u, opts.dt, &opts.mode, &mut rng)?;
        let t_next = (k + 1) as f64 * opts.dt;
        traj.times.push(t_next);
        traj.states.push(x);
        traj.controls.push(u);
        if traj.cure_time.is_none() && x.t <= opts.cure_threshold {
            traj.cure_time = Some(t_next);
            if opts.stop_at_cure {
                break;
            }
        }
    }
    Ok(traj)
}
