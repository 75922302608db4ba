//! Free-final-time optimal control of the chemotherapy model by direct collocation.
//!
//! ```text
//! min  scale * int_0^tf T dt
//! s.t. x' = f(x, u),  x(0) = x0,  0 <= u <= 10,  T(tf) <= 1e-2,  1 <= tf <= 200
//!      N >= 0.4, I >= 0.4              (patient case only)
//! ```
//!
//! The problem is transcribed with Hermite-Simpson collocation on a normalized
//! mesh ([`transcription`]), solved by an augmented Lagrangian method with a
//! log barrier on the bounds ([`nlp`]) and refined where the interpolant
//! disagrees with the drift. A converged schedule that cures well before its
//! final time is cut there and re-solved, since the running cost only grows
//! past that point.

pub mod mesh;
pub mod nlp;
pub mod spline;
pub mod transcription;

use serde::{Deserialize, Serialize};

pub use crate::dynamics::Case;
use crate::dynamics::{PatientParams, StateVec, CURE_THRESHOLD, PATH_FLOOR, U_MAX};
use crate::error::{Error, Result};

pub use mesh::Mesh;
pub use nlp::{AlOptions, NlpProblem, NlpStatus};
pub use spline::{ControlSpline, OpenLoopPolicy};
pub use transcription::{Layout, NlpVector, Transcription};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcProblem {
    pub params: PatientParams<f64>,
    pub x0: StateVec<f64>,
    pub case: Case,
    pub u_min: f64,
    pub u_max: f64,
    /// Floor on N and I in the patient case.
    pub path_floor: f64,
    pub terminal_t_max: f64,
    pub tf_min: f64,
    pub tf_max: f64,
    /// Constant multiplier on the running cost.
    pub objective_scale: f64,
}

impl OcProblem {
    pub fn new(params: PatientParams<f64>, x0: StateVec<f64>, case: Case) -> Self {
        OcProblem {
            params,
            x0,
            case,
            u_min: 0.0,
            u_max: U_MAX,
            path_floor: PATH_FLOOR,
            terminal_t_max: CURE_THRESHOLD,
            tf_min: 1.0,
            tf_max: 200.0,
            objective_scale: 1.0,
        }
    }

    /// Lower bounds on (N, I) at every collocation point.
    pub fn path_lower_bounds(&self) -> (f64, f64) {
        match self.case {
            Case::Case0 => (0.0, 0.0),
            Case::Patient => (self.path_floor, self.path_floor),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let ordered = self.u_min <= self.u_max
            && self.tf_min <= self.tf_max
            && self.tf_min > 0.0
            && self.objective_scale > 0.0;
        if !ordered {
            return Err(Error::InvalidArgument("optimal control bounds out of order".into()));
        }
        if !self.x0.is_finite() || !self.x0.is_nonnegative() {
            return Err(Error::InvalidArgument(format!("invalid initial state {:?}", self.x0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcOptions {
    /// Initial number of mesh nodes.
    pub mesh_nodes: usize,
    /// Mesh error tolerance; also the violation below which a slowly
    /// converging solve may hand over to the next stage.
    pub tol: f64,
    pub max_refinements: usize,
    /// Initial barrier weight for re-solves started from a previous solution.
    pub warm_mu: f64,
    pub nlp: AlOptions,
}

impl Default for OcOptions {
    fn default() -> Self {
        OcOptions {
            mesh_nodes: 200,
            tol: 1e-2,
            max_refinements: 5,
            warm_mu: 1e-5,
            nlp: AlOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl From<NlpStatus> for OcStatus {
    fn from(s: NlpStatus) -> Self {
        match s {
            NlpStatus::Optimal => OcStatus::Optimal,
            NlpStatus::Infeasible => OcStatus::Infeasible,
            NlpStatus::MaxIter => OcStatus::MaxIter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcSolution {
    pub status: OcStatus,
    pub mesh: Mesh,
    pub z: NlpVector,
    pub tf: f64,
    /// `int_0^tf T dt` (without the objective scale).
    pub objective: f64,
    pub max_defect: f64,
    /// Largest of defect and bound violations.
    pub max_violation: f64,
    pub max_mesh_error: f64,
    /// Node times in days.
    pub times: Vec<f64>,
    pub states: Vec<StateVec<f64>>,
    pub controls: Vec<f64>,
    pub spline: ControlSpline,
    pub refinements: usize,
    pub outer_iterations: usize,
    /// Defect multipliers and final penalty, kept for warm starts.
    #[serde(skip)]
    pub multipliers: Vec<f64>,
    #[serde(skip)]
    pub rho: f64,
}

/// Compact record written next to the solution CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcSummary {
    pub status: OcStatus,
    pub tf: f64,
    pub objective: f64,
    pub max_defect: f64,
    pub mesh_size: usize,
}

impl OcSolution {
    pub fn summary(&self) -> OcSummary {
        OcSummary {
            status: self.status,
            tf: self.tf,
            objective: self.objective,
            max_defect: self.max_defect,
            mesh_size: self.mesh.count(),
        }
    }

    /// Node and midpoint samples in time order: `(t, state, u)`.
    pub fn samples(&self) -> Vec<(f64, StateVec<f64>, f64)> {
        let mut out = Vec::with_capacity(2 * self.mesh.count());
        for k in 0..self.mesh.intervals() {
            out.push((self.times[k], self.z.node_state(k), self.z.node_control(k)));
            let tm = 0.5 * (self.times[k] + self.times[k + 1]);
            out.push((tm, self.z.mid_state(k), self.z.mid_control(k)));
        }
        let last = self.mesh.intervals();
        out.push((self.times[last], self.z.node_state(last), self.z.node_control(last)));
        out
    }
}

/// Straight-line guess from `x0` to a cured state, `u = 5`, `tf = 20`.
pub fn initial_guess(problem: &OcProblem, mesh: &Mesh) -> NlpVector {
    let layout = Layout { intervals: mesh.intervals() };
    let mut z = NlpVector::zeros(layout);
    let cured = StateVec::new(1.0, 0.0, 1.0, 0.0);
    let lerp = |s: f64| StateVec::from_array(std::array::from_fn(|j| {
        (1.0 - s) * problem.x0.to_array()[j] + s * cured.to_array()[j]
    }));
    let nodes = mesh.nodes();
    for k in 0..=layout.intervals {
        z.set_node_state(k, &lerp(nodes[k]));
        z.set_node_control(k, 5.0);
        if k < layout.intervals {
            z.set_mid_state(k, &lerp(0.5 * (nodes[k] + nodes[k + 1])));
            z.set_mid_control(k, 5.0);
        }
    }
    z.set_tf(20.0_f64.clamp(problem.tf_min, problem.tf_max));
    z
}

/// Builds the collocation NLP for `problem` on `mesh`.
pub fn transcribe(problem: &OcProblem, mesh: &Mesh) -> Transcription {
    Transcription::new(problem, mesh)
}

/// Solves one transcription from `init`.
pub fn solve(nlp: &Transcription, init: &NlpVector, opts: &OcOptions) -> OcSolution {
    solve_with(nlp, init, None, opts)
}

fn solve_with(
    nlp: &Transcription,
    init: &NlpVector,
    warm: Option<(&[f64], f64)>,
    opts: &OcOptions,
) -> OcSolution {
    let al = AlOptions { tol: opts.tol, ..opts.nlp };
    let result = nlp::solve_warm(nlp, &init.data, warm, &al);
    let z = NlpVector { layout: nlp.layout, data: result.z };
    let max_defect = nlp.max_defect(&z.data);
    let max_violation = max_defect.max(nlp.max_bound_violation(&z.data));
    let mut status = OcStatus::from(result.status);
    if status == OcStatus::Optimal && max_violation > al.feas_accept {
        status = OcStatus::MaxIter;
    }
    let tf = z.tf();
    let times: Vec<f64> = nlp.mesh.nodes().iter().map(|t| t * tf).collect();
    let intervals = nlp.layout.intervals;
    let states = (0..=intervals).map(|k| z.node_state(k)).collect();
    let controls = (0..=intervals).map(|k| z.node_control(k)).collect();
    let spline = ControlSpline {
        knots: times.clone(),
        coeffs: (0..intervals)
            .map(|k| [z.node_control(k), z.mid_control(k), z.node_control(k + 1)])
            .collect(),
    };
    let max_mesh_error = nlp.interval_errors(&z.data).into_iter().fold(0.0, f64::max);
    OcSolution {
        status,
        mesh: nlp.mesh.clone(),
        objective: nlp.tumor_integral(&z.data),
        z,
        tf,
        max_defect,
        max_violation,
        max_mesh_error,
        times,
        states,
        controls,
        spline,
        refinements: 0,
        outer_iterations: result.outer_iterations,
        multipliers: result.multipliers,
        rho: result.rho,
    }
}

/// Splits every interval whose error estimate exceeds `tol / 2`.
pub fn refine_mesh(problem: &OcProblem, solution: &OcSolution, tol: f64) -> Mesh {
    let tr = transcribe(problem, &solution.mesh);
    let flagged: Vec<bool> =
        tr.interval_errors(&solution.z.data).iter().map(|&e| e > 0.5 * tol).collect();
    solution.mesh.split(&flagged)
}

/// Resamples a solution onto another mesh through its interpolants.
pub fn warm_start(problem: &OcProblem, solution: &OcSolution, mesh: &Mesh) -> NlpVector {
    let tr = transcribe(problem, &solution.mesh);
    let layout = Layout { intervals: mesh.intervals() };
    let mut z = NlpVector::zeros(layout);
    let nodes = mesh.nodes();
    for k in 0..=layout.intervals {
        let (x, u) = tr.interpolate(&solution.z.data, nodes[k]);
        z.set_node_state(k, &x);
        z.set_node_control(k, u);
        if k < layout.intervals {
            let (x, u) = tr.interpolate(&solution.z.data, 0.5 * (nodes[k] + nodes[k + 1]));
            z.set_mid_state(k, &x);
            z.set_mid_control(k, u);
        }
    }
    z.set_tf(solution.tf);
    z.set_node_state(0, &problem.x0);
    z
}

/// Start vector for the same schedule cut at the first time the tumor reaches
/// the terminal bound, when that happens well before `tf`.
///
/// Since the running cost is nonnegative, the cut schedule is feasible and no
/// more expensive than the original.
pub fn truncated_start(problem: &OcProblem, solution: &OcSolution) -> Option<NlpVector> {
    const SAMPLES: usize = 8;
    let tr = transcribe(problem, &solution.mesh);
    let nodes = solution.mesh.nodes();
    let below = |tau: f64| tr.interpolate(&solution.z.data, tau).0.t <= problem.terminal_t_max;
    let mut hit = None;
    'search: for k in 0..solution.mesh.intervals() {
        let (a, b) = (nodes[k], nodes[k + 1]);
        let mut lo = a;
        for j in 1..=SAMPLES {
            let tau = a + (b - a) * j as f64 / SAMPLES as f64;
            if below(tau) {
                let mut hi = tau;
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if below(mid) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hit = Some(hi);
                break 'search;
            }
            lo = tau;
        }
    }
    let cut = hit?;
    let tf = cut * solution.tf;
    if cut > 1.0 - 1e-3 || tf < problem.tf_min {
        return None;
    }
    let layout = Layout { intervals: solution.mesh.intervals() };
    let mut z = NlpVector::zeros(layout);
    for k in 0..=layout.intervals {
        let (x, u) = tr.interpolate(&solution.z.data, cut * nodes[k]);
        z.set_node_state(k, &x);
        z.set_node_control(k, u);
        if k < layout.intervals {
            let (x, u) = tr.interpolate(&solution.z.data, cut * 0.5 * (nodes[k] + nodes[k + 1]));
            z.set_mid_state(k, &x);
            z.set_mid_control(k, u);
        }
    }
    z.set_tf(tf);
    z.set_node_state(0, &problem.x0);
    Some(z)
}

/// Full pipeline: solve on the initial mesh, refine, re-solve, at most
/// `max_refinements` times.
pub fn solve_ocp(problem: &OcProblem, opts: &OcOptions) -> Result<OcSolution> {
    problem.validate()?;
    let mesh = Mesh::uniform(opts.mesh_nodes)?;
    let init = initial_guess(problem, &mesh);
    Ok(solve_ocp_from(problem, mesh, init, opts))
}

const MAX_CUTS: usize = 3;

/// Carries defect multipliers to `mesh`, whose normalized time `tau` sits at
/// `scale * tau` on the solution's mesh.
fn transfer_multipliers(solution: &OcSolution, mesh: &Mesh, scale: f64) -> Vec<f64> {
    let old = solution.mesh.nodes();
    let mut out = Vec::with_capacity(8 * mesh.intervals());
    for k in 0..mesh.intervals() {
        let tau = scale * 0.5 * (mesh.nodes()[k] + mesh.nodes()[k + 1]);
        let j = old.partition_point(|&v| v <= tau).clamp(1, old.len() - 1) - 1;
        out.extend_from_slice(&solution.multipliers[8 * j..8 * j + 8]);
    }
    out
}

/// Pipeline from a given mesh and starting vector. Solutions that cure well
/// before `tf` are re-solved from their truncation.
pub fn solve_ocp_from(
    problem: &OcProblem,
    mesh: Mesh,
    init: NlpVector,
    opts: &OcOptions,
) -> OcSolution {
    let nlp = transcribe(problem, &mesh);
    let mut sol = solve(&nlp, &init, opts);
    let mut warm = *opts;
    warm.nlp.mu_init = opts.warm_mu;
    let warm = &warm;
    for _ in 0..MAX_CUTS {
        if sol.status == OcStatus::Infeasible || sol.max_violation > opts.tol {
            break;
        }
        let Some(start) = truncated_start(problem, &sol) else { break };
        let lambda = transfer_multipliers(&sol, &mesh, start.tf() / sol.tf);
        let cut = solve_with(&nlp, &start, Some((&lambda, sol.rho)), warm);
        if cut.max_violation > opts.tol || cut.objective >= sol.objective {
            break;
        }
        sol = cut;
    }
    let mut rounds = 0;
    while sol.status == OcStatus::Optimal && rounds < opts.max_refinements {
        let next = refine_mesh(problem, &sol, opts.tol);
        if next.count() == sol.mesh.count() {
            break;
        }
        rounds += 1;
        let init = warm_start(problem, &sol, &next);
        let lambda = transfer_multipliers(&sol, &next, 1.0);
        let mut refined =
            solve_with(&transcribe(problem, &next), &init, Some((&lambda, sol.rho)), warm);
        refined.refinements = rounds;
        sol = refined;
    }
    sol.refinements = rounds;
    sol
}

/// Open-loop schedule from a solved problem.
pub fn make_openloop_policy(solution: &OcSolution) -> Result<OpenLoopPolicy> {
    if solution.status != OcStatus::Optimal {
        return Err(Error::InvalidArgument(format!(
            "policy needs an optimal solution, status is {:?}",
            solution.status
        )));
    }
    Ok(OpenLoopPolicy::new(solution.spline.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub r1: f64,
    pub status: OcStatus,
    pub tf: f64,
    pub objective: f64,
    pub max_violation: f64,
}

/// Solves `template` for each tumor growth rate, warm-started from the
/// nominal solution.
pub fn feasibility_scan(
    template: &OcProblem,
    r1_values: &[f64],
    opts: &OcOptions,
) -> Result<Vec<ScanEntry>> {
    if r1_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("r1 values must be finite".into()));
    }
    let nominal = solve_ocp(template, opts)?;
    let scan = r1_values
        .iter()
        .map(|&r1| {
            let mut problem = template.clone();
            problem.params.r1 = r1;
            let sol = if problem.validate().is_err() {
                None
            } else if nominal.status == OcStatus::Optimal {
                let init = nominal.z.clone();
                Some(solve_ocp_from(&problem, nominal.mesh.clone(), init, opts))
            } else {
                solve_ocp(&problem, opts).ok()
            };
            match sol {
                Some(s) => ScanEntry {
                    r1,
                    status: s.status,
                    tf: s.tf,
                    objective: s.objective,
                    max_violation: s.max_violation,
                },
                None => ScanEntry {
                    r1,
                    status: OcStatus::Infeasible,
                    tf: f64::NAN,
                    objective: f64::NAN,
                    max_violation: f64::NAN,
                },
            }
        })
        .collect();
    Ok(scan)
}
