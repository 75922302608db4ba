//! Solves the patient problem for a tumor growth rate given on the command line.
//!
//! ```text
//! cargo run --release --example solve_ocp -- 1.6
//! ```

use chemo_core::ocp::{self, Case, OcOptions, OcProblem};
use chemo_core::{PatientParams, StateVec};

fn main() {
    let r1: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let mut params = PatientParams::nominal();
    params.r1 = r1;
    let problem = OcProblem::new(params, StateVec::diagnosis(), Case::Patient);
    let sol = ocp::solve_ocp(&problem, &OcOptions::default()).expect("valid problem");
    println!(
        "{:?}: tf = {:.3} d, cost = {:.4}, max defect = {:.1e}, {} nodes",
        sol.status,
        sol.tf,
        sol.objective,
        sol.max_defect,
        sol.mesh.count()
    );
    for k in (0..sol.times.len()).step_by(20) {
        let x = sol.states[k];
        println!(
            "{:7.2}  u {:5.2}  N {:.3}  T {:.4}  I {:.3}  C {:.3}",
            sol.times[k], sol.controls[k], x.n, x.t, x.i, x.c
        );
    }
}
