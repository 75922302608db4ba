use chemo_core::ocp::{self, Case, OcOptions, OcProblem, OcStatus};
use chemo_core::{PatientParams, StateVec};

#[test]
fn growth_rate_scan_finds_the_boundary() {
    let template = OcProblem::new(PatientParams::nominal(), StateVec::diagnosis(), Case::Patient);
    let scan = ocp::feasibility_scan(&template, &[1.5, 1.7, 1.8], &OcOptions::default()).unwrap();
    let status: Vec<_> = scan.iter().map(|e| e.status).collect();
    assert_eq!(status, [OcStatus::Optimal, OcStatus::Optimal, OcStatus::Infeasible], "{scan:?}");
    assert!(scan[1].tf > scan[0].tf);
}

#[test]
fn scan_rejects_non_finite_rates() {
    let template = OcProblem::new(PatientParams::nominal(), StateVec::diagnosis(), Case::Patient);
    assert!(ocp::feasibility_scan(&template, &[f64::NAN], &OcOptions::default()).is_err());
}
