//! Run configuration: one JSON document with a section per component.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{Case, Patient, PatientParams, SimMode, CURE_THRESHOLD, U_MAX};
use crate::environment::{ActionSpace, EnvConfig};
use crate::error::{Error, Result};
use crate::learn::{DdpgConfig, DqnConfig};
use crate::ocp::OcOptions;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSettings {
    pub dt: f64,
    pub max_steps: usize,
    pub cure_threshold: f64,
    /// Divisors for `(N, T, I, C)`; the drug scale defaults to `u_max / d2`.
    pub norm_scales: Option<[f64; 4]>,
}

impl Default for EnvSettings {
    fn default() -> Self {
        EnvSettings { dt: 0.3, max_steps: 500, cure_threshold: CURE_THRESHOLD, norm_scales: None }
    }
}

impl EnvSettings {
    pub fn build(&self, case: Case, action_space: ActionSpace, params: &PatientParams<f64>) -> EnvConfig {
        let mut c = EnvConfig::new(case, action_space, params);
        c.dt = self.dt;
        c.max_steps = self.max_steps;
        c.cure_threshold = self.cure_threshold;
        if let Some(scales) = self.norm_scales {
            c.norm_scales = scales;
        }
        c.u_max = U_MAX;
        c.mode = SimMode::deterministic();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub r1_values: Vec<f64>,
    pub t0_values: Vec<f64>,
    /// Diffusion magnitude on the tumor equation.
    pub g: f64,
    pub mc_runs: usize,
    pub mc_seed: u64,
    pub mc_days: f64,
    pub sampling_grids: Vec<usize>,
    pub sampling_episodes: usize,
    pub eval_every: usize,
    pub train_episodes: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            r1_values: vec![1.3, 1.4, 1.5, 1.55, 1.6, 1.7],
            t0_values: vec![0.7, 1.0, 2.0, 3.0, 3.5, 4.0, 5.0],
            g: 0.05,
            mc_runs: 100,
            mc_seed: 1000,
            mc_days: 30.0,
            sampling_grids: vec![7, 10, 20, 30, 40, 50, 60],
            sampling_episodes: 1500,
            eval_every: 10,
            train_episodes: 1500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Patient file replacing the inline `patient` section when set.
    pub patient_file: Option<PathBuf>,
    pub patient: Patient,
    pub case: Case,
    pub env: EnvSettings,
    pub ocp: OcOptions,
    pub dqn: DqnConfig,
    pub ddpg: DdpgConfig,
    pub experiments: ExperimentSettings,
    pub seed: u64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            patient_file: None,
            patient: Patient::nominal(),
            case: Case::Patient,
            env: EnvSettings::default(),
            ocp: OcOptions::default(),
            dqn: DqnConfig::default(),
            ddpg: DdpgConfig::default(),
            experiments: ExperimentSettings::default(),
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Deserialize)]
struct PatientDoc {
    patient: Patient,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads `path` and resolves a relative `patient_file` against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(file) = &cfg.patient_file {
            if file.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.patient_file = Some(base.join(file));
            }
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Loads the referenced patient file, if any, and validates.
    pub fn resolve(&mut self) -> Result<()> {
        if let Some(file) = &self.patient_file {
            let text = std::fs::read_to_string(file)
                .map_err(|e| Error::InvalidArgument(format!("cannot read patient file {}: {e}", file.display())))?;
            self.patient = match serde_json::from_str::<PatientDoc>(&text) {
                Ok(doc) => doc.patient,
                Err(_) => serde_json::from_str::<Patient>(&text)?,
            };
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.patient.validate()?;
        self.env.build(self.case, ActionSpace::Continuous, &self.patient.params).validate()?;
        self.dqn.validate()?;
        self.ddpg.validate()?;
        let e = &self.experiments;
        if e.mc_runs < 2 || e.eval_every == 0 || e.train_episodes == 0 || e.sampling_episodes == 0 {
            return Err(Error::InvalidArgument("experiment counts out of range".into()));
        }
        if !(e.g >= 0.0) || !(e.mc_days > 0.0) || e.sampling_grids.iter().any(|&n| n < 2) {
            return Err(Error::InvalidArgument("experiment settings out of range".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn env_config(&self, action_space: ActionSpace) -> EnvConfig {
        self.env.build(self.case, action_space, &self.patient.params)
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_config_matches_defaults() {
        let shipped = RunConfig::from_json(include_str!("../config/default.json")).unwrap();
        assert_eq!(shipped, RunConfig::default());
        shipped.validate().unwrap();
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = RunConfig::from_json(r#"{"dqn": {"n_actions": 20}, "patient": {"x0": {"n": 1, "t": 2, "i": 1, "c": 0}}, "case": "case0"}"#);
        let c = c.unwrap();
        assert_eq!(c.dqn.n_actions, 20);
        assert_eq!(c.dqn.gamma, 0.99);
        assert_eq!(c.patient.x0.t, 2.0);
        assert_eq!(c.patient.params, PatientParams::nominal());
        assert_eq!(c.case, Case::Case0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"experiment": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"env": {"dtt": 0.1}}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut c = RunConfig::default();
        c.experiments.mc_runs = 1;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.patient.params.r1 = -1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig { patient_file: Some("/nonexistent/patient.json".into()), ..RunConfig::default() };
        assert!(c.resolve().is_err());
    }

    #[test]
    fn patient_file_overrides_inline_section() {
        let dir = std::env::temp_dir().join(format!("chemo-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut patient = Patient::nominal();
        patient.params.r1 = 1.55;
        std::fs::write(dir.join("p.json"), serde_json::to_string(&patient).unwrap()).unwrap();
        std::fs::write(dir.join("run.json"), r#"{"patient_file": "p.json"}"#).unwrap();
        let c = RunConfig::load(&dir.join("run.json")).unwrap();
        assert_eq!(c.patient.params.r1, 1.55);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
