//! Episodic decision process over the patient model.
//!
//! Observations are the raw state divided by per-component scales and clipped
//! to `[0, 1]`. Rewards follow the running cost of the optimal control problem
//! on the post-step state, so that minus the episode return is a right-endpoint
//! Riemann sum of `int T dt` (plus soft penalties in the patient case).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    advance, Case, PatientParams, SimMode, StateVec, CURE_THRESHOLD, PATH_FLOOR, U_MAX,
};
use crate::error::{Error, Result};

/// Penalty weight per violated floor in the patient reward.
pub const FLOOR_PENALTY: f64 = 0.5;

/// Dose grid with `n` equally spaced levels from 0 to `u_max`, both included.
pub fn action_grid(n: usize, u_max: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("an action grid needs at least two levels, got {n}")));
    }
    Ok((0..n).map(|k| grid_level(k, n, u_max)).collect())
}

fn grid_level(k: usize, n: usize, u_max: f64) -> f64 {
    if k + 1 == n {
        u_max
    } else {
        u_max * k as f64 / (n - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ActionSpace {
    /// Normalized dose in `[0, 1]`.
    Continuous,
    /// Index into [`action_grid`] with `n` levels.
    Discrete { n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Continuous(f64),
    Discrete(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub case: Case,
    /// Control interval, days.
    pub dt: f64,
    pub max_steps: usize,
    pub cure_threshold: f64,
    pub action_space: ActionSpace,
    /// Divisors for `(N, T, I, C)`.
    pub norm_scales: [f64; 4],
    pub u_max: f64,
    pub mode: SimMode,
}

impl EnvConfig {
    /// Defaults for the given case and action space; the drug scale follows
    /// the steady concentration `u_max / d2` under full dose.
    pub fn new(case: Case, action_space: ActionSpace, params: &PatientParams<f64>) -> Self {
        EnvConfig {
            case,
            dt: 0.3,
            max_steps: 500,
            cure_threshold: CURE_THRESHOLD,
            action_space,
            norm_scales: [2.0, 5.0, 2.0, U_MAX / params.d2],
            u_max: U_MAX,
            mode: SimMode::deterministic(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be at least 1".into()));
        }
        if self.norm_scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "norm scales must be positive, got {:?}",
                self.norm_scales
            )));
        }
        if let ActionSpace::Discrete { n } = self.action_space {
            if n < 2 {
                return Err(Error::InvalidArgument(format!("discrete action space needs n >= 2, got {n}")));
            }
        }
        if !(self.u_max > 0.0) || !(self.cure_threshold >= 0.0) {
            return Err(Error::InvalidArgument("u_max and cure threshold out of range".into()));
        }
        Ok(())
    }

    /// Dose rate in mg/(l day) for `action`.
    pub fn dose(&self, action: Action) -> Result<f64> {
        match (self.action_space, action) {
            (ActionSpace::Continuous, Action::Continuous(a)) => {
                if !a.is_finite() {
                    return Err(Error::NonFinite { what: "continuous action" });
                }
                Ok(a.clamp(0.0, 1.0) * self.u_max)
            }
            (ActionSpace::Discrete { n }, Action::Discrete(k)) => {
                if k >= n {
                    return Err(Error::InvalidArgument(format!("action index {k} outside 0..{n}")));
                }
                Ok(grid_level(k, n, self.u_max))
            }
            (space, action) => Err(Error::InvalidArgument(format!(
                "action {action:?} does not match action space {space:?}"
            ))),
        }
    }

    pub fn observe(&self, x: &StateVec<f64>) -> Observation {
        let raw = x.to_array();
        let mut values = [0.0; 4];
        let mut clipped = false;
        for j in 0..4 {
            let v = raw[j] / self.norm_scales[j];
            values[j] = v.clamp(0.0, 1.0);
            clipped |= values[j] != v;
        }
        Observation { values, clipped }
    }

    pub fn reward(&self, x_next: &StateVec<f64>) -> f64 {
        match self.case {
            Case::Case0 => reward_case0(x_next, self.dt),
            Case::Patient => reward_patient(x_next, self.dt),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: [f64; 4],
    /// Some component was outside `[0, 1]` before clipping.
    pub clipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Done {
    Running,
    Cured,
    Truncated,
}

impl Done {
    pub fn is_over(self) -> bool {
        self != Done::Running
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Raw post-step state.
    pub state: StateVec<f64>,
    /// Dose applied over the step.
    pub dose: f64,
    pub n_below_floor: bool,
    pub i_below_floor: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: Done,
    pub info: StepInfo,
}

/// `-dt T`.
pub fn reward_case0(x_next: &StateVec<f64>, dt: f64) -> f64 {
    -dt * x_next.t
}

/// `dt (-T - 0.5 [N < 0.4] - 0.5 [I < 0.4])`.
pub fn reward_patient(x_next: &StateVec<f64>, dt: f64) -> f64 {
    let mut r = -x_next.t;
    if x_next.n < PATH_FLOOR {
        r -= FLOOR_PENALTY;
    }
    if x_next.i < PATH_FLOOR {
        r -= FLOOR_PENALTY;
    }
    dt * r
}

/// Minus the sum of rewards.
pub fn episode_cost(rewards: &[f64]) -> f64 {
    -rewards.iter().sum::<f64>()
}

pub struct Env {
    config: EnvConfig,
    params: PatientParams<f64>,
    x0: StateVec<f64>,
    x: StateVec<f64>,
    steps: usize,
    done: Done,
    rng: ChaCha8Rng,
}

impl Env {
    pub fn new(params: PatientParams<f64>, config: EnvConfig) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        let rng = match config.mode {
            SimMode::Stochastic { spec, .. } => spec.rng(),
            _ => ChaCha8Rng::seed_from_u64(0),
        };
        let x0 = StateVec::diagnosis();
        Ok(Env { config, params, x0, x: x0, steps: 0, done: Done::Running, rng })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn params(&self) -> &PatientParams<f64> {
        &self.params
    }

    pub fn state(&self) -> StateVec<f64> {
        self.x
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Days since the last reset.
    pub fn time(&self) -> f64 {
        self.steps as f64 * self.config.dt
    }

    pub fn done(&self) -> Done {
        self.done
    }

    /// Restarts the noise stream.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Starts an episode from `x0`, or from the previous initial state
    /// (the diagnosis state for a new environment).
    pub fn reset(&mut self, x0: Option<StateVec<f64>>) -> Result<Observation> {
        let x0 = x0.unwrap_or(self.x0);
        if !x0.is_finite() || !x0.is_nonnegative() {
            return Err(Error::InvalidArgument(format!("initial state must be nonnegative, got {x0:?}")));
        }
        self.x0 = x0;
        self.x = x0;
        self.steps = 0;
        self.done = Done::Running;
        Ok(self.config.observe(&x0))
    }

    /// Initial state of the current episode.
    pub fn initial_state(&self) -> StateVec<f64> {
        self.x0
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done.is_over() {
            return Err(Error::EpisodeDone);
        }
        let dose = self.config.dose(action)?;
        self.step_dose(dose)
    }

    /// Steps with a raw dose rate, saturated to `[0, u_max]`.
    pub fn step_dose(&mut self, dose: f64) -> Result<StepResult> {
        if self.done.is_over() {
            return Err(Error::EpisodeDone);
        }
        if !dose.is_finite() {
            return Err(Error::NonFinite { what: "dose" });
        }
        let dose = dose.clamp(0.0, self.config.u_max);
        let x = advance(&self.params, &self.x, dose, self.config.dt, &self.config.mode, &mut self.rng)?;
        self.x = x;
        self.steps += 1;
        self.done = if x.t <= self.config.cure_threshold {
            Done::Cured
        } else if self.steps >= self.config.max_steps {
            Done::Truncated
        } else {
            Done::Running
        };
        Ok(StepResult {
            observation: self.config.observe(&x),
            reward: self.config.reward(&x),
            done: self.done,
            info: StepInfo {
                state: x,
                dose,
                n_below_floor: x.n < PATH_FLOOR,
                i_below_floor: x.i < PATH_FLOOR,
            },
        })
    }
}

/// One played-out episode, aligned like a trajectory: `states[k]` at
/// `times[k]`, `doses[k]` and `rewards[k]` over `[times[k], times[k+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub times: Vec<f64>,
    pub states: Vec<StateVec<f64>>,
    pub doses: Vec<f64>,
    pub rewards: Vec<f64>,
    pub done: Done,
}

impl Episode {
    pub fn cost(&self) -> f64 {
        episode_cost(&self.rewards)
    }

    pub fn cure_time(&self) -> Option<f64> {
        (self.done == Done::Cured).then(|| *self.times.last().expect("episode has a start"))
    }
}

/// Resets `env` and plays `policy` until the episode ends.
pub fn run_episode(
    env: &mut Env,
    x0: Option<StateVec<f64>>,
    mut policy: impl FnMut(&Observation, &StateVec<f64>, f64) -> Result<Action>,
) -> Result<Episode> {
    let mut obs = env.reset(x0)?;
    let mut ep = Episode {
        times: vec![0.0],
        states: vec![env.state()],
        doses: Vec::new(),
        rewards: Vec::new(),
        done: Done::Running,
    };
    loop {
        let action = policy(&obs, &env.state(), env.time())?;
        let step = env.step(action)?;
        ep.times.push(env.time());
        ep.states.push(step.info.state);
        ep.doses.push(step.info.dose);
        ep.rewards.push(step.reward);
        obs = step.observation;
        if step.done.is_over() {
            ep.done = step.done;
            return Ok(ep);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DiffusionSpec;
    use proptest::prelude::*;

    fn env(case: Case, space: ActionSpace) -> Env {
        let p = PatientParams::nominal();
        Env::new(p, EnvConfig::new(case, space, &p)).unwrap()
    }

    fn state(n: f64, t: f64, i: f64) -> StateVec<f64> {
        StateVec::new(n, t, i, 0.0)
    }

    #[test]
    fn default_reset_observes_diagnosis() {
        let mut e = env(Case::Case0, ActionSpace::Continuous);
        let obs = e.reset(None).unwrap();
        assert_eq!(obs.values, [0.5, 0.7 / 5.0, 0.5, 0.0]);
        assert!(!obs.clipped);
        let zero = e.reset(Some(StateVec::new(0.0, 0.0, 0.0, 0.0))).unwrap();
        assert_eq!(zero.values, [0.0; 4]);
    }

    #[test]
    fn large_tumor_is_clipped() {
        let mut e = env(Case::Case0, ActionSpace::Continuous);
        let obs = e.reset(Some(state(1.0, 10.0, 1.0))).unwrap();
        assert_eq!(obs.values[1], 1.0);
        assert!(obs.clipped);
    }

    #[test]
    fn negative_start_is_rejected() {
        let mut e = env(Case::Case0, ActionSpace::Continuous);
        assert!(e.reset(Some(state(1.0, -0.1, 1.0))).is_err());
    }

    #[test]
    fn action_mapping() {
        let p = PatientParams::nominal();
        let c = EnvConfig::new(Case::Case0, ActionSpace::Continuous, &p);
        assert_eq!(c.dose(Action::Continuous(1.0)).unwrap(), 10.0);
        assert_eq!(c.dose(Action::Continuous(0.25)).unwrap(), 2.5);
        assert!(c.dose(Action::Discrete(0)).is_err());
        for n in [2, 7, 10, 60] {
            let d = EnvConfig::new(Case::Case0, ActionSpace::Discrete { n }, &p);
            assert_eq!(d.dose(Action::Discrete(0)).unwrap(), 0.0);
            assert_eq!(d.dose(Action::Discrete(n - 1)).unwrap(), 10.0);
            assert!(d.dose(Action::Discrete(n)).is_err());
            let grid = action_grid(n, 10.0).unwrap();
            for (k, g) in grid.iter().enumerate() {
                assert_eq!(d.dose(Action::Discrete(k)).unwrap(), *g);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let p = PatientParams::nominal();
        let mut c = EnvConfig::new(Case::Case0, ActionSpace::Discrete { n: 1 }, &p);
        assert!(c.validate().is_err());
        c.action_space = ActionSpace::Continuous;
        c.norm_scales[2] = 0.0;
        assert!(c.validate().is_err());
        c.norm_scales[2] = 1.0;
        c.max_steps = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn case0_rewards() {
        assert_eq!(reward_case0(&state(1.0, 0.0, 1.0), 0.3), 0.0);
        assert!((reward_case0(&state(1.0, 0.7, 1.0), 0.3) + 0.21).abs() < 1e-15);
        assert!((reward_case0(&state(1.0, 1.0, 1.0), 0.3) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn patient_rewards() {
        assert!((reward_patient(&state(0.5, 0.7, 0.5), 0.3) + 0.21).abs() < 1e-15);
        assert!((reward_patient(&state(0.3, 0.0, 0.5), 0.3) + 0.15).abs() < 1e-15);
        assert!((reward_patient(&state(0.3, 1.0, 0.3), 0.3) + 0.6).abs() < 1e-15);
    }

    #[test]
    fn episode_cost_sums_rewards() {
        assert_eq!(episode_cost(&[0.0, 0.0]), 0.0);
        assert!((episode_cost(&[-0.21, -0.15]) - 0.36).abs() < 1e-15);
    }

    #[test]
    fn full_dose_cures_and_stops() {
        let mut e = env(Case::Case0, ActionSpace::Continuous);
        let ep = run_episode(&mut e, None, |_, _, _| Ok(Action::Continuous(1.0))).unwrap();
        assert_eq!(ep.done, Done::Cured);
        let last = ep.states.last().unwrap();
        assert!(last.t <= CURE_THRESHOLD);
        assert!(ep.states[..ep.states.len() - 1].iter().all(|x| x.t > CURE_THRESHOLD));
        assert!(matches!(e.step(Action::Continuous(1.0)), Err(Error::EpisodeDone)));
        // a cured post-step T gives a reward within dt * threshold of zero
        assert!(*ep.rewards.last().unwrap() >= -0.3 * CURE_THRESHOLD);
    }

    #[test]
    fn no_dose_truncates() {
        let p = PatientParams::nominal();
        let mut c = EnvConfig::new(Case::Patient, ActionSpace::Discrete { n: 10 }, &p);
        c.max_steps = 40;
        let mut e = Env::new(p, c).unwrap();
        let ep = run_episode(&mut e, None, |_, _, _| Ok(Action::Discrete(0))).unwrap();
        assert_eq!(ep.done, Done::Truncated);
        assert_eq!(ep.rewards.len(), 40);
        assert!((ep.times[40] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn cost_matches_trajectory_recomputation() {
        let mut e = env(Case::Patient, ActionSpace::Continuous);
        let ep = run_episode(&mut e, None, |_, _, t| Ok(Action::Continuous(if t < 1.0 { 1.0 } else { 0.9 })))
            .unwrap();
        let dt = 0.3;
        let oracle: f64 = ep.states[1..]
            .iter()
            .map(|x| {
                let flag = |v: f64| if v < 0.4 { 0.5 } else { 0.0 };
                dt * (x.t + flag(x.n) + flag(x.i))
            })
            .sum();
        assert!(ep.states.iter().any(|x| x.i < 0.4), "schedule should violate the floor");
        assert!((ep.cost() - oracle).abs() < 1e-12);
    }

    #[test]
    fn stochastic_episodes_repeat_under_seed() {
        let p = PatientParams::nominal();
        let mut c = EnvConfig::new(Case::Case0, ActionSpace::Continuous, &p);
        c.mode = SimMode::stochastic(DiffusionSpec::new(0.05, 9).unwrap());
        let play = |seed: u64| {
            let mut e = Env::new(p, c).unwrap();
            e.reseed(seed);
            run_episode(&mut e, None, |_, _, _| Ok(Action::Continuous(0.4))).unwrap()
        };
        assert_eq!(play(3), play(3));
        assert_ne!(play(3).states, play(4).states);
    }

    proptest! {
        #[test]
        fn rewards_are_nonpositive(n in 0.0..2.0f64, t in 0.0..5.0f64, i in 0.0..2.0f64) {
            let x = state(n, t, i);
            let r0 = reward_case0(&x, 0.3);
            let rp = reward_patient(&x, 0.3);
            prop_assert!(r0 <= 0.0 && rp <= 0.0);
            prop_assert_eq!(r0 == 0.0, t == 0.0);
            prop_assert_eq!(rp == 0.0, t == 0.0 && n >= 0.4 && i >= 0.4);
            if n >= 0.4 && i >= 0.4 {
                prop_assert_eq!(r0, rp);
            }
        }

        #[test]
        fn observations_stay_in_unit_box(n in 0.0..50.0f64, t in 0.0..50.0f64, i in 0.0..50.0f64, c in 0.0..50.0f64) {
            let p = PatientParams::nominal();
            let cfg = EnvConfig::new(Case::Case0, ActionSpace::Continuous, &p);
            let obs = cfg.observe(&StateVec::new(n, t, i, c));
            prop_assert!(obs.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn episodes_are_deterministic(actions in proptest::collection::vec(0.0..1.0f64, 1..30)) {
            let play = || {
                let mut e = env(Case::Patient, ActionSpace::Continuous);
                e.reset(None).unwrap();
                let mut out = Vec::new();
                for &a in &actions {
                    let s = e.step(Action::Continuous(a)).unwrap();
                    out.push((s.reward, s.info.state));
                    if s.done.is_over() {
                        break;
                    }
                }
                out
            };
            prop_assert_eq!(play(), play());
        }
    }
}
