//! Feed-forward networks, experience replay, and the DQN and DDPG learners.
//!
//! Networks are generic over the scalar; the trained policies are stored in
//! single precision. Rewards are divided by the control interval before they
//! reach the networks, and only a cure ends an episode as terminal.

pub mod ddpg;
pub mod dqn;
pub mod net;
pub mod replay;

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use self::ddpg::{ddpg_targets, policy_gradient, DdpgAgent, DdpgConfig, DdpgLosses};
pub use self::dqn::{argmax, dqn_select, dqn_targets, dqn_update, DqnAgent, DqnConfig};
pub use self::net::{Adam, AdamConfig, Grads, Head, Layer, Net, Tape};
pub use self::replay::{ReplayBuffer, Transition};
pub use crate::environment::action_grid;

use crate::dynamics::{Case, DoseSource, StateVec};
use crate::environment::{Action, ActionSpace, Done, Env, Observation};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Single-precision network, the default for agents.
pub type NetF32 = Net<f32>;

const PROBE_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoKind {
    Dqn,
    Ddpg,
}

impl std::fmt::Display for AlgoKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AlgoKind::Dqn => "dqn",
            AlgoKind::Ddpg => "ddpg",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "algo")]
pub enum Algo {
    Dqn(DqnConfig),
    Ddpg(DdpgConfig),
}

impl Algo {
    pub fn kind(&self) -> AlgoKind {
        match self {
            Algo::Dqn(_) => AlgoKind::Dqn,
            Algo::Ddpg(_) => AlgoKind::Ddpg,
        }
    }

    /// Action space the algorithm acts in.
    pub fn action_space(&self) -> ActionSpace {
        match self {
            Algo::Dqn(c) => ActionSpace::Discrete { n: c.n_actions },
            Algo::Ddpg(_) => ActionSpace::Continuous,
        }
    }
}

/// Whether the target copy is replaced outright or blended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyncMode {
    Hard,
    Soft(f64),
}

pub fn sync_target<S: Scalar>(online: &Net<S>, target: &mut Net<S>, mode: SyncMode) -> Result<()> {
    match mode {
        SyncMode::Hard => target.hard_update(online),
        SyncMode::Soft(tau) => target.soft_update(online, S::lit(tau)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub mean_q: f64,
    pub loss_critic: Option<f64>,
    pub loss_actor: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let points = r.deserialize().collect::<std::result::Result<Vec<CurvePoint>, _>>()?;
        Ok(LearningCurve { points })
    }
}

/// Greedy policy extracted from a trained agent, with everything needed to
/// act on raw states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedPolicy {
    pub algo: AlgoKind,
    pub case: Case,
    pub action_space: ActionSpace,
    /// Dose levels for a discrete action space, empty otherwise.
    pub action_grid: Vec<f64>,
    pub norm_scales: [f64; 4],
    pub u_max: f64,
    pub dt: f64,
    pub seed: u64,
    pub episodes: usize,
    pub net: Net<f32>,
}

impl LearnedPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.net.input_width() != 4 || !self.net.is_finite() {
            return Err(Error::InvalidArgument("policy network must map 4 finite inputs".into()));
        }
        match (self.algo, self.action_space) {
            (AlgoKind::Dqn, ActionSpace::Discrete { n }) => {
                if self.action_grid.len() != n || self.net.output_width() != n {
                    return Err(Error::InvalidArgument(format!(
                        "dqn policy with {n} actions has a grid of {} and {} outputs",
                        self.action_grid.len(),
                        self.net.output_width()
                    )));
                }
                if self.action_grid.iter().any(|u| !(0.0..=self.u_max).contains(u)) {
                    return Err(Error::InvalidArgument("action grid leaves the dose bounds".into()));
                }
            }
            (AlgoKind::Ddpg, ActionSpace::Continuous) => {
                if self.net.output_width() != 1 || self.net.head != Head::Sigmoid {
                    return Err(Error::InvalidArgument("ddpg actor must have one sigmoid output".into()));
                }
            }
            (algo, space) => {
                return Err(Error::InvalidArgument(format!("{algo} policy cannot act in {space:?}")));
            }
        }
        if self.norm_scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("normalization scales must be positive".into()));
        }
        Ok(())
    }

    pub fn observe(&self, x: &StateVec<f64>) -> [f32; 4] {
        let raw = x.to_array();
        std::array::from_fn(|j| (raw[j] / self.norm_scales[j]).clamp(0.0, 1.0) as f32)
    }

    pub fn act_obs(&self, obs: &[f32; 4]) -> Action {
        let out = self.net.forward_one(obs).expect("validated input width");
        match self.algo {
            AlgoKind::Dqn => Action::Discrete(argmax(&out)),
            AlgoKind::Ddpg => Action::Continuous(f64::from(out[0]).clamp(0.0, 1.0)),
        }
    }

    pub fn dose_for(&self, action: Action) -> f64 {
        match action {
            Action::Discrete(k) => self.action_grid[k],
            Action::Continuous(a) => a * self.u_max,
        }
    }

    pub fn act(&self, obs: &Observation) -> Action {
        self.act_obs(&obs.values.map(|v| v as f32))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: LearnedPolicy = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl DoseSource for LearnedPolicy {
    fn dose(&self, _t: f64, x: &StateVec<f64>, _dt: f64) -> f64 {
        self.dose_for(self.act_obs(&self.observe(x)))
    }
}

#[derive(Debug, Clone)]
pub enum Agent<S> {
    Dqn(DqnAgent<S>),
    Ddpg(DdpgAgent<S>),
}

/// Runs the training loop one episode at a time.
pub struct Trainer<S: Scalar> {
    env: Env,
    agent: Agent<S>,
    buffer: ReplayBuffer<Transition<S>>,
    rng: ChaCha8Rng,
    seed: u64,
    steps: usize,
    updates: usize,
    curve: LearningCurve,
    probe: Option<Array2<S>>,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(env: Env, algo: Algo, seed: u64) -> Result<Self> {
        if env.config().action_space != algo.action_space() {
            return Err(Error::InvalidArgument(format!(
                "environment action space {:?} does not suit {}",
                env.config().action_space,
                algo.kind()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (agent, capacity) = match algo {
            Algo::Dqn(c) => {
                let cap = c.buffer_capacity;
                (Agent::Dqn(DqnAgent::new(c, &mut rng)?), cap)
            }
            Algo::Ddpg(c) => {
                let cap = c.buffer_capacity;
                (Agent::Ddpg(DdpgAgent::new(c, &mut rng)?), cap)
            }
        };
        Ok(Trainer {
            env,
            agent,
            buffer: ReplayBuffer::new(capacity)?,
            rng,
            seed,
            steps: 0,
            updates: 0,
            curve: LearningCurve::default(),
            probe: None,
        })
    }

    pub fn agent(&self) -> &Agent<S> {
        &self.agent
    }

    pub fn curve(&self) -> &LearningCurve {
        &self.curve
    }

    pub fn into_curve(self) -> LearningCurve {
        self.curve
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    /// Environment steps taken so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Gradient updates applied so far.
    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn episodes(&self) -> usize {
        self.curve.points.len()
    }

    fn replay_start(&self) -> usize {
        match &self.agent {
            Agent::Dqn(a) => a.config.replay_start.max(a.config.batch_size),
            Agent::Ddpg(a) => a.config.replay_start.max(a.config.batch_size),
        }
    }

    fn batch_size(&self) -> usize {
        match &self.agent {
            Agent::Dqn(a) => a.config.batch_size,
            Agent::Ddpg(a) => a.config.batch_size,
        }
    }

    fn explore(&mut self, obs: &[S; 4]) -> Result<Action> {
        match &self.agent {
            Agent::Dqn(a) => {
                let eps = a.config.epsilon(self.steps);
                Ok(Action::Discrete(dqn_select(&a.online, obs, eps, &mut self.rng)?))
            }
            Agent::Ddpg(a) => {
                let mu = a.act(obs)?.as_f64();
                let sigma = a.config.noise(self.steps);
                let noise = if sigma > 0.0 {
                    Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(&mut self.rng)
                } else {
                    0.0
                };
                Ok(Action::Continuous((mu + noise).clamp(0.0, 1.0)))
            }
        }
    }

    fn mean_q(&self) -> Result<f64> {
        let Some(probe) = &self.probe else { return Ok(f64::NAN) };
        Ok(match &self.agent {
            Agent::Dqn(a) => {
                let q = a.online.forward(probe.view())?;
                let total: f64 = q
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().copied().fold(S::neg_infinity(), S::max).as_f64())
                    .sum();
                total / probe.nrows() as f64
            }
            Agent::Ddpg(a) => a.mean_q(probe)?.as_f64(),
        })
    }

    /// Plays and learns from one episode. A non-finite loss surfaces as
    /// [`Error::Diverged`] with the curve kept up to the previous episode.
    pub fn run_episode(&mut self) -> Result<CurvePoint> {
        let episode = self.curve.points.len();
        let dt = self.env.config().dt;
        let first = self.env.reset(None)?;
        let mut obs: [S; 4] = first.values.map(S::lit);
        let mut seen = vec![obs];
        let mut ret = 0.0;
        let (mut critic_sum, mut actor_sum, mut n_updates) = (0.0, 0.0, 0usize);
        loop {
            let action = self.explore(&obs)?;
            let step = self.env.step(action)?;
            let next: [S; 4] = step.observation.values.map(S::lit);
            ret += step.reward;
            self.buffer.push(Transition {
                obs,
                action,
                reward: S::lit(step.reward / dt),
                next_obs: next,
                terminal: step.done == Done::Cured,
            });
            self.steps += 1;
            if self.buffer.len() >= self.replay_start() {
                let batch = self.buffer.sample(self.batch_size(), &mut self.rng);
                let result = match &mut self.agent {
                    Agent::Dqn(a) => a.update(&batch).map(|l| (l.as_f64(), None)),
                    Agent::Ddpg(a) => a.update(&batch).map(|l| (l.critic.as_f64(), Some(-l.actor_objective.as_f64()))),
                };
                let (critic, actor) = match result {
                    Ok(v) => v,
                    Err(Error::NonFinite { .. }) => return Err(Error::Diverged { episode }),
                    Err(e) => return Err(e),
                };
                critic_sum += critic;
                actor_sum += actor.unwrap_or(0.0);
                n_updates += 1;
                self.updates += 1;
            }
            if let Agent::Dqn(a) = &mut self.agent {
                if self.steps.is_multiple_of(a.config.target_sync) {
                    a.sync_target()?;
                }
            }
            obs = next;
            if self.probe.is_none() {
                seen.push(obs);
            }
            if step.done.is_over() {
                break;
            }
        }
        if self.probe.is_none() {
            let stride = seen.len().div_ceil(PROBE_SIZE).max(1);
            let rows: Vec<[S; 4]> = seen.iter().step_by(stride).copied().collect();
            self.probe = Some(Array2::from_shape_fn((rows.len(), 4), |(i, j)| rows[i][j]));
        }
        let mean_q = self.mean_q()?;
        if !mean_q.is_finite() {
            return Err(Error::Diverged { episode });
        }
        let avg = |sum: f64| (n_updates > 0).then(|| sum / n_updates as f64);
        let point = CurvePoint {
            episode,
            ret,
            mean_q,
            loss_critic: avg(critic_sum),
            loss_actor: match self.agent {
                Agent::Dqn(_) => None,
                Agent::Ddpg(_) => avg(actor_sum),
            },
        };
        self.curve.points.push(point);
        Ok(point)
    }

    /// Greedy policy of the current agent.
    pub fn policy(&self) -> LearnedPolicy {
        let cfg = self.env.config();
        let (algo, net, grid) = match &self.agent {
            Agent::Dqn(a) => (
                AlgoKind::Dqn,
                a.online.cast::<f32>(),
                action_grid(a.config.n_actions, cfg.u_max).expect("validated action count"),
            ),
            Agent::Ddpg(a) => (AlgoKind::Ddpg, a.actor.cast::<f32>(), Vec::new()),
        };
        LearnedPolicy {
            algo,
            case: cfg.case,
            action_space: cfg.action_space,
            action_grid: grid,
            norm_scales: cfg.norm_scales,
            u_max: cfg.u_max,
            dt: cfg.dt,
            seed: self.seed,
            episodes: self.curve.points.len(),
            net,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: LearnedPolicy,
    pub curve: LearningCurve,
    /// Episode whose update produced a non-finite loss.
    pub diverged_at: Option<usize>,
}

/// Trains for `episodes` episodes in single precision.
pub fn train(env: Env, algo: Algo, episodes: usize, seed: u64) -> Result<TrainOutcome> {
    train_with(env, algo, episodes, seed, |_, _| Ok(()))
}

/// As [`train`], calling `after_episode` with each finished episode.
pub fn train_with(
    env: Env,
    algo: Algo,
    episodes: usize,
    seed: u64,
    mut after_episode: impl FnMut(&Trainer<f32>, &CurvePoint) -> Result<()>,
) -> Result<TrainOutcome> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be at least 1".into()));
    }
    let mut trainer = Trainer::<f32>::new(env, algo, seed)?;
    let mut diverged_at = None;
    for _ in 0..episodes {
        match trainer.run_episode() {
            Ok(point) => after_episode(&trainer, &point)?,
            Err(Error::Diverged { episode }) => {
                diverged_at = Some(episode);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let policy = trainer.policy();
    Ok(TrainOutcome { policy, curve: trainer.into_curve(), diverged_at })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PatientParams;
    use crate::environment::EnvConfig;
    use proptest::prelude::*;

    fn env(case: Case, space: ActionSpace, max_steps: usize) -> Env {
        let p = PatientParams::nominal();
        let mut c = EnvConfig::new(case, space, &p);
        c.max_steps = max_steps;
        Env::new(p, c).unwrap()
    }

    fn tiny_dqn() -> DqnConfig {
        DqnConfig { hidden: vec![16, 16], n_actions: 5, replay_start: 64, batch_size: 16, ..DqnConfig::default() }
    }

    fn tiny_ddpg() -> DdpgConfig {
        DdpgConfig {
            actor_hidden: vec![16, 16],
            critic_hidden: vec![16, 16],
            replay_start: 64,
            batch_size: 16,
            ..DdpgConfig::default()
        }
    }

    #[test]
    fn grid_examples() {
        assert_eq!(action_grid(2, 10.0).unwrap(), vec![0.0, 10.0]);
        let g10 = action_grid(10, 10.0).unwrap();
        assert_eq!((g10[0], g10[9]), (0.0, 10.0));
        for w in g10.windows(2) {
            assert!((w[1] - w[0] - 10.0 / 9.0).abs() < 1e-12);
        }
        let g7 = action_grid(7, 10.0).unwrap();
        let want = [0.0, 5.0 / 3.0, 10.0 / 3.0, 5.0, 20.0 / 3.0, 25.0 / 3.0, 10.0];
        for (a, b) in g7.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(action_grid(1, 10.0).is_err());
    }

    #[test]
    fn warm_up_episode_leaves_networks_untouched() {
        let config = DqnConfig { replay_start: 10_000, ..tiny_dqn() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fresh = DqnAgent::<f32>::new(config.clone(), &mut rng).unwrap();
        let out = train(env(Case::Case0, ActionSpace::Discrete { n: 5 }, 500), Algo::Dqn(config), 1, 3).unwrap();
        assert_eq!(out.policy.net, fresh.online);
        assert_eq!(out.curve.points.len(), 1);
        assert_eq!(out.curve.points[0].loss_critic, None);
    }

    #[test]
    fn zero_episodes_rejected() {
        let e = env(Case::Case0, ActionSpace::Continuous, 50);
        assert!(train(e, Algo::Ddpg(tiny_ddpg()), 0, 1).is_err());
    }

    #[test]
    fn mismatched_action_space_rejected() {
        let e = env(Case::Case0, ActionSpace::Continuous, 50);
        assert!(Trainer::<f32>::new(e, Algo::Dqn(tiny_dqn()), 1).is_err());
    }

    #[test]
    fn training_is_reproducible() {
        for algo in [Algo::Dqn(tiny_dqn()), Algo::Ddpg(tiny_ddpg())] {
            let space = algo.action_space();
            let run = |seed| train(env(Case::Patient, space, 60), algo.clone(), 4, seed).unwrap();
            let (a, b, c) = (run(7), run(7), run(8));
            assert_eq!(a.policy.to_json().unwrap(), b.policy.to_json().unwrap());
            assert_eq!(a.curve, b.curve);
            assert_ne!(a.policy.net, c.policy.net);
            assert!(a.curve.points.last().unwrap().loss_critic.is_some());
        }
    }

    #[test]
    fn curve_csv_round_trip() {
        let e = env(Case::Case0, ActionSpace::Continuous, 40);
        let out = train(e, Algo::Ddpg(tiny_ddpg()), 3, 2).unwrap();
        let mut bytes = Vec::new();
        out.curve.write_csv(&mut bytes).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("episode,return,mean_q,loss_critic,loss_actor\n"));
        assert_eq!(LearningCurve::read_csv(bytes.as_slice()).unwrap(), out.curve);
    }

    #[test]
    fn checkpoint_round_trip_and_legality() {
        let e = env(Case::Patient, ActionSpace::Discrete { n: 5 }, 40);
        let out = train(e, Algo::Dqn(tiny_dqn()), 2, 5).unwrap();
        let json = out.policy.to_json().unwrap();
        let back = LearnedPolicy::from_json(&json).unwrap();
        assert_eq!(back, out.policy);
        assert_eq!(back.action_grid, action_grid(5, 10.0).unwrap());
        for t in [0.0, 0.5, 3.0, 9.0] {
            let u = back.dose(0.0, &StateVec::new(1.0, t, 0.6, 2.0), 0.3);
            assert!((0.0..=10.0).contains(&u));
        }
        let mut broken = back.clone();
        broken.action_grid.pop();
        assert!(LearnedPolicy::from_json(&broken.to_json().unwrap()).is_err());
        assert!(LearnedPolicy::from_json("{").is_err());
    }

    #[test]
    fn sync_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let online = Net::<f64>::init(&[2, 3, 1], Head::Linear, None, &mut rng).unwrap();
        let mut target = Net::<f64>::zeros(&[2, 3, 1], Head::Linear).unwrap();
        sync_target(&online, &mut target, SyncMode::Hard).unwrap();
        assert_eq!(target, online);
        let mut wrong = Net::<f64>::zeros(&[2, 1], Head::Linear).unwrap();
        assert!(sync_target(&online, &mut wrong, SyncMode::Soft(0.1)).is_err());
    }

    fn distance(a: &Net<f64>, b: &Net<f64>) -> f64 {
        a.flat_params().iter().zip(b.flat_params()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    proptest! {
        #[test]
        fn soft_updates_contract_geometrically(tau in 0.0..1.0f64, n in 0usize..40, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let online = Net::<f64>::init(&[3, 5, 2], Head::Linear, None, &mut rng).unwrap();
            let mut target = Net::<f64>::init(&[3, 5, 2], Head::Linear, None, &mut rng).unwrap();
            let d0 = distance(&online, &target);
            for _ in 0..n {
                sync_target(&online, &mut target, SyncMode::Soft(tau)).unwrap();
            }
            let want = d0 * (1.0 - tau).powi(n as i32);
            prop_assert!((distance(&online, &target) - want).abs() <= 1e-12 * d0.max(1.0));
        }
    }
}
