use ndarray::{s, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dqn::obs_matrix;
use super::net::{Adam, AdamConfig, Grads, Head, Net};
use super::replay::Transition;
use crate::environment::Action;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpgConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub replay_start: usize,
    /// Standard deviation of the Gaussian action noise, in normalized units.
    pub noise_start: f64,
    pub noise_end: f64,
    pub noise_decay_steps: usize,
    /// Output layers start in `[-final_init, final_init]`.
    pub final_init: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            actor_hidden: vec![300, 300, 300],
            critic_hidden: vec![300, 300, 300],
            gamma: 0.995,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            batch_size: 64,
            buffer_capacity: 100_000,
            replay_start: 5_000,
            noise_start: 0.2,
            noise_end: 0.02,
            noise_decay_steps: 100_000,
            final_init: 3e-3,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidArgument(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.batch_size == 0
            || self.buffer_capacity == 0
            || self.actor_hidden.contains(&0)
            || self.critic_hidden.contains(&0)
        {
            return Err(Error::InvalidArgument("ddpg sizes must be positive".into()));
        }
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) || self.noise_start < 0.0 || self.noise_end < 0.0 {
            return Err(Error::InvalidArgument("ddpg learning rates or noise out of range".into()));
        }
        Ok(())
    }

    pub fn noise(&self, step: usize) -> f64 {
        if self.noise_decay_steps == 0 {
            return self.noise_end;
        }
        let f = (step as f64 / self.noise_decay_steps as f64).min(1.0);
        self.noise_start + f * (self.noise_end - self.noise_start)
    }
}

fn continuous<S: Scalar>(t: &Transition<S>) -> S {
    match t.action {
        Action::Continuous(a) => S::lit(a),
        Action::Discrete(_) => panic!("discrete action in a continuous replay batch"),
    }
}

fn critic_input<S: Scalar>(obs: &Array2<S>, actions: &Array2<S>) -> Array2<S> {
    let mut x = Array2::zeros((obs.nrows(), 5));
    x.slice_mut(s![.., ..4]).assign(obs);
    x.slice_mut(s![.., 4..]).assign(actions);
    x
}

/// Gradient of the mean of `Q(s, mu(s))` over `states` with respect to the
/// actor parameters, together with that mean.
pub fn policy_gradient<S: Scalar>(actor: &Net<S>, critic: &Net<S>, states: &Array2<S>) -> Result<(Grads<S>, S)> {
    let a_tape = actor.forward_tape(states.view())?;
    let x = critic_input(states, a_tape.output());
    let c_tape = critic.forward_tape(x.view())?;
    let n = S::lit(states.nrows() as f64);
    let objective = c_tape.output().sum() / n;
    let d_q = Array2::from_elem((states.nrows(), 1), S::one() / n);
    let (_, d_x) = critic.backward(&c_tape, &d_q, false);
    let d_a = d_x.slice(s![.., 4..]).to_owned();
    let (grads, _) = actor.backward(&a_tape, &d_a, true);
    Ok((grads.expect("parameter gradients requested"), objective))
}

/// Critic regression targets; bootstrapping is skipped on terminal
/// transitions and when `gamma == 0`.
pub fn ddpg_targets<S: Scalar>(
    actor_target: &Net<S>,
    critic_target: &Net<S>,
    batch: &[&Transition<S>],
    gamma: S,
) -> Result<Vec<S>> {
    if gamma == S::zero() || batch.iter().all(|t| t.terminal) {
        return Ok(batch.iter().map(|t| t.reward).collect());
    }
    let next = obs_matrix(batch, true);
    let a_next = actor_target.forward(next.view())?;
    let q_next = critic_target.forward(critic_input(&next, &a_next).view())?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(j, t)| if t.terminal { t.reward } else { t.reward + gamma * q_next[[j, 0]] })
        .collect())
}

#[derive(Debug, Clone)]
pub struct DdpgAgent<S> {
    pub config: DdpgConfig,
    pub actor: Net<S>,
    pub critic: Net<S>,
    pub actor_target: Net<S>,
    pub critic_target: Net<S>,
    pub actor_adam: Adam<S>,
    pub critic_adam: Adam<S>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgLosses<S> {
    pub critic: S,
    /// Mean `Q(s, mu(s))` before the actor step.
    pub actor_objective: S,
}

impl<S: Scalar> DdpgAgent<S> {
    pub fn new(config: DdpgConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut aw = vec![4];
        aw.extend(&config.actor_hidden);
        aw.push(1);
        let mut cw = vec![5];
        cw.extend(&config.critic_hidden);
        cw.push(1);
        let actor = Net::init(&aw, Head::Sigmoid, Some(config.final_init), rng)?;
        let critic = Net::init(&cw, Head::Linear, Some(config.final_init), rng)?;
        Ok(DdpgAgent {
            actor_adam: Adam::new(&actor, AdamConfig::with_lr(config.actor_lr)),
            critic_adam: Adam::new(&critic, AdamConfig::with_lr(config.critic_lr)),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            config,
        })
    }

    /// Critic step, actor step, then soft target updates.
    pub fn update(&mut self, batch: &[&Transition<S>]) -> Result<DdpgLosses<S>> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty minibatch".into()));
        }
        let gamma = S::lit(self.config.gamma);
        let y = ddpg_targets(&self.actor_target, &self.critic_target, batch, gamma)?;
        let obs = obs_matrix(batch, false);
        let actions = Array2::from_shape_fn((batch.len(), 1), |(j, _)| continuous(batch[j]));
        let tape = self.critic.forward_tape(critic_input(&obs, &actions).view())?;
        let n = S::lit(batch.len() as f64);
        let err = Array2::from_shape_fn((batch.len(), 1), |(j, _)| tape.output()[[j, 0]] - y[j]);
        let critic_loss = err.iter().map(|e| *e * *e).sum::<S>() / n;
        if !critic_loss.is_finite() {
            return Err(Error::NonFinite { what: "critic loss" });
        }
        let (grads, _) = self.critic.backward(&tape, &(err * (S::lit(2.0) / n)), true);
        self.critic_adam.step(&mut self.critic, &grads.expect("parameter gradients requested"));

        let (mut pg, objective) = policy_gradient(&self.actor, &self.critic, &obs)?;
        if !objective.is_finite() {
            return Err(Error::NonFinite { what: "actor objective" });
        }
        for l in &mut pg.layers {
            l.w.mapv_inplace(|v| -v);
            l.b.mapv_inplace(|v| -v);
        }
        self.actor_adam.step(&mut self.actor, &pg);

        let tau = S::lit(self.config.tau);
        self.actor_target.soft_update(&self.actor, tau)?;
        self.critic_target.soft_update(&self.critic, tau)?;
        Ok(DdpgLosses { critic: critic_loss, actor_objective: objective })
    }

    /// Noise-free normalized action.
    pub fn act(&self, obs: &[S; 4]) -> Result<S> {
        Ok(self.actor.forward_one(obs)?[0])
    }

    /// Mean `Q(s, mu(s))` over `states`.
    pub fn mean_q(&self, states: &Array2<S>) -> Result<S> {
        let a = self.actor.forward(states.view())?;
        let q = self.critic.forward(critic_input(states, &a).view())?;
        Ok(q.mean_axis(Axis(0)).map(|m| m[0]).unwrap_or(S::zero()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn small_config() -> DdpgConfig {
        DdpgConfig { actor_hidden: vec![6], critic_hidden: vec![7], final_init: 0.3, ..DdpgConfig::default() }
    }

    fn transition(obs: [f64; 4], a: f64, r: f64, terminal: bool) -> Transition<f64> {
        Transition { obs, action: Action::Continuous(a), reward: r, next_obs: [0.2, 0.4, 0.6, 0.1], terminal }
    }

    #[test]
    fn zero_discount_targets_are_rewards() {
        let agent = DdpgAgent::<f64>::new(small_config(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let batch = [transition([0.1; 4], 0.3, -0.4, false), transition([0.5; 4], 0.9, -1.2, false)];
        let refs: Vec<_> = batch.iter().collect();
        let y = ddpg_targets(&agent.actor_target, &agent.critic_target, &refs, 0.0).unwrap();
        assert_eq!(y, vec![-0.4, -1.2]);
        let y = ddpg_targets(&agent.actor_target, &agent.critic_target, &refs, 0.9).unwrap();
        assert_ne!(y[0], -0.4);
    }

    #[test]
    fn linear_policy_gradient_is_mean_state() {
        let mut actor = Net::<f64>::zeros(&[4, 1], Head::Linear).unwrap();
        actor.layers[0].w = array![[0.3], [-0.2], [0.5], [0.1]];
        let mut critic = Net::<f64>::zeros(&[5, 1], Head::Linear).unwrap();
        critic.layers[0].w[[4, 0]] = 1.0;
        let states = array![[0.1, 0.2, 0.3, 0.4], [0.5, 0.9, 0.0, 0.2], [0.6, 0.4, 0.3, 0.9]];
        let (g, objective) = policy_gradient(&actor, &critic, &states).unwrap();
        let mean = states.mean_axis(Axis(0)).unwrap();
        for k in 0..4 {
            assert!((g.layers[0].w[[k, 0]] - mean[k]).abs() < 1e-15);
        }
        assert!((g.layers[0].b[0] - 1.0).abs() < 1e-15);
        let mu = states.dot(&actor.layers[0].w);
        assert!((objective - mu.mean().unwrap()).abs() < 1e-15);
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let agent = DdpgAgent::<f64>::new(small_config(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let states = array![[0.1, 0.2, 0.3, 0.4], [0.5, 0.9, 0.0, 0.2]];
        let (g, _) = policy_gradient(&agent.actor, &agent.critic, &states).unwrap();
        let p0 = agent.actor.flat_params();
        let mut work = agent.actor.clone();
        let h = 1e-5;
        for (k, gk) in g.flat().iter().enumerate() {
            let mut p = p0.clone();
            p[k] += h;
            work.set_flat_params(&p).unwrap();
            let up = policy_gradient(&work, &agent.critic, &states).unwrap().1;
            p[k] -= 2.0 * h;
            work.set_flat_params(&p).unwrap();
            let down = policy_gradient(&work, &agent.critic, &states).unwrap().1;
            let fd = (up - down) / (2.0 * h);
            assert!((gk - fd).abs() <= 1e-4 * fd.abs().max(gk.abs()).max(1e-3), "param {k}: {gk} vs {fd}");
        }
    }

    #[test]
    fn full_tau_copies_online_nets() {
        let config = DdpgConfig { tau: 1.0, ..small_config() };
        let mut agent = DdpgAgent::<f64>::new(config, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let batch = [transition([0.1; 4], 0.3, -0.4, false), transition([0.5; 4], 0.9, -1.2, true)];
        let refs: Vec<_> = batch.iter().collect();
        agent.update(&refs).unwrap();
        assert_eq!(agent.actor_target, agent.actor);
        assert_eq!(agent.critic_target, agent.critic);
    }

    #[test]
    fn update_reduces_critic_loss_on_fixed_batch() {
        let config = DdpgConfig { gamma: 0.5, ..small_config() };
        let mut agent = DdpgAgent::<f64>::new(config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let batch = [transition([0.1; 4], 0.3, -0.4, true), transition([0.5; 4], 0.9, -1.2, true)];
        let refs: Vec<_> = batch.iter().collect();
        let first = agent.update(&refs).unwrap().critic;
        let mut last = first;
        for _ in 0..600 {
            last = agent.update(&refs).unwrap().critic;
        }
        assert!(last < 0.1 * first);
    }

    #[test]
    fn actor_outputs_are_legal() {
        let agent = DdpgAgent::<f32>::new(DdpgConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for obs in [[0.0f32; 4], [1.0; 4], [0.5, 0.1, 0.9, 0.3]] {
            let a = agent.act(&obs).unwrap();
            assert!((0.0..=1.0).contains(&a));
        }
        assert_eq!(agent.actor.widths(), vec![4, 300, 300, 300, 1]);
        assert_eq!(agent.critic.widths(), vec![5, 300, 300, 300, 1]);
    }

    #[test]
    fn noise_schedule_and_validation() {
        let c = DdpgConfig::default();
        assert_eq!(c.noise(0), 0.2);
        assert!((c.noise(50_000) - 0.11).abs() < 1e-12);
        assert!((c.noise(10_000_000) - 0.02).abs() < 1e-15);
        assert!(DdpgConfig { tau: 0.0, ..c.clone() }.validate().is_err());
        assert!(DdpgConfig { tau: 1.5, ..c }.validate().is_err());
    }
}
