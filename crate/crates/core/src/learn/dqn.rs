use ndarray::Array2;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{Adam, AdamConfig, Head, Net};
use super::replay::Transition;
use crate::environment::Action;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub n_actions: usize,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub replay_start: usize,
    /// Environment steps between hard target copies.
    pub target_sync: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: vec![100, 100],
            n_actions: 10,
            gamma: 0.99,
            lr: 1e-3,
            batch_size: 64,
            buffer_capacity: 100_000,
            replay_start: 1_000,
            target_sync: 500,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 50_000,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_actions < 2 {
            return Err(Error::InvalidArgument(format!("n_actions must be >= 2, got {}", self.n_actions)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.target_sync == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("dqn sizes must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return Err(Error::InvalidArgument("dqn learning rate or epsilon out of range".into()));
        }
        Ok(())
    }

    /// Linear decay from `eps_start` to `eps_end`.
    pub fn epsilon(&self, step: usize) -> f64 {
        if self.eps_decay_steps == 0 {
            return self.eps_end;
        }
        let f = (step as f64 / self.eps_decay_steps as f64).min(1.0);
        self.eps_start + f * (self.eps_end - self.eps_start)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![4];
        w.extend(&self.hidden);
        w.push(self.n_actions);
        w
    }
}

/// Lowest index among the maximal entries.
pub fn argmax<S: Scalar>(values: &[S]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

/// Epsilon-greedy choice over the network's action values.
pub fn dqn_select<S: Scalar>(net: &Net<S>, obs: &[S; 4], epsilon: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..net.output_width()));
    }
    Ok(argmax(&net.forward_one(obs)?))
}

pub(crate) fn obs_matrix<S: Scalar>(batch: &[&Transition<S>], next: bool) -> Array2<S> {
    Array2::from_shape_fn((batch.len(), 4), |(j, k)| if next { batch[j].next_obs[k] } else { batch[j].obs[k] })
}

fn action_index<S>(t: &Transition<S>) -> usize {
    match t.action {
        Action::Discrete(k) => k,
        Action::Continuous(_) => panic!("continuous action in a discrete replay batch"),
    }
}

/// `r` on terminal transitions or when `gamma == 0`, otherwise
/// `r + gamma max_a' Q_target(s', a')`.
pub fn dqn_targets<S: Scalar>(target: &Net<S>, batch: &[&Transition<S>], gamma: S) -> Result<Vec<S>> {
    let q_next = if gamma == S::zero() || batch.iter().all(|t| t.terminal) {
        None
    } else {
        Some(target.forward(obs_matrix(batch, true).view())?)
    };
    Ok(batch
        .iter()
        .enumerate()
        .map(|(j, t)| match &q_next {
            Some(q) if !t.terminal => {
                let best = q.row(j).iter().copied().fold(S::neg_infinity(), S::max);
                t.reward + gamma * best
            }
            _ => t.reward,
        })
        .collect())
}

/// One Adam step on the mean squared TD error; returns the pre-update loss.
pub fn dqn_update<S: Scalar>(
    online: &mut Net<S>,
    target: &Net<S>,
    adam: &mut Adam<S>,
    batch: &[&Transition<S>],
    gamma: S,
) -> Result<S> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let y = dqn_targets(target, batch, gamma)?;
    let tape = online.forward_tape(obs_matrix(batch, false).view())?;
    let q = tape.output();
    let scale = S::lit(2.0 / batch.len() as f64);
    let mut d_out = Array2::zeros(q.raw_dim());
    let mut loss = S::zero();
    for (j, t) in batch.iter().enumerate() {
        let a = action_index(t);
        let err = q[[j, a]] - y[j];
        loss += err * err;
        d_out[[j, a]] = scale * err;
    }
    loss /= S::lit(batch.len() as f64);
    if !loss.is_finite() {
        return Err(Error::NonFinite { what: "dqn loss" });
    }
    let (grads, _) = online.backward(&tape, &d_out, true);
    adam.step(online, &grads.expect("parameter gradients requested"));
    Ok(loss)
}

/// Online network, target copy and optimizer state.
#[derive(Debug, Clone)]
pub struct DqnAgent<S> {
    pub config: DqnConfig,
    pub online: Net<S>,
    pub target: Net<S>,
    pub adam: Adam<S>,
}

impl<S: Scalar> DqnAgent<S> {
    pub fn new(config: DqnConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let online = Net::init(&config.widths(), Head::Linear, None, rng)?;
        let adam = Adam::new(&online, AdamConfig::with_lr(config.lr));
        Ok(DqnAgent { target: online.clone(), online, adam, config })
    }

    pub fn update(&mut self, batch: &[&Transition<S>]) -> Result<S> {
        dqn_update(&mut self.online, &self.target, &mut self.adam, batch, S::lit(self.config.gamma))
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.hard_update(&self.online)
    }
}
