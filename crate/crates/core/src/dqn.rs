//! Epsilon-greedy DQN agent on top of a [`SplitModel`].
//!
//! No target network: TD targets `y = r~ + gamma * max_a' Q(s', a')` are
//! computed with the live model. Rewards are scaled by `reward_scale` so that
//! with rewards in `{0, 1}` and `reward_scale = 1 - gamma` every target lies in
//! `[0, 1]`, the range of the sigmoid head.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{self, EnvConfig, EnvError, OBS_DIM};
use crate::nn::{GradientBundle, NnError, ParamTensors, SplitModel};

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentHyperparams {
    pub gamma: f64,
    pub lr: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Multiplicative decay applied once per epoch.
    pub epsilon_decay: f64,
    pub batch_size: usize,
    pub train_steps_per_epoch: usize,
    pub buffer_capacity: usize,
    pub reward_scale: f64,
}

impl Default for AgentHyperparams {
    fn default() -> Self {
        let gamma = 0.9;
        Self {
            gamma,
            lr: 0.01,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay: 0.95,
            batch_size: 32,
            train_steps_per_epoch: 64,
            buffer_capacity: 10_000,
            reward_scale: 1.0 - gamma,
        }
    }
}

impl AgentHyperparams {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidHyperparams(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must be in (0, 1)");
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.epsilon_start) || !unit(self.epsilon_end) || !unit(self.epsilon_decay) {
            return bad("epsilon parameters must be in [0, 1]");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be >= 1");
        }
        Ok(())
    }

    /// `max(end, start * decay^k)`.
    pub fn epsilon_after(&self, epochs: u32) -> f64 {
        (self.epsilon_start * self.epsilon_decay.powi(epochs as i32)).max(self.epsilon_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: [f64; OBS_DIM],
    pub action: usize,
    /// Raw environment reward.
    pub reward: f64,
    pub next_state: [f64; OBS_DIM],
    /// Terminal for bootstrapping purposes. Episodes cut by the step cap are
    /// not terminal.
    pub done: bool,
}

/// Fixed-capacity ring of transitions with uniform sampling with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            next: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sample<'a, R: Rng>(&'a self, rng: &mut R, n: usize) -> Vec<&'a Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn select_action<R: Rng>(
    model: &SplitModel,
    obs: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, NnError> {
    if rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..model.output_dim()));
    }
    Ok(argmax(&model.predict(obs)?))
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed: `mix64(mix64(parent + GAMMA) ^ fnv1a64(label))`.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(mix64(parent.wrapping_add(SPLITMIX_GAMMA)) ^ h)
}

#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub transitions: Vec<Transition>,
    pub episode_return: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Sum of the additive deltas applied to the global layer.
    pub global_delta: ParamTensors,
    pub steps: usize,
    pub max_target: f64,
    pub min_target: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub id: String,
    pub model: SplitModel,
    pub buffer: ReplayBuffer,
    pub hyper: AgentHyperparams,
    rng: ChaCha8Rng,
    epochs_completed: u32,
}

impl Agent {
    pub fn new(
        id: impl Into<String>,
        model: SplitModel,
        hyper: AgentHyperparams,
        seed: u64,
    ) -> Result<Self, AgentError> {
        hyper.validate()?;
        Ok(Self {
            id: id.into(),
            model,
            buffer: ReplayBuffer::new(hyper.buffer_capacity),
            hyper,
            rng: ChaCha8Rng::seed_from_u64(seed),
            epochs_completed: 0,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.hyper.epsilon_after(self.epochs_completed)
    }

    pub fn epochs_completed(&self) -> u32 {
        self.epochs_completed
    }

    /// Advances the exploration schedule by one epoch.
    pub fn end_epoch(&mut self) {
        self.epochs_completed += 1;
    }

    /// Plays one episode to completion, storing every transition.
    pub fn rollout(
        &mut self,
        config: &EnvConfig,
        env_seed: u64,
    ) -> Result<RolloutResult, AgentError> {
        let epsilon = self.epsilon();
        let mut state = envs::reset(config, env_seed);
        let mut transitions = Vec::new();
        let mut episode_return = 0.0;
        while !state.done {
            let obs = state.observation();
            let action = select_action(&self.model, &obs, epsilon, &mut self.rng)?;
            let out = envs::step(config, &state, action)?;
            let t = Transition {
                state: obs,
                action,
                reward: out.reward,
                next_state: out.next.observation(),
                done: out.terminal,
            };
            self.buffer.push(t);
            transitions.push(t);
            episode_return += out.reward;
            state = out.next;
        }
        Ok(RolloutResult {
            transitions,
            episode_return,
        })
    }

    /// Runs `train_steps_per_epoch` minibatch SGD steps on the squared TD
    /// error of the taken action. Every layer is updated in place; the summed
    /// global-layer delta is returned for broadcast.
    pub fn train_offline(&mut self) -> Result<TrainReport, AgentError> {
        let global = self.model.global_layer();
        let global_id = global.layer_id.clone();
        let mut report = TrainReport {
            global_delta: ParamTensors::zeros_like(global),
            steps: 0,
            max_target: f64::NEG_INFINITY,
            min_target: f64::INFINITY,
        };
        if self.buffer.is_empty() {
            return Ok(report);
        }
        let h = &self.hyper;
        let batch = h.batch_size;
        for _ in 0..h.train_steps_per_epoch {
            let samples = self.buffer.sample(&mut self.rng, batch);
            let mut grads = GradientBundle::default();
            for t in samples {
                let scaled = h.reward_scale * t.reward;
                let target = if t.done {
                    scaled
                } else {
                    let next_q = self.model.predict(&t.next_state)?;
                    scaled + h.gamma * next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                };
                report.max_target = report.max_target.max(target);
                report.min_target = report.min_target.min(target);

                let (q, tape) = self.model.forward(&t.state)?;
                let mut out_grad = vec![0.0; q.len()];
                out_grad[t.action] = 2.0 * (q[t.action] - target) / batch as f64;
                grads.accumulate(&self.model.backward(&tape, &out_grad)?);
            }
            let deltas = self.model.apply_update(&grads, h.lr)?;
            if let Some(d) = deltas.get(&global_id) {
                report.global_delta.add_assign(d);
            }
            report.steps += 1;
        }
        Ok(report)
    }
}
