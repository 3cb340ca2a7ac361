//! Tabular and deep value-based learners for the capacitance tuning task, and the
//! episode driver shared by all of them.

mod deep;
mod qtable;
mod replay;
mod tabular;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{AdamConfig, NoiseSource};
use crate::rng::SeededRng;

pub use deep::{critic_td_step, DeepAgent, DeepSnapshot, VaeMode};
pub use qtable::{MomentParams, QEntry, QTable, StateKey};
pub use replay::{ReplayBuffer, Transition};
pub use tabular::{TabularAgent, TabularSnapshot};
pub use train::{
    rollout_from, run_policy, train, AgentSnapshot, EpisodeRecord, ObservationEncoder, PolicyParams, StepRecord,
    TrainLog, TrainRun,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    #[serde(rename = "qlearning")]
    QLearning,
    #[serde(rename = "sarsa")]
    Sarsa,
    #[serde(rename = "dqn")]
    Dqn,
    #[serde(rename = "eqrl-deep", alias = "eqrl")]
    EqrlDeep,
    #[serde(rename = "eqrl-tabular")]
    EqrlTabular,
    #[serde(rename = "qlearning-deep")]
    QLearningDeep,
}

impl AgentKind {
    pub const ALL: [AgentKind; 6] = [
        AgentKind::QLearning,
        AgentKind::Sarsa,
        AgentKind::Dqn,
        AgentKind::EqrlDeep,
        AgentKind::EqrlTabular,
        AgentKind::QLearningDeep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::QLearning => "qlearning",
            AgentKind::Sarsa => "sarsa",
            AgentKind::Dqn => "dqn",
            AgentKind::EqrlDeep => "eqrl-deep",
            AgentKind::EqrlTabular => "eqrl-tabular",
            AgentKind::QLearningDeep => "qlearning-deep",
        }
    }

    pub fn is_tabular(self) -> bool {
        matches!(self, AgentKind::QLearning | AgentKind::Sarsa | AgentKind::EqrlTabular)
    }

    /// Initial exploration rate from the per-learner hyperparameter rows.
    pub fn default_initial_epsilon(self) -> f64 {
        match self {
            AgentKind::QLearning | AgentKind::Sarsa | AgentKind::QLearningDeep => 1.0,
            AgentKind::Dqn => 0.95,
            AgentKind::EqrlDeep | AgentKind::EqrlTabular => 0.99,
        }
    }

    pub fn default_critic_hidden(self) -> Vec<usize> {
        match self {
            AgentKind::EqrlDeep => vec![80],
            _ => vec![400, 300],
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "eqrl" {
            return Ok(AgentKind::EqrlDeep);
        }
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown agent kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum DecayMode {
    /// `eps <- max(factor * eps, minimum)` per step.
    #[default]
    Multiplicative,
    /// `eps <- max(eps - rate, minimum)` per step.
    Linear { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub minimum: f64,
    pub factor: f64,
    #[serde(default)]
    pub decay: DecayMode,
    /// Decay steps taken so far.
    pub steps: u64,
}

impl EpsilonSchedule {
    pub fn new(initial: f64, minimum: f64, factor: f64, decay: DecayMode) -> Result<Self> {
        if !(0.0 <= minimum && minimum <= initial && initial <= 1.0) || !(0.0..=1.0).contains(&factor) {
            return Err(Error::Config(format!(
                "epsilon schedule needs 0 <= minimum <= initial <= 1 and factor in [0, 1] (got {initial}, {minimum}, {factor})"
            )));
        }
        if let DecayMode::Linear { rate } = decay {
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(Error::Config(format!("linear epsilon decay rate {rate} must be >= 0")));
            }
        }
        Ok(Self {
            initial,
            minimum,
            factor,
            decay,
            steps: 0,
        })
    }

    /// Closed form of the schedule after `steps` decays.
    pub fn value(&self) -> f64 {
        let k = self.steps.min(i32::MAX as u64) as i32;
        match self.decay {
            DecayMode::Multiplicative => (self.initial * self.factor.powi(k)).max(self.minimum),
            DecayMode::Linear { rate } => (self.initial - rate * k as f64).max(self.minimum),
        }
    }

    pub fn decay(&mut self) -> f64 {
        self.steps += 1;
        self.value()
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

pub fn epsilon_greedy(q_values: &[f64], epsilon: f64, rng: &mut SeededRng) -> Result<usize> {
    if q_values.is_empty() {
        return Err(Error::Precondition("epsilon_greedy needs at least one action".into()));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        Ok(rng.random_range(0..q_values.len()))
    } else {
        Ok(argmax(q_values))
    }
}

/// `argmax(q + eta)`, `eta ~ N(0, eta_scale^2)` per action.
pub fn noisy_argmax(q_values: &[f64], eta_scale: f64, noise: &mut NoiseSource) -> Result<usize> {
    if q_values.is_empty() {
        return Err(Error::Precondition("noisy_argmax needs at least one action".into()));
    }
    if eta_scale == 0.0 {
        return Ok(argmax(q_values));
    }
    let perturbed: Vec<f64> = q_values.iter().map(|q| q + noise.scaled(eta_scale)).collect();
    Ok(argmax(&perturbed))
}

pub fn td_target(reward: f64, gamma: f64, q_next: f64, terminal: bool) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * q_next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnRule {
    /// Off-policy max over next actions.
    #[default]
    QLearning,
    /// On-policy target with the next action actually taken.
    Sarsa,
    /// Moment-corrected update of table entries with additive noise.
    Moment,
}

/// Hyperparameter block shared by all learners; unused fields are ignored per kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub episodes: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    /// Step size of tabular updates when different from `learning_rate`.
    pub tabular_alpha: Option<f64>,
    /// Initial exploration rate; per-kind default when absent.
    pub epsilon_initial: Option<f64>,
    pub epsilon_min: f64,
    pub epsilon_factor: f64,
    pub epsilon_decay: DecayMode,
    /// Exploration triple as printed for the learner, kept verbatim for reference.
    pub epsilon_triple: Option<String>,
    pub eta: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_update: usize,
    /// Critic hidden widths; per-kind default when absent.
    pub critic_hidden: Option<Vec<usize>>,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub beta_kl: f64,
    pub vae_weight: f64,
    pub vae_mode: VaeMode,
    pub adam: AdamConfig,
    /// Multiplier on rewards before they enter deep TD targets.
    pub reward_scale: f64,
    /// Multiplier on dB-valued observation features.
    pub feature_scale: f64,
    pub learn_every: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            episodes: 50,
            gamma: 0.99,
            learning_rate: 1e-3,
            tabular_alpha: None,
            epsilon_initial: None,
            epsilon_min: 0.1,
            epsilon_factor: 0.95,
            epsilon_decay: DecayMode::Multiplicative,
            epsilon_triple: None,
            eta: 0.025,
            batch_size: 32,
            replay_capacity: 100_000,
            target_update: 4,
            critic_hidden: None,
            encoder_hidden: vec![128, 64],
            latent_dim: 2,
            decoder_hidden: vec![64, 128],
            beta_kl: 1.0,
            vae_weight: 1.0,
            vae_mode: VaeMode::Joint,
            adam: AdamConfig::default(),
            reward_scale: 1.0,
            feature_scale: 0.05,
            learn_every: 1,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be >= 0");
        }
        if let Some(a) = self.tabular_alpha {
            if !(a > 0.0 && a <= 1.0) {
                return bad("tabular_alpha must lie in (0, 1]");
            }
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be >= 0");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("batch_size must be >= 1 and no larger than replay_capacity");
        }
        if self.target_update == 0 || self.learn_every == 0 {
            return bad("target_update and learn_every must be >= 1");
        }
        if self.latent_dim == 0 || self.encoder_hidden.is_empty() {
            return bad("VAE needs a latent and at least one encoder layer");
        }
        if self.critic_hidden.as_ref().is_some_and(|h| h.contains(&0))
            || self.encoder_hidden.contains(&0)
            || self.decoder_hidden.contains(&0)
        {
            return bad("layer widths must be >= 1");
        }
        if !(self.beta_kl >= 0.0 && self.vae_weight >= 0.0 && self.reward_scale > 0.0 && self.feature_scale > 0.0) {
            return bad("beta_kl, vae_weight must be >= 0 and reward_scale, feature_scale > 0");
        }
        self.adam.validate()?;
        self.schedule(AgentKind::EqrlDeep).map(|_| ())
    }

    pub fn schedule(&self, kind: AgentKind) -> Result<EpsilonSchedule> {
        let initial = self.epsilon_initial.unwrap_or_else(|| kind.default_initial_epsilon());
        EpsilonSchedule::new(
            initial,
            self.epsilon_min.min(initial),
            self.epsilon_factor,
            self.epsilon_decay,
        )
    }

    pub fn alpha(&self) -> f64 {
        self.tabular_alpha.unwrap_or(self.learning_rate)
    }

    pub fn critic_hidden_for(&self, kind: AgentKind) -> Vec<usize> {
        self.critic_hidden
            .clone()
            .unwrap_or_else(|| kind.default_critic_hidden())
    }
}
