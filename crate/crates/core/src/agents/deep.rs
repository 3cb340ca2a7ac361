use serde::{Deserialize, Serialize};

use super::{argmax, noisy_argmax, td_target, AgentKind, Hyper, ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::neural::{Activation, AdamState, Mlp, NoiseSource, Params, VaeModel};
use crate::rng::{seeded, SeededRng};

/// How the encoder of the VAE-backed learner is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum VaeMode {
    /// Critic TD loss and VAE loss summed into one objective.
    #[default]
    Joint,
    /// VAE alone for the first `steps` learn calls, then frozen while the critic trains.
    Pretrain { steps: usize },
}

/// Network-backed learner: DQN, online deep Q-learning, or the VAE-encoded critic.
#[derive(Debug, Clone)]
pub struct DeepAgent {
    pub kind: AgentKind,
    pub critic: Mlp,
    pub vae: Option<VaeModel>,
    target: Option<Mlp>,
    critic_adam: AdamState,
    vae_adam: Option<AdamState>,
    pub buffer: ReplayBuffer,
    gamma: f64,
    batch: usize,
    eta: f64,
    reward_scale: f64,
    beta_kl: f64,
    vae_weight: f64,
    mode: VaeMode,
    target_update: usize,
    learn_calls: u64,
    target_syncs: u64,
    noise: NoiseSource,
    sample_rng: SeededRng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSnapshot {
    pub critic: Mlp,
    pub vae: Option<VaeModel>,
}

impl DeepSnapshot {
    pub fn q_values(&self, features: &[f64]) -> Result<Vec<f64>> {
        match &self.vae {
            Some(vae) => self.critic.predict(&vae.encode(features)?.0),
            None => self.critic.predict(features),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.vae.as_ref().map_or(self.critic.input_dim(), |v| v.input_dim())
    }
}

impl DeepAgent {
    pub fn new(kind: AgentKind, hyper: &Hyper, input_dim: usize, actions: usize, seed: u64) -> Result<Self> {
        let mut init = seeded(seed);
        let vae = if kind == AgentKind::EqrlDeep {
            Some(VaeModel::new(
                input_dim,
                &hyper.encoder_hidden,
                hyper.latent_dim,
                &hyper.decoder_hidden,
                &mut init,
            )?)
        } else {
            None
        };
        let critic_in = vae.as_ref().map_or(input_dim, |v| v.latent_dim);
        let mut sizes = vec![critic_in];
        sizes.extend(hyper.critic_hidden_for(kind));
        sizes.push(actions);
        let critic = Mlp::new(&sizes, Activation::Identity, &mut init)?;
        let online = kind == AgentKind::QLearningDeep;
        let target = (kind == AgentKind::Dqn).then(|| critic.clone());
        Ok(Self {
            kind,
            critic_adam: AdamState::new(&critic, hyper.adam),
            vae_adam: vae.as_ref().map(|v| AdamState::new(v, hyper.adam)),
            critic,
            vae,
            target,
            buffer: ReplayBuffer::new(if online { 1 } else { hyper.replay_capacity }),
            gamma: hyper.gamma,
            batch: if online { 1 } else { hyper.batch_size },
            eta: if kind == AgentKind::EqrlDeep { hyper.eta } else { 0.0 },
            reward_scale: hyper.reward_scale,
            beta_kl: hyper.beta_kl,
            vae_weight: hyper.vae_weight,
            mode: hyper.vae_mode,
            target_update: hyper.target_update,
            learn_calls: 0,
            target_syncs: 0,
            noise: NoiseSource::new(crate::rng::derive_seed(seed, 1, 0)),
            sample_rng: seeded(crate::rng::derive_seed(seed, 1, 1)),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.vae.as_ref().map_or(self.critic.input_dim(), |v| v.input_dim())
    }

    pub fn learn_calls(&self) -> u64 {
        self.learn_calls
    }

    pub fn target_syncs(&self) -> u64 {
        self.target_syncs
    }

    fn critic_input(&self, features: &[f64]) -> Result<Vec<f64>> {
        match &self.vae {
            Some(vae) => Ok(vae.encode(features)?.0),
            None => Ok(features.to_vec()),
        }
    }

    pub fn q_values(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.critic.predict(&self.critic_input(features)?)
    }

    /// Greedy choice, perturbed by action noise for the VAE-backed learner.
    pub fn select(&mut self, features: &[f64], explore: bool) -> Result<usize> {
        let q = self.q_values(features)?;
        if explore && self.eta > 0.0 {
            noisy_argmax(&q, self.eta, &mut self.noise)
        } else {
            Ok(argmax(&q))
        }
    }

    /// Store a transition and, once the buffer holds a batch, take one TD step.
    pub fn learn(&mut self, transition: Transition, update: bool) -> Result<Option<f64>> {
        self.buffer.push(transition);
        if !update || self.buffer.len() < self.batch {
            return Ok(None);
        }
        let batch: Vec<Transition> = self
            .buffer
            .sample(self.batch, &mut self.sample_rng)?
            .into_iter()
            .cloned()
            .collect();
        critic_td_step(self, &batch).map(Some)
    }

    pub fn snapshot(&self) -> DeepSnapshot {
        DeepSnapshot {
            critic: self.critic.clone(),
            vae: self.vae.clone(),
        }
    }

    fn next_value(&self, features: &[f64]) -> Result<f64> {
        let input = self.critic_input(features)?;
        let q = self.target.as_ref().unwrap_or(&self.critic).predict(&input)?;
        Ok(q[argmax(&q)])
    }
}

/// One TD step on a minibatch: mean squared error against bootstrapped targets, plus the VAE
/// objective in joint mode. Targets use the frozen target network when one exists. Returns the
/// TD loss before the step.
pub fn critic_td_step(agent: &mut DeepAgent, batch: &[Transition]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty minibatch".into()));
    }
    let (train_critic, train_vae, couple) = match agent.mode {
        _ if agent.vae.is_none() => (true, false, false),
        VaeMode::Joint => (true, true, true),
        VaeMode::Pretrain { steps } if (agent.learn_calls as usize) < steps => (false, true, false),
        VaeMode::Pretrain { .. } => (true, false, false),
    };
    let scale = 1.0 / batch.len() as f64;
    let mut critic_grads = agent.critic.zeros_like();
    let mut vae_grads = agent.vae.as_ref().map(|v| v.zeros_like());
    let mut td_loss = 0.0;

    for t in batch {
        let target = td_target(
            t.reward * agent.reward_scale,
            agent.gamma,
            agent.next_value(&t.next_state)?,
            t.terminal,
        );
        let fwd = match &agent.vae {
            Some(vae) => Some(vae.forward(&t.state, &mut agent.noise)?),
            None => None,
        };
        let input = fwd.as_ref().map_or_else(|| t.state.clone(), |f| f.mu.clone());
        let (q, cache) = agent.critic.forward(&input)?;
        let residual = q[t.action] - target;
        td_loss += residual * residual * scale;

        let mut upstream = vec![0.0; q.len()];
        upstream[t.action] = 2.0 * residual * scale;
        let d_input = if train_critic {
            agent.critic.backward_into(&cache, &upstream, &mut critic_grads)?
        } else {
            Vec::new()
        };
        if let (Some(vae), Some(fwd), Some(grads)) = (&agent.vae, &fwd, vae_grads.as_mut()) {
            if train_vae {
                let extra = couple.then_some(d_input.as_slice());
                vae.backward_into(&t.state, fwd, agent.beta_kl, agent.vae_weight * scale, extra, grads)?;
            }
        }
    }

    if !td_loss.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite TD loss after {} learn calls",
            agent.learn_calls
        )));
    }
    if train_critic {
        agent.critic_adam.step(&mut agent.critic, &critic_grads)?;
    }
    if let (true, Some(vae), Some(adam), Some(grads)) = (
        train_vae,
        agent.vae.as_mut(),
        agent.vae_adam.as_mut(),
        vae_grads.as_ref(),
    ) {
        adam.step(vae, grads)?;
    }
    if !agent.critic.is_finite()
        || agent
            .vae
            .as_ref()
            .is_some_and(|v| !v.tensors().iter().flat_map(|t| t.iter()).all(|x| x.is_finite()))
    {
        return Err(Error::Divergence("non-finite weights".into()));
    }

    agent.learn_calls += 1;
    if let Some(target) = agent.target.as_mut() {
        if agent.learn_calls.is_multiple_of(agent.target_update as u64) {
            *target = agent.critic.clone();
            agent.target_syncs += 1;
        }
    }
    Ok(td_loss)
}
