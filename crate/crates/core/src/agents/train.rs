use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::deep::{DeepAgent, DeepSnapshot};
use super::tabular::{TabularAgent, TabularSnapshot};
use super::{argmax, noisy_argmax, AgentKind, Hyper, StateKey, Transition};
use crate::env::{observation_vector, Action, AefEnv, EnvConfig, EnvState};
use crate::error::{Error, Result};
use crate::neural::{Checkpoint, NoiseSource};
use crate::rng::{derive_seed, seeded};

/// Stream identifiers for [`derive_seed`].
const STREAM_INIT: u64 = 1;
const STREAM_RESET: u64 = 2;
const STREAM_EXPLORE: u64 = 3;

/// Maps environment states to learner inputs: scaled feature vectors and tabular keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationEncoder {
    pub bins: usize,
    pub c_min: f64,
    pub c_max: f64,
    /// Width of one tabular capacitance cell.
    pub c_step: f64,
    pub feature_scale: f64,
    pub actions: usize,
}

impl ObservationEncoder {
    pub fn new(env: &AefEnv, feature_scale: f64) -> Self {
        let p = env.params();
        let c_step = p
            .delta_set
            .iter()
            .copied()
            .filter(|d| *d > 0.0)
            .fold(f64::INFINITY, f64::min);
        Self {
            bins: p.obs_bins,
            c_min: p.c_min,
            c_max: p.c_max,
            c_step: if c_step.is_finite() { c_step } else { p.c_max - p.c_min },
            feature_scale,
            actions: env.action_count(),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.bins + 1
    }

    /// Observation vector with dB-valued entries scaled by `feature_scale`.
    pub fn features(&self, state: &EnvState) -> Result<Vec<f64>> {
        let mut v = observation_vector(state, self.bins, self.c_min, self.c_max)?;
        for (i, x) in v.iter_mut().enumerate() {
            if i != self.bins {
                *x *= self.feature_scale;
            }
        }
        Ok(v)
    }

    /// Capacitance cell index and EMI rounded to 1 dB within [-20, 60] dBuA.
    pub fn key(&self, state: &EnvState) -> StateKey {
        StateKey {
            c_index: ((state.c_t - self.c_min) / self.c_step).round() as i64,
            emi_db: state.emi_scalar.round().clamp(-20.0, 60.0) as i64,
        }
    }

    /// Checks that a snapshot trained with `self` can drive `env`.
    pub fn check_compatible(&self, env: &AefEnv) -> Result<()> {
        if env.observation_len() != self.dim() {
            return Err(Error::Dimension {
                context: "snapshot observation",
                expected: self.dim(),
                got: env.observation_len(),
            });
        }
        if env.action_count() != self.actions {
            return Err(Error::Dimension {
                context: "snapshot actions",
                expected: self.actions,
                got: env.action_count(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum PolicyParams {
    Table(TabularSnapshot),
    Network(DeepSnapshot),
}

/// Frozen policy: what `run_policy` needs to act greedily.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub kind: AgentKind,
    pub seed: u64,
    pub encoder: ObservationEncoder,
    pub params: PolicyParams,
}

impl AgentSnapshot {
    pub fn q_values(&self, state: &EnvState) -> Result<Vec<f64>> {
        match &self.params {
            PolicyParams::Table(t) => Ok(t.table.values(self.encoder.key(state), self.encoder.actions)),
            PolicyParams::Network(d) => d.q_values(&self.encoder.features(state)?),
        }
    }

    pub fn greedy_action(&self, state: &EnvState) -> Result<usize> {
        Ok(argmax(&self.q_values(state)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Checkpoint::new(self.kind.name(), self.clone()).to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(Checkpoint::<AgentSnapshot>::from_json(text)?.payload)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Checkpoint::<AgentSnapshot>::load(path)?.payload)
    }

    /// Tabular dump (`state_key,action,q,m,v`); `None` for network policies.
    pub fn table_dump(&self) -> Option<String> {
        match &self.params {
            PolicyParams::Table(t) => Some(t.table.dump()),
            PolicyParams::Network(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub cum_reward: f64,
    pub steps: usize,
    /// Informational only; excluded from determinism comparisons.
    pub wall_ms: u64,
    pub initial_c: f64,
    pub final_c: f64,
    pub final_emi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub action: usize,
    pub reward: f64,
    pub epsilon: f64,
    pub loss: Option<f64>,
    pub c: f64,
    pub emi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub agent: AgentKind,
    pub seed: u64,
    pub episodes: Vec<EpisodeRecord>,
    pub steps: Vec<StepRecord>,
}

impl TrainLog {
    pub fn new(agent: AgentKind, seed: u64) -> Self {
        Self {
            agent,
            seed,
            episodes: Vec::new(),
            steps: Vec::new(),
        }
    }

    pub fn cum_rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.cum_reward).collect()
    }

    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_wall_time(&self) -> Self {
        let mut c = self.clone();
        c.episodes.iter_mut().for_each(|e| e.wall_ms = 0);
        c
    }

    pub fn episodes_csv(&self) -> String {
        let mut s = String::from("episode,cum_reward,steps,wall_ms\n");
        for e in &self.episodes {
            let _ = writeln!(s, "{},{},{},{}", e.episode, e.cum_reward, e.steps, e.wall_ms);
        }
        s
    }

    pub fn steps_csv(&self) -> String {
        let mut s = String::from("episode,step,action,reward,epsilon,loss,c_farads,emi_dbua\n");
        for r in &self.steps {
            let loss = r.loss.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:e},{}",
                r.episode, r.step, r.action, r.reward, r.epsilon, loss, r.c, r.emi
            );
        }
        s
    }

    /// Writes `episodes.csv` and `steps.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (name, body) in [("episodes.csv", self.episodes_csv()), ("steps.csv", self.steps_csv())] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Result of a training run. `diverged` is set when training stopped on a non-finite loss;
/// the log then holds everything up to that point.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub log: TrainLog,
    pub snapshot: AgentSnapshot,
    pub diverged: Option<String>,
}

#[allow(clippy::large_enum_variant)]
enum Learner {
    Tabular(TabularAgent),
    Deep(DeepAgent),
}

impl Learner {
    fn snapshot(&self) -> PolicyParams {
        match self {
            Learner::Tabular(t) => PolicyParams::Table(t.snapshot()),
            Learner::Deep(d) => PolicyParams::Network(d.snapshot()),
        }
    }
}

/// Per-state learner input.
struct Obs {
    features: Vec<f64>,
    key: StateKey,
}

fn encode(encoder: &ObservationEncoder, tabular: bool, state: &EnvState) -> Result<Obs> {
    Ok(Obs {
        features: if tabular { Vec::new() } else { encoder.features(state)? },
        key: encoder.key(state),
    })
}

/// The episode loop: act epsilon-greedily (around noisy argmax for the moment-based learners),
/// learn from every transition, decay epsilon once per step.
pub fn train(kind: AgentKind, env_config: &EnvConfig, hyper: &Hyper, seed: u64) -> Result<TrainRun> {
    hyper.validate()?;
    let mut env = AefEnv::new(env_config.clone())?;
    let encoder = ObservationEncoder::new(&env, hyper.feature_scale);
    let actions = env.action_count();
    let tabular = kind.is_tabular();
    let init_seed = derive_seed(seed, STREAM_INIT, 0);
    let mut learner = if tabular {
        Learner::Tabular(TabularAgent::new(kind, hyper, actions, init_seed))
    } else {
        Learner::Deep(DeepAgent::new(kind, hyper, encoder.dim(), actions, init_seed)?)
    };
    let mut schedule = hyper.schedule(kind)?;
    let mut explore = seeded(derive_seed(seed, STREAM_EXPLORE, 0));
    let mut table_noise = NoiseSource::new(derive_seed(seed, STREAM_EXPLORE, 1));
    let table_eta = if kind == AgentKind::EqrlTabular { hyper.eta } else { 0.0 };
    let mut log = TrainLog::new(kind, seed);
    let mut diverged = None;
    let mut global_step = 0usize;

    'episodes: for episode in 0..hyper.episodes {
        let started = Instant::now();
        let mut state = env.reset(derive_seed(seed, STREAM_RESET, episode as u64))?;
        let initial_c = state.c_t;
        let mut obs = encode(&encoder, tabular, &state)?;
        let mut action = explore.random_range(0..actions);
        let mut cum_reward = 0.0;
        let mut steps = 0;

        loop {
            let epsilon = schedule.value();
            let result = env.step(Action(action))?;
            let next_obs = encode(&encoder, tabular, &result.next_state)?;

            let next_action = if epsilon > 0.0 && explore.random::<f64>() < epsilon {
                explore.random_range(0..actions)
            } else {
                match &mut learner {
                    Learner::Tabular(t) => noisy_argmax(&t.q_values(next_obs.key), table_eta, &mut table_noise)?,
                    Learner::Deep(d) => d.select(&next_obs.features, true)?,
                }
            };

            global_step += 1;
            let learned = match &mut learner {
                Learner::Tabular(t) => t.learn(
                    obs.key,
                    action,
                    result.reward,
                    next_obs.key,
                    next_action,
                    result.terminal,
                    &mut explore,
                ),
                Learner::Deep(d) => d.learn(
                    Transition {
                        state: std::mem::take(&mut obs.features),
                        action,
                        reward: result.reward,
                        next_state: next_obs.features.clone(),
                        terminal: result.terminal,
                    },
                    global_step.is_multiple_of(hyper.learn_every),
                ),
            };
            let loss = match learned {
                Ok(l) if l.is_none_or(f64::is_finite) => l,
                Ok(_) => {
                    diverged = Some(format!("non-finite loss at step {global_step}"));
                    None
                }
                Err(Error::Divergence(msg)) => {
                    diverged = Some(msg);
                    None
                }
                Err(e) => return Err(e),
            };

            cum_reward += result.reward;
            steps += 1;
            log.steps.push(StepRecord {
                episode,
                step: steps,
                action,
                reward: result.reward,
                epsilon,
                loss,
                c: result.next_state.c_t,
                emi: result.next_state.emi_scalar,
            });
            schedule.decay();
            state = result.next_state;

            if diverged.is_some() || result.terminal {
                log.episodes.push(EpisodeRecord {
                    episode,
                    cum_reward,
                    steps,
                    wall_ms: started.elapsed().as_millis() as u64,
                    initial_c,
                    final_c: state.c_t,
                    final_emi: state.emi_scalar,
                });
                if diverged.is_some() {
                    break 'episodes;
                }
                break;
            }
            obs = next_obs;
            action = next_action;
        }
        log::debug!("{kind} seed {seed} episode {episode}: reward {cum_reward:.2} in {steps} steps");
    }

    let snapshot = AgentSnapshot {
        kind,
        seed,
        encoder,
        params: learner.snapshot(),
    };
    Ok(TrainRun {
        log,
        snapshot,
        diverged,
    })
}

/// Greedy rollouts of a frozen policy (no exploration, no noise, no learning).
/// Episode `i` starts from the same seeded capacitance as training episode `i`.
pub fn run_policy(snapshot: &AgentSnapshot, env_config: &EnvConfig, episodes: usize, seed: u64) -> Result<TrainLog> {
    let mut env = AefEnv::new(env_config.clone())?;
    snapshot.encoder.check_compatible(&env)?;
    let mut log = TrainLog::new(snapshot.kind, seed);
    for episode in 0..episodes {
        let state = env.reset(derive_seed(seed, STREAM_RESET, episode as u64))?;
        let record = greedy_episode(snapshot, &mut env, state, episode, &mut log.steps)?;
        log.episodes.push(record);
    }
    Ok(log)
}

/// One greedy episode starting from capacitance `c0` (clamped into range).
pub fn rollout_from(
    snapshot: &AgentSnapshot,
    env_config: &EnvConfig,
    c0: f64,
) -> Result<(EpisodeRecord, Vec<StepRecord>)> {
    let mut env = AefEnv::new(env_config.clone())?;
    snapshot.encoder.check_compatible(&env)?;
    let state = env.reset_to(c0)?;
    let mut steps = Vec::new();
    let record = greedy_episode(snapshot, &mut env, state, 0, &mut steps)?;
    Ok((record, steps))
}

fn greedy_episode(
    snapshot: &AgentSnapshot,
    env: &mut AefEnv,
    mut state: EnvState,
    episode: usize,
    log: &mut Vec<StepRecord>,
) -> Result<EpisodeRecord> {
    let started = Instant::now();
    let initial_c = state.c_t;
    let mut cum_reward = 0.0;
    let mut steps = 0;
    loop {
        let action = snapshot.greedy_action(&state)?;
        let result = env.step(Action(action))?;
        cum_reward += result.reward;
        steps += 1;
        log.push(StepRecord {
            episode,
            step: steps,
            action,
            reward: result.reward,
            epsilon: 0.0,
            loss: None,
            c: result.next_state.c_t,
            emi: result.next_state.emi_scalar,
        });
        state = result.next_state;
        if result.terminal {
            break;
        }
    }
    Ok(EpisodeRecord {
        episode,
        cum_reward,
        steps,
        wall_ms: started.elapsed().as_millis() as u64,
        initial_c,
        final_c: state.c_t,
        final_emi: state.emi_scalar,
    })
}
