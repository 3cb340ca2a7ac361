use std::collections::VecDeque;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{argmax, td_target, AgentKind, Hyper, LearnRule, MomentParams, QTable, StateKey};
use crate::error::Result;
use crate::neural::NoiseSource;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy)]
struct KeyTransition {
    state: StateKey,
    action: usize,
    reward: f64,
    next_state: StateKey,
    terminal: bool,
}

/// Q-table learner: Q-learning, SARSA, or moment-corrected replay updates.
#[derive(Debug, Clone)]
pub struct TabularAgent {
    rule: LearnRule,
    pub table: QTable,
    actions: usize,
    alpha: f64,
    gamma: f64,
    moment: MomentParams,
    batch: usize,
    capacity: usize,
    replay: VecDeque<KeyTransition>,
    noise: NoiseSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSnapshot {
    pub table: QTable,
}

impl TabularAgent {
    pub fn new(kind: AgentKind, hyper: &Hyper, actions: usize, noise_seed: u64) -> Self {
        let rule = match kind {
            AgentKind::Sarsa => LearnRule::Sarsa,
            AgentKind::EqrlTabular => LearnRule::Moment,
            _ => LearnRule::QLearning,
        };
        Self {
            rule,
            table: QTable::new(),
            actions,
            alpha: hyper.alpha(),
            gamma: hyper.gamma,
            moment: MomentParams {
                beta1: hyper.adam.beta1,
                beta2: hyper.adam.beta2,
                alpha: hyper.alpha(),
                epsilon: hyper.adam.epsilon,
                eta: hyper.eta,
            },
            batch: hyper.batch_size,
            capacity: hyper.replay_capacity,
            replay: VecDeque::new(),
            noise: NoiseSource::new(noise_seed),
        }
    }

    pub fn rule(&self) -> LearnRule {
        self.rule
    }

    pub fn q_values(&self, s: StateKey) -> Vec<f64> {
        self.table.values(s, self.actions)
    }

    fn max_q(&self, s: StateKey) -> f64 {
        self.q_values(s).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// One learning step after observing `(s, a, r, s')` and choosing `a'`.
    /// Returns the squared TD error of the update (mean over the batch for replay updates).
    #[allow(clippy::too_many_arguments)]
    pub fn learn(
        &mut self,
        s: StateKey,
        a: usize,
        r: f64,
        s_next: StateKey,
        a_next: usize,
        terminal: bool,
        rng: &mut SeededRng,
    ) -> Result<Option<f64>> {
        match self.rule {
            LearnRule::QLearning | LearnRule::Sarsa => {
                let q_next = if self.rule == LearnRule::Sarsa {
                    self.table.q(s_next, a_next)
                } else {
                    self.max_q(s_next)
                };
                let target = td_target(r, self.gamma, q_next, terminal);
                let delta = target - self.table.q(s, a);
                self.table.update(s, a, target, self.alpha)?;
                Ok(Some(delta * delta))
            }
            LearnRule::Moment => {
                if self.replay.len() == self.capacity {
                    self.replay.pop_front();
                }
                self.replay.push_back(KeyTransition {
                    state: s,
                    action: a,
                    reward: r,
                    next_state: s_next,
                    terminal,
                });
                if self.replay.len() < self.batch {
                    return Ok(None);
                }
                let picks: Vec<KeyTransition> = sample(rng, self.replay.len(), self.batch)
                    .into_iter()
                    .map(|i| self.replay[i])
                    .collect();
                let mut sq = 0.0;
                for t in &picks {
                    let next = self.q_values(t.next_state);
                    let target = td_target(t.reward, self.gamma, next[argmax(&next)], t.terminal);
                    let delta = target - self.table.q(t.state, t.action);
                    sq += delta * delta;
                    self.table
                        .moment_update(t.state, t.action, delta, &self.moment, &mut self.noise)?;
                }
                Ok(Some(sq / picks.len() as f64))
            }
        }
    }

    pub fn snapshot(&self) -> TabularSnapshot {
        TabularSnapshot {
            table: self.table.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn key(i: i64) -> StateKey {
        StateKey { c_index: i, emi_db: 0 }
    }

    #[test]
    fn sarsa_matches_qlearning_on_greedy_next_action() {
        let hyper = Hyper {
            tabular_alpha: Some(0.5),
            ..Hyper::default()
        };
        let mut q = TabularAgent::new(AgentKind::QLearning, &hyper, 2, 0);
        let mut s = TabularAgent::new(AgentKind::Sarsa, &hyper, 2, 0);
        for agent in [&mut q, &mut s] {
            agent.table.set_q(key(1), 0, 0.2);
            agent.table.set_q(key(1), 1, 0.9);
        }
        let mut rng = seeded(0);
        q.learn(key(0), 0, 1.0, key(1), 1, false, &mut rng).unwrap();
        s.learn(key(0), 0, 1.0, key(1), 1, false, &mut rng).unwrap();
        assert_eq!(q.table.q(key(0), 0), s.table.q(key(0), 0));
        s.learn(key(2), 0, 1.0, key(1), 0, false, &mut rng).unwrap();
        assert!((s.table.q(key(2), 0) - 0.5 * (1.0 + 0.99 * 0.2)).abs() < 1e-15);
    }

    #[test]
    fn moment_rule_waits_for_a_batch() {
        let hyper = Hyper {
            batch_size: 3,
            eta: 0.0,
            ..Hyper::default()
        };
        let mut agent = TabularAgent::new(AgentKind::EqrlTabular, &hyper, 2, 0);
        let mut rng = seeded(1);
        assert_eq!(agent.learn(key(0), 0, 1.0, key(1), 0, true, &mut rng).unwrap(), None);
        assert_eq!(agent.learn(key(0), 0, 1.0, key(1), 0, true, &mut rng).unwrap(), None);
        assert!(agent
            .learn(key(0), 0, 1.0, key(1), 0, true, &mut rng)
            .unwrap()
            .is_some());
        assert!(agent.table.q(key(0), 0) > 0.0);
    }
}
