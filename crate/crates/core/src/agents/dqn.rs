//! Deep Q-learning over single-item actions: epsilon-greedy acting, replay
//! minibatches, squared TD error, and a target network synced every
//! `target_sync` steps.

use std::rc::Rc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Agent, AgentConfig, ReplayBuffer, SlotScorer, TrainReport, Transition};
use crate::env::{Action, ActionForm, ReplayEnv};
use crate::error::{Error, Result};
use crate::ingest::MAX_IMPRESSIONS;
use crate::state::EnvState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnAgent {
    pub scorer: SlotScorer,
    #[serde(skip)]
    epsilon: f64,
}

fn greedy(q: &[f64], valid: usize) -> usize {
    let mut best = 0;
    for k in 1..valid {
        if q[k] > q[best] {
            best = k;
        }
    }
    best
}

fn choose(
    net: &SlotScorer,
    x: &[f64],
    valid: usize,
    eps: f64,
    rng: &mut dyn RngCore,
) -> Result<usize> {
    if eps > 0.0 && rng.gen_bool(eps) {
        return Ok(rng.gen_range(0..valid));
    }
    Ok(greedy(&net.forward(x)?, valid))
}

impl DqnAgent {
    pub fn new(scorer: SlotScorer) -> Self {
        DqnAgent {
            scorer,
            epsilon: 0.0,
        }
    }

    /// Acting exploration rate; zero (greedy) by default.
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn q_values(&self, state: &EnvState) -> Result<Vec<f64>> {
        self.scorer.scores(state)
    }
}

impl Agent for DqnAgent {
    fn name(&self) -> &str {
        "dqn"
    }

    fn action_form(&self) -> ActionForm {
        ActionForm::SingleItem
    }

    fn act(&mut self, state: &EnvState, rng: &mut dyn RngCore) -> Result<Action> {
        let k = choose(
            &self.scorer,
            &self.scorer.encode(state),
            state.num_candidates(),
            self.epsilon,
            rng,
        )?;
        Ok(Action::SingleItem(k))
    }
}

/// Step-wise DQN training loop.
pub struct DqnTrainer {
    online: SlotScorer,
    target: SlotScorer,
    config: AgentConfig,
    buffer: ReplayBuffer,
    steps: u64,
    current: Option<(Rc<[f64]>, usize)>,
    report: TrainReport,
}

impl DqnTrainer {
    pub fn new(env: &ReplayEnv, config: &AgentConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let online = SlotScorer::random(
            config.scorer,
            config.view,
            &config.hidden,
            env.feature_dim(),
            env.context_len(),
            rng,
        )?;
        Ok(DqnTrainer {
            target: online.clone(),
            online,
            config: config.clone(),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            steps: 0,
            current: None,
            report: TrainReport::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn online(&self) -> &SlotScorer {
        &self.online
    }

    pub fn target(&self) -> &SlotScorer {
        &self.target
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    fn encode(&self, s: &EnvState) -> (Rc<[f64]>, usize) {
        (Rc::from(self.online.encode(s)), s.num_candidates())
    }

    /// One environment interaction, plus a learning update when due.
    pub fn step(&mut self, env: &mut ReplayEnv, rng: &mut dyn RngCore) -> Result<()> {
        let (x, valid) = match self.current.take() {
            Some(c) => c,
            None => {
                self.report.episodes += 1;
                let s = env.reset()?;
                self.encode(&s)
            }
        };
        let eps = self
            .config
            .epsilon
            .value(self.steps, self.config.train_steps);
        let a = choose(&self.online, &x, valid, eps, rng)?;
        self.report.slot_histogram[a] += 1;
        let out = env.step(&Action::SingleItem(a))?;
        let next = out.next_state.as_ref().map(|s| self.encode(s));
        self.buffer.push(Transition {
            state: x,
            action: a,
            reward: out.reward,
            next: next.clone(),
        });
        self.report.rewards.push(out.reward);
        self.current = next;

        let ready = self.buffer.len() >= self.config.learning_starts.max(self.config.batch_size);
        if ready && self.steps.is_multiple_of(self.config.train_every) {
            let loss = self.learn(rng)?;
            self.report.losses.push(loss);
        }
        self.steps += 1;
        if self.steps.is_multiple_of(self.config.target_sync) {
            self.target = self.online.clone();
        }
        Ok(())
    }

    fn learn(&mut self, rng: &mut dyn RngCore) -> Result<f64> {
        let batch = self.buffer.sample(self.config.batch_size, rng);
        let scale = 1.0 / batch.len() as f64;
        let mut grads = self.online.zero_gradients();
        let mut loss = 0.0;
        for t in batch {
            let acts = self.online.forward_cached(&t.state)?;
            let q = acts.output()[t.action];
            let y = match &t.next {
                Some((next, valid)) if self.config.gamma > 0.0 => {
                    let qn = self.target.forward(next)?;
                    t.reward + self.config.gamma * qn[greedy(&qn, *valid)]
                }
                _ => t.reward,
            };
            let err = q - y;
            loss += 0.5 * err * err * scale;
            let mut upstream = vec![0.0; MAX_IMPRESSIONS];
            upstream[t.action] = err * scale;
            self.online.backward_into(&acts, &upstream, &mut grads)?;
        }
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged {
                step: self.steps,
                detail: format!("temporal-difference loss {loss}"),
            });
        }
        self.online.apply_gradients(
            &grads,
            self.config.learning_rate,
            Some(self.config.grad_clip),
        );
        if !self.online.is_finite() {
            return Err(Error::Diverged {
                step: self.steps,
                detail: "non-finite network parameters".into(),
            });
        }
        Ok(loss)
    }

    pub fn finish(self) -> Result<(DqnAgent, TrainReport)> {
        Ok((DqnAgent::new(self.online), self.report))
    }
}

pub fn dqn_train(
    env: &mut ReplayEnv,
    config: &AgentConfig,
    rng: &mut dyn RngCore,
) -> Result<(DqnAgent, TrainReport)> {
    let mut trainer = DqnTrainer::new(env, config, rng)?;
    for _ in 0..config.train_steps {
        trainer.step(env, rng)?;
    }
    trainer.finish()
}
