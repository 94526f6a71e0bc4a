//! Agents for the replay environment: DQN over a small MLP, REINFORCE over
//! ranked lists, tabular Q-learning, and random / popularity / collaborative
//! filtering baselines.

mod baselines;
mod dqn;
mod mlp;
mod model;
mod qtable;
mod reinforce;
mod replay;
mod scorer;

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use baselines::{CfAgent, CfModel, OracleAgent, PopularityAgent, RandomAgent};
pub use dqn::{dqn_train, DqnAgent, DqnTrainer};
pub use mlp::{Activations, Gradients, Mlp};
pub use model::{ModelFile, SavedModel, MODEL_VERSION};
pub use qtable::{qtable_train, QTable, TabularAgent};
pub use reinforce::{
    plackett_luce_grad, plackett_luce_log_prob, plackett_luce_prefix_grad, reinforce_train,
    ReinforceAgent, ReinforceTrainer,
};
pub use replay::{ReplayBuffer, Transition};
pub use scorer::{slot_input_dim, ScorerActivations, ScorerLayout, SlotScorer};

use crate::env::{Action, ActionForm};
use crate::error::{Error, Result};
use crate::state::{EnvState, StateView};

/// Anything that maps a state to an action.
pub trait Agent {
    fn name(&self) -> &str;
    fn action_form(&self) -> ActionForm;
    fn act(&mut self, state: &EnvState, rng: &mut dyn RngCore) -> Result<Action>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Random,
    Popularity,
    Cf,
    Qtable,
    Dqn,
    Reinforce,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Random => "random",
            AgentKind::Popularity => "popularity",
            AgentKind::Cf => "cf",
            AgentKind::Qtable => "qtable",
            AgentKind::Dqn => "dqn",
            AgentKind::Reinforce => "reinforce",
        }
    }

    pub fn is_trainable(self) -> bool {
        matches!(
            self,
            AgentKind::Qtable | AgentKind::Dqn | AgentKind::Reinforce
        )
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(AgentKind::Random),
            "popularity" => Ok(AgentKind::Popularity),
            "cf" => Ok(AgentKind::Cf),
            "qtable" => Ok(AgentKind::Qtable),
            "dqn" => Ok(AgentKind::Dqn),
            "reinforce" => Ok(AgentKind::Reinforce),
            _ => Err(Error::config(format!("unknown agent {s:?}"))),
        }
    }
}

/// Linear exploration schedule from `start` to `end` over `decay_steps`.
/// `decay_steps = None` means half of the training budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: Option<u64>,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_steps: None,
        }
    }
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        EpsilonSchedule {
            start: eps,
            end: eps,
            decay_steps: Some(1),
        }
    }

    pub fn value(&self, step: u64, budget: u64) -> f64 {
        let decay = self.decay_steps.unwrap_or(budget / 2).max(1);
        if step >= decay {
            self.end
        } else {
            self.start + (self.end - self.start) * step as f64 / decay as f64
        }
    }
}

/// Hyper-parameters shared by the learning agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Step size for gradient updates.
    pub learning_rate: f64,
    /// Step size of the tabular update.
    pub q_alpha: f64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub batch_size: usize,
    pub target_sync: u64,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub learning_starts: usize,
    pub train_steps: u64,
    pub train_every: u64,
    pub grad_clip: f64,
    /// Decay of the moving-average reward baseline.
    pub baseline_decay: f64,
    pub view: StateView,
    /// Whether one network scores the whole state or each slot separately.
    pub scorer: ScorerLayout,
    /// Window of the moving-average reward trace.
    pub window: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            learning_rate: 0.01,
            q_alpha: 0.1,
            gamma: 0.9,
            epsilon: EpsilonSchedule::default(),
            batch_size: 32,
            target_sync: 500,
            hidden: vec![256, 128],
            buffer_capacity: 5000,
            learning_starts: 32,
            train_steps: 30_000,
            train_every: 1,
            grad_clip: 10.0,
            baseline_decay: 0.99,
            view: StateView::default(),
            scorer: ScorerLayout::Flat,
            window: 1500,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("epsilon.start", self.epsilon.start)?;
        unit("epsilon.end", self.epsilon.end)?;
        unit("q_alpha", self.q_alpha)?;
        unit("baseline_decay", self.baseline_decay)?;
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(
                "learning_rate must be finite and non-negative",
            ));
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return Err(Error::config("grad_clip must be positive"));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::config(
                "need batch_size >= 1 and buffer_capacity >= batch_size",
            ));
        }
        if self.target_sync == 0 || self.train_every == 0 || self.window == 0 {
            return Err(Error::config(
                "target_sync, train_every and window must be positive",
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        Ok(())
    }
}

/// Per-step training record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rewards: Vec<f64>,
    pub losses: Vec<f64>,
    /// How often each slot was chosen (or ranked first).
    pub slot_histogram: Vec<u64>,
    pub episodes: u64,
}

impl TrainReport {
    fn new() -> Self {
        TrainReport {
            slot_histogram: vec![0; crate::ingest::MAX_IMPRESSIONS],
            ..TrainReport::default()
        }
    }
}
