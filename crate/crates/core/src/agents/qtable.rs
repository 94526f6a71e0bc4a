use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Agent, AgentConfig, TrainReport};
use crate::env::{Action, ActionForm, ReplayEnv};
use crate::error::{Error, Result};
use crate::ingest::MAX_IMPRESSIONS;
use crate::state::EnvState;

/// Action values per discrete state. Missing entries read as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QTableRepr", into = "QTableRepr")]
pub struct QTable {
    n_actions: usize,
    values: BTreeMap<usize, Vec<f64>>,
}

// Rows are stored as a list so the table also survives formats (and
// tagged enums) that cannot carry integer map keys.
#[derive(Serialize, Deserialize)]
struct QTableRepr {
    n_actions: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

impl TryFrom<QTableRepr> for QTable {
    type Error = Error;

    fn try_from(r: QTableRepr) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (state, row) in r.rows {
            if row.len() != r.n_actions {
                return Err(Error::Shape {
                    context: "q-table row",
                    expected: r.n_actions,
                    actual: row.len(),
                });
            }
            if values.insert(state, row).is_some() {
                return Err(Error::data(format!("q-table lists state {state} twice")));
            }
        }
        Ok(QTable {
            n_actions: r.n_actions,
            values,
        })
    }
}

impl From<QTable> for QTableRepr {
    fn from(t: QTable) -> Self {
        QTableRepr {
            n_actions: t.n_actions,
            rows: t.values.into_iter().collect(),
        }
    }
}

impl QTable {
    pub fn new(n_actions: usize) -> Self {
        QTable {
            n_actions,
            values: BTreeMap::new(),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values.get(&state).map_or(0.0, |r| r[action])
    }

    pub fn row(&self, state: usize) -> Option<&[f64]> {
        self.values.get(&state).map(Vec::as_slice)
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        let n = self.n_actions;
        self.values.entry(state).or_insert_with(|| vec![0.0; n])[action] = value;
    }

    pub fn states(&self) -> impl Iterator<Item = usize> + '_ {
        self.values.keys().copied()
    }

    /// Highest-valued valid action; ties go to the lowest index.
    pub fn best_action(&self, state: usize, valid: impl Fn(usize) -> bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for a in (0..self.n_actions).filter(|&a| valid(a)) {
            let v = self.get(state, a);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((a, v));
            }
        }
        best.map(|(a, _)| a)
    }

    /// Max over valid actions, 0 when none are valid.
    pub fn max_value(&self, state: usize, valid: impl Fn(usize) -> bool) -> f64 {
        self.best_action(state, valid)
            .map_or(0.0, |a| self.get(state, a))
    }

    /// `Q(s,a) += alpha * (target - Q(s,a))`
    pub fn update(&mut self, state: usize, action: usize, target: f64, alpha: f64) {
        let q = self.get(state, action);
        self.set(state, action, q + alpha * (target - q));
    }
}

/// Tabular agent for the replay environment. The discrete state is the slot
/// touched by the most recent operation (25 when there is none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularAgent {
    pub table: QTable,
    #[serde(skip)]
    epsilon: f64,
}

impl TabularAgent {
    pub fn new(table: QTable) -> Self {
        TabularAgent {
            table,
            epsilon: 0.0,
        }
    }

    pub fn state_id(state: &EnvState) -> usize {
        state.memory.slot(0).unwrap_or(MAX_IMPRESSIONS)
    }

    fn choose(&self, state: &EnvState, eps: f64, rng: &mut dyn RngCore) -> usize {
        let n = state.num_candidates();
        if eps > 0.0 && rng.gen_bool(eps) {
            rng.gen_range(0..n)
        } else {
            self.table
                .best_action(Self::state_id(state), |a| a < n)
                .expect("at least one candidate")
        }
    }
}

impl Agent for TabularAgent {
    fn name(&self) -> &str {
        "qtable"
    }

    fn action_form(&self) -> ActionForm {
        ActionForm::SingleItem
    }

    fn act(&mut self, state: &EnvState, rng: &mut dyn RngCore) -> Result<Action> {
        Ok(Action::SingleItem(self.choose(state, self.epsilon, rng)))
    }
}

pub fn qtable_train(
    env: &mut ReplayEnv,
    config: &AgentConfig,
    rng: &mut dyn RngCore,
) -> Result<(TabularAgent, TrainReport)> {
    config.validate()?;
    let mut agent = TabularAgent::new(QTable::new(MAX_IMPRESSIONS));
    let mut report = TrainReport::new();
    let mut state = env.reset()?;
    report.episodes = 1;
    for step in 0..config.train_steps {
        let eps = config.epsilon.value(step, config.train_steps);
        let a = agent.choose(&state, eps, rng);
        report.slot_histogram[a] += 1;
        let out = env.step(&Action::SingleItem(a))?;
        let s = TabularAgent::state_id(&state);
        let target = match &out.next_state {
            Some(next) => {
                let n = next.num_candidates();
                out.reward
                    + config.gamma
                        * agent
                            .table
                            .max_value(TabularAgent::state_id(next), |b| b < n)
            }
            None => out.reward,
        };
        agent.table.update(s, a, target, config.q_alpha);
        if !agent.table.get(s, a).is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("Q({s}, {a}) is not finite"),
            });
        }
        report.rewards.push(out.reward);
        state = match out.next_state {
            Some(next) => next,
            None => {
                report.episodes += 1;
                env.reset()?
            }
        };
    }
    Ok((agent, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_entries_read_zero() {
        let q = QTable::new(4);
        assert_eq!(q.get(17, 3), 0.0);
        assert_eq!(q.best_action(17, |_| true), Some(0));
        assert_eq!(q.max_value(17, |_| false), 0.0);
    }

    #[test]
    fn best_action_respects_mask_and_ties() {
        let mut q = QTable::new(4);
        q.set(0, 1, 2.0);
        q.set(0, 3, 2.0);
        assert_eq!(q.best_action(0, |_| true), Some(1));
        assert_eq!(q.best_action(0, |a| a != 1), Some(3));
        q.update(0, 2, 10.0, 0.5);
        assert_eq!(q.get(0, 2), 5.0);
    }
}
