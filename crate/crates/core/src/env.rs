//! Offline replay environment over logged sessions.
//!
//! An episode is one session and a step is one of its clickouts. The agent
//! sees the encoded state before the clickout, proposes an action, and is
//! rewarded against the item the user actually clicked. Transitions come from
//! the log alone: the agent's action never changes what happens next.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::Agent;
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::state::{build_state, EnvState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Index of one impression slot.
    SingleItem(usize),
    /// Slots ordered from most to least likely.
    RankedList(Vec<usize>),
    /// Preference vector scored against each candidate's features.
    Preference(Vec<f64>),
}

impl Action {
    pub fn form(&self) -> ActionForm {
        match self {
            Action::SingleItem(_) => ActionForm::SingleItem,
            Action::RankedList(_) => ActionForm::RankedList,
            Action::Preference(_) => ActionForm::Preference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionForm {
    SingleItem,
    RankedList,
    Preference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ctr,
    Mrr,
}

impl Metric {
    pub fn supports(self, form: ActionForm) -> bool {
        match self {
            Metric::Ctr => form == ActionForm::SingleItem,
            Metric::Mrr => form != ActionForm::SingleItem,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ctr => "ctr",
            Metric::Mrr => "mrr",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ctr" => Ok(Metric::Ctr),
            "mrr" => Ok(Metric::Mrr),
            _ => Err(Error::config(format!("unknown metric {s:?}"))),
        }
    }
}

/// Rank of the true slot (1-based) when `scores` are sorted descending,
/// equal scores keeping impression order.
pub fn stable_rank(scores: &[f64], true_slot: usize) -> usize {
    let t = scores[true_slot];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(k, &s)| s > t || (s == t && k < true_slot))
        .count()
}

/// Scores an action against the clicked slot. `candidates` holds the
/// feature rows of the shown impressions only.
///
/// Single items earn the click indicator and carry no rank. Ranked lists and
/// preference vectors earn `1 / rank` of the true item; slots beyond the
/// shown list are ignored when ranking.
pub fn reward_for(
    action: &Action,
    true_slot: usize,
    candidates: &[Vec<f64>],
) -> Result<(f64, Option<usize>)> {
    let len = candidates.len();
    if true_slot >= len {
        return Err(Error::data(format!(
            "true slot {true_slot} outside {len} candidates"
        )));
    }
    match action {
        Action::SingleItem(k) => {
            if *k >= len {
                return Err(Error::InvalidAction(format!(
                    "slot {k} with {len} candidates"
                )));
            }
            Ok((if *k == true_slot { 1.0 } else { 0.0 }, None))
        }
        Action::RankedList(order) => {
            if order.len() != len && order.len() != crate::ingest::MAX_IMPRESSIONS {
                return Err(Error::InvalidAction(format!(
                    "ranked list of length {} for {len} candidates",
                    order.len()
                )));
            }
            let mut seen = vec![false; order.len()];
            for &k in order {
                if k >= order.len() || std::mem::replace(&mut seen[k], true) {
                    return Err(Error::InvalidAction(
                        "ranked list is not a permutation".into(),
                    ));
                }
            }
            let rank = 1 + order
                .iter()
                .take_while(|&&k| k != true_slot)
                .filter(|&&k| k < len)
                .count();
            Ok((1.0 / rank as f64, Some(rank)))
        }
        Action::Preference(u) => {
            let dim = candidates[0].len();
            if u.len() != dim {
                return Err(Error::Shape {
                    context: "preference action",
                    expected: dim,
                    actual: u.len(),
                });
            }
            let scores: Vec<f64> = candidates
                .iter()
                .map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum())
                .collect();
            if scores.iter().any(|s: &f64| s.is_nan()) {
                return Err(Error::InvalidAction(
                    "preference produced NaN scores".into(),
                ));
            }
            let rank = stable_rank(&scores, true_slot);
            Ok((1.0 / rank as f64, Some(rank)))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// State before the session's next answerable clickout, `None` when done.
    pub next_state: Option<EnvState>,
    pub reward: f64,
    pub done: bool,
    /// 1-based rank of the true item for ranking actions.
    pub rank: Option<usize>,
    pub true_slot: usize,
}

/// Uniform session sampler with its own RNG stream.
#[derive(Debug, Clone)]
pub struct EpisodeSampler {
    rng: ChaCha8Rng,
    eligible: Vec<usize>,
}

impl EpisodeSampler {
    pub fn new(eligible: Vec<usize>, seed: u64) -> Self {
        EpisodeSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            eligible,
        }
    }

    pub fn sample(&mut self) -> Option<usize> {
        if self.eligible.is_empty() {
            None
        } else {
            Some(self.eligible[self.rng.gen_range(0..self.eligible.len())])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Preference moving-average rate.
    pub alpha: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { alpha: 0.5 }
    }
}

#[derive(Debug, Clone)]
struct Episode {
    session: usize,
    cursor: usize,
}

/// One environment instance; single-threaded. Several instances may share
/// the dataset through the `Arc`.
#[derive(Debug, Clone)]
pub struct ReplayEnv {
    dataset: Arc<Dataset>,
    config: EnvConfig,
    sampler: EpisodeSampler,
    /// Per session: (event index, true slot) of every answerable clickout.
    answerable: Vec<Vec<(usize, usize)>>,
    skipped_clickouts: usize,
    episode: Option<Episode>,
}

impl ReplayEnv {
    pub fn new(dataset: Arc<Dataset>, config: EnvConfig, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.alpha) {
            return Err(Error::config(format!(
                "alpha {} outside [0, 1]",
                config.alpha
            )));
        }
        let mut skipped = 0;
        let answerable: Vec<Vec<(usize, usize)>> = dataset
            .sessions
            .iter()
            .map(|s| {
                s.clickout_indices()
                    .iter()
                    .filter_map(|&i| match s.events()[i].reference_slot() {
                        Some(slot) => Some((i, slot)),
                        None => {
                            skipped += 1;
                            None
                        }
                    })
                    .collect()
            })
            .collect();
        let eligible: Vec<usize> = answerable
            .iter()
            .enumerate()
            .filter(|(_, a)| !a.is_empty())
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() {
            return Err(Error::data("no session has an answerable clickout"));
        }
        Ok(ReplayEnv {
            sampler: EpisodeSampler::new(eligible, seed),
            dataset,
            config,
            answerable,
            skipped_clickouts: skipped,
            episode: None,
        })
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn feature_dim(&self) -> usize {
        self.dataset.catalog.feature_dim()
    }

    pub fn context_len(&self) -> usize {
        self.dataset.context.len()
    }

    /// Clickouts excluded because their clicked item was not among the impressions.
    pub fn skipped_clickouts(&self) -> usize {
        self.skipped_clickouts
    }

    pub fn eligible_sessions(&self) -> usize {
        self.sampler.eligible.len()
    }

    fn state_at(&self, session: usize, cursor: usize) -> Result<EnvState> {
        let s = &self.dataset.sessions[session];
        let (idx, _) = self.answerable[session][cursor];
        build_state(
            &s.events()[..idx],
            &s.events()[idx],
            &self.dataset.catalog,
            &self.dataset.context,
            self.config.alpha,
        )
    }

    /// Samples a session and returns the state at its first answerable clickout.
    pub fn reset(&mut self) -> Result<EnvState> {
        let session = self
            .sampler
            .sample()
            .ok_or_else(|| Error::data("empty dataset"))?;
        self.episode = Some(Episode { session, cursor: 0 });
        self.state_at(session, 0)
    }

    /// Clicked slot of the current clickout.
    pub fn true_slot(&self) -> Option<usize> {
        self.episode
            .as_ref()
            .map(|e| self.answerable[e.session][e.cursor].1)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        let ep = self
            .episode
            .clone()
            .ok_or_else(|| Error::InvalidAction("step called without an active episode".into()))?;
        let (idx, true_slot) = self.answerable[ep.session][ep.cursor];
        let ev = &self.dataset.sessions[ep.session].events()[idx];
        let len = ev.impressions.len().min(crate::ingest::MAX_IMPRESSIONS);
        let rows: Vec<Vec<f64>> = ev.impressions[..len]
            .iter()
            .map(|id| {
                self.dataset
                    .catalog
                    .features(id)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; self.feature_dim()])
            })
            .collect();
        let (reward, rank) = reward_for(action, true_slot, &rows)?;

        let next = ep.cursor + 1;
        let done = next >= self.answerable[ep.session].len();
        let next_state = if done {
            self.episode = None;
            None
        } else {
            self.episode = Some(Episode {
                session: ep.session,
                cursor: next,
            });
            Some(self.state_at(ep.session, next)?)
        };
        Ok(StepOutcome {
            next_state,
            reward,
            done,
            rank,
            true_slot,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metric: Metric,
    pub value: f64,
    pub episodes: usize,
    /// Per-step rewards in the order they were earned.
    pub rewards: Vec<f64>,
}

impl Evaluation {
    pub fn steps(&self) -> usize {
        self.rewards.len()
    }

    /// Standard error of the mean reward.
    pub fn std_error(&self) -> f64 {
        let n = self.rewards.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let var = self
            .rewards
            .iter()
            .map(|r| (r - self.value).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    }
}

/// Runs `episodes` full sessions and averages the per-step reward: the
/// click-through rate for single-item agents, mean reciprocal rank for
/// ranking agents.
pub fn evaluate(
    env: &mut ReplayEnv,
    agent: &mut dyn Agent,
    episodes: usize,
    metric: Metric,
    rng: &mut dyn RngCore,
) -> Result<Evaluation> {
    if !metric.supports(agent.action_form()) {
        return Err(Error::config(format!(
            "metric {metric} is not defined for {:?} agents",
            agent.action_form()
        )));
    }
    let mut rewards = Vec::new();
    for _ in 0..episodes {
        let mut state = env.reset()?;
        loop {
            let action = agent.act(&state, rng)?;
            let out = env.step(&action)?;
            rewards.push(out.reward);
            match out.next_state {
                Some(s) => state = s,
                None => break,
            }
        }
    }
    let value = if rewards.is_empty() {
        0.0
    } else {
        rewards.iter().sum::<f64>() / rewards.len() as f64
    };
    Ok(Evaluation {
        metric,
        value,
        episodes,
        rewards,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(scores: &[&[f64]]) -> Vec<Vec<f64>> {
        scores.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn single_item_indicator() {
        let c = rows(&[&[0.0], &[1.0], &[0.5]]);
        assert_eq!(
            reward_for(&Action::SingleItem(1), 1, &c).unwrap(),
            (1.0, None)
        );
        assert_eq!(
            reward_for(&Action::SingleItem(2), 1, &c).unwrap(),
            (0.0, None)
        );
        assert!(reward_for(&Action::SingleItem(3), 1, &c).is_err());
    }

    #[test]
    fn ranked_list_fifth_place_is_point_two() {
        let c = vec![vec![0.0]; 25];
        let order: Vec<usize> = vec![
            3, 1, 4, 0, 9, 2, 5, 6, 7, 8, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23,
            24,
        ];
        let (r, rank) = reward_for(&Action::RankedList(order), 9, &c).unwrap();
        assert_eq!(rank, Some(5));
        assert_eq!(r, 0.2);
    }

    #[test]
    fn ranked_list_first_place() {
        let c = vec![vec![0.0]; 4];
        assert_eq!(
            reward_for(&Action::RankedList(vec![2, 0, 1, 3]), 2, &c).unwrap(),
            (1.0, Some(1))
        );
    }

    #[test]
    fn ranked_list_over_short_impressions() {
        // 3 shown items, agent ranks all 25 slots; absent slots do not count
        let c = vec![vec![0.0]; 3];
        let mut order: Vec<usize> = (3..25).collect();
        order.extend([0, 1, 2]);
        let (r, rank) = reward_for(&Action::RankedList(order), 2, &c).unwrap();
        assert_eq!(rank, Some(3));
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ranked_list_must_be_permutation() {
        let c = vec![vec![0.0]; 3];
        assert!(reward_for(&Action::RankedList(vec![0, 0, 1]), 0, &c).is_err());
        assert!(reward_for(&Action::RankedList(vec![0, 1]), 0, &c).is_err());
        assert!(reward_for(&Action::RankedList(vec![0, 1, 3]), 0, &c).is_err());
    }

    #[test]
    fn preference_argmax_at_true_item() {
        // dot products with u' = [1, 2]: 1.0, 2.5, 0.5
        let c = rows(&[&[1.0, 0.0], &[0.5, 1.0], &[0.5, 0.0]]);
        let (r, rank) = reward_for(&Action::Preference(vec![1.0, 2.0]), 1, &c).unwrap();
        assert_eq!((r, rank), (1.0, Some(1)));
        let (r, rank) = reward_for(&Action::Preference(vec![1.0, 2.0]), 2, &c).unwrap();
        assert_eq!(rank, Some(3));
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn preference_tie_keeps_impression_order() {
        // slots 0 and 2 tie at score 1; slot 1 scores 3
        let c = rows(&[&[1.0], &[3.0], &[1.0]]);
        let u = Action::Preference(vec![1.0]);
        assert_eq!(reward_for(&u, 0, &c).unwrap().1, Some(2));
        assert_eq!(reward_for(&u, 2, &c).unwrap().1, Some(3));
        assert!(matches!(
            reward_for(&Action::Preference(vec![1.0, 1.0]), 0, &c),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn metric_parsing_and_support() {
        assert_eq!("CTR".parse::<Metric>().unwrap(), Metric::Ctr);
        assert!("ndcg".parse::<Metric>().is_err());
        assert!(Metric::Ctr.supports(ActionForm::SingleItem));
        assert!(!Metric::Ctr.supports(ActionForm::RankedList));
        assert!(Metric::Mrr.supports(ActionForm::Preference));
        assert!(!Metric::Mrr.supports(ActionForm::SingleItem));
    }
}
