//! REINFORCE over ranked lists.
//!
//! The policy network scores every slot. During training a ranking is drawn
//! by sorting Gumbel-perturbed scores, which samples from the Plackett-Luce
//! distribution over permutations; the update follows
//! `(reward - baseline) * grad log P(ranking)` with a moving-average reward
//! baseline, differentiating only the placements down to the true item. At
//! evaluation time slots are sorted by their raw scores.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Agent, AgentConfig, Gradients, SlotScorer, TrainReport};
use crate::env::{Action, ActionForm, ReplayEnv};
use crate::error::{Error, Result};
use crate::ingest::MAX_IMPRESSIONS;
use crate::state::EnvState;

/// Slots sorted by descending score, equal scores in slot order.
fn sort_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

fn gumbel_ranking(scores: &[f64], rng: &mut dyn RngCore) -> Vec<usize> {
    let noisy: Vec<f64> = scores
        .iter()
        .map(|s| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            s - (-u.ln()).ln()
        })
        .collect();
    sort_desc(&noisy)
}

/// Log-probability of `ranking` under Plackett-Luce with logits `scores`.
pub fn plackett_luce_log_prob(scores: &[f64], ranking: &[usize]) -> f64 {
    let mut lp = 0.0;
    for j in 0..ranking.len() {
        let rest = &ranking[j..];
        let m = rest
            .iter()
            .map(|&k| scores[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = m + rest
            .iter()
            .map(|&k| (scores[k] - m).exp())
            .sum::<f64>()
            .ln();
        lp += scores[ranking[j]] - lse;
    }
    lp
}

/// Gradient of [`plackett_luce_log_prob`] with respect to the scores.
pub fn plackett_luce_grad(scores: &[f64], ranking: &[usize]) -> Vec<f64> {
    plackett_luce_prefix_grad(scores, ranking, ranking.len())
}

/// Gradient of the log-probability of the first `depth` placements of
/// `ranking`. Placements after the true item cannot change the reciprocal
/// rank, so the trainer differentiates only up to that depth, which keeps
/// the estimator unbiased and removes most of its variance.
pub fn plackett_luce_prefix_grad(scores: &[f64], ranking: &[usize], depth: usize) -> Vec<f64> {
    let mut g = vec![0.0; scores.len()];
    for j in 0..depth.min(ranking.len()) {
        let rest = &ranking[j..];
        let m = rest
            .iter()
            .map(|&k| scores[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = rest.iter().map(|&k| (scores[k] - m).exp()).sum();
        g[ranking[j]] += 1.0;
        for &k in rest {
            g[k] -= (scores[k] - m).exp() / z;
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinforceAgent {
    pub scorer: SlotScorer,
    #[serde(skip)]
    explore: bool,
}

impl ReinforceAgent {
    pub fn new(scorer: SlotScorer) -> Self {
        ReinforceAgent {
            scorer,
            explore: false,
        }
    }

    /// Sample rankings instead of sorting deterministically.
    pub fn exploring(mut self, explore: bool) -> Self {
        self.explore = explore;
        self
    }

    pub fn scores(&self, state: &EnvState) -> Result<Vec<f64>> {
        let mut s = self.scorer.scores(state)?;
        s.truncate(state.num_candidates());
        Ok(s)
    }
}

impl Agent for ReinforceAgent {
    fn name(&self) -> &str {
        "reinforce"
    }

    fn action_form(&self) -> ActionForm {
        ActionForm::RankedList
    }

    fn act(&mut self, state: &EnvState, rng: &mut dyn RngCore) -> Result<Action> {
        let scores = self.scores(state)?;
        let ranking = if self.explore {
            gumbel_ranking(&scores, rng)
        } else {
            sort_desc(&scores)
        };
        Ok(Action::RankedList(ranking))
    }
}

pub struct ReinforceTrainer {
    scorer: SlotScorer,
    config: AgentConfig,
    baseline: Option<f64>,
    grads: Gradients,
    pending: usize,
    steps: u64,
    current: Option<EnvState>,
    report: TrainReport,
}

impl ReinforceTrainer {
    pub fn new(env: &ReplayEnv, config: &AgentConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let scorer = SlotScorer::random(
            config.scorer,
            config.view,
            &config.hidden,
            env.feature_dim(),
            env.context_len(),
            rng,
        )?;
        Ok(ReinforceTrainer {
            grads: scorer.zero_gradients(),
            scorer,
            config: config.clone(),
            baseline: None,
            pending: 0,
            steps: 0,
            current: None,
            report: TrainReport::new(),
        })
    }

    pub fn scorer(&self) -> &SlotScorer {
        &self.scorer
    }

    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn step(&mut self, env: &mut ReplayEnv, rng: &mut dyn RngCore) -> Result<()> {
        let state = match self.current.take() {
            Some(s) => s,
            None => {
                self.report.episodes += 1;
                env.reset()?
            }
        };
        let n = state.num_candidates();
        let acts = self.scorer.forward_cached(&self.scorer.encode(&state))?;
        let scores = &acts.output()[..n];
        let ranking = gumbel_ranking(scores, rng);
        self.report.slot_histogram[ranking[0]] += 1;
        let out = env.step(&Action::RankedList(ranking.clone()))?;
        let reward = out.reward;
        self.report.rewards.push(reward);
        self.current = out.next_state;

        let baseline = *self.baseline.get_or_insert(reward);
        let advantage = reward - baseline;
        if advantage != 0.0 {
            let depth = out.rank.unwrap_or(ranking.len());
            let g = plackett_luce_prefix_grad(scores, &ranking, depth);
            let mut upstream = vec![0.0; MAX_IMPRESSIONS];
            // descend on -advantage * log P
            for (u, gk) in upstream.iter_mut().zip(&g) {
                *u = -advantage * gk;
            }
            self.scorer
                .backward_into(&acts, &upstream, &mut self.grads)?;
        }
        let d = self.config.baseline_decay;
        self.baseline = Some(d * baseline + (1.0 - d) * reward);
        self.pending += 1;
        self.steps += 1;

        if self.pending == self.config.batch_size {
            self.grads.scale(1.0 / self.pending as f64);
            if !self.grads.is_finite() {
                return Err(Error::Diverged {
                    step: self.steps,
                    detail: "non-finite policy gradient".into(),
                });
            }
            self.scorer.apply_gradients(
                &self.grads,
                self.config.learning_rate,
                Some(self.config.grad_clip),
            );
            if !self.scorer.is_finite() {
                return Err(Error::Diverged {
                    step: self.steps,
                    detail: "non-finite policy parameters".into(),
                });
            }
            self.grads = self.scorer.zero_gradients();
            self.pending = 0;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(ReinforceAgent, TrainReport)> {
        Ok((ReinforceAgent::new(self.scorer), self.report))
    }
}

pub fn reinforce_train(
    env: &mut ReplayEnv,
    config: &AgentConfig,
    rng: &mut dyn RngCore,
) -> Result<(ReinforceAgent, TrainReport)> {
    let mut trainer = ReinforceTrainer::new(env, config, rng)?;
    for _ in 0..config.train_steps {
        trainer.step(env, rng)?;
    }
    trainer.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pl_gradient_matches_finite_differences() {
        let scores = [0.3, -1.2, 0.8, 0.0, 2.1];
        let ranking = [2, 4, 0, 3, 1];
        let g = plackett_luce_grad(&scores, &ranking);
        let h = 1e-6;
        for k in 0..scores.len() {
            let mut up = scores;
            up[k] += h;
            let mut dn = scores;
            dn[k] -= h;
            let fd = (plackett_luce_log_prob(&up, &ranking)
                - plackett_luce_log_prob(&dn, &ranking))
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7, "slot {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn pl_probabilities_sum_to_one() {
        let scores = [0.5, -0.3, 1.0];
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let total: f64 = perms
            .iter()
            .map(|p| plackett_luce_log_prob(&scores, p).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn score_function_has_zero_mean() {
        // E[grad log P] = 0, so a constant reward minus its own baseline
        // carries no expected signal.
        let scores = [0.4, -0.1, 1.3, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let mut mean = [0.0; 4];
        for _ in 0..n {
            let r = gumbel_ranking(&scores, &mut rng);
            for (m, g) in mean.iter_mut().zip(plackett_luce_grad(&scores, &r)) {
                *m += g / n as f64;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 0.01), "{mean:?}");
    }

    #[test]
    fn gumbel_sampling_matches_first_choice_softmax() {
        let scores = [1.0, 0.0, -1.0];
        let z: f64 = scores.iter().map(|s: &f64| s.exp()).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut first = [0usize; 3];
        for _ in 0..n {
            first[gumbel_ranking(&scores, &mut rng)[0]] += 1;
        }
        for k in 0..3 {
            let p = scores[k].exp() / z;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((first[k] as f64 / n as f64 - p).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn deterministic_sort_is_stable() {
        assert_eq!(sort_desc(&[1.0, 2.0, 1.0, 3.0]), vec![3, 1, 0, 2]);
    }
}
