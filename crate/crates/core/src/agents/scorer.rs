//! Slot scorers: an [`Mlp`] plus the rule that turns a state into 25 slot
//! scores.
//!
//! `Flat` feeds the whole state view to one network with 25 outputs.
//! `Shared` applies one single-output network to every slot, whose input
//! is that slot's memory column and candidate row followed by the
//! slot-independent user context and preference blocks. Padding slots get
//! zero rows either way; callers mask them by the candidate count.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{Activations, Gradients, Mlp};
use crate::error::{Error, Result};
use crate::ingest::MAX_IMPRESSIONS;
use crate::state::{EnvState, StateView, MEMORY_LEN};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerLayout {
    #[default]
    Flat,
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotScorer {
    pub layout: ScorerLayout,
    pub view: StateView,
    pub network: Mlp,
}

/// Cached forward passes, one per slot for the shared layout.
#[derive(Debug, Clone)]
pub struct ScorerActivations {
    passes: Vec<Activations>,
    output: Vec<f64>,
}

impl ScorerActivations {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Per-slot input width of the shared layout.
pub fn slot_input_dim(view: StateView, feature_dim: usize, context_len: usize) -> usize {
    let mut d = 0;
    if view.memory {
        d += MEMORY_LEN;
    }
    if view.candidates {
        d += feature_dim;
    }
    if view.user {
        d += context_len;
    }
    if view.preference {
        d += feature_dim;
    }
    d
}

impl SlotScorer {
    pub fn new(layout: ScorerLayout, view: StateView, network: Mlp) -> Result<Self> {
        let expected = match layout {
            ScorerLayout::Flat => MAX_IMPRESSIONS,
            ScorerLayout::Shared => 1,
        };
        if network.output_dim() != expected {
            return Err(Error::Shape {
                context: "scorer output",
                expected,
                actual: network.output_dim(),
            });
        }
        Ok(SlotScorer {
            layout,
            view,
            network,
        })
    }

    /// He-initialized scorer for states with the given block sizes.
    pub fn random(
        layout: ScorerLayout,
        view: StateView,
        hidden: &[usize],
        feature_dim: usize,
        context_len: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let (input, output) = match layout {
            ScorerLayout::Flat => (view.dim(feature_dim, context_len), MAX_IMPRESSIONS),
            ScorerLayout::Shared => (slot_input_dim(view, feature_dim, context_len), 1),
        };
        let mut sizes = vec![input];
        sizes.extend(hidden);
        sizes.push(output);
        SlotScorer::new(layout, view, Mlp::random(&sizes, rng)?)
    }

    /// Network input for `state`: the flat view, or 25 per-slot rows laid
    /// end to end.
    pub fn encode(&self, state: &EnvState) -> Vec<f64> {
        match self.layout {
            ScorerLayout::Flat => state.view(self.view),
            ScorerLayout::Shared => {
                let d = self.network.input_dim();
                let mut out = Vec::with_capacity(d * MAX_IMPRESSIONS);
                for k in 0..MAX_IMPRESSIONS {
                    if self.view.memory {
                        out.extend(state.memory.rows().iter().map(|r| r[k] as f64));
                    }
                    if self.view.candidates {
                        match state.candidates.rows().get(k) {
                            Some(row) => out.extend_from_slice(row),
                            None => out.extend(std::iter::repeat_n(0.0, state.feature_dim())),
                        }
                    }
                    if self.view.user {
                        out.extend_from_slice(&state.user_context);
                    }
                    if self.view.preference {
                        out.extend_from_slice(state.preference.as_slice());
                    }
                }
                out
            }
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<usize> {
        let d = self.network.input_dim();
        let expected = match self.layout {
            ScorerLayout::Flat => d,
            ScorerLayout::Shared => d * MAX_IMPRESSIONS,
        };
        if x.len() != expected {
            return Err(Error::Shape {
                context: "scorer input",
                expected,
                actual: x.len(),
            });
        }
        Ok(d)
    }

    /// 25 slot scores for an encoded state.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.check_input(x)?;
        match self.layout {
            ScorerLayout::Flat => self.network.forward(x),
            ScorerLayout::Shared => x
                .chunks(d)
                .map(|row| Ok(self.network.forward(row)?[0]))
                .collect(),
        }
    }

    pub fn scores(&self, state: &EnvState) -> Result<Vec<f64>> {
        self.forward(&self.encode(state))
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ScorerActivations> {
        let d = self.check_input(x)?;
        let passes = match self.layout {
            ScorerLayout::Flat => vec![self.network.forward_cached(x)?],
            ScorerLayout::Shared => x
                .chunks(d)
                .map(|row| self.network.forward_cached(row))
                .collect::<Result<_>>()?,
        };
        let output = match self.layout {
            ScorerLayout::Flat => passes[0].output().to_vec(),
            ScorerLayout::Shared => passes.iter().map(|a| a.output()[0]).collect(),
        };
        Ok(ScorerActivations { passes, output })
    }

    /// Accumulates the parameter gradient for `upstream` = d loss / d scores.
    pub fn backward_into(
        &self,
        acts: &ScorerActivations,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        if upstream.len() != MAX_IMPRESSIONS {
            return Err(Error::Shape {
                context: "upstream gradient",
                expected: MAX_IMPRESSIONS,
                actual: upstream.len(),
            });
        }
        match self.layout {
            ScorerLayout::Flat => self.network.backward_into(&acts.passes[0], upstream, grads),
            ScorerLayout::Shared => {
                for (a, &u) in acts.passes.iter().zip(upstream) {
                    if u != 0.0 {
                        self.network.backward_into(a, &[u], grads)?;
                    }
                }
                Ok(())
            }
        }
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.network.zero_gradients()
    }

    pub fn apply_gradients(&mut self, grads: &Gradients, step: f64, clip: Option<f64>) {
        self.network.apply_gradients(grads, step, clip);
    }

    pub fn is_finite(&self) -> bool {
        self.network.is_finite()
    }
}
