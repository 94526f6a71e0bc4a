//! Encoding of a session prefix into the environment state.
//!
//! A state has four blocks:
//!
//! * memory: a `20 x 25` one-hot block. Row `r` marks which impression slot
//!   the `(r+1)`-th most recent operation cluster touched.
//! * candidates: a `25 x (F+2)` block holding each impression's item features,
//!   zero rows for absent slots.
//! * user context: platform, device and filters as booleans.
//! * preference: an exponential moving average of the features of items the
//!   user interacted with.
//!
//! The flat vector concatenates them as `[memory rows, candidate rows, user, preference]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ContextVocab, ItemCatalog, SessionEvent, MAX_IMPRESSIONS};

/// Number of operation clusters remembered.
pub const MEMORY_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationCluster {
    pub reference: String,
    pub first_step: u32,
    pub len: usize,
}

/// Collapses maximal runs of item-directed events that share a reference.
/// Events whose reference is not an item id are ignored and do not break runs.
pub fn compress_consecutive(events: &[SessionEvent]) -> Vec<OperationCluster> {
    let mut out: Vec<OperationCluster> = Vec::new();
    for ev in events.iter().filter(|e| e.action_type.is_item_directed()) {
        match out.last_mut() {
            Some(last) if last.reference == ev.reference => last.len += 1,
            _ => out.push(OperationCluster {
                reference: ev.reference.clone(),
                first_step: ev.step,
                len: 1,
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBlock {
    rows: [[u8; MAX_IMPRESSIONS]; MEMORY_LEN],
}

impl Default for MemoryBlock {
    fn default() -> Self {
        MemoryBlock {
            rows: [[0; MAX_IMPRESSIONS]; MEMORY_LEN],
        }
    }
}

impl MemoryBlock {
    pub fn rows(&self) -> &[[u8; MAX_IMPRESSIONS]; MEMORY_LEN] {
        &self.rows
    }

    /// Slot marked in row `r`, if any.
    pub fn slot(&self, r: usize) -> Option<usize> {
        self.rows[r].iter().position(|&v| v == 1)
    }

    pub fn ones(&self) -> usize {
        self.rows.iter().flatten().map(|&v| v as usize).sum()
    }
}

/// Most recent cluster first: cluster `j` from the end sets row `j` at the
/// slot of its reference in `impressions`. Clusters whose item is not shown
/// leave their row zero but still consume it.
pub fn encode_memory(clusters: &[OperationCluster], impressions: &[String]) -> MemoryBlock {
    let mut block = MemoryBlock::default();
    for (row, cluster) in clusters.iter().rev().take(MEMORY_LEN).enumerate() {
        if let Some(slot) = impressions
            .iter()
            .take(MAX_IMPRESSIONS)
            .position(|id| *id == cluster.reference)
        {
            block.rows[row][slot] = 1;
        }
    }
    block
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PreferenceVector(pub Vec<f64>);

impl PreferenceVector {
    pub fn zeros(dim: usize) -> Self {
        PreferenceVector(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `(1 - alpha) * prev + alpha * item`, elementwise.
pub fn update_preference(
    prev: &PreferenceVector,
    item: &[f64],
    alpha: f64,
) -> Result<PreferenceVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!(
            "preference alpha {alpha} outside [0, 1]"
        )));
    }
    if prev.0.len() != item.len() {
        return Err(Error::Shape {
            context: "preference update",
            expected: prev.0.len(),
            actual: item.len(),
        });
    }
    Ok(PreferenceVector(
        prev.0
            .iter()
            .zip(item)
            .map(|(p, i)| (1.0 - alpha) * p + alpha * i)
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateBlock {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl CandidateBlock {
    pub fn new(dim: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() > MAX_IMPRESSIONS {
            return Err(Error::Shape {
                context: "candidate rows",
                expected: MAX_IMPRESSIONS,
                actual: rows.len(),
            });
        }
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Shape {
                context: "candidate features",
                expected: dim,
                actual: r.len(),
            });
        }
        let mut rows = rows;
        rows.resize(MAX_IMPRESSIONS, vec![0.0; dim]);
        Ok(CandidateBlock { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Always 25 rows; rows past the impression list are zero.
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, slot: usize) -> &[f64] {
        &self.rows[slot]
    }
}

/// Which blocks an agent consumes from the flat state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateView {
    pub memory: bool,
    pub candidates: bool,
    pub user: bool,
    pub preference: bool,
}

impl Default for StateView {
    fn default() -> Self {
        StateView {
            memory: true,
            candidates: true,
            user: true,
            preference: true,
        }
    }
}

impl StateView {
    pub fn dim(&self, feature_dim: usize, context_len: usize) -> usize {
        let mut d = 0;
        if self.memory {
            d += MEMORY_LEN * MAX_IMPRESSIONS;
        }
        if self.candidates {
            d += MAX_IMPRESSIONS * feature_dim;
        }
        if self.user {
            d += context_len;
        }
        if self.preference {
            d += feature_dim;
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub session_id: String,
    pub user_id: String,
    /// Step of the clickout this state precedes.
    pub step: u32,
    pub user_context: Vec<f64>,
    pub preference: PreferenceVector,
    pub candidates: CandidateBlock,
    pub memory: MemoryBlock,
    /// Impression ids in display order.
    pub candidate_ids: Vec<String>,
    /// Operation-cluster references, oldest first.
    pub history: Vec<String>,
    /// Impressions missing from the catalog (encoded as zero rows).
    pub missing_items: usize,
}

impl EnvState {
    pub fn num_candidates(&self) -> usize {
        self.candidate_ids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.candidates.dim()
    }

    /// Full concatenation `[memory, candidates, user, preference]`.
    pub fn flat(&self) -> Vec<f64> {
        self.view(StateView::default())
    }

    pub fn view(&self, view: StateView) -> Vec<f64> {
        let mut out = Vec::with_capacity(view.dim(self.feature_dim(), self.user_context.len()));
        if view.memory {
            out.extend(self.memory.rows.iter().flatten().map(|&v| v as f64));
        }
        if view.candidates {
            for r in self.candidates.rows() {
                out.extend_from_slice(r);
            }
        }
        if view.user {
            out.extend_from_slice(&self.user_context);
        }
        if view.preference {
            out.extend_from_slice(self.preference.as_slice());
        }
        out
    }
}

/// Encodes the state seen at `clickout` given the events before it.
///
/// The preference starts at zero and takes one moving-average step per
/// operation cluster, oldest first; clusters on items absent from the
/// catalog are skipped.
pub fn build_state(
    prefix: &[SessionEvent],
    clickout: &SessionEvent,
    catalog: &ItemCatalog,
    context: &ContextVocab,
    alpha: f64,
) -> Result<EnvState> {
    if clickout.impressions.is_empty() {
        return Err(Error::data(format!(
            "session {} step {}: state requested for an event without impressions",
            clickout.session_id, clickout.step
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!(
            "preference alpha {alpha} outside [0, 1]"
        )));
    }
    let dim = catalog.feature_dim();
    let clusters = compress_consecutive(prefix);

    let mut preference = PreferenceVector::zeros(dim);
    for c in &clusters {
        if let Some(f) = catalog.features(&c.reference) {
            preference = update_preference(&preference, f, alpha)?;
        }
    }

    let impressions = &clickout.impressions[..clickout.impressions.len().min(MAX_IMPRESSIONS)];
    let mut missing_items = 0;
    let rows = impressions
        .iter()
        .map(|id| match catalog.features(id) {
            Some(f) => f.to_vec(),
            None => {
                missing_items += 1;
                vec![0.0; dim]
            }
        })
        .collect();

    Ok(EnvState {
        session_id: clickout.session_id.clone(),
        user_id: clickout.user_id.clone(),
        step: clickout.step,
        user_context: context.encode(clickout),
        preference,
        candidates: CandidateBlock::new(dim, rows)?,
        memory: encode_memory(&clusters, impressions),
        candidate_ids: impressions.to_vec(),
        history: clusters.into_iter().map(|c| c.reference).collect(),
        missing_items,
    })
}
