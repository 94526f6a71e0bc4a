use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::board::jaccard;
use super::mdp::{greedy_action, GridMdp};
use crate::agents::QTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ListFull,
    StartsExhausted,
}

/// Output of one recommendation session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationTrace {
    /// Item indices in the order they were added; no duplicates.
    pub items: Vec<usize>,
    /// Bicluster ids used as starting points.
    pub starts: Vec<usize>,
    /// Starts were drawn at random because the history was empty.
    pub random_starts: bool,
    pub reason: StopReason,
}

/// The `m` biclusters whose item sets are most similar to `history`
/// (sorted item indices), lowest id first on ties. With an empty history
/// the starts are drawn uniformly instead.
pub fn choose_starts<W: GridMdp + ?Sized, R: Rng + ?Sized>(
    world: &W,
    history: &[usize],
    m: usize,
    rng: &mut R,
) -> (Vec<usize>, bool) {
    let count = world.n_states();
    let m = m.min(count);
    if history.is_empty() {
        return (index::sample(rng, count, m).into_vec(), true);
    }
    let mut scored: Vec<(usize, f64)> = (0..count)
        .map(|id| (id, jaccard(world.items(world.state_of(id)), history)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    (
        scored.into_iter().take(m).map(|(id, _)| id).collect(),
        false,
    )
}

/// Walks the greedy policy from each start in turn, appending the items of
/// every state entered. A walk ends at the first state that adds nothing
/// new; the session ends once `n_items` items are listed or the starts run
/// out.
pub fn recommend<W: GridMdp + ?Sized, R: Rng + ?Sized>(
    world: &W,
    table: &QTable,
    history: &[usize],
    n_items: usize,
    m: usize,
    rng: &mut R,
) -> Result<RecommendationTrace> {
    if n_items == 0 || m == 0 {
        return Err(Error::config(
            "recommendation needs n_items >= 1 and starts >= 1",
        ));
    }
    if table.n_actions() != world.n_actions() {
        return Err(Error::Shape {
            context: "policy actions",
            expected: world.n_actions(),
            actual: table.n_actions(),
        });
    }
    let (starts, random_starts) = choose_starts(world, history, m, rng);
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for &start in &starts {
        let mut s = world.state_of(start);
        loop {
            let before = items.len();
            for &i in world.items(s) {
                if items.len() == n_items {
                    break;
                }
                if seen.insert(i) {
                    items.push(i);
                }
            }
            if items.len() == n_items {
                return Ok(RecommendationTrace {
                    items,
                    starts,
                    random_starts,
                    reason: StopReason::ListFull,
                });
            }
            if items.len() == before {
                break;
            }
            match greedy_action(world, table, s).and_then(|a| world.next(s, a)) {
                Some(next) => s = next,
                None => break,
            }
        }
    }
    Ok(RecommendationTrace {
        items,
        starts,
        random_starts,
        reason: StopReason::StartsExhausted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallMode {
    /// Hits divided by the number of hidden items.
    Standard,
    /// Hits divided by the list length `N`.
    PaperLiteral,
}

impl FromStr for RecallMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(RecallMode::Standard),
            "paper_literal" | "paper-literal" => Ok(RecallMode::PaperLiteral),
            _ => Err(Error::config(format!("unknown recall mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecall {
    pub user_id: u32,
    pub hits: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub n: usize,
    pub mode: RecallMode,
    pub mean: f64,
    pub users: Vec<UserRecall>,
    /// Users skipped because they have no hidden items.
    pub excluded: usize,
}

/// Recall of the first `n` recommended items against each user's hidden
/// items. Users missing from `lists` count as having recommended nothing.
pub fn recall_at_n(
    lists: &BTreeMap<u32, Vec<u32>>,
    hidden: &BTreeMap<u32, BTreeSet<u32>>,
    n: usize,
    mode: RecallMode,
) -> Result<RecallReport> {
    if n == 0 {
        return Err(Error::config("recall cut-off must be at least 1"));
    }
    let mut users = Vec::new();
    let mut excluded = 0;
    for (&user_id, truth) in hidden {
        if truth.is_empty() {
            excluded += 1;
            continue;
        }
        let list = lists.get(&user_id).map_or(&[][..], Vec::as_slice);
        let hits = list.iter().take(n).filter(|i| truth.contains(i)).count();
        let denom = match mode {
            RecallMode::Standard => truth.len(),
            RecallMode::PaperLiteral => n,
        };
        users.push(UserRecall {
            user_id,
            hits,
            recall: hits as f64 / denom as f64,
        });
    }
    let mean = if users.is_empty() {
        0.0
    } else {
        users.iter().map(|u| u.recall).sum::<f64>() / users.len() as f64
    };
    Ok(RecallReport {
        n,
        mode,
        mean,
        users,
        excluded,
    })
}

/// `user_id,hits,recall`, one row per evaluated user.
pub fn write_recall_csv<W: Write>(report: &RecallReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["user_id", "hits", "recall"])?;
    for u in &report.users {
        out.write_record([
            u.user_id.to_string(),
            u.hits.to_string(),
            u.recall.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<recall csv>", e))?;
    Ok(())
}
