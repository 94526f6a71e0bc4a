//! All-ones biclusters of a binary user x item matrix.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use fixedbitset::FixedBitSet;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RatingMatrix;

/// Users x items submatrix whose every cell is 1. Both index lists are
/// sorted; ordering is lexicographic by users, then items.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Bicluster {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
}

impl Bicluster {
    pub fn new(mut users: Vec<usize>, mut items: Vec<usize>) -> Result<Self> {
        users.sort_unstable();
        users.dedup();
        items.sort_unstable();
        items.dedup();
        if users.is_empty() || items.is_empty() {
            return Err(Error::data(
                "bicluster needs at least one user and one item",
            ));
        }
        Ok(Bicluster { users, items })
    }

    pub fn is_all_ones(&self, m: &RatingMatrix) -> bool {
        self.users
            .iter()
            .all(|&u| self.items.iter().all(|&i| m.get(u, i)))
    }

    /// No further user or item can be added while keeping all ones.
    pub fn is_maximal(&self, m: &RatingMatrix) -> bool {
        let extra_user = (0..m.n_users())
            .filter(|u| self.users.binary_search(u).is_err())
            .any(|u| self.items.iter().all(|&i| m.get(u, i)));
        let extra_item = (0..m.n_items())
            .filter(|i| self.items.binary_search(i).is_err())
            .any(|i| self.users.iter().all(|&u| m.get(u, i)));
        !extra_user && !extra_item
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BimaxConfig {
    pub min_users: usize,
    pub min_items: usize,
    /// Abort with an error once this many biclusters have been found.
    pub max_biclusters: Option<usize>,
}

impl Default for BimaxConfig {
    fn default() -> Self {
        BimaxConfig {
            min_users: 2,
            min_items: 2,
            max_biclusters: Some(1_000_000),
        }
    }
}

// Subproblems smaller than this (rows x columns) are not worth a task split.
const PARALLEL_CELLS: usize = 4096;

struct Search<'a> {
    rows: &'a [FixedBitSet],
    cfg: BimaxConfig,
    found: AtomicUsize,
    overflow: AtomicBool,
}

impl Search<'_> {
    /// Divide and conquer over rows `users` restricted to columns `cols`.
    /// Every bicluster emitted from here must touch each set in `mandatory`.
    fn conquer(
        &self,
        users: Vec<usize>,
        cols: FixedBitSet,
        mandatory: Vec<FixedBitSet>,
    ) -> Vec<Bicluster> {
        if self.overflow.load(Ordering::Relaxed) {
            return Vec::new();
        }
        let width = cols.count_ones(..);
        if width < self.cfg.min_items {
            return Vec::new();
        }
        let users: Vec<usize> = users
            .into_iter()
            .filter(|&u| {
                let r = &self.rows[u];
                r.intersection(&cols).next().is_some()
                    && mandatory
                        .iter()
                        .all(|z| r.intersection(z).any(|c| cols.contains(c)))
            })
            .collect();
        if users.len() < self.cfg.min_users {
            return Vec::new();
        }

        let Some(&template) = users
            .iter()
            .find(|&&u| self.rows[u].intersection(&cols).count() < width)
        else {
            let n = self.found.fetch_add(1, Ordering::Relaxed) + 1;
            if self.cfg.max_biclusters.is_some_and(|cap| n > cap) {
                self.overflow.store(true, Ordering::Relaxed);
                return Vec::new();
            }
            return vec![Bicluster {
                users,
                items: cols.ones().collect(),
            }];
        };

        let mut cu = cols.clone();
        cu.intersect_with(&self.rows[template]);
        let mut cv = cols.clone();
        cv.difference_with(&cu);

        let mut left = Vec::new();
        let mut right = Vec::new();
        for &u in &users {
            let r = &self.rows[u];
            let in_u = r.intersection(&cu).next().is_some();
            let in_v = r.intersection(&cv).next().is_some();
            if in_u {
                left.push(u);
            }
            if in_v {
                right.push(u);
            }
        }
        let mut right_mandatory = mandatory.clone();
        right_mandatory.push(cv);

        if users.len() * width >= PARALLEL_CELLS {
            let (mut a, b) = rayon::join(
                || self.conquer(left, cu, mandatory),
                || self.conquer(right, cols, right_mandatory),
            );
            a.extend(b);
            a
        } else {
            let mut a = self.conquer(left, cu, mandatory);
            a.extend(self.conquer(right, cols, right_mandatory));
            a
        }
    }
}

/// Enumerates the inclusion-maximal all-ones biclusters with at least
/// `min_users` rows and `min_items` columns, in canonical order.
pub fn bimax(matrix: &RatingMatrix, cfg: &BimaxConfig) -> Result<Vec<Bicluster>> {
    if cfg.min_users == 0 || cfg.min_items == 0 {
        return Err(Error::config("bimax minimum sizes must be at least 1"));
    }
    let search = Search {
        rows: matrix.rows(),
        cfg: *cfg,
        found: AtomicUsize::new(0),
        overflow: AtomicBool::new(false),
    };
    let mut all = FixedBitSet::with_capacity(matrix.n_items());
    all.insert_range(..);
    let raw = search.conquer((0..matrix.n_users()).collect(), all, Vec::new());
    if search.overflow.load(Ordering::Relaxed) {
        return Err(Error::data(format!(
            "bimax found more than {} biclusters; raise min_users / min_items or the cap",
            cfg.max_biclusters.unwrap_or(usize::MAX)
        )));
    }
    let set: BTreeSet<Bicluster> = raw.into_iter().filter(|b| b.is_maximal(matrix)).collect();
    log::debug!("bimax: {} maximal biclusters", set.len());
    Ok(set.into_iter().collect())
}

/// Uniform draw of `n * n` biclusters without replacement, returned in
/// input order.
pub fn sample_biclusters<R: Rng + ?Sized>(
    biclusters: &[Bicluster],
    n: usize,
    rng: &mut R,
) -> Result<Vec<Bicluster>> {
    let want = n * n;
    if n == 0 {
        return Err(Error::config("board size n must be at least 1"));
    }
    if biclusters.len() < want {
        return Err(Error::data(format!(
            "need {want} biclusters for a {n}x{n} board but only {} exist; use a smaller n or lower the minimum bicluster sizes",
            biclusters.len()
        )));
    }
    let mut picked = index::sample(rng, biclusters.len(), want).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| biclusters[i].clone()).collect())
}

/// Biclusters with the raw ids needed to interpret their indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiclusterSet {
    pub user_ids: Vec<u32>,
    pub item_ids: Vec<u32>,
    pub biclusters: Vec<Bicluster>,
}

impl BiclusterSet {
    pub fn new(matrix: &RatingMatrix, biclusters: Vec<Bicluster>) -> Self {
        BiclusterSet {
            user_ids: matrix.user_ids().to_vec(),
            item_ids: matrix.item_ids().to_vec(),
            biclusters,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let set: BiclusterSet = serde_json::from_reader(BufReader::new(
            File::open(path).map_err(|e| Error::io(path, e))?,
        ))?;
        for b in &set.biclusters {
            if b.users.iter().any(|&u| u >= set.user_ids.len())
                || b.items.iter().any(|&i| i >= set.item_ids.len())
            {
                return Err(Error::data(format!(
                    "{}: bicluster index out of range",
                    path.display()
                )));
            }
        }
        Ok(set)
    }
}
