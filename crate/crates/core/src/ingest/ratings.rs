//! Explicit ratings in the MovieLens `u.data` layout and the evaluation
//! protocol built on them: binarization, train/test split and history
//! masking.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use fixedbitset::FixedBitSet;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user_id: u32,
    pub item_id: u32,
    pub rating: u8,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingReport {
    pub lines: usize,
    pub malformed: usize,
    pub out_of_range: usize,
    pub duplicates: usize,
}

fn valid_rating(r: u8) -> bool {
    (1..=5).contains(&r)
}

/// Reads tab-separated `user_id item_id rating timestamp` lines. Malformed
/// lines and ratings outside 1..=5 are counted and dropped; duplicate
/// (user, item) pairs keep the latest timestamp.
pub fn read_ratings<R: Read>(reader: R) -> Result<(Vec<RatingRecord>, RatingReport)> {
    let mut report = RatingReport::default();
    let mut records = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line.map_err(|e| Error::io("<ratings>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let mut parts = line.split('\t').map(str::trim);
        let parsed = (|| {
            let user_id = parts.next()?.parse().ok()?;
            let item_id = parts.next()?.parse().ok()?;
            let rating: u8 = parts.next()?.parse().ok()?;
            let timestamp = parts.next()?.parse().ok()?;
            parts.next().is_none().then_some(RatingRecord {
                user_id,
                item_id,
                rating,
                timestamp,
            })
        })();
        match parsed {
            None => report.malformed += 1,
            Some(r) if !valid_rating(r.rating) => report.out_of_range += 1,
            Some(r) => records.push(r),
        }
    }
    let before = records.len();
    let records = dedup_latest(&records);
    report.duplicates = before - records.len();
    Ok((records, report))
}

pub fn parse_ratings(path: impl AsRef<Path>) -> Result<(Vec<RatingRecord>, RatingReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ratings(file)
}

pub fn write_ratings<W: Write>(records: &[RatingRecord], mut w: W) -> Result<()> {
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            r.user_id, r.item_id, r.rating, r.timestamp
        )
        .map_err(|e| Error::io("<ratings writer>", e))?;
    }
    Ok(())
}

/// Keeps one record per (user, item): the one with the latest timestamp,
/// later input position winning ties. Output preserves input order.
pub fn dedup_latest(records: &[RatingRecord]) -> Vec<RatingRecord> {
    let mut keep: HashMap<(u32, u32), usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        keep.entry((r.user_id, r.item_id))
            .and_modify(|j| {
                if r.timestamp >= records[*j].timestamp {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    let mut idx: Vec<usize> = keep.into_values().collect();
    idx.sort_unstable();
    idx.into_iter().map(|i| records[i]).collect()
}

/// Binary user × item matrix. Rows are users, columns items, both indexed
/// by ascending raw id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    user_ids: Vec<u32>,
    item_ids: Vec<u32>,
    rows: Vec<FixedBitSet>,
    rejected: usize,
}

impl RatingMatrix {
    /// Builds a matrix from dense 0/1 rows; raw ids are the indices.
    pub fn from_dense(rows: &[Vec<u8>]) -> Result<Self> {
        let n_items = rows.first().map_or(0, Vec::len);
        let mut bits = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != n_items {
                return Err(Error::Shape {
                    context: "dense matrix row",
                    expected: n_items,
                    actual: row.len(),
                });
            }
            let mut b = FixedBitSet::with_capacity(n_items);
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => b.insert(j),
                    _ => return Err(Error::data(format!("matrix entry {v} is not 0/1"))),
                }
            }
            bits.push(b);
        }
        Ok(RatingMatrix {
            user_ids: (0..rows.len() as u32).collect(),
            item_ids: (0..n_items as u32).collect(),
            rows: bits,
            rejected: 0,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_ids(&self) -> &[u32] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[u32] {
        &self.item_ids
    }

    pub fn user_index(&self, id: u32) -> Option<usize> {
        self.user_ids.binary_search(&id).ok()
    }

    pub fn item_index(&self, id: u32) -> Option<usize> {
        self.item_ids.binary_search(&id).ok()
    }

    pub fn get(&self, user: usize, item: usize) -> bool {
        self.rows[user].contains(item)
    }

    pub fn row(&self, user: usize) -> &FixedBitSet {
        &self.rows[user]
    }

    pub fn rows(&self) -> &[FixedBitSet] {
        &self.rows
    }

    pub fn ones(&self) -> usize {
        self.rows.iter().map(|r| r.count_ones(..)).sum()
    }

    pub fn density(&self) -> f64 {
        let cells = self.n_users() * self.n_items();
        if cells == 0 {
            0.0
        } else {
            self.ones() as f64 / cells as f64
        }
    }

    /// Records dropped during binarization because their rating was out of range.
    pub fn rejected(&self) -> usize {
        self.rejected
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.rows
            .iter()
            .map(|r| (0..self.n_items()).map(|j| r.contains(j) as u8).collect())
            .collect()
    }
}

/// Maps ratings to 0/1: an entry is 1 iff the (deduplicated) rating is at
/// least `threshold`. Users and items are every id present in the valid
/// records, so items rated only below the threshold still get a column.
pub fn binarize_ratings(records: &[RatingRecord], threshold: u8) -> Result<RatingMatrix> {
    if !valid_rating(threshold) {
        return Err(Error::config(format!(
            "threshold {threshold} outside 1..=5"
        )));
    }
    let valid: Vec<RatingRecord> = records
        .iter()
        .copied()
        .filter(|r| valid_rating(r.rating))
        .collect();
    let rejected = records.len() - valid.len();
    let valid = dedup_latest(&valid);

    let mut user_ids: Vec<u32> = valid.iter().map(|r| r.user_id).collect();
    user_ids.sort_unstable();
    user_ids.dedup();
    let mut item_ids: Vec<u32> = valid.iter().map(|r| r.item_id).collect();
    item_ids.sort_unstable();
    item_ids.dedup();

    let mut rows = vec![FixedBitSet::with_capacity(item_ids.len()); user_ids.len()];
    for r in valid.iter().filter(|r| r.rating >= threshold) {
        let u = user_ids.binary_search(&r.user_id).expect("user indexed");
        let i = item_ids.binary_search(&r.item_id).expect("item indexed");
        rows[u].insert(i);
    }
    Ok(RatingMatrix {
        user_ids,
        item_ids,
        rows,
        rejected,
    })
}

/// Random record-level split. The train side gets `floor(fraction * len)`
/// records, capped so the test side is never empty for non-empty input.
/// Both halves keep the input order.
pub fn split_train_test<T: Clone, R: Rng + ?Sized>(
    records: &[T],
    train_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = records.len();
    let n_train = ((train_fraction * n as f64 + 1e-9).floor() as usize).min(n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (r, t) in records.iter().zip(in_train) {
        if t {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    Ok((train, test))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistoryMask {
    pub observable: BTreeMap<u32, Vec<RatingRecord>>,
    pub hidden: BTreeMap<u32, Vec<RatingRecord>>,
}

/// Number of records left observable for a user with `count` records.
pub fn observable_count(count: usize, fraction: f64) -> usize {
    ((fraction * count as f64 - 1e-9).ceil().max(0.0) as usize).min(count)
}

/// Per user, keeps `ceil(fraction * count)` randomly chosen records
/// observable and hides the rest.
pub fn mask_history<R: Rng + ?Sized>(
    records: &[RatingRecord],
    observable_fraction: f64,
    rng: &mut R,
) -> Result<HistoryMask> {
    if !(observable_fraction > 0.0 && observable_fraction <= 1.0) {
        return Err(Error::config(format!(
            "observable fraction {observable_fraction} must lie in (0, 1]"
        )));
    }
    let mut by_user: BTreeMap<u32, Vec<RatingRecord>> = BTreeMap::new();
    for r in records {
        by_user.entry(r.user_id).or_default().push(*r);
    }
    let mut mask = HistoryMask::default();
    for (user, mut recs) in by_user {
        recs.shuffle(rng);
        let k = observable_count(recs.len(), observable_fraction);
        let hidden = recs.split_off(k);
        mask.observable.insert(user, recs);
        mask.hidden.insert(user, hidden);
    }
    Ok(mask)
}
