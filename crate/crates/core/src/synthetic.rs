//! Synthetic datasets with known structure.
//!
//! [`SessionSynth`] writes session logs whose clicks are either uniform over
//! the impressions or the argmax of a hidden linear score over item
//! features, so the best achievable CTR is known. [`RatingSynth`] writes
//! MovieLens-format ratings with planted user/item groups.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    ActionType, Dataset, IngestReport, ItemCatalog, ItemRecord, RatingRecord, Session,
    SessionEvent, SessionLog,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClickModel {
    /// Clicked slot uniform over the impressions.
    Uniform,
    /// Clicked item maximizes a hidden linear score over its properties and
    /// normalized price. The weights are drawn from the generator seed.
    Planted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSynth {
    pub sessions: usize,
    pub items: usize,
    pub properties: usize,
    pub impressions: usize,
    pub min_clickouts: usize,
    pub max_clickouts: usize,
    /// Item interactions logged before each clickout.
    pub interactions_per_clickout: usize,
    pub click_model: ClickModel,
}

impl Default for SessionSynth {
    fn default() -> Self {
        SessionSynth {
            sessions: 1000,
            items: 500,
            properties: 12,
            impressions: 25,
            min_clickouts: 1,
            max_clickouts: 3,
            interactions_per_clickout: 2,
            click_model: ClickModel::Uniform,
        }
    }
}

const PLATFORMS: [&str; 3] = ["DE", "US", "BR"];
const DEVICES: [&str; 3] = ["desktop", "mobile", "tablet"];
const FILTERS: [&str; 4] = ["Sort by price", "Free WiFi", "Pool", "Breakfast Included"];

impl SessionSynth {
    fn validate(&self) -> Result<()> {
        if self.items < self.impressions
            || self.impressions == 0
            || self.impressions > crate::ingest::MAX_IMPRESSIONS
        {
            return Err(Error::config(
                "need 1..=25 impressions and at least as many items",
            ));
        }
        if self.min_clickouts == 0 || self.min_clickouts > self.max_clickouts {
            return Err(Error::config("clickout range must satisfy 1 <= min <= max"));
        }
        Ok(())
    }

    /// Planted weights over the feature vector (zero on the clicks entry).
    pub fn planted_weights(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_11ea);
        let mut w: Vec<f64> = (0..self.properties)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        w.push(rng.gen_range(-1.0..-0.25));
        w.push(0.0);
        w
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab: Vec<String> = (0..self.properties).map(|p| format!("prop_{p}")).collect();
        let base_prices: Vec<i64> = (0..self.items).map(|_| rng.gen_range(40..400)).collect();
        let records: Vec<(String, ItemRecord)> = (0..self.items)
            .map(|i| {
                (
                    item_id(i),
                    ItemRecord {
                        properties: (0..self.properties).map(|_| rng.gen_bool(0.5)).collect(),
                        price: 0.0,
                        clicks: 0,
                    },
                )
            })
            .collect();
        let catalog = ItemCatalog::from_records(vocab, records)?;

        // Impressions first; clicked items are decided once prices are known.
        let drafts: Vec<Draft> = (0..self.sessions)
            .map(|_| {
                let n_click = rng.gen_range(self.min_clickouts..=self.max_clickouts);
                Draft {
                    user: format!("u{}", rng.gen_range(0..self.sessions.max(1) / 2 + 1)),
                    platform: PLATFORMS[rng.gen_range(0..PLATFORMS.len())],
                    device: DEVICES[rng.gen_range(0..DEVICES.len())],
                    filters: FILTERS
                        .iter()
                        .filter(|_| rng.gen_bool(0.25))
                        .map(|s| s.to_string())
                        .collect(),
                    clickouts: (0..n_click)
                        .map(|_| {
                            let imp =
                                index::sample(&mut rng, self.items, self.impressions).into_vec();
                            let touched = (0..self.interactions_per_clickout)
                                .map(|_| rng.gen_range(0..self.impressions))
                                .collect();
                            (imp, touched)
                        })
                        .collect(),
                }
            })
            .collect();

        let mut probe = catalog.clone();
        let price_log = render(&drafts, &base_prices, |_| 0)?;
        probe.fill_from_sessions(&price_log);
        let weights = self.planted_weights(seed);

        let mut chooser = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let choice = |imp: &[usize]| -> usize {
            match self.click_model {
                ClickModel::Uniform => chooser.gen_range(0..imp.len()),
                ClickModel::Planted => {
                    let scores: Vec<f64> = imp
                        .iter()
                        .map(|&i| {
                            let f = probe.features(&item_id(i)).expect("generated item");
                            f.iter().zip(&weights).map(|(a, b)| a * b).sum()
                        })
                        .collect();
                    argmax(&scores)
                }
            }
        };
        let sessions = render(&drafts, &base_prices, choice)?;
        let report = IngestReport {
            rows_read: sessions.iter().map(|s| s.events().len()).sum(),
            ..IngestReport::default()
        };
        Ok(Dataset::build(SessionLog { sessions, report }, catalog))
    }
}

struct Draft {
    user: String,
    platform: &'static str,
    device: &'static str,
    filters: Vec<String>,
    /// (impressed item indices, slots touched before the clickout)
    clickouts: Vec<(Vec<usize>, Vec<usize>)>,
}

fn render(
    drafts: &[Draft],
    base_prices: &[i64],
    mut choose: impl FnMut(&[usize]) -> usize,
) -> Result<Vec<Session>> {
    let mut out = Vec::with_capacity(drafts.len());
    for (s, d) in drafts.iter().enumerate() {
        let sid = format!("s{s}");
        let mut events = Vec::new();
        let mut step = 0u32;
        let mut push = |action: ActionType, reference: String, imp: &[usize]| {
            step += 1;
            events.push(SessionEvent {
                user_id: d.user.clone(),
                session_id: sid.clone(),
                timestamp: 1_500_000_000 + (s as i64) * 10_000 + step as i64 * 7,
                step,
                action_type: action,
                reference,
                platform: d.platform.to_string(),
                city: "Synthville".to_string(),
                device: d.device.to_string(),
                current_filters: if action == ActionType::ClickoutItem {
                    d.filters.clone()
                } else {
                    vec![]
                },
                impressions: imp.iter().map(|&i| item_id(i)).collect(),
                prices: imp.iter().map(|&i| base_prices[i]).collect(),
            });
        };
        for (imp, touched) in &d.clickouts {
            push(
                ActionType::SearchForDestination,
                "Synthville".to_string(),
                &[],
            );
            for &t in touched {
                push(ActionType::InteractionItemImage, item_id(imp[t]), &[]);
            }
            let slot = choose(imp);
            push(ActionType::ClickoutItem, item_id(imp[slot]), imp);
        }
        out.push(Session::new(sid, events)?);
    }
    Ok(out)
}

pub fn item_id(i: usize) -> String {
    format!("i{i}")
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// MovieLens-format ratings with `groups` planted communities. Each group
/// owns `core_items` items that its users mostly rate highly; every user also
/// rates `noise_ratings` random items, mostly low.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatingSynth {
    pub users: usize,
    pub items: usize,
    pub groups: usize,
    pub core_items: usize,
    pub core_rate_prob: f64,
    pub noise_ratings: usize,
    pub noise_like_prob: f64,
}

impl Default for RatingSynth {
    fn default() -> Self {
        RatingSynth {
            users: 300,
            items: 400,
            groups: 10,
            core_items: 12,
            core_rate_prob: 0.85,
            noise_ratings: 20,
            noise_like_prob: 0.15,
        }
    }
}

impl RatingSynth {
    pub fn generate(&self, seed: u64) -> Result<Vec<RatingRecord>> {
        if self.groups == 0 || self.groups * self.core_items > self.items {
            return Err(Error::config("groups * core_items must fit in items"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut item_order: Vec<u32> = (1..=self.items as u32).collect();
        item_order.shuffle(&mut rng);
        let cores: Vec<&[u32]> = item_order
            .chunks(self.core_items)
            .take(self.groups)
            .collect();
        let mut records = Vec::new();
        for u in 1..=self.users as u32 {
            let g = rng.gen_range(0..self.groups);
            let mut rated = BTreeSet::new();
            let mut t = 874_000_000i64 + rng.gen_range(0..1_000_000);
            for &item in cores[g] {
                if rng.gen_bool(self.core_rate_prob) {
                    rated.insert(item);
                    t += rng.gen_range(1..5000);
                    records.push(RatingRecord {
                        user_id: u,
                        item_id: item,
                        rating: rng.gen_range(4..=5),
                        timestamp: t,
                    });
                }
            }
            for _ in 0..self.noise_ratings {
                let item = rng.gen_range(1..=self.items as u32);
                if !rated.insert(item) {
                    continue;
                }
                let rating = if rng.gen_bool(self.noise_like_prob) {
                    rng.gen_range(3..=5)
                } else {
                    rng.gen_range(1..=2)
                };
                t += rng.gen_range(1..5000);
                records.push(RatingRecord {
                    user_id: u,
                    item_id: item,
                    rating,
                    timestamp: t,
                });
            }
        }
        Ok(records)
    }
}
