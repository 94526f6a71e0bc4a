//! Item metadata: a boolean property vector per item, extended with price
//! and click count.
//!
//! Feature vectors have length `F + 2`: the `F` property booleans in
//! vocabulary order, then price and clicks, each min-max normalized to
//! `[0, 1]` over the catalog.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::sessions::Session;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub properties: Vec<bool>,
    pub price: f64,
    pub clicks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "CatalogRepr", into = "CatalogRepr")]
pub struct ItemCatalog {
    vocabulary: Vec<String>,
    items: IndexMap<String, ItemRecord>,
    duplicate_ids: usize,
    features: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CatalogRepr {
    vocabulary: Vec<String>,
    items: IndexMap<String, ItemRecord>,
    duplicate_ids: usize,
}

impl From<CatalogRepr> for ItemCatalog {
    fn from(r: CatalogRepr) -> Self {
        let mut c = ItemCatalog {
            vocabulary: r.vocabulary,
            items: r.items,
            duplicate_ids: r.duplicate_ids,
            features: Vec::new(),
        };
        c.refresh_features();
        c
    }
}

impl From<ItemCatalog> for CatalogRepr {
    fn from(c: ItemCatalog) -> Self {
        CatalogRepr {
            vocabulary: c.vocabulary,
            items: c.items,
            duplicate_ids: c.duplicate_ids,
        }
    }
}

impl ItemCatalog {
    /// Builds a catalog from `(item_id, property names)` pairs. The
    /// vocabulary is the union of property names in first-appearance order.
    /// A repeated item id replaces the earlier entry and is counted.
    pub fn from_properties<I, S, P>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<P>)>,
        S: Into<String>,
        P: AsRef<str>,
    {
        let mut vocab: IndexMap<String, ()> = IndexMap::new();
        let mut raw: IndexMap<String, Vec<usize>> = IndexMap::new();
        let mut duplicate_ids = 0;
        for (id, props) in entries {
            let idx: Vec<usize> = props
                .iter()
                .map(|p| vocab.insert_full(p.as_ref().to_string(), ()).0)
                .collect();
            if raw.insert(id.into(), idx).is_some() {
                duplicate_ids += 1;
            }
        }
        let f = vocab.len();
        let items = raw
            .into_iter()
            .map(|(id, idx)| {
                let mut properties = vec![false; f];
                for i in idx {
                    properties[i] = true;
                }
                (
                    id,
                    ItemRecord {
                        properties,
                        price: 0.0,
                        clicks: 0,
                    },
                )
            })
            .collect();
        let mut c = ItemCatalog {
            vocabulary: vocab.into_keys().collect(),
            items,
            duplicate_ids,
            features: Vec::new(),
        };
        c.refresh_features();
        c
    }

    /// Builds a catalog directly from explicit records sharing one vocabulary.
    pub fn from_records(
        vocabulary: Vec<String>,
        items: impl IntoIterator<Item = (String, ItemRecord)>,
    ) -> Result<Self> {
        let f = vocabulary.len();
        let mut seen = std::collections::HashSet::new();
        if !vocabulary.iter().all(|v| seen.insert(v)) {
            return Err(Error::data("duplicate property names in vocabulary"));
        }
        let mut map = IndexMap::new();
        let mut duplicate_ids = 0;
        for (id, rec) in items {
            if rec.properties.len() != f {
                return Err(Error::Shape {
                    context: "item properties",
                    expected: f,
                    actual: rec.properties.len(),
                });
            }
            if !(rec.price.is_finite() && rec.price >= 0.0) {
                return Err(Error::data(format!(
                    "item {id}: invalid price {}",
                    rec.price
                )));
            }
            if map.insert(id, rec).is_some() {
                duplicate_ids += 1;
            }
        }
        let mut c = ItemCatalog {
            vocabulary,
            items: map,
            duplicate_ids,
            features: Vec::new(),
        };
        c.refresh_features();
        Ok(c)
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn num_properties(&self) -> usize {
        self.vocabulary.len()
    }

    /// Length of every item feature vector: properties plus price and clicks.
    pub fn feature_dim(&self) -> usize {
        self.vocabulary.len() + 2
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn duplicate_ids(&self) -> usize {
        self.duplicate_ids
    }

    pub fn get(&self, id: &str) -> Option<&ItemRecord> {
        self.items.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.keys().map(String::as_str)
    }

    /// Normalized feature vector of an item.
    pub fn features(&self, id: &str) -> Option<&[f64]> {
        self.items
            .get_index_of(id)
            .map(|i| self.features[i].as_slice())
    }

    /// Fills price (mean of all prices listed for the item across
    /// impressions) and clicks (number of clickouts referencing the item).
    pub fn fill_from_sessions(&mut self, sessions: &[Session]) {
        let mut price_sum: HashMap<&str, (f64, u64)> = HashMap::new();
        let mut clicks: HashMap<&str, u64> = HashMap::new();
        for ev in sessions.iter().flat_map(|s| s.events()) {
            for (id, p) in ev.impressions.iter().zip(&ev.prices) {
                let e = price_sum.entry(id.as_str()).or_default();
                e.0 += *p as f64;
                e.1 += 1;
            }
            if ev.is_clickout() {
                *clicks.entry(ev.reference.as_str()).or_default() += 1;
            }
        }
        for (id, rec) in self.items.iter_mut() {
            rec.price = price_sum
                .get(id.as_str())
                .map(|(s, n)| (s / *n as f64).max(0.0))
                .unwrap_or(0.0);
            rec.clicks = clicks.get(id.as_str()).copied().unwrap_or(0);
        }
        self.refresh_features();
    }

    fn refresh_features(&mut self) {
        let range = |vals: &mut dyn Iterator<Item = f64>| {
            vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
        };
        let (plo, phi) = range(&mut self.items.values().map(|r| r.price));
        let (clo, chi) = range(&mut self.items.values().map(|r| r.clicks as f64));
        let scale = |v: f64, lo: f64, hi: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        self.features = self
            .items
            .values()
            .map(|r| {
                let mut f: Vec<f64> = r
                    .properties
                    .iter()
                    .map(|&b| if b { 1.0 } else { 0.0 })
                    .collect();
                f.push(scale(r.price, plo, phi));
                f.push(scale(r.clicks as f64, clo, chi));
                f
            })
            .collect();
    }
}

#[derive(Debug, Deserialize)]
struct RawItem {
    item_id: String,
    properties: String,
}

pub fn read_item_metadata<R: Read>(reader: R) -> Result<ItemCatalog> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let mut entries = Vec::new();
    for row in rdr.deserialize::<RawItem>() {
        let row = row?;
        let props: Vec<String> = row
            .properties
            .split('|')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(String::from)
            .collect();
        entries.push((row.item_id, props));
    }
    Ok(ItemCatalog::from_properties(entries))
}

pub fn parse_item_metadata(path: impl AsRef<Path>) -> Result<ItemCatalog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_item_metadata(file)
}
