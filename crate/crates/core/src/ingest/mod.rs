//! Parsing of session logs, item metadata and rating files into validated
//! in-memory datasets.

mod catalog;
mod ratings;
mod sessions;

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use catalog::{parse_item_metadata, read_item_metadata, ItemCatalog, ItemRecord};
pub use ratings::{
    binarize_ratings, dedup_latest, mask_history, observable_count, parse_ratings, read_ratings,
    split_train_test, write_ratings, HistoryMask, RatingMatrix, RatingRecord, RatingReport,
};
pub use sessions::{
    parse_session_log, read_session_log, write_session_log, ActionType, IngestReport, RowError,
    Session, SessionEvent, SessionLog, MAX_IMPRESSIONS, SESSION_COLUMNS,
};

use crate::error::{Error, Result};

/// Fixed vocabularies for the user-context block: platform, device and
/// active filters, each sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextVocab {
    pub platforms: Vec<String>,
    pub devices: Vec<String>,
    pub filters: Vec<String>,
}

impl ContextVocab {
    pub fn from_sessions(sessions: &[Session]) -> Self {
        let mut platforms = BTreeSet::new();
        let mut devices = BTreeSet::new();
        let mut filters = BTreeSet::new();
        for ev in sessions.iter().flat_map(|s| s.events()) {
            platforms.insert(ev.platform.clone());
            devices.insert(ev.device.clone());
            filters.extend(ev.current_filters.iter().cloned());
        }
        ContextVocab {
            platforms: platforms.into_iter().collect(),
            devices: devices.into_iter().collect(),
            filters: filters.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.platforms.len() + self.devices.len() + self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One-hot platform, one-hot device, multi-hot filters. Values outside
    /// the vocabulary leave their block zero.
    pub fn encode(&self, event: &SessionEvent) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        if let Ok(i) = self.platforms.binary_search(&event.platform) {
            v[i] = 1.0;
        }
        let off = self.platforms.len();
        if let Ok(i) = self.devices.binary_search(&event.device) {
            v[off + i] = 1.0;
        }
        let off = off + self.devices.len();
        for f in &event.current_filters {
            if let Ok(i) = self.filters.binary_search(f) {
                v[off + i] = 1.0;
            }
        }
        v
    }
}

/// Sessions, catalog and context vocabulary; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sessions: Vec<Session>,
    pub catalog: ItemCatalog,
    pub context: ContextVocab,
    pub report: IngestReport,
}

const SESSIONS_FILE: &str = "sessions.csv";
const CATALOG_FILE: &str = "catalog.json";
const CONTEXT_FILE: &str = "context.json";
const REPORT_FILE: &str = "ingest_report.json";

impl Dataset {
    /// Fills catalog prices and clicks from the log and derives the context vocabulary.
    pub fn build(log: SessionLog, mut catalog: ItemCatalog) -> Self {
        catalog.fill_from_sessions(&log.sessions);
        let context = ContextVocab::from_sessions(&log.sessions);
        Dataset {
            sessions: log.sessions,
            catalog,
            context,
            report: log.report,
        }
    }

    pub fn from_files(sessions: impl AsRef<Path>, items: impl AsRef<Path>) -> Result<Self> {
        let log = parse_session_log(sessions)?;
        let catalog = parse_item_metadata(items)?;
        Ok(Dataset::build(log, catalog))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let p = dir.join(name);
            File::create(&p)
                .map(BufWriter::new)
                .map_err(|e| Error::io(p, e))
        };
        write_session_log(&self.sessions, create(SESSIONS_FILE)?)?;
        serde_json::to_writer_pretty(create(CATALOG_FILE)?, &self.catalog)?;
        serde_json::to_writer_pretty(create(CONTEXT_FILE)?, &self.context)?;
        serde_json::to_writer_pretty(create(REPORT_FILE)?, &self.report)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let open = |name: &str| {
            let p = dir.join(name);
            File::open(&p).map_err(|e| Error::io(p, e))
        };
        let log = read_session_log(open(SESSIONS_FILE)?)?;
        let catalog: ItemCatalog =
            serde_json::from_reader(std::io::BufReader::new(open(CATALOG_FILE)?))?;
        let context: ContextVocab = serde_json::from_reader(open(CONTEXT_FILE)?)?;
        let report = match open(REPORT_FILE) {
            Ok(f) => serde_json::from_reader(f)?,
            Err(_) => log.report,
        };
        Ok(Dataset {
            sessions: log.sessions,
            catalog,
            context,
            report,
        })
    }
}
