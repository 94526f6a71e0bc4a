//! Session log parsing.
//!
//! The log is a comma-separated file with a header row. Impressions and
//! prices are pipe-separated lists inside their cells. Rows are grouped by
//! `session_id` in first-appearance order and sorted by `step` inside each
//! session.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of impressions shown at one clickout.
pub const MAX_IMPRESSIONS: usize = 25;

/// Column order used when writing a session log.
pub const SESSION_COLUMNS: [&str; 12] = [
    "user_id",
    "session_id",
    "timestamp",
    "step",
    "action_type",
    "reference",
    "platform",
    "city",
    "device",
    "current_filters",
    "impressions",
    "prices",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    ClickoutItem,
    InteractionItemImage,
    InteractionItemInfo,
    InteractionItemDeals,
    InteractionItemRating,
    SearchForItem,
    SearchForDestination,
    SearchForPoi,
    ChangeOfSortOrder,
    FilterSelection,
    Other,
}

impl ActionType {
    pub const ALL: [ActionType; 11] = [
        ActionType::ClickoutItem,
        ActionType::InteractionItemImage,
        ActionType::InteractionItemInfo,
        ActionType::InteractionItemDeals,
        ActionType::InteractionItemRating,
        ActionType::SearchForItem,
        ActionType::SearchForDestination,
        ActionType::SearchForPoi,
        ActionType::ChangeOfSortOrder,
        ActionType::FilterSelection,
        ActionType::Other,
    ];

    /// Whether the `reference` of this action is an item id.
    pub fn is_item_directed(self) -> bool {
        matches!(
            self,
            ActionType::ClickoutItem
                | ActionType::InteractionItemImage
                | ActionType::InteractionItemInfo
                | ActionType::InteractionItemDeals
                | ActionType::InteractionItemRating
                | ActionType::SearchForItem
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionType::ClickoutItem => "clickout item",
            ActionType::InteractionItemImage => "interaction item image",
            ActionType::InteractionItemInfo => "interaction item info",
            ActionType::InteractionItemDeals => "interaction item deals",
            ActionType::InteractionItemRating => "interaction item rating",
            ActionType::SearchForItem => "search for item",
            ActionType::SearchForDestination => "search for destination",
            ActionType::SearchForPoi => "search for poi",
            ActionType::ChangeOfSortOrder => "change of sort order",
            ActionType::FilterSelection => "filter selection",
            ActionType::Other => "other",
        }
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionType {
    type Err = Error;

    /// Accepts both the log spelling (`clickout item`) and the snake-case
    /// spelling (`clickout_item`), case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', " ");
        ActionType::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == norm)
            .ok_or_else(|| Error::data(format!("unknown action type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub user_id: String,
    pub session_id: String,
    pub timestamp: i64,
    pub step: u32,
    pub action_type: ActionType,
    pub reference: String,
    pub platform: String,
    pub city: String,
    pub device: String,
    pub current_filters: Vec<String>,
    pub impressions: Vec<String>,
    pub prices: Vec<i64>,
}

impl SessionEvent {
    pub fn is_clickout(&self) -> bool {
        self.action_type == ActionType::ClickoutItem
    }

    /// Slot of the logged reference inside the impressions, if present.
    /// Duplicate ids resolve to their first position.
    pub fn reference_slot(&self) -> Option<usize> {
        self.impressions.iter().position(|id| *id == self.reference)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub user_id: String,
    events: Vec<SessionEvent>,
    clickout_indices: Vec<usize>,
}

impl Session {
    /// Builds a session from its events, sorting them by step.
    pub fn new(session_id: impl Into<String>, mut events: Vec<SessionEvent>) -> Result<Self> {
        let session_id = session_id.into();
        events.sort_by_key(|e| e.step);
        if let Some(w) = events.windows(2).find(|w| w[0].step == w[1].step) {
            return Err(Error::data(format!(
                "session {session_id}: duplicate step {}",
                w[0].step
            )));
        }
        let user_id = events
            .first()
            .map(|e| e.user_id.clone())
            .unwrap_or_default();
        let clickout_indices = events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_clickout())
            .map(|(i, _)| i)
            .collect();
        Ok(Session {
            session_id,
            user_id,
            events,
            clickout_indices,
        })
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn clickout_indices(&self) -> &[usize] {
        &self.clickout_indices
    }

    pub fn has_clickout(&self) -> bool {
        !self.clickout_indices.is_empty()
    }
}

/// A rejected or malformed row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub row_errors: Vec<RowError>,
    pub price_mismatch: usize,
    pub impression_mismatch: usize,
    pub duplicate_steps: usize,
    pub truncated_impressions: usize,
    pub sessions_without_clickout: usize,
}

impl IngestReport {
    pub fn rejected(&self) -> usize {
        self.row_errors.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionLog {
    pub sessions: Vec<Session>,
    pub report: IngestReport,
}

#[derive(Debug, Deserialize)]
struct RawEvent {
    user_id: String,
    session_id: String,
    timestamp: String,
    step: String,
    action_type: String,
    reference: String,
    platform: String,
    city: String,
    device: String,
    current_filters: String,
    impressions: String,
    prices: String,
}

fn split_pipe(s: &str) -> impl Iterator<Item = &str> {
    s.split('|').map(str::trim).filter(|p| !p.is_empty())
}

enum RowProblem {
    Malformed(String),
    PriceMismatch(usize, usize),
    ImpressionMismatch,
}

fn convert(
    raw: RawEvent,
    report: &mut IngestReport,
) -> std::result::Result<SessionEvent, RowProblem> {
    let timestamp = raw
        .timestamp
        .trim()
        .parse::<i64>()
        .map_err(|_| RowProblem::Malformed(format!("bad timestamp {:?}", raw.timestamp)))?;
    let step = raw
        .step
        .trim()
        .parse::<u32>()
        .ok()
        .filter(|s| *s > 0)
        .ok_or_else(|| RowProblem::Malformed(format!("bad step {:?}", raw.step)))?;
    let action_type = raw
        .action_type
        .parse::<ActionType>()
        .map_err(|e| RowProblem::Malformed(e.to_string()))?;
    let mut impressions: Vec<String> = split_pipe(&raw.impressions).map(String::from).collect();
    let mut prices = split_pipe(&raw.prices)
        .map(|p| p.parse::<i64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| RowProblem::Malformed(format!("bad prices {:?}", raw.prices)))?;
    if prices.len() != impressions.len() {
        return Err(RowProblem::PriceMismatch(impressions.len(), prices.len()));
    }
    if impressions.is_empty() == (action_type == ActionType::ClickoutItem) {
        return Err(RowProblem::ImpressionMismatch);
    }
    if impressions.len() > MAX_IMPRESSIONS {
        impressions.truncate(MAX_IMPRESSIONS);
        prices.truncate(MAX_IMPRESSIONS);
        report.truncated_impressions += 1;
    }
    Ok(SessionEvent {
        user_id: raw.user_id,
        session_id: raw.session_id,
        timestamp,
        step,
        action_type,
        reference: raw.reference,
        platform: raw.platform,
        city: raw.city,
        device: raw.device,
        current_filters: split_pipe(&raw.current_filters).map(String::from).collect(),
        impressions,
        prices,
    })
}

/// Parses a session log from any reader. Row-level problems are recorded in
/// the report and the row is skipped; a missing header column is fatal.
pub fn read_session_log<R: Read>(reader: R) -> Result<SessionLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in SESSION_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::data(format!("session log missing column {col:?}")));
        }
    }

    let mut report = IngestReport::default();
    let mut grouped: IndexMap<String, Vec<(u64, SessionEvent)>> = IndexMap::new();
    for rec in rdr.records() {
        report.rows_read += 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                report.row_errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let raw: RawEvent = match rec.deserialize(Some(&headers)) {
            Ok(r) => r,
            Err(e) => {
                report.row_errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match convert(raw, &mut report) {
            Ok(ev) => grouped
                .entry(ev.session_id.clone())
                .or_default()
                .push((line, ev)),
            Err(problem) => {
                let message = match problem {
                    RowProblem::Malformed(m) => m,
                    RowProblem::PriceMismatch(i, p) => {
                        report.price_mismatch += 1;
                        format!("{i} impressions but {p} prices")
                    }
                    RowProblem::ImpressionMismatch => {
                        report.impression_mismatch += 1;
                        "impressions must be present exactly on clickout rows".to_string()
                    }
                };
                report.row_errors.push(RowError { line, message });
            }
        }
    }

    let mut sessions = Vec::with_capacity(grouped.len());
    for (sid, mut rows) in grouped {
        rows.sort_by_key(|(_, e)| e.step);
        let mut events: Vec<SessionEvent> = Vec::with_capacity(rows.len());
        for (line, ev) in rows {
            if events.last().is_some_and(|last| last.step == ev.step) {
                report.duplicate_steps += 1;
                report.row_errors.push(RowError {
                    line,
                    message: format!("duplicate step {} in session {sid}", ev.step),
                });
                continue;
            }
            events.push(ev);
        }
        let session = Session::new(sid, events)?;
        if !session.has_clickout() {
            report.sessions_without_clickout += 1;
        }
        sessions.push(session);
    }
    Ok(SessionLog { sessions, report })
}

pub fn parse_session_log(path: impl AsRef<Path>) -> Result<SessionLog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_session_log(file)
}

/// Writes sessions back out in the canonical column order.
pub fn write_session_log<W: Write>(sessions: &[Session], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(SESSION_COLUMNS)?;
    for ev in sessions.iter().flat_map(|s| s.events()) {
        let prices: Vec<String> = ev.prices.iter().map(|p| p.to_string()).collect();
        wtr.write_record([
            ev.user_id.as_str(),
            ev.session_id.as_str(),
            &ev.timestamp.to_string(),
            &ev.step.to_string(),
            ev.action_type.as_str(),
            ev.reference.as_str(),
            ev.platform.as_str(),
            ev.city.as_str(),
            ev.device.as_str(),
            &ev.current_filters.join("|"),
            &ev.impressions.join("|"),
            &prices.join("|"),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<session writer>", e))?;
    Ok(())
}
