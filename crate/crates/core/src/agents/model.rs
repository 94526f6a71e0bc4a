//! Versioned JSON model files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DqnAgent, QTable, ReinforceAgent, SlotScorer, TabularAgent};
use crate::error::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

/// A trained policy of any supported kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SavedModel {
    Dqn(DqnAgent),
    Reinforce(ReinforceAgent),
    Qtable(TabularAgent),
    /// Gridworld policy over bicluster ids with `4 * boards` actions.
    Grid {
        boards: usize,
        table: QTable,
    },
}

impl SavedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SavedModel::Dqn(_) => "dqn",
            SavedModel::Reinforce(_) => "reinforce",
            SavedModel::Qtable(_) => "qtable",
            SavedModel::Grid { .. } => "grid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub model: SavedModel,
}

impl ModelFile {
    pub fn new(model: SavedModel) -> Self {
        ModelFile {
            version: MODEL_VERSION,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.check()?;
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let file: ModelFile = serde_json::from_reader(r)?;
        file.check()?;
        Ok(file)
    }

    fn check(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::data(format!(
                "model file version {} is not supported (expected {MODEL_VERSION})",
                self.version
            )));
        }
        let scorer = match &self.model {
            SavedModel::Dqn(a) => &a.scorer,
            SavedModel::Reinforce(a) => &a.scorer,
            _ => return Ok(()),
        };
        SlotScorer::new(scorer.layout, scorer.view, scorer.network.clone())
            .map(|_| ())
            .map_err(|e| Error::data(format!("model file: {e}")))
    }
}
