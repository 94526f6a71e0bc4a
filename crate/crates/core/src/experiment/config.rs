use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, AgentKind};
use crate::bicluster::BimaxConfig;
use crate::env::{EnvConfig, Metric};
use crate::error::{Error, Result};
use crate::grid::{GridQConfig, RecallMode, SaSchedule};
use crate::synthetic::{RatingSynth, SessionSynth};

pub const DEFAULT_WINDOW: usize = 1500;

fn default_window() -> usize {
    DEFAULT_WINDOW
}

/// Everything a run needs, as one JSON document. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    /// Moving-average window for metric traces.
    #[serde(default = "default_window")]
    pub window: usize,
    pub pipeline: Pipeline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pipeline {
    Replay(ReplayRun),
    Bicluster(BiclusterRun),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum SessionSource {
    /// Raw session CSV and item metadata CSV.
    Files {
        sessions: PathBuf,
        items: PathBuf,
    },
    /// Directory written by `Dataset::save`.
    Dataset {
        dir: PathBuf,
    },
    Synthetic(SessionSynth),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayRun {
    pub data: SessionSource,
    pub agent: AgentKind,
    #[serde(default)]
    pub agent_config: AgentConfig,
    #[serde(default)]
    pub env: EnvConfig,
    /// Defaults to CTR for single-item agents and MRR for rankers.
    #[serde(default)]
    pub metric: Option<Metric>,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
}

fn default_eval_episodes() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum RatingSource {
    /// Tab-separated `user item rating timestamp` file.
    File {
        path: PathBuf,
    },
    Synthetic(RatingSynth),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiclusterRun {
    pub ratings: RatingSource,
    pub threshold: u8,
    pub train_fraction: f64,
    pub observable_fraction: f64,
    pub bimax: BimaxConfig,
    /// Board side length.
    pub n: usize,
    /// Number of boards.
    pub k: usize,
    pub sa: SaSchedule,
    pub q: GridQConfig,
    /// Starting biclusters per user.
    pub starts: usize,
    /// List lengths at which recall is reported.
    pub n_values: Vec<usize>,
    pub recall_mode: RecallMode,
    /// Also score a recommender that lists uniformly random items.
    pub random_baseline: bool,
}

impl Default for BiclusterRun {
    fn default() -> Self {
        BiclusterRun {
            ratings: RatingSource::Synthetic(RatingSynth::default()),
            threshold: 3,
            train_fraction: 0.8,
            observable_fraction: 0.1,
            bimax: BimaxConfig::default(),
            n: 20,
            k: 3,
            sa: SaSchedule::default(),
            q: GridQConfig::default(),
            starts: 10,
            n_values: (1..=10).map(|i| 10 * i).collect(),
            recall_mode: RecallMode::Standard,
            random_baseline: true,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("window must be at least 1"));
        }
        match &self.pipeline {
            Pipeline::Replay(r) => {
                r.agent_config.validate()?;
                if r.eval_episodes == 0 {
                    return Err(Error::config("eval_episodes must be at least 1"));
                }
            }
            Pipeline::Bicluster(b) => {
                if b.n == 0 || b.k == 0 || b.starts == 0 {
                    return Err(Error::config("n, k and starts must be at least 1"));
                }
                if b.n_values.is_empty() || b.n_values.contains(&0) {
                    return Err(Error::config("n_values must be non-empty and positive"));
                }
                b.sa.validate()?;
                b.q.validate()?;
            }
        }
        Ok(())
    }
}
