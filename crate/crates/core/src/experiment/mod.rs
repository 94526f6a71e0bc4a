//! Run configuration, seeding, metric traces and the two end-to-end
//! pipelines (replay-environment agents and the biclustering gridworld).

mod artifacts;
mod compare;
mod config;
mod metrics;
mod run;
mod seeds;

pub use artifacts::{ensure_dir, read_json, write_json, BoardsFile};
pub use compare::{compare, ComparisonTable};
pub use config::{
    BiclusterRun, Pipeline, RatingSource, ReplayRun, RunConfig, SessionSource, DEFAULT_WINDOW,
};
pub use metrics::{moving_average, MetricTrace};
pub use run::{
    bicluster_pipeline, load_sessions, replay_pipeline, run, BiclusterOutcome, ReplayOutcome,
    RunSummary,
};
pub use seeds::SeedTree;
