//! Recommendation workbench: an offline replay environment over session
//! logs with reinforcement-learning agents and baselines, and a
//! biclustering gridworld recommender with a multi-board action space.

pub mod agents;
pub mod bicluster;
pub mod env;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod ingest;
pub mod state;
pub mod synthetic;

pub use error::{Error, Result};
