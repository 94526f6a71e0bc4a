//! `recgym`: ingest logs, train and evaluate agents, build biclustering
//! gridworlds and run reproducible experiments.
//!
//! Every subcommand except `run` accepts `--config <json>`: a JSON object
//! whose keys are the subcommand's long flag names (with underscores) and
//! whose values replace the flags. Exit codes: 0 success, 2 configuration
//! error, 3 data error, 4 training divergence.

mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use recgym_core::Error;
use serde::de::DeserializeOwned;
use serde::Serialize;

use commands::*;

#[derive(Parser)]
#[command(
    name = "recgym",
    version,
    about = "Recommendation agents on logged sessions and biclustering gridworlds"
)]
struct Cli {
    /// JSON object overriding the subcommand's flags.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate session and item files and store them as a dataset directory.
    Ingest(IngestArgs),
    /// Print the encoded state in front of one clickout.
    Encode(EncodeArgs),
    /// Enumerate maximal all-ones biclusters of a binarized rating file.
    Biclust(BiclustArgs),
    /// Sample n² biclusters, lay them out on K annealed boards and
    /// optionally learn a movement policy.
    Grid(GridArgs),
    /// Train a replay-environment agent and save it as a model file.
    Train(TrainArgs),
    /// Evaluate a saved model or a baseline agent.
    Eval(EvalArgs),
    /// Recommend items for users from boards and a gridworld policy.
    Recommend(RecommendArgs),
    /// Tabulate metrics from several run summaries.
    Compare(CompareArgs),
    /// Execute a full run configuration into an artifacts directory.
    Run(RunArgs),
    /// Write a synthetic session dataset directory.
    SynthSessions(SynthSessionsArgs),
    /// Write a synthetic MovieLens-format rating file.
    SynthRatings(SynthRatingsArgs),
}

/// Replaces fields of `args` with the keys of the JSON object at `path`.
fn with_overrides<T: Serialize + DeserializeOwned>(
    args: T,
    path: Option<&Path>,
) -> recgym_core::Result<T> {
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let overrides: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let serde_json::Value::Object(overrides) = overrides else {
        return Err(Error::config(format!(
            "{}: expected a JSON object",
            path.display()
        )));
    };
    let mut merged = serde_json::to_value(&args)?;
    let fields = merged
        .as_object_mut()
        .expect("argument structs serialize to objects");
    for (k, v) in overrides {
        if !fields.contains_key(&k) {
            return Err(Error::config(format!(
                "{}: unknown key {k:?}",
                path.display()
            )));
        }
        fields.insert(k, v);
    }
    serde_json::from_value(merged).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn dispatch(cli: Cli) -> recgym_core::Result<()> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Ingest(a) => ingest(with_overrides(a, cfg)?),
        Command::Encode(a) => encode(with_overrides(a, cfg)?),
        Command::Biclust(a) => biclust(with_overrides(a, cfg)?),
        Command::Grid(a) => grid(with_overrides(a, cfg)?),
        Command::Train(a) => train(with_overrides(a, cfg)?),
        Command::Eval(a) => eval(with_overrides(a, cfg)?),
        Command::Recommend(a) => recommend(with_overrides(a, cfg)?),
        Command::Compare(a) => compare(with_overrides(a, cfg)?),
        Command::Run(a) => run(a, cfg),
        Command::SynthSessions(a) => synth_sessions(with_overrides(a, cfg)?),
        Command::SynthRatings(a) => synth_ratings(with_overrides(a, cfg)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
