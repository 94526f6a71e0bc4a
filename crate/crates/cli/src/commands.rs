use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use recgym_core::agents::{
    dqn_train, qtable_train, reinforce_train, Agent, AgentConfig, AgentKind, CfAgent, ModelFile,
    PopularityAgent, RandomAgent, SavedModel, TrainReport,
};
use recgym_core::bicluster::{bimax, sample_biclusters, BiclusterSet, BimaxConfig};
use recgym_core::env::{evaluate, ActionForm, EnvConfig, Metric, ReplayEnv};
use recgym_core::experiment::{
    self, ensure_dir, read_json, write_json, BoardsFile, MetricTrace, RunConfig, RunSummary,
    SeedTree, DEFAULT_WINDOW,
};
use recgym_core::grid::{
    build_boards, h, q_learn, recall_at_n, recommend as recommend_walk, write_recall_csv,
    DistanceMatrix, GridQConfig, Gridworld, RecallMode, SaSchedule,
};
use recgym_core::ingest::{binarize_ratings, parse_ratings, write_ratings, Dataset, RatingRecord};
use recgym_core::state::build_state;
use recgym_core::synthetic::{ClickModel, RatingSynth, SessionSynth};
use recgym_core::{Error, Result};
use serde::{Deserialize, Serialize};

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| Error::io("<stdout>", e))
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestArgs {
    /// Session log CSV.
    #[arg(long)]
    sessions: PathBuf,
    /// Item metadata CSV (`item_id,properties`).
    #[arg(long)]
    items: PathBuf,
    /// Dataset directory to write.
    #[arg(long)]
    out: PathBuf,
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let ds = Dataset::from_files(&a.sessions, &a.items)?;
    ensure_dir(&a.out)?;
    ds.save(&a.out)?;
    let r = &ds.report;
    for e in r.row_errors.iter().take(20) {
        log::warn!("line {}: {}", e.line, e.message);
    }
    print_json(&serde_json::json!({
        "sessions": ds.sessions.len(),
        "items": ds.catalog.len(),
        "rows_read": r.rows_read,
        "rows_rejected": r.rejected(),
        "price_mismatch": r.price_mismatch,
        "impression_mismatch": r.impression_mismatch,
        "duplicate_steps": r.duplicate_steps,
        "truncated_impressions": r.truncated_impressions,
        "sessions_without_clickout": r.sessions_without_clickout,
    }))
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodeArgs {
    /// Dataset directory written by `ingest`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    session: String,
    /// Step of the clickout; the first clickout when omitted.
    #[arg(long)]
    step: Option<u32>,
    /// Preference moving-average rate.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Write the state here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn encode(a: EncodeArgs) -> Result<()> {
    let ds = Dataset::load(&a.dataset)?;
    let session = ds
        .sessions
        .iter()
        .find(|s| s.session_id == a.session)
        .ok_or_else(|| Error::data(format!("session {:?} not found", a.session)))?;
    let events = session.events();
    let idx = session
        .clickout_indices()
        .iter()
        .copied()
        .find(|&i| a.step.is_none_or(|s| events[i].step == s))
        .ok_or_else(|| Error::data("no matching clickout in this session"))?;
    let state = build_state(
        &events[..idx],
        &events[idx],
        &ds.catalog,
        &ds.context,
        a.alpha,
    )?;
    let value = serde_json::json!({ "state": state, "flat": state.flat() });
    match a.out {
        Some(p) => write_json(p, &value),
        None => print_json(&value),
    }
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiclustArgs {
    /// Tab-separated `user item rating timestamp` file.
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long, default_value_t = 3)]
    threshold: u8,
    #[arg(long, default_value_t = 2)]
    min_users: usize,
    #[arg(long, default_value_t = 2)]
    min_items: usize,
    /// Give up once this many biclusters are found.
    #[arg(long, default_value_t = 1_000_000)]
    max_biclusters: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn biclust(a: BiclustArgs) -> Result<()> {
    let (records, report) = parse_ratings(&a.ratings)?;
    let matrix = binarize_ratings(&records, a.threshold)?;
    let cfg = BimaxConfig {
        min_users: a.min_users,
        min_items: a.min_items,
        max_biclusters: Some(a.max_biclusters),
    };
    let found = bimax(&matrix, &cfg)?;
    let n = found.len();
    BiclusterSet::new(&matrix, found).save(&a.out)?;
    print_json(&serde_json::json!({
        "users": matrix.n_users(),
        "items": matrix.n_items(),
        "density": matrix.density(),
        "malformed_lines": report.malformed,
        "out_of_range": report.out_of_range,
        "duplicates": report.duplicates,
        "biclusters": n,
    }))
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridArgs {
    /// Output of `biclust`.
    #[arg(long)]
    biclusters: PathBuf,
    /// Board side length; n² biclusters are sampled.
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Number of boards.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.995)]
    cooling: f64,
    #[arg(long, default_value_t = 200)]
    iterations_per_temp: usize,
    /// Boards file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also learn a movement policy and write it here.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    episodes: u64,
    #[arg(long, default_value_t = 0.1)]
    q_alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
}

pub fn grid(a: GridArgs) -> Result<()> {
    let set = BiclusterSet::load(&a.biclusters)?;
    let seeds = SeedTree::new(a.seed);
    let chosen = sample_biclusters(&set.biclusters, a.n, &mut seeds.rng("sample"))?;
    let dist = DistanceMatrix::from_biclusters(&chosen);
    let schedule = SaSchedule {
        cooling: a.cooling,
        iterations_per_temp: a.iterations_per_temp,
        ..SaSchedule::default()
    };
    let boards = build_boards(&dist, a.n, a.k, &schedule, &mut seeds.rng("sa"))?;
    let file = BoardsFile {
        h: boards.iter().map(|b| h(b, &dist)).collect(),
        biclusters: BiclusterSet {
            user_ids: set.user_ids,
            item_ids: set.item_ids,
            biclusters: chosen,
        },
        boards,
    };
    write_json(&a.out, &file)?;
    if let Some(path) = &a.policy {
        let cfg = GridQConfig {
            episodes: a.episodes,
            alpha: a.q_alpha,
            gamma: a.gamma,
            ..GridQConfig::default()
        };
        let (table, _) = q_learn(&file.world()?, &cfg, &mut seeds.rng("agent"))?;
        ModelFile::new(SavedModel::Grid { boards: a.k, table }).save(path)?;
    }
    print_json(&serde_json::json!({ "boards": a.k, "n": a.n, "h": file.h }))
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// dqn, reinforce or qtable.
    #[arg(long)]
    agent: AgentKind,
    /// Dataset directory written by `ingest` or `synth-sessions`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Preference moving-average rate of the environment.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Full agent hyper-parameters (config file only); flags above win.
    #[arg(skip)]
    #[serde(default)]
    agent_config: Option<AgentConfig>,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-step training rewards as CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.agent_config.clone().unwrap_or_default();
    if let Some(s) = a.steps {
        cfg.train_steps = s;
    }
    if let Some(lr) = a.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(hidden) = &a.hidden {
        cfg.hidden = hidden.clone();
    }
    let ds = Arc::new(Dataset::load(&a.dataset)?);
    let seeds = SeedTree::new(a.seed);
    let mut env = ReplayEnv::new(ds, EnvConfig { alpha: a.alpha }, seeds.seed("sampler"))?;
    let mut rng = seeds.rng("agent");
    let (model, report): (SavedModel, TrainReport) = match a.agent {
        AgentKind::Dqn => {
            let (m, r) = dqn_train(&mut env, &cfg, &mut rng)?;
            (SavedModel::Dqn(m), r)
        }
        AgentKind::Reinforce => {
            let (m, r) = reinforce_train(&mut env, &cfg, &mut rng)?;
            (SavedModel::Reinforce(m), r)
        }
        AgentKind::Qtable => {
            let (m, r) = qtable_train(&mut env, &cfg, &mut rng)?;
            (SavedModel::Qtable(m), r)
        }
        other => return Err(Error::config(format!("agent {other} is not trainable"))),
    };
    ModelFile::new(model).save(&a.out)?;
    let trace = MetricTrace::from_values(&report.rewards);
    if let Some(p) = &a.metrics {
        trace.write_csv(a.window, create(p)?)?;
    }
    let tail = &report.rewards[report.rewards.len().saturating_sub(a.window)..];
    print_json(&serde_json::json!({
        "agent": a.agent,
        "steps": report.rewards.len(),
        "episodes": report.episodes,
        "mean_reward": trace.mean(),
        "final_window_mean": if tail.is_empty() { 0.0 } else { tail.iter().sum::<f64>() / tail.len() as f64 },
        "slot_histogram": report.slot_histogram,
    }))
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    /// Model file from `train`; mutually exclusive with --agent.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Baseline agent: random, popularity or cf.
    #[arg(long)]
    agent: Option<AgentKind>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    /// ctr or mrr; defaults to the agent's natural metric.
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Summary JSON to write (also printed).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step rewards as CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Label used by `compare`.
    #[arg(long)]
    name: Option<String>,
}

fn form_for(metric: Metric) -> ActionForm {
    match metric {
        Metric::Ctr => ActionForm::SingleItem,
        Metric::Mrr => ActionForm::RankedList,
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ds = Arc::new(Dataset::load(&a.dataset)?);
    let (mut agent, label): (Box<dyn Agent>, String) = match (&a.model, a.agent) {
        (Some(path), None) => match ModelFile::load(path)?.model {
            SavedModel::Dqn(m) => (Box::new(m), "dqn".into()),
            SavedModel::Reinforce(m) => (Box::new(m), "reinforce".into()),
            SavedModel::Qtable(m) => (Box::new(m), "qtable".into()),
            SavedModel::Grid { .. } => {
                return Err(Error::config(
                    "gridworld policies are evaluated with `recommend`",
                ));
            }
        },
        (None, Some(kind)) => {
            let form = form_for(a.metric.unwrap_or(Metric::Ctr));
            let agent: Box<dyn Agent> = match kind {
                AgentKind::Random => Box::new(RandomAgent::new(form)?),
                AgentKind::Popularity => Box::new(PopularityAgent::new(&ds.catalog, form)),
                AgentKind::Cf => Box::new(CfAgent::from_dataset(&ds, form)),
                other => return Err(Error::config(format!("{other} needs --model"))),
            };
            (agent, kind.to_string())
        }
        _ => return Err(Error::config("give exactly one of --model or --agent")),
    };
    let metric = a.metric.unwrap_or(match agent.action_form() {
        ActionForm::SingleItem => Metric::Ctr,
        _ => Metric::Mrr,
    });
    let seeds = SeedTree::new(a.seed);
    let mut env = ReplayEnv::new(ds, EnvConfig { alpha: a.alpha }, seeds.seed("eval"))?;
    let ev = evaluate(
        &mut env,
        agent.as_mut(),
        a.episodes,
        metric,
        &mut seeds.rng("eval-agent"),
    )?;
    if let Some(p) = &a.metrics {
        MetricTrace::from_values(&ev.rewards).write_csv(a.window, create(p)?)?;
    }
    let summary = RunSummary {
        name: a.name.clone().unwrap_or_else(|| label.clone()),
        pipeline: "replay".into(),
        agent: label,
        seed: a.seed,
        metrics: BTreeMap::from([(metric.to_string(), ev.value)]),
        std_errors: BTreeMap::from([(metric.to_string(), ev.std_error())]),
        recall: BTreeMap::new(),
        baseline_recall: BTreeMap::new(),
        counts: BTreeMap::from([
            ("eval_episodes".to_string(), ev.episodes as u64),
            ("eval_steps".to_string(), ev.steps() as u64),
        ]),
        wall_time_secs: 0.0,
    };
    if let Some(p) = &a.out {
        write_json(p, &summary)?;
    }
    print_json(&summary)
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendArgs {
    /// Boards file from `grid`.
    #[arg(long)]
    boards: PathBuf,
    /// Gridworld policy from `grid --policy`.
    #[arg(long)]
    policy: PathBuf,
    /// Maximum list length N.
    #[arg(long, default_value_t = 100)]
    n_items: usize,
    /// Starting biclusters per user.
    #[arg(long, default_value_t = 10)]
    starts: usize,
    /// Ratings file holding each user's observable history.
    #[arg(long)]
    history: PathBuf,
    /// Ratings file of hidden items; enables recall output.
    #[arg(long)]
    hidden: Option<PathBuf>,
    /// Ratings at or above this count as liked.
    #[arg(long, default_value_t = 3)]
    threshold: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Recommendations CSV (`user_id,rank,item_id`).
    #[arg(long)]
    out: PathBuf,
    /// Recall CSV (`user_id,hits,recall`) at N = --n-items.
    #[arg(long)]
    recall_out: Option<PathBuf>,
    #[arg(long, default_value = "standard")]
    recall_mode: RecallMode,
}

fn liked_by_user(records: &[RatingRecord], threshold: u8) -> BTreeMap<u32, BTreeSet<u32>> {
    let mut out: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.rating >= threshold) {
        out.entry(r.user_id).or_default().insert(r.item_id);
    }
    out
}

pub fn recommend(a: RecommendArgs) -> Result<()> {
    let boards: BoardsFile = read_json(&a.boards)?;
    let world: Gridworld = boards.world()?;
    let table = match ModelFile::load(&a.policy)?.model {
        SavedModel::Grid { table, .. } => table,
        other => {
            return Err(Error::config(format!(
                "{} model is not a gridworld policy",
                other.kind()
            )))
        }
    };
    let item_ids = &boards.biclusters.item_ids;
    let history = liked_by_user(&parse_ratings(&a.history)?.0, a.threshold);
    let mut rng = SeedTree::new(a.seed).rng("recommend");
    let mut lists = BTreeMap::new();
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    w.write_record(["user_id", "rank", "item_id"])?;
    for (&user, items) in &history {
        let mut idx: Vec<usize> = items
            .iter()
            .filter_map(|i| item_ids.binary_search(i).ok())
            .collect();
        idx.sort_unstable();
        let trace = recommend_walk(&world, &table, &idx, a.n_items, a.starts, &mut rng)?;
        let list: Vec<u32> = trace.items.iter().map(|&i| item_ids[i]).collect();
        for (rank, item) in list.iter().enumerate() {
            w.write_record([user.to_string(), (rank + 1).to_string(), item.to_string()])?;
        }
        lists.insert(user, list);
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    let mut out = serde_json::json!({ "users": lists.len() });
    if let Some(hidden_path) = &a.hidden {
        let hidden = liked_by_user(&parse_ratings(hidden_path)?.0, a.threshold);
        let report = recall_at_n(&lists, &hidden, a.n_items, a.recall_mode)?;
        if let Some(p) = &a.recall_out {
            write_recall_csv(&report, create(p)?)?;
        }
        out["recall"] = serde_json::json!(report.mean);
        out["evaluated_users"] = serde_json::json!(report.users.len());
        out["excluded_users"] = serde_json::json!(report.excluded);
    }
    print_json(&out)
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareArgs {
    /// `summary.json` files.
    #[arg(required = true)]
    summaries: Vec<PathBuf>,
    /// csv or markdown.
    #[arg(long, default_value = "markdown")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let summaries = a
        .summaries
        .iter()
        .map(read_json::<RunSummary>)
        .collect::<Result<Vec<_>>>()?;
    let table = experiment::compare(&summaries)?;
    let text = match a.format.as_str() {
        "csv" => table.to_csv()?,
        "markdown" | "md" => table.to_markdown(),
        other => return Err(Error::config(format!("unknown format {other:?}"))),
    };
    match &a.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Args)]
pub struct RunArgs {
    /// Artifacts directory.
    #[arg(long)]
    out: PathBuf,
    /// Replace the configured root seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// `run` reads its whole configuration from `--config`.
pub fn run(a: RunArgs, config: Option<&Path>) -> Result<()> {
    let path = config.ok_or_else(|| Error::config("run needs --config <run.json>"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let summary = experiment::run(&cfg, &a.out)?;
    print_json(&summary)
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSessionsArgs {
    /// Dataset directory to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    sessions: usize,
    #[arg(long, default_value_t = 500)]
    items: usize,
    /// Clicks follow a hidden linear score instead of being uniform.
    #[arg(long)]
    planted: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn synth_sessions(a: SynthSessionsArgs) -> Result<()> {
    let synth = SessionSynth {
        sessions: a.sessions,
        items: a.items,
        click_model: if a.planted {
            ClickModel::Planted
        } else {
            ClickModel::Uniform
        },
        ..SessionSynth::default()
    };
    let ds = synth.generate(a.seed)?;
    ensure_dir(&a.out)?;
    ds.save(&a.out)?;
    print_json(&serde_json::json!({ "sessions": ds.sessions.len(), "items": ds.catalog.len() }))
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRatingsArgs {
    /// Ratings file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    users: usize,
    #[arg(long, default_value_t = 400)]
    items: usize,
    #[arg(long, default_value_t = 10)]
    groups: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn synth_ratings(a: SynthRatingsArgs) -> Result<()> {
    let synth = RatingSynth {
        users: a.users,
        items: a.items,
        groups: a.groups,
        ..RatingSynth::default()
    };
    let records = synth.generate(a.seed)?;
    write_ratings(&records, create(&a.out)?)?;
    print_json(&serde_json::json!({ "ratings": records.len() }))
}
