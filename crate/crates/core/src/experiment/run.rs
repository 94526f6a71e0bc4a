use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::artifacts::{ensure_dir, write_json, BoardsFile};
use super::config::{BiclusterRun, Pipeline, RatingSource, ReplayRun, RunConfig, SessionSource};
use super::metrics::MetricTrace;
use super::seeds::SeedTree;
use crate::agents::{
    dqn_train, qtable_train, reinforce_train, Agent, AgentKind, CfAgent, ModelFile,
    PopularityAgent, QTable, RandomAgent, SavedModel, TrainReport,
};
use crate::bicluster::{bimax, sample_biclusters, BiclusterSet};
use crate::env::{evaluate, ActionForm, Evaluation, Metric, ReplayEnv};
use crate::error::{Error, Result};
use crate::grid::{
    build_boards, h, q_learn, recall_at_n, recommend, write_recall_csv, DistanceMatrix, Gridworld,
    RecallReport, RecommendationTrace,
};
use crate::ingest::{
    binarize_ratings, mask_history, parse_ratings, split_train_test, Dataset, RatingMatrix,
};

/// Loads or generates the session dataset named by `source`.
pub fn load_sessions(source: &SessionSource, seeds: &SeedTree) -> Result<Dataset> {
    match source {
        SessionSource::Files { sessions, items } => Dataset::from_files(sessions, items),
        SessionSource::Dataset { dir } => Dataset::load(dir),
        SessionSource::Synthetic(synth) => synth.generate(seeds.seed("data")),
    }
}

fn default_metric(agent: AgentKind) -> Metric {
    match agent {
        AgentKind::Reinforce => Metric::Mrr,
        _ => Metric::Ctr,
    }
}

fn baseline_form(metric: Metric) -> ActionForm {
    match metric {
        Metric::Ctr => ActionForm::SingleItem,
        Metric::Mrr => ActionForm::RankedList,
    }
}

pub struct ReplayOutcome {
    pub metric: Metric,
    pub train: Option<TrainReport>,
    pub model: Option<SavedModel>,
    pub evaluation: Evaluation,
    pub eligible_sessions: usize,
    pub skipped_clickouts: usize,
}

/// Trains the configured agent (if it learns) on one environment instance
/// and evaluates it on another. Streams: `sampler` and `agent` for
/// training, `eval` and `eval-agent` for evaluation.
pub fn replay_pipeline(
    dataset: Arc<Dataset>,
    run: &ReplayRun,
    seeds: &SeedTree,
) -> Result<ReplayOutcome> {
    let metric = run.metric.unwrap_or_else(|| default_metric(run.agent));
    let mut env = ReplayEnv::new(dataset.clone(), run.env, seeds.seed("sampler"))?;
    let mut rng = seeds.rng("agent");
    let (mut agent, train, model): (Box<dyn Agent>, _, _) = match run.agent {
        AgentKind::Random => (
            Box::new(RandomAgent::new(baseline_form(metric))?),
            None,
            None,
        ),
        AgentKind::Popularity => (
            Box::new(PopularityAgent::new(
                &dataset.catalog,
                baseline_form(metric),
            )),
            None,
            None,
        ),
        AgentKind::Cf => (
            Box::new(CfAgent::from_dataset(&dataset, baseline_form(metric))),
            None,
            None,
        ),
        AgentKind::Qtable => {
            let (a, rep) = qtable_train(&mut env, &run.agent_config, &mut rng)?;
            let model = SavedModel::Qtable(a.clone());
            (Box::new(a), Some(rep), Some(model))
        }
        AgentKind::Dqn => {
            let (a, rep) = dqn_train(&mut env, &run.agent_config, &mut rng)?;
            let model = SavedModel::Dqn(a.clone());
            (Box::new(a), Some(rep), Some(model))
        }
        AgentKind::Reinforce => {
            let (a, rep) = reinforce_train(&mut env, &run.agent_config, &mut rng)?;
            let model = SavedModel::Reinforce(a.clone());
            (Box::new(a), Some(rep), Some(model))
        }
    };
    let mut eval_env = ReplayEnv::new(dataset, run.env, seeds.seed("eval"))?;
    let evaluation = evaluate(
        &mut eval_env,
        agent.as_mut(),
        run.eval_episodes,
        metric,
        &mut seeds.rng("eval-agent"),
    )?;
    Ok(ReplayOutcome {
        metric,
        train,
        model,
        evaluation,
        eligible_sessions: env.eligible_sessions(),
        skipped_clickouts: env.skipped_clickouts(),
    })
}

pub struct BiclusterOutcome {
    pub matrix: RatingMatrix,
    pub biclusters_found: usize,
    pub boards: BoardsFile,
    pub policy: QTable,
    pub episode_rewards: Vec<f64>,
    /// Per evaluated test user.
    pub traces: BTreeMap<u32, RecommendationTrace>,
    /// Recommended raw item ids per user, longest list requested.
    pub lists: BTreeMap<u32, Vec<u32>>,
    pub random_lists: Option<BTreeMap<u32, Vec<u32>>>,
    pub hidden: BTreeMap<u32, BTreeSet<u32>>,
    /// One report per entry of `n_values`.
    pub recall: Vec<RecallReport>,
    pub random_recall: Vec<RecallReport>,
}

impl BiclusterOutcome {
    pub fn random_starts(&self) -> usize {
        self.traces.values().filter(|t| t.random_starts).count()
    }
}

/// Ratings → split → binarize → Bimax → sample n² → K annealed boards →
/// Q-learning → recommendations for held-out users → recall.
pub fn bicluster_pipeline(run: &BiclusterRun, seeds: &SeedTree) -> Result<BiclusterOutcome> {
    let records = match &run.ratings {
        RatingSource::File { path } => parse_ratings(path)?.0,
        RatingSource::Synthetic(s) => s.generate(seeds.seed("data"))?,
    };
    let (train, test) = split_train_test(&records, run.train_fraction, &mut seeds.rng("split"))?;
    let matrix = binarize_ratings(&train, run.threshold)?;
    let found = bimax(&matrix, &run.bimax)?;
    log::info!(
        "matrix {}x{} density {:.4}; {} biclusters",
        matrix.n_users(),
        matrix.n_items(),
        matrix.density(),
        found.len()
    );
    let chosen = sample_biclusters(&found, run.n, &mut seeds.rng("sample"))?;
    let dist = DistanceMatrix::from_biclusters(&chosen);
    let boards = build_boards(&dist, run.n, run.k, &run.sa, &mut seeds.rng("sa"))?;
    let hs = boards.iter().map(|b| h(b, &dist)).collect();
    let world = Gridworld::new(boards.clone(), chosen.clone())?;
    let (policy, episode_rewards) = q_learn(&world, &run.q, &mut seeds.rng("agent"))?;

    let liked: Vec<_> = test
        .iter()
        .copied()
        .filter(|r| (1..=5).contains(&r.rating) && r.rating >= run.threshold)
        .collect();
    let mask = mask_history(&liked, run.observable_fraction, &mut seeds.rng("mask"))?;
    let max_n = *run.n_values.iter().max().expect("validated non-empty");

    let mut rec_rng = seeds.rng("recommend");
    let mut base_rng = seeds.rng("baseline");
    let mut traces = BTreeMap::new();
    let mut lists = BTreeMap::new();
    let mut random_lists = BTreeMap::new();
    let mut hidden = BTreeMap::new();
    for (&user, observed) in &mask.observable {
        let mut history: Vec<usize> = observed
            .iter()
            .filter_map(|r| matrix.item_index(r.item_id))
            .collect();
        history.sort_unstable();
        history.dedup();
        let trace = recommend(&world, &policy, &history, max_n, run.starts, &mut rec_rng)?;
        lists.insert(
            user,
            trace.items.iter().map(|&i| matrix.item_ids()[i]).collect(),
        );
        traces.insert(user, trace);
        if run.random_baseline {
            let picks = index::sample(&mut base_rng, matrix.n_items(), max_n.min(matrix.n_items()));
            random_lists.insert(user, picks.iter().map(|i| matrix.item_ids()[i]).collect());
        }
        let truth: BTreeSet<u32> = mask
            .hidden
            .get(&user)
            .map(|rs| rs.iter().map(|r| r.item_id).collect())
            .unwrap_or_default();
        hidden.insert(user, truth);
    }
    let recall = run
        .n_values
        .iter()
        .map(|&n| recall_at_n(&lists, &hidden, n, run.recall_mode))
        .collect::<Result<Vec<_>>>()?;
    let random_recall = if run.random_baseline {
        run.n_values
            .iter()
            .map(|&n| recall_at_n(&random_lists, &hidden, n, run.recall_mode))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(BiclusterOutcome {
        biclusters_found: found.len(),
        boards: BoardsFile {
            biclusters: BiclusterSet::new(&matrix, chosen),
            boards,
            h: hs,
        },
        matrix,
        policy,
        episode_rewards,
        traces,
        lists,
        random_lists: run.random_baseline.then_some(random_lists),
        hidden,
        recall,
        random_recall,
    })
}

/// What a run reports; written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub pipeline: String,
    pub agent: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub std_errors: BTreeMap<String, f64>,
    /// Recall by list length (biclustering runs).
    #[serde(default)]
    pub recall: BTreeMap<usize, f64>,
    #[serde(default)]
    pub baseline_recall: BTreeMap<usize, f64>,
    #[serde(default)]
    pub counts: BTreeMap<String, u64>,
    pub wall_time_secs: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Executes `config`, writing its artifacts under `out_dir`. On failure a
/// `FAILED` file holding the error is left next to whatever was written.
pub fn run(config: &RunConfig, out_dir: impl AsRef<Path>) -> Result<RunSummary> {
    let out = out_dir.as_ref();
    config.validate()?;
    ensure_dir(out)?;
    let failed = out.join("FAILED");
    if failed.exists() {
        fs::remove_file(&failed).map_err(|e| Error::io(&failed, e))?;
    }
    let result = run_inner(config, out);
    if let Err(e) = &result {
        fs::write(&failed, format!("{e}\n")).map_err(|io| Error::io(&failed, io))?;
    }
    result
}

fn run_inner(config: &RunConfig, out: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    write_json(out.join("config.json"), config)?;
    fs::write(out.join("seed.txt"), format!("{}\n", config.seed))
        .map_err(|e| Error::io(out.join("seed.txt"), e))?;
    let seeds = SeedTree::new(config.seed);
    let mut summary = match &config.pipeline {
        Pipeline::Replay(run) => run_replay(config, run, &seeds, out)?,
        Pipeline::Bicluster(run) => run_bicluster(config, run, &seeds, out)?,
    };
    summary.wall_time_secs = started.elapsed().as_secs_f64();
    write_json(out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn run_replay(
    config: &RunConfig,
    run: &ReplayRun,
    seeds: &SeedTree,
    out: &Path,
) -> Result<RunSummary> {
    let dataset = Arc::new(load_sessions(&run.data, seeds)?);
    let outcome = replay_pipeline(dataset, run, seeds)?;
    let mut counts = BTreeMap::new();
    if let Some(train) = &outcome.train {
        MetricTrace::from_values(&train.rewards)
            .write_csv(config.window, create(&out.join("train_metrics.csv"))?)?;
        let mut w = csv::Writer::from_writer(create(&out.join("slot_histogram.csv"))?);
        w.write_record(["slot", "count"])?;
        for (slot, c) in train.slot_histogram.iter().enumerate() {
            w.write_record([slot.to_string(), c.to_string()])?;
        }
        w.flush()
            .map_err(|e| Error::io(out.join("slot_histogram.csv"), e))?;
        counts.insert("train_steps".into(), train.rewards.len() as u64);
        counts.insert("train_episodes".into(), train.episodes);
    }
    if let Some(model) = outcome.model {
        ModelFile::new(model).save(out.join("model.json"))?;
    }
    let eval = &outcome.evaluation;
    MetricTrace::from_values(&eval.rewards)
        .write_csv(config.window, create(&out.join("eval_metrics.csv"))?)?;
    counts.insert("eval_episodes".into(), eval.episodes as u64);
    counts.insert("eval_steps".into(), eval.steps() as u64);
    counts.insert("eligible_sessions".into(), outcome.eligible_sessions as u64);
    counts.insert("skipped_clickouts".into(), outcome.skipped_clickouts as u64);
    let key = outcome.metric.to_string();
    Ok(RunSummary {
        name: config.name.clone().unwrap_or_else(|| run.agent.to_string()),
        pipeline: "replay".into(),
        agent: run.agent.to_string(),
        seed: config.seed,
        metrics: BTreeMap::from([(key.clone(), eval.value)]),
        std_errors: BTreeMap::from([(key, eval.std_error())]),
        recall: BTreeMap::new(),
        baseline_recall: BTreeMap::new(),
        counts,
        wall_time_secs: 0.0,
    })
}

fn run_bicluster(
    config: &RunConfig,
    run: &BiclusterRun,
    seeds: &SeedTree,
    out: &Path,
) -> Result<RunSummary> {
    let outcome = bicluster_pipeline(run, seeds)?;
    write_json(out.join("boards.json"), &outcome.boards)?;
    ModelFile::new(SavedModel::Grid {
        boards: run.k,
        table: outcome.policy.clone(),
    })
    .save(out.join("policy.json"))?;
    MetricTrace::from_values(&outcome.episode_rewards)
        .write_csv(config.window, create(&out.join("train_metrics.csv"))?)?;

    let last = outcome
        .recall
        .iter()
        .max_by_key(|r| r.n)
        .expect("n_values non-empty");
    write_recall_csv(last, create(&out.join("recall.csv"))?)?;

    let mut w = csv::Writer::from_writer(create(&out.join("recall_curve.csv"))?);
    let with_base = !outcome.random_recall.is_empty();
    if with_base {
        w.write_record(["n", "recall", "random_recall"])?;
    } else {
        w.write_record(["n", "recall"])?;
    }
    for (k, r) in outcome.recall.iter().enumerate() {
        let mut row = vec![r.n.to_string(), r.mean.to_string()];
        if with_base {
            row.push(outcome.random_recall[k].mean.to_string());
        }
        w.write_record(row)?;
    }
    w.flush()
        .map_err(|e| Error::io(out.join("recall_curve.csv"), e))?;

    let recall: BTreeMap<usize, f64> = outcome.recall.iter().map(|r| (r.n, r.mean)).collect();
    let metrics = recall
        .iter()
        .map(|(n, v)| (format!("recall@{n}"), *v))
        .collect();
    let counts = BTreeMap::from([
        ("users".to_string(), outcome.matrix.n_users() as u64),
        ("items".to_string(), outcome.matrix.n_items() as u64),
        (
            "biclusters_found".to_string(),
            outcome.biclusters_found as u64,
        ),
        ("evaluated_users".to_string(), last.users.len() as u64),
        ("excluded_users".to_string(), last.excluded as u64),
        ("random_starts".to_string(), outcome.random_starts() as u64),
    ]);
    Ok(RunSummary {
        name: config
            .name
            .clone()
            .unwrap_or_else(|| format!("bicluster-rl k={}", run.k)),
        pipeline: "bicluster".into(),
        agent: "grid-qlearning".into(),
        seed: config.seed,
        metrics,
        std_errors: BTreeMap::new(),
        recall,
        baseline_recall: outcome
            .random_recall
            .iter()
            .map(|r| (r.n, r.mean))
            .collect(),
        counts,
        wall_time_secs: 0.0,
    })
}
