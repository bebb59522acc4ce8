//! `expa`: dataset generation, training, evaluation and sorting analysis.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use expa::envs::{Direction, EnvRegistry};
use expa::eval::{evaluate, EvalOptions};
use expa::optim::{Checkpoint, TaskSource, TrainConfig, Trainer};
use expa::policy::{load_params, NeuralPolicy, PolicyParameters};
use expa::rollout::{Decoding, ScriptedPolicy};
use expa::sortlab::{
    extract_decision_tree, prune_redundant, sort_stats, write_stats_row, DecisionTree, Objective, Strategy,
    STATS_HEADER,
};
use expa::tasks::{generate, length_histogram, oracle_actions, write_jsonl, GeneratorConfig, TaskInstance};
use expa::{ActionCatalog, Error};

#[derive(Parser)]
#[command(name = "expa", version, about = "Expanded-action RL at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel evaluation.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate task datasets as JSONL.
    Gen(Common),
    /// Train a policy and log metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a policy on a task set.
    Eval(Common),
    /// Comparison and swap statistics of sorting strategies.
    Sortstats(Common),
    /// Decision tree of a sorting strategy in DOT, before and after pruning.
    Tree(Common),
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct Dataset {
    name: String,
    generator: GeneratorConfig,
    /// Split name to instance count.
    splits: BTreeMap<String, usize>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct GenConfig {
    #[serde(default)]
    seed: u64,
    datasets: Vec<Dataset>,
}

#[derive(Deserialize, Serialize, Clone)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum PolicySource {
    /// Parameters file or training checkpoint.
    Checkpoint(PathBuf),
    /// Plays a correct action sequence read off each task.
    Oracle,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    policy: PolicySource,
    tasks: TaskSource,
    #[serde(default = "both_decodings")]
    decoding: Vec<Decoding>,
    #[serde(default = "one")]
    samples: usize,
    #[serde(default)]
    max_steps: Option<usize>,
    #[serde(default)]
    reward: expa::tasks::RewardConfig,
    #[serde(default)]
    seed: u64,
}

fn both_decodings() -> Vec<Decoding> {
    vec![Decoding::Greedy, Decoding::Sample]
}

fn one() -> usize {
    1
}

#[derive(Deserialize, Serialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum StrategyName {
    Insertion,
    PivotSort4,
    Optimal,
    OptimalAverage,
    Policy,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SortStatsConfig {
    sizes: Vec<usize>,
    strategies: Vec<StrategyName>,
    /// Needed by the "policy" strategy.
    #[serde(default)]
    checkpoint: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct TreeConfig {
    strategy: StrategyName,
    n: usize,
    #[serde(default = "ascending")]
    direction: Direction,
    #[serde(default)]
    checkpoint: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
}

fn ascending() -> Direction {
    Direction::Ascending
}

fn read_config<T: DeserializeOwned>(path: &Path) -> expa::Result<(T, Value)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let raw: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cfg = serde_json::from_value(raw.clone()).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok((cfg, raw))
}

fn write_manifest(out: &Path, command: &str, config: &Value, seed: u64, extra: Value) -> expa::Result<()> {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let m = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": config,
        "created_unix": created,
        "outputs": extra,
    });
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

fn load_policy(path: &Path, catalog: &ActionCatalog) -> expa::Result<PolicyParameters> {
    match Checkpoint::load(path) {
        Ok(cp) => cp.params.into_params(catalog),
        Err(_) => load_params(path, catalog),
    }
}

fn cmd_gen(c: &Common) -> expa::Result<()> {
    let (mut cfg, raw): (GenConfig, Value) = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&c.out)?;
    let mut outputs = serde_json::Map::new();
    for (d, ds) in cfg.datasets.iter().enumerate() {
        for (k, (split, &count)) in ds.splits.iter().enumerate() {
            let seed = cfg.seed.wrapping_add(7919 * d as u64).wrapping_add(104_729 * k as u64);
            let tasks = generate(&ds.generator.with_n_instances(count), seed)?;
            let file = format!("{}_{}.jsonl", ds.name, split);
            write_jsonl(BufWriter::new(fs::File::create(c.out.join(&file))?), &tasks)?;
            outputs.insert(
                file,
                json!({ "instances": tasks.len(), "seed": seed, "length_histogram": length_histogram(&tasks) }),
            );
        }
    }
    write_manifest(&c.out, "gen", &raw, cfg.seed, Value::Object(outputs))
}

fn cmd_train(c: &Common, resume: Option<&Path>) -> expa::Result<()> {
    let (mut cfg, raw): (TrainConfig, Value) = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&c.out)?;
    let mut trainer = match resume {
        Some(p) => Trainer::from_checkpoint(Checkpoint::load(p)?)?,
        None => Trainer::new(cfg.clone())?,
    };
    let metrics_path = c.out.join("metrics.csv");
    let appending = trainer.step > 0 && metrics_path.exists();
    let metrics = if appending {
        fs::OpenOptions::new().append(true).open(&metrics_path)?
    } else {
        fs::File::create(&metrics_path)?
    };
    let mut w = BufWriter::new(metrics);
    if trainer.step > 0 && !appending {
        writeln!(w, "{}", expa::optim::MetricsRow::HEADER)?;
    }
    let ckpt = c.out.join("checkpoint.json");
    let rows = trainer.run(&mut w, Some((&ckpt, 50)))?;
    expa::policy::save_params(&c.out.join("params.json"), &trainer.params, &trainer.catalog)?;
    let probes: Vec<f64> = (0..trainer.config.phases.len()).map(|i| trainer.probe(i)).collect::<expa::Result<_>>()?;
    write_manifest(
        &c.out,
        "train",
        &raw,
        trainer.config.seed,
        json!({
            "metrics": "metrics.csv",
            "checkpoint": "checkpoint.json",
            "params": "params.json",
            "steps": trainer.step,
            "episodes": trainer.episodes,
            "rows_written": rows.len(),
            "final_probe_accuracy": probes,
        }),
    )
}

fn cmd_eval(c: &Common) -> expa::Result<()> {
    let (mut cfg, raw): (EvalConfig, Value) = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&c.out)?;
    let catalog = ActionCatalog::standard();
    let registry = EnvRegistry::from_catalog(&catalog);
    let tasks: Vec<TaskInstance> = cfg.tasks.load(cfg.seed)?;
    let mut reports = Vec::new();
    let params = match &cfg.policy {
        PolicySource::Checkpoint(p) => Some(load_policy(p, &catalog)?),
        PolicySource::Oracle => None,
    };
    for &decoding in &cfg.decoding {
        let opts = EvalOptions {
            decoding,
            samples: if decoding == Decoding::Greedy { 1 } else { cfg.samples },
            max_steps: cfg.max_steps,
            reward: cfg.reward.clone(),
            seed: cfg.seed,
        };
        let report = match &params {
            Some(p) => evaluate(&tasks, |_| Ok(NeuralPolicy::new(p)), &catalog, &registry, &opts)?,
            None => evaluate(
                &tasks,
                |t| Ok(ScriptedPolicy { actions: oracle_actions(t, &catalog)? }),
                &catalog,
                &registry,
                &opts,
            )?,
        };
        reports.push(report);
    }
    fs::write(c.out.join("report.json"), serde_json::to_string_pretty(&reports)?)?;
    write_manifest(&c.out, "eval", &raw, cfg.seed, json!({ "report": "report.json", "tasks": tasks.len() }))
}

fn policy_tree(checkpoint: Option<&PathBuf>, n: usize, direction: Direction) -> expa::Result<DecisionTree> {
    let path = checkpoint.ok_or_else(|| Error::Config("the policy strategy needs a checkpoint".into()))?;
    let catalog = ActionCatalog::standard();
    let registry = EnvRegistry::from_catalog(&catalog);
    let params = load_policy(path, &catalog)?;
    extract_decision_tree(&NeuralPolicy::new(&params), n, direction, &catalog, &registry, 96)
}

fn strategy_tree(name: StrategyName, n: usize, direction: Direction, checkpoint: Option<&PathBuf>) -> expa::Result<DecisionTree> {
    match name {
        StrategyName::PivotSort4 if n == 4 => Ok(expa::sortlab::pivot_tree(direction)),
        StrategyName::PivotSort4 => Err(Error::Config("pivot_sort4 handles exactly four items".into())),
        StrategyName::Optimal => expa::sortlab::optimal_comparison_tree(n, Objective::WorstCase, direction),
        StrategyName::OptimalAverage => expa::sortlab::optimal_comparison_tree(n, Objective::Average, direction),
        StrategyName::Insertion => Err(Error::Config("insertion sort has no decision-tree export".into())),
        StrategyName::Policy => policy_tree(checkpoint, n, direction),
    }
}

fn cmd_sortstats(c: &Common) -> expa::Result<()> {
    let (mut cfg, raw): (SortStatsConfig, Value) = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&c.out)?;
    let mut w = BufWriter::new(fs::File::create(c.out.join("sortstats.csv"))?);
    writeln!(w, "{STATS_HEADER}")?;
    for &n in &cfg.sizes {
        for &s in &cfg.strategies {
            let stats = match s {
                StrategyName::Insertion => sort_stats(&Strategy::Insertion, n)?,
                StrategyName::PivotSort4 => sort_stats(&Strategy::PivotSort4, n)?,
                StrategyName::Optimal => sort_stats(&Strategy::Optimal(Objective::WorstCase), n)?,
                StrategyName::OptimalAverage => sort_stats(&Strategy::Optimal(Objective::Average), n)?,
                StrategyName::Policy => {
                    sort_stats(&Strategy::Tree(policy_tree(cfg.checkpoint.as_ref(), n, Direction::Ascending)?), n)?
                }
            };
            let name = serde_json::to_value(s)?.as_str().unwrap_or_default().to_string();
            write_stats_row(&mut w, &name, &stats)?;
        }
    }
    w.flush()?;
    write_manifest(&c.out, "sortstats", &raw, cfg.seed, json!({ "stats": "sortstats.csv" }))
}

fn cmd_tree(c: &Common) -> expa::Result<()> {
    let (mut cfg, raw): (TreeConfig, Value) = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&c.out)?;
    let tree = strategy_tree(cfg.strategy, cfg.n, cfg.direction, cfg.checkpoint.as_ref())?;
    let pruned = prune_redundant(&tree);
    fs::write(c.out.join("tree.dot"), tree.to_dot(&tree.redundant_paths()))?;
    fs::write(c.out.join("tree_pruned.dot"), pruned.to_dot(&[]))?;
    let (before, after) = (tree.stats(), pruned.stats());
    write_manifest(
        &c.out,
        "tree",
        &raw,
        cfg.seed,
        json!({
            "tree": "tree.dot",
            "pruned": "tree_pruned.dot",
            "nodes_before": tree.node_count(),
            "nodes_after": pruned.node_count(),
            "accuracy_before": before.accuracy(),
            "accuracy_after": after.accuracy(),
        }),
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Gen(c) | Command::Eval(c) | Command::Sortstats(c) | Command::Tree(c) => c,
        Command::Train { common, .. } => common,
    };
    if let Some(j) = common.jobs {
        // Only fails if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    let result = match &cli.command {
        Command::Gen(c) => cmd_gen(c),
        Command::Train { common, resume } => cmd_train(common, resume.as_deref()),
        Command::Eval(c) => cmd_eval(c),
        Command::Sortstats(c) => cmd_sortstats(c),
        Command::Tree(c) => cmd_tree(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Json(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
