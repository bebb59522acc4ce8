//! Training driver: curriculum phases, probe evaluation, metrics rows and
//! resumable checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cpo::{cpo_batch_update, grpo_batch_update, BatchMetrics, UpdateContext};
use super::{Adam, AdvantageMode, UpdateConfig};
use crate::catalog::{ActionCatalog, EnvId};
use crate::envs::EnvRegistry;
use crate::error::{Error, Result};
use crate::policy::{pretrain_language, LmConfig, NeuralPolicy, ParamsFile, PolicyConfig, PolicyParameters};
use crate::rollout::{rollout, RolloutOptions};
use crate::tasks::{build_corpus, generate, read_jsonl, solved, CorpusConfig, GeneratorConfig, RewardConfig, TaskInstance, TaskKind};

/// Where a phase's instances come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSource {
    Generate(GeneratorConfig),
    Path(PathBuf),
}

impl TaskSource {
    pub fn load(&self, seed: u64) -> Result<Vec<TaskInstance>> {
        let tasks = match self {
            TaskSource::Generate(g) => generate(g, seed)?,
            TaskSource::Path(p) => read_jsonl(p)?,
        };
        if tasks.is_empty() {
            return Err(Error::Config("task source produced no instances".into()));
        }
        Ok(tasks)
    }
}

/// One curriculum stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub train: TaskSource,
    /// Held-out probe set; defaults to fresh instances of a generated
    /// training source.
    #[serde(default)]
    pub probe: Option<TaskSource>,
    /// Episode budget of the phase.
    pub episodes: usize,
    /// Move on as soon as the greedy probe accuracy reaches this value.
    #[serde(default)]
    pub advance_at: Option<f64>,
    /// Environments forced by counterfactual rollouts, in round-robin order.
    /// Empty means every environment the task kind uses.
    #[serde(default)]
    pub routes: Vec<String>,
    #[serde(default)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Instances generated when a phase has no explicit probe set.
    pub size: usize,
    /// Probe every this many optimizer steps (and at phase ends).
    pub every: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { size: 64, every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Number of transcripts; zero skips pretraining.
    pub transcripts: usize,
    pub corpus: CorpusConfig,
    pub lm: LmConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { transcripts: 1000, corpus: CorpusConfig::default(), lm: LmConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: u64,
    pub phases: Vec<Phase>,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub update: UpdateConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    /// Hard cap on optimizer steps across all phases.
    #[serde(default)]
    pub max_updates: Option<usize>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Config("at least one phase is required".into()));
        }
        if self.probe.every == 0 {
            return Err(Error::Config("probe.every must be positive".into()));
        }
        for p in &self.phases {
            if p.episodes == 0 {
                return Err(Error::Config("phase episode budgets must be positive".into()));
            }
            if p.max_steps == Some(0) {
                return Err(Error::Config("max_steps must be positive".into()));
            }
            if p.probe.is_none() && matches!(p.train, TaskSource::Path(_)) {
                return Err(Error::Config("phases reading tasks from a file need an explicit probe set".into()));
            }
        }
        self.update.validate()?;
        self.reward.validate()?;
        self.policy.validate()
    }
}

/// Default step limit: sorting tasks stop earlier.
pub fn default_max_steps(kind: TaskKind) -> usize {
    match kind {
        TaskKind::Sort | TaskKind::Order => 96,
        _ => 128,
    }
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub mean_reward: f64,
    pub probe_accuracy: Option<f64>,
    pub tool_invocations_per_rollout: f64,
    pub branch_cf_fraction: f64,
    pub episodes: usize,
    pub phase: usize,
}

impl MetricsRow {
    pub const HEADER: &'static str =
        "step,mean_reward,probe_accuracy,tool_invocations_per_rollout,branch_cf_fraction,episodes,phase";

    pub fn csv(&self) -> String {
        let probe = self.probe_accuracy.map(|p| p.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.mean_reward,
            probe,
            self.tool_invocations_per_rollout,
            self.branch_cf_fraction,
            self.episodes,
            self.phase
        )
    }
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamsFile,
    pub reference: Vec<f64>,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    pub step: usize,
    pub episodes: usize,
    pub phase: usize,
    pub phase_episodes: usize,
    pub route_cursor: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

struct PhaseData {
    train: Vec<TaskInstance>,
    probe: Vec<TaskInstance>,
    routes: Vec<EnvId>,
    opts: RolloutOptions,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub catalog: ActionCatalog,
    pub registry: EnvRegistry,
    pub params: PolicyParameters,
    pub reference: PolicyParameters,
    pub adam: Adam,
    rng: ChaCha8Rng,
    pub step: usize,
    pub episodes: usize,
    pub phase: usize,
    phase_episodes: usize,
    route_cursor: usize,
    phases: Vec<PhaseData>,
}

fn routes_for(phase: &Phase, tasks: &[TaskInstance], catalog: &ActionCatalog) -> Result<Vec<EnvId>> {
    let names: Vec<String> = if phase.routes.is_empty() {
        let sorting = tasks.iter().any(|t| matches!(t.kind, TaskKind::Sort | TaskKind::Order));
        if sorting { vec!["compare".into(), "swap".into()] } else { vec!["calculator".into()] }
    } else {
        phase.routes.clone()
    };
    names
        .iter()
        .map(|n| catalog.env_by_name(n).map(|e| e.id).ok_or_else(|| Error::Config(format!("unknown environment {n:?}"))))
        .collect()
}

fn load_phases(cfg: &TrainConfig, catalog: &ActionCatalog) -> Result<Vec<PhaseData>> {
    cfg.phases
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let seed = cfg.seed.wrapping_add(1000 * i as u64);
            let train = p.train.load(seed)?;
            let probe = match (&p.probe, &p.train) {
                (Some(src), _) => src.load(seed + 1)?,
                (None, TaskSource::Generate(g)) => generate(&g.with_n_instances(cfg.probe.size), seed + 1)?,
                (None, TaskSource::Path(_)) => unreachable!("rejected by validation"),
            };
            for t in train.iter().chain(&probe) {
                t.validate(catalog)?;
            }
            let kind = train[0].kind;
            let mut opts = RolloutOptions::new(p.max_steps.unwrap_or_else(|| default_max_steps(kind)));
            opts.reward = cfg.reward.clone();
            Ok(PhaseData { routes: routes_for(p, &train, catalog)?, train, probe, opts })
        })
        .collect()
}

/// Fraction of `tasks` solved by `params` (greedy or sampled decoding).
pub fn evaluate_accuracy(
    params: &PolicyParameters,
    tasks: &[TaskInstance],
    catalog: &ActionCatalog,
    registry: &EnvRegistry,
    opts: &RolloutOptions,
    seed: u64,
) -> Result<f64> {
    let policy = NeuralPolicy::new(params);
    let hits = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            rollout(&policy, t, catalog, registry, opts, &mut rng).map(|r| solved(&r, t, catalog))
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / tasks.len().max(1) as f64)
}

impl Trainer {
    /// Seeded initialization, optional language pretraining on synthetic
    /// transcripts, description-based initialization of the expanded rows,
    /// and a frozen reference copy.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let catalog = ActionCatalog::standard();
        let registry = EnvRegistry::from_catalog(&catalog);
        let phases = load_phases(&config, &catalog)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = PolicyParameters::new(config.policy, &catalog, &mut rng)?;
        if config.pretrain.transcripts > 0 {
            let pool: Vec<&TaskInstance> = phases.iter().flat_map(|p| &p.train).collect();
            let picked: Vec<TaskInstance> =
                (0..config.pretrain.transcripts).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect();
            let corpus = build_corpus(&picked, &config.pretrain.corpus, &catalog, &registry, &mut rng)?;
            pretrain_language(&mut params, &corpus, &config.pretrain.lm, &mut rng)?;
        }
        params.init_expanded_actions(&catalog)?;
        params.version = 0;
        let reference = params.clone();
        let adam = config.update.adam(params.len());
        Ok(Self {
            config,
            catalog,
            registry,
            params,
            reference,
            adam,
            rng,
            step: 0,
            episodes: 0,
            phase: 0,
            phase_episodes: 0,
            route_cursor: 0,
            phases,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: ParamsFile::new(&self.params, &self.catalog),
            reference: self.reference.data.clone(),
            adam: self.adam.clone(),
            rng: self.rng.clone(),
            step: self.step,
            episodes: self.episodes,
            phase: self.phase,
            phase_episodes: self.phase_episodes,
            route_cursor: self.route_cursor,
        }
    }

    pub fn from_checkpoint(cp: Checkpoint) -> Result<Self> {
        cp.config.validate()?;
        let catalog = ActionCatalog::standard();
        let registry = EnvRegistry::from_catalog(&catalog);
        let phases = load_phases(&cp.config, &catalog)?;
        let params = cp.params.into_params(&catalog)?;
        let reference =
            PolicyParameters::from_data(params.config, params.n_vocab, params.n_actions, cp.reference, 0)?;
        if cp.adam.m.len() != params.len() {
            return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
        }
        Ok(Self {
            config: cp.config,
            catalog,
            registry,
            params,
            reference,
            adam: cp.adam,
            rng: cp.rng,
            step: cp.step,
            episodes: cp.episodes,
            phase: cp.phase,
            phase_episodes: cp.phase_episodes,
            route_cursor: cp.route_cursor,
            phases,
        })
    }

    pub fn finished(&self) -> bool {
        self.phase >= self.phases.len() || self.config.max_updates.is_some_and(|m| self.step >= m)
    }

    /// Rollout options of phase `i`.
    pub fn rollout_options(&self, i: usize) -> &RolloutOptions {
        &self.phases[i].opts
    }

    pub fn probe_set(&self, i: usize) -> &[TaskInstance] {
        &self.phases[i].probe
    }

    /// Greedy accuracy on the probe set of phase `i`.
    pub fn probe(&self, i: usize) -> Result<f64> {
        let ph = &self.phases[i];
        evaluate_accuracy(&self.params, &ph.probe, &self.catalog, &self.registry, &ph.opts.clone().greedy(), 0)
    }

    /// One optimizer step; `None` once every phase is done.
    pub fn step(&mut self) -> Result<Option<MetricsRow>> {
        if self.finished() {
            return Ok(None);
        }
        let ph = &self.phases[self.phase];
        let groups = self.config.update.groups_per_step;
        let tasks: Vec<TaskInstance> =
            (0..groups).map(|_| ph.train[self.rng.gen_range(0..ph.train.len())].clone()).collect();
        let ctx = UpdateContext { catalog: &self.catalog, registry: &self.registry, rollout: &ph.opts };
        let m: BatchMetrics = match self.config.update.advantage_mode {
            AdvantageMode::Cpo => {
                let route = ph.routes[self.route_cursor % ph.routes.len()];
                self.route_cursor += 1;
                cpo_batch_update(
                    &mut self.params,
                    &mut self.adam,
                    &self.reference,
                    &tasks,
                    route,
                    &self.config.update,
                    &ctx,
                    &mut self.rng,
                )?
            }
            AdvantageMode::Grpo => grpo_batch_update(
                &mut self.params,
                &mut self.adam,
                &self.reference,
                &tasks,
                &self.config.update,
                &ctx,
                &mut self.rng,
            )?,
        };
        self.step += 1;
        self.episodes += m.episodes;
        self.phase_episodes += m.episodes;
        let budget_done = self.phase_episodes >= self.config.phases[self.phase].episodes;
        let due = self.step.is_multiple_of(self.config.probe.every);
        let advance_at = self.config.phases[self.phase].advance_at;
        let probe_accuracy = if due || budget_done { Some(self.probe(self.phase)?) } else { None };
        let row = MetricsRow {
            step: self.step,
            mean_reward: m.mean_reward,
            probe_accuracy,
            tool_invocations_per_rollout: m.tool_invocations,
            branch_cf_fraction: m.cf_fraction,
            episodes: self.episodes,
            phase: self.phase,
        };
        let passed = matches!((probe_accuracy, advance_at), (Some(a), Some(t)) if a >= t);
        if budget_done || passed {
            self.phase += 1;
            self.phase_episodes = 0;
        }
        Ok(Some(row))
    }

    /// Train to completion, writing metrics rows and optional periodic
    /// checkpoints.
    pub fn run<W: Write>(&mut self, mut metrics: W, checkpoint: Option<(&Path, usize)>) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        if self.step == 0 {
            writeln!(metrics, "{}", MetricsRow::HEADER)?;
        }
        while let Some(row) = self.step()? {
            writeln!(metrics, "{}", row.csv())?;
            if let Some((path, every)) = checkpoint {
                if every > 0 && self.step.is_multiple_of(every) {
                    self.checkpoint().save(path)?;
                }
            }
            rows.push(row);
        }
        metrics.flush()?;
        if let Some((path, _)) = checkpoint {
            self.checkpoint().save(path)?;
        }
        Ok(rows)
    }
}
