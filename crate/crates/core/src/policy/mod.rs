//! Policy over the expanded action space: π(a | h, e) = σ_e(W g(h)).
//!
//! `g` is the causal transformer in [`net`]; `W` has one row per action in
//! global index order, with no bias. σ_e is a softmax restricted to the
//! actions available in environment `e`.

pub mod dist;
pub mod net;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dist::{log_softmax, softmax, ActionDistribution};
pub use net::{Cursor, Layout, PolicyConfig};

use crate::catalog::{ActionCatalog, ActionKind, EnvId, TokenId};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rollout::{GlobalState, Policy, Rollout};

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    pub config: PolicyConfig,
    pub n_vocab: usize,
    pub n_actions: usize,
    /// Flat parameter vector; see [`Layout`].
    pub data: Vec<f64>,
    /// Incremented by every update.
    pub version: u64,
    layout: Layout,
}

impl PolicyParameters {
    /// Random encoder and vocabulary rows; expanded-action rows start at zero.
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, catalog: &ActionCatalog, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, catalog.vocab_len(), catalog.n_actions());
        let data = layout.init(&config, catalog.vocab_len(), rng);
        Ok(Self { config, n_vocab: catalog.vocab_len(), n_actions: catalog.n_actions(), data, version: 0, layout })
    }

    pub fn from_data(config: PolicyConfig, n_vocab: usize, n_actions: usize, data: Vec<f64>, version: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, n_vocab, n_actions);
        if data.len() != layout.total {
            return Err(Error::Checkpoint(format!("expected {} parameters, found {}", layout.total, data.len())));
        }
        Ok(Self { config, n_vocab, n_actions, data, version, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn head_row(&self, action: usize) -> &[f64] {
        &self.data[self.layout.head_row(action)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Encoding g(h) of a history.
    pub fn encode(&self, history: &[TokenId]) -> Vec<f64> {
        let toks: Vec<usize> = history.iter().map(|t| t.0).collect();
        let mut cur = Cursor::new(&self.layout);
        net::extend(&self.data, &self.layout, &mut cur, &toks);
        cur.g
    }

    /// Logits W g for the actions in `range`.
    pub fn logits(&self, g: &[f64], range: std::ops::Range<usize>) -> Vec<f64> {
        range.map(|a| self.head_row(a).iter().zip(g).map(|(w, x)| w * x).sum()).collect()
    }

    /// Accumulate the head and encoder-output gradients of Σ dz_a z_a over
    /// `range`.
    pub fn head_backward(&self, g: &[f64], range: std::ops::Range<usize>, dz: &[f64], grad: &mut [f64], dg: &mut [f64]) {
        for (a, &dza) in range.zip(dz) {
            if dza == 0.0 {
                continue;
            }
            let r = self.layout.head_row(a);
            for (gr, x) in grad[r].iter_mut().zip(g) {
                *gr += dza * x;
            }
            for (d, w) in dg.iter_mut().zip(self.head_row(a)) {
                *d += dza * w;
            }
        }
    }

    pub fn check_catalog(&self, catalog: &ActionCatalog) -> Result<()> {
        if catalog.vocab_len() != self.n_vocab || catalog.n_actions() != self.n_actions {
            return Err(Error::Config("parameters do not match the action catalog".into()));
        }
        Ok(())
    }

    /// Copy the head row of each expanded action's description token (the
    /// mean of the rows for multi-token descriptions).
    pub fn init_expanded_actions(&mut self, catalog: &ActionCatalog) -> Result<()> {
        self.check_catalog(catalog)?;
        let d = self.layout.d;
        for a in catalog.vocab_len()..catalog.n_actions() {
            let action = catalog.action(a);
            let desc = catalog
                .desc(action)
                .ok_or_else(|| Error::Config(format!("action {} has no description", catalog.label(action))))?
                .to_vec();
            if desc.is_empty() {
                return Err(Error::Config(format!("action {} has an empty description", catalog.label(action))));
            }
            let row = if desc.len() == 1 {
                self.head_row(desc[0].0).to_vec()
            } else {
                let mut acc = vec![0.0; d];
                for t in &desc {
                    for (s, w) in acc.iter_mut().zip(self.head_row(t.0)) {
                        *s += w;
                    }
                }
                acc.iter().map(|s| s / desc.len() as f64).collect()
            };
            let r = self.layout.head_row(a);
            self.data[r].copy_from_slice(&row);
        }
        Ok(())
    }
}

/// π(· | h, e) restricted to the actions available in `env`.
pub fn action_distribution(
    params: &PolicyParameters,
    history: &[TokenId],
    env: EnvId,
    catalog: &ActionCatalog,
) -> Result<ActionDistribution> {
    let support = catalog.support(env)?;
    let g = params.encode(history);
    Ok(ActionDistribution { probs: softmax(&params.logits(&g, support.clone())), support })
}

/// Rollout adapter with incremental encoding.
#[derive(Debug, Clone, Copy)]
pub struct NeuralPolicy<'a> {
    pub params: &'a PolicyParameters,
}

impl<'a> NeuralPolicy<'a> {
    pub fn new(params: &'a PolicyParameters) -> Self {
        Self { params }
    }
}

impl Policy for NeuralPolicy<'_> {
    type Cursor = Cursor;

    fn cursor(&self) -> Cursor {
        Cursor::new(self.params.layout())
    }

    fn distribution(&self, cur: &mut Cursor, state: &GlobalState, catalog: &ActionCatalog) -> ActionDistribution {
        let h = state.history();
        let fresh: Vec<usize> = h[cur.consumed().min(h.len())..].iter().map(|t| t.0).collect();
        if cur.len == 0 || !fresh.is_empty() {
            net::extend(&self.params.data, self.params.layout(), cur, &fresh);
        }
        let support = catalog.support(state.active_env).expect("valid active env");
        let z = self.params.logits(&cur.g, support.clone());
        ActionDistribution { probs: softmax(&z), support }
    }
}

/// Encoder outputs at every decision of a rollout, from one forward pass
/// over its final history.
pub struct RolloutPass {
    pub trace: net::Trace,
}

impl RolloutPass {
    pub fn new(params: &PolicyParameters, rollout: &Rollout) -> Self {
        let toks: Vec<usize> = rollout.final_state.history().iter().map(|t| t.0).collect();
        Self { trace: net::forward(&params.data, params.layout(), &toks) }
    }

    /// Encoding used for the decision whose history had length `pre_len`.
    pub fn g(&self, pre_len: usize) -> &[f64] {
        &self.trace.g[pre_len]
    }
}

/// Log-probability of every trainable action of `rollout`, recomputed from
/// the stored histories: (record index, log π).
pub fn sequence_logprob(params: &PolicyParameters, rollout: &Rollout, catalog: &ActionCatalog) -> Result<Vec<(usize, f64)>> {
    let pass = RolloutPass::new(params, rollout);
    let mut out = Vec::new();
    for (i, r) in rollout.records.iter().enumerate() {
        if !r.trainable {
            continue;
        }
        let support = catalog.support(r.env)?;
        let lp = log_softmax(&params.logits(pass.g(r.pre_history_len), support.clone()));
        out.push((i, lp[r.action.global - support.start]));
    }
    Ok(out)
}

/// KL(p‖q) between the softmaxes of two logit vectors, and its gradient
/// with respect to the first: p_a (log(p_a / q_a) − KL).
pub fn kl_with_grad(z_p: &[f64], z_q: &[f64]) -> (f64, Vec<f64>) {
    let lp = log_softmax(z_p);
    let lq = log_softmax(z_q);
    let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    let kl: f64 = p.iter().zip(lp.iter().zip(&lq)).map(|(pa, (a, b))| pa * (a - b)).sum();
    let grad = p.iter().zip(lp.iter().zip(&lq)).map(|(pa, (a, b))| pa * (a - b - kl)).collect();
    (kl, grad)
}

/// KL between the vocabulary-restricted distributions of two parameter
/// sets at `history`.
pub fn kl_vocab(params: &PolicyParameters, reference: &PolicyParameters, history: &[TokenId]) -> f64 {
    let v = 0..params.n_vocab;
    let zp = params.logits(&params.encode(history), v.clone());
    let zq = reference.logits(&reference.encode(history), v);
    kl_with_grad(&zp, &zq).0
}

/// [`kl_vocab`] plus its gradient with respect to `params`, accumulated
/// into `grad`.
pub fn kl_vocab_grad(params: &PolicyParameters, reference: &PolicyParameters, history: &[TokenId], grad: &mut [f64]) -> f64 {
    let toks: Vec<usize> = history.iter().map(|t| t.0).collect();
    let tr = net::forward(&params.data, params.layout(), &toks);
    let g = &tr.g[toks.len()];
    let v = 0..params.n_vocab;
    let zp = params.logits(g, v.clone());
    let zq = reference.logits(&reference.encode(history), v.clone());
    let (kl, dz) = kl_with_grad(&zp, &zq);
    let mut dg = vec![0.0; params.layout().d];
    params.head_backward(g, v, &dz, grad, &mut dg);
    net::backward(&params.data, params.layout(), &tr, &[(toks.len(), dg)], grad);
    kl
}

/// Language-model pretraining settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { epochs: 4, learning_rate: 1e-3, batch_size: 16 }
    }
}

/// A pretraining sequence. Only positions with `scored[j]` contribute to
/// the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub tokens: Vec<TokenId>,
    pub scored: Vec<bool>,
}

impl Transcript {
    /// Every position scored.
    pub fn plain(tokens: Vec<TokenId>) -> Self {
        let scored = vec![true; tokens.len()];
        Self { tokens, scored }
    }
}

/// Summed next-token cross-entropy over the vocabulary for one sequence,
/// optionally accumulating its gradient. Returns (loss, scored tokens).
pub fn sequence_nll(params: &PolicyParameters, seq: &Transcript, grad: Option<&mut [f64]>) -> (f64, usize) {
    let toks: Vec<usize> = seq.tokens.iter().map(|t| t.0).collect();
    let tr = net::forward(&params.data, params.layout(), &toks);
    let v = 0..params.n_vocab;
    let (mut loss, mut count) = (0.0, 0);
    let mut dgs = Vec::with_capacity(toks.len());
    let mut head_grad = grad.is_some().then(|| vec![0.0; params.len()]);
    for (j, &next) in toks.iter().enumerate() {
        if !seq.scored.get(j).copied().unwrap_or(false) {
            continue;
        }
        count += 1;
        let g = &tr.g[j];
        let z = params.logits(g, v.clone());
        let lp = log_softmax(&z);
        loss -= lp[next];
        if let Some(hg) = head_grad.as_mut() {
            let mut dz: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
            dz[next] -= 1.0;
            let mut dg = vec![0.0; params.layout().d];
            params.head_backward(g, v.clone(), &dz, hg, &mut dg);
            dgs.push((j, dg));
        }
    }
    if let (Some(grad), Some(hg)) = (grad, head_grad) {
        for (a, b) in grad.iter_mut().zip(&hg) {
            *a += b;
        }
        net::backward(&params.data, params.layout(), &tr, &dgs, grad);
    }
    (loss, count)
}

/// Mean next-token cross-entropy (nats per scored token) over a corpus.
pub fn language_loss(params: &PolicyParameters, corpus: &[Transcript]) -> f64 {
    let (mut total, mut count) = (0.0, 0);
    for s in corpus {
        let (l, n) = sequence_nll(params, s, None);
        total += l;
        count += n;
    }
    total / count.max(1) as f64
}

/// Next-token cross-entropy minimization over the vocabulary with Adam.
/// Expanded-action rows receive no gradient and stay untouched. Returns the
/// corpus loss after each epoch.
pub fn pretrain_language<R: Rng + ?Sized>(
    params: &mut PolicyParameters,
    corpus: &[Transcript],
    cfg: &LmConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut adam = Adam::new(params.len(), cfg.learning_rate, 0.9, 0.999);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; params.len()];
            let mut tokens = 0;
            for &i in batch {
                tokens += sequence_nll(params, &corpus[i], Some(&mut grad)).1;
            }
            let scale = 1.0 / tokens.max(1) as f64;
            for g in grad.iter_mut() {
                *g *= scale;
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("language pretraining gradient".into()));
            }
            adam.descend(&mut params.data, &grad);
            params.version += 1;
        }
        losses.push(language_loss(params, corpus));
    }
    Ok(losses)
}

/// Checkpoint of policy parameters bound to a catalog.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsFile {
    pub catalog_hash: String,
    pub config: PolicyConfig,
    pub n_vocab: usize,
    pub n_actions: usize,
    pub version: u64,
    pub data: Vec<f64>,
}

impl ParamsFile {
    pub fn new(params: &PolicyParameters, catalog: &ActionCatalog) -> Self {
        Self {
            catalog_hash: catalog.hash(),
            config: params.config,
            n_vocab: params.n_vocab,
            n_actions: params.n_actions,
            version: params.version,
            data: params.data.clone(),
        }
    }

    pub fn into_params(self, catalog: &ActionCatalog) -> Result<PolicyParameters> {
        if self.catalog_hash != catalog.hash() {
            return Err(Error::Checkpoint("catalog hash mismatch".into()));
        }
        PolicyParameters::from_data(self.config, self.n_vocab, self.n_actions, self.data, self.version)
    }
}

pub fn save_params(path: &Path, params: &PolicyParameters, catalog: &ActionCatalog) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(f, &ParamsFile::new(params, catalog))?;
    Ok(())
}

pub fn load_params(path: &Path, catalog: &ActionCatalog) -> Result<PolicyParameters> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let file: ParamsFile = serde_json::from_reader(f)?;
    file.into_params(catalog)
}

/// Whether a record's action is a route into some environment.
pub fn is_route(kind: ActionKind) -> bool {
    matches!(kind, ActionKind::Route { .. })
}
