//! A small causal transformer over history tokens with hand-written
//! backpropagation.
//!
//! Input at position j is the token embedding plus an embedding of the
//! previous token plus a learned position embedding; position 0 holds a
//! begin token outside the vocabulary. Each layer is multi-head causal
//! self-attention followed by a tanh feed-forward block, both residual.
//! Outputs at a position depend only on tokens up to it, so inference can
//! extend cached keys and values one token at a time.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Positions beyond this share the last position embedding.
    pub max_positions: usize,
    pub init_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { d_model: 64, n_heads: 4, n_layers: 2, d_ff: 128, max_positions: 512, init_std: 0.1 }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config("d_model must be a positive multiple of n_heads".into()));
        }
        if self.max_positions == 0 || self.d_ff == 0 {
            return Err(Error::Config("max_positions and d_ff must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub d: usize,
    pub heads: usize,
    pub ff: usize,
    pub positions: usize,
    /// Embedding rows: the vocabulary plus the begin token.
    pub rows: usize,
    pub emb: usize,
    pub prev: usize,
    pub pos: usize,
    pub layers: Vec<LayerOffsets>,
    pub head: usize,
    pub n_actions: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &PolicyConfig, n_vocab: usize, n_actions: usize) -> Self {
        let d = cfg.d_model;
        let rows = n_vocab + 1;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let emb = take(rows * d);
        let prev = take(rows * d);
        let pos = take(cfg.max_positions * d);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerOffsets {
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                w1: take(cfg.d_ff * d),
                b1: take(cfg.d_ff),
                w2: take(d * cfg.d_ff),
                b2: take(d),
            })
            .collect();
        let head = take(n_actions * d);
        Self {
            d,
            heads: cfg.n_heads,
            ff: cfg.d_ff,
            positions: cfg.max_positions,
            rows,
            emb,
            prev,
            pos,
            layers,
            head,
            n_actions,
            total: at,
        }
    }

    /// Embedding row of the begin token.
    pub fn bos(&self) -> usize {
        self.rows - 1
    }

    pub fn head_row(&self, action: usize) -> std::ops::Range<usize> {
        let s = self.head + action * self.d;
        s..s + self.d
    }

    /// Random initialization: Gaussian embeddings and weights scaled by
    /// fan-in, zero biases, random vocabulary head rows and zero rows for
    /// expanded actions.
    pub fn init<R: Rng + ?Sized>(&self, cfg: &PolicyConfig, n_vocab: usize, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        let mut fill = |p: &mut [f64], std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            for v in p {
                *v = dist.sample(rng);
            }
        };
        let d = self.d;
        fill(&mut p[self.emb..self.emb + self.rows * d], cfg.init_std);
        fill(&mut p[self.prev..self.prev + self.rows * d], cfg.init_std);
        fill(&mut p[self.pos..self.pos + self.positions * d], cfg.init_std);
        let wstd = 1.0 / (d as f64).sqrt();
        for l in &self.layers {
            for o in [l.wq, l.wk, l.wv, l.wo] {
                fill(&mut p[o..o + d * d], wstd);
            }
            fill(&mut p[l.w1..l.w1 + self.ff * d], wstd);
            fill(&mut p[l.w2..l.w2 + d * self.ff], 1.0 / (self.ff as f64).sqrt());
        }
        fill(&mut p[self.head..self.head + n_vocab * d], cfg.init_std);
        p
    }
}

/// out = W x for a row-major `rows × cols` matrix.
fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// dx += Wᵀ dy.
fn matvec_t_add(w: &[f64], rows: usize, cols: usize, dy: &[f64], dx: &mut [f64]) {
    for r in 0..rows {
        let g = dy[r];
        if g == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (d, a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

/// dW += dy xᵀ.
fn outer_add(dw: &mut [f64], rows: usize, cols: usize, dy: &[f64], x: &[f64]) {
    for r in 0..rows {
        let g = dy[r];
        if g == 0.0 {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, a) in row.iter_mut().zip(x) {
            *d += g * a;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Cached keys and values of one layer, `len × d` each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerKv {
    pub k: Vec<f64>,
    pub v: Vec<f64>,
}

/// Intermediates of one layer at one position, kept for backprop.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerPos {
    x: Vec<f64>,
    q: Vec<f64>,
    probs: Vec<Vec<f64>>,
    c: Vec<f64>,
    y: Vec<f64>,
    h: Vec<f64>,
}

/// Incremental encoder state for one growing history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cursor {
    /// Positions processed, including the begin token.
    pub len: usize,
    pub last_token: usize,
    pub kv: Vec<LayerKv>,
    /// Encoding at the last processed position.
    pub g: Vec<f64>,
}

impl Cursor {
    pub fn new(layout: &Layout) -> Self {
        Self { len: 0, last_token: layout.bos(), kv: vec![LayerKv::default(); layout.layers.len()], g: Vec::new() }
    }

    /// Number of history tokens consumed (excluding the begin token).
    pub fn consumed(&self) -> usize {
        self.len.saturating_sub(1)
    }
}

/// Process one position. `record` receives per-layer intermediates.
fn step(
    p: &[f64],
    lay: &Layout,
    cur: &mut Cursor,
    token: usize,
    mut record: Option<&mut Vec<LayerPos>>,
) -> Vec<f64> {
    let d = lay.d;
    let dh = d / lay.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let j = cur.len;
    let prev = cur.last_token;
    let pj = j.min(lay.positions - 1);
    let mut x: Vec<f64> = (0..d)
        .map(|i| p[lay.emb + token * d + i] + p[lay.prev + prev * d + i] + p[lay.pos + pj * d + i])
        .collect();
    for (l, off) in lay.layers.iter().enumerate() {
        let mut q = vec![0.0; d];
        let mut k = vec![0.0; d];
        let mut v = vec![0.0; d];
        matvec(&p[off.wq..], d, d, &x, &mut q);
        matvec(&p[off.wk..], d, d, &x, &mut k);
        matvec(&p[off.wv..], d, d, &x, &mut v);
        let kv = &mut cur.kv[l];
        kv.k.extend_from_slice(&k);
        kv.v.extend_from_slice(&v);
        let n = j + 1;
        let mut c = vec![0.0; d];
        let mut probs = Vec::with_capacity(lay.heads);
        for h in 0..lay.heads {
            let hs = h * dh..(h + 1) * dh;
            let mut s: Vec<f64> = (0..n)
                .map(|t| {
                    let kt = &kv.k[t * d + hs.start..t * d + hs.end];
                    q[hs.clone()].iter().zip(kt).map(|(a, b)| a * b).sum::<f64>() * scale
                })
                .collect();
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for e in s.iter_mut() {
                *e = (*e - m).exp();
                z += *e;
            }
            for e in s.iter_mut() {
                *e /= z;
            }
            for (t, &a) in s.iter().enumerate() {
                let vt = &kv.v[t * d + hs.start..t * d + hs.end];
                for (ci, vi) in c[hs.clone()].iter_mut().zip(vt) {
                    *ci += a * vi;
                }
            }
            probs.push(s);
        }
        let mut y = x.clone();
        let mut o = vec![0.0; d];
        matvec(&p[off.wo..], d, d, &c, &mut o);
        add_into(&mut y, &o);
        let mut h = vec![0.0; lay.ff];
        matvec(&p[off.w1..], lay.ff, d, &y, &mut h);
        for (hi, b) in h.iter_mut().zip(&p[off.b1..off.b1 + lay.ff]) {
            *hi = (*hi + b).tanh();
        }
        let mut out = y.clone();
        let mut f = vec![0.0; d];
        matvec(&p[off.w2..], d, lay.ff, &h, &mut f);
        for i in 0..d {
            out[i] += f[i] + p[off.b2 + i];
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.push(LayerPos { x, q, probs, c, y, h });
        }
        x = out;
    }
    cur.len += 1;
    cur.last_token = token;
    cur.g = x.clone();
    x
}

/// Feed `tokens` (vocabulary ids) into the cursor, starting with the
/// begin token if the cursor is fresh.
pub fn extend(p: &[f64], lay: &Layout, cur: &mut Cursor, tokens: &[usize]) {
    if cur.len == 0 {
        step(p, lay, cur, lay.bos(), None);
    }
    for &t in tokens {
        step(p, lay, cur, t, None);
    }
}

/// Full forward pass with everything needed for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input rows per position (begin token first).
    pub inputs: Vec<usize>,
    pub kv: Vec<LayerKv>,
    /// `layers[l][j]`.
    layers: Vec<Vec<LayerPos>>,
    /// Encoding per position.
    pub g: Vec<Vec<f64>>,
}

pub fn forward(p: &[f64], lay: &Layout, tokens: &[usize]) -> Trace {
    let mut cur = Cursor::new(lay);
    let mut inputs = Vec::with_capacity(tokens.len() + 1);
    let mut per_pos: Vec<Vec<LayerPos>> = Vec::with_capacity(tokens.len() + 1);
    let mut g = Vec::with_capacity(tokens.len() + 1);
    for t in std::iter::once(lay.bos()).chain(tokens.iter().copied()) {
        let mut rec = Vec::with_capacity(lay.layers.len());
        g.push(step(p, lay, &mut cur, t, Some(&mut rec)));
        inputs.push(t);
        per_pos.push(rec);
    }
    // transpose to layer-major
    let mut layers: Vec<Vec<LayerPos>> = (0..lay.layers.len()).map(|_| Vec::with_capacity(per_pos.len())).collect();
    for rec in per_pos {
        for (l, lp) in rec.into_iter().enumerate() {
            layers[l].push(lp);
        }
    }
    Trace { inputs, kv: cur.kv, layers, g }
}

/// Accumulate into `grad` the gradient of Σ_j dg_j · g_j, where `dg` maps
/// positions to output gradients.
pub fn backward(p: &[f64], lay: &Layout, tr: &Trace, dg: &[(usize, Vec<f64>)], grad: &mut [f64]) {
    let Some(last) = dg.iter().map(|(j, _)| *j).max() else {
        return;
    };
    let n = last + 1;
    let d = lay.d;
    let dh = d / lay.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dx = vec![vec![0.0; d]; n];
    for (j, g) in dg {
        add_into(&mut dx[*j], g);
    }
    for (l, off) in lay.layers.iter().enumerate().rev() {
        let kv = &tr.kv[l];
        let recs = &tr.layers[l];
        let mut dq = vec![vec![0.0; d]; n];
        let mut dk = vec![vec![0.0; d]; n];
        let mut dv = vec![vec![0.0; d]; n];
        let mut dx_in = vec![vec![0.0; d]; n];
        for i in 0..n {
            let r = &recs[i];
            let dz = &dx[i];
            // feed-forward
            let mut dpre = vec![0.0; lay.ff];
            matvec_t_add(&p[off.w2..], d, lay.ff, dz, &mut dpre);
            for (g, h) in dpre.iter_mut().zip(&r.h) {
                *g *= 1.0 - h * h;
            }
            outer_add(&mut grad[off.w2..], d, lay.ff, dz, &r.h);
            add_into(&mut grad[off.b2..off.b2 + d], dz);
            outer_add(&mut grad[off.w1..], lay.ff, d, &dpre, &r.y);
            add_into(&mut grad[off.b1..off.b1 + lay.ff], &dpre);
            let mut dy = dz.clone();
            matvec_t_add(&p[off.w1..], lay.ff, d, &dpre, &mut dy);
            // attention output
            outer_add(&mut grad[off.wo..], d, d, &dy, &r.c);
            let mut dc = vec![0.0; d];
            matvec_t_add(&p[off.wo..], d, d, &dy, &mut dc);
            add_into(&mut dx_in[i], &dy);
            for h in 0..lay.heads {
                let hs = h * dh..(h + 1) * dh;
                let pr = &r.probs[h];
                let dch = &dc[hs.clone()];
                let dp: Vec<f64> = (0..=i)
                    .map(|t| dch.iter().zip(&kv.v[t * d + hs.start..t * d + hs.end]).map(|(a, b)| a * b).sum())
                    .collect();
                let dot: f64 = pr.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for t in 0..=i {
                    let a = pr[t];
                    for (dvt, g) in dv[t][hs.clone()].iter_mut().zip(dch) {
                        *dvt += a * g;
                    }
                    let ds = a * (dp[t] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kt = &kv.k[t * d + hs.start..t * d + hs.end];
                    for (dqi, kk) in dq[i][hs.clone()].iter_mut().zip(kt) {
                        *dqi += ds * kk;
                    }
                    for (dkt, qq) in dk[t][hs.clone()].iter_mut().zip(&r.q[hs.clone()]) {
                        *dkt += ds * qq;
                    }
                }
            }
        }
        for j in 0..n {
            let x = &recs[j].x;
            for (w, g) in [(off.wq, &dq[j]), (off.wk, &dk[j]), (off.wv, &dv[j])] {
                outer_add(&mut grad[w..], d, d, g, x);
                matvec_t_add(&p[w..], d, d, g, &mut dx_in[j]);
            }
        }
        dx = dx_in;
    }
    for (j, g) in dx.iter().enumerate() {
        let tok = tr.inputs[j];
        let prev = if j == 0 { lay.bos() } else { tr.inputs[j - 1] };
        let pj = j.min(lay.positions - 1);
        add_into(&mut grad[lay.emb + tok * d..lay.emb + (tok + 1) * d], g);
        add_into(&mut grad[lay.prev + prev * d..lay.prev + (prev + 1) * d], g);
        add_into(&mut grad[lay.pos + pj * d..lay.pos + (pj + 1) * d], g);
    }
}
