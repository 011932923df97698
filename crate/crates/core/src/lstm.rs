//! LSTM path encoder and softmax relation classifier.
//!
//! A rendered dependency path is read token by token (words and edge labels
//! alike). Each token is looked up in the embedding matrix `E` and fed to a
//! single LSTM cell:
//!
//! ```text
//! i = σ(W_xi x + U_hi h + b_i)     f = σ(W_xf x + U_hf h + b_f)
//! o = σ(W_xo x + U_ho h + b_o)     u = tanh(W_xu x + U_hu h + b_u)
//! c' = i ⊙ u + f ⊙ c               h' = o ⊙ tanh(c')
//! ```
//!
//! The last hidden state is the path encoding `v`, and the class
//! distribution is `softmax(W_r v)` with the positive class at index 0.
//!
//! Training minimizes cross-entropy with per-example gradient steps.
//! Gradients come from backpropagation through time. Rows of `E` for words
//! found in pretrained vectors are frozen unless fine-tuning is on; edge
//! labels and unknown words always learn.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::EmbeddingStore;
use crate::format::round_sig9;
use crate::paths::{Relation, RelationExample};

pub const UNK: &str = "<unk>";
pub const MODEL_FORMAT: &str = "soundkb-lstm-relation";
pub const MODEL_VERSION: u32 = 1;

/// Gate order used by every `[_; 4]` array in this module.
pub const GATE_I: usize = 0;
pub const GATE_F: usize = 1;
pub const GATE_O: usize = 2;
pub const GATE_U: usize = 3;
const GATE_NAMES: [&str; 4] = ["i", "f", "o", "u"];

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite input")]
    NonFinite,
    #[error("empty path")]
    EmptyPath,
    #[error("embedding dimension {store} does not match model dimension {model}")]
    EmbeddingDim { store: usize, model: usize },
    #[error("training data needs at least one positive and one negative example")]
    SingleClass,
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("model file: {0}")]
    Model(String),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Self {
        Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.gen_range(-scale..=scale)).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `acc += self · x`
    fn mul_vec_into(&self, x: &[f64], acc: &mut [f64]) {
        for (r, a) in acc.iter_mut().enumerate() {
            *a += self.row(r).iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// `acc += selfᵀ · y`
    fn tmul_vec_into(&self, y: &[f64], acc: &mut [f64]) {
        for (r, yr) in y.iter().enumerate() {
            for (a, w) in acc.iter_mut().zip(self.row(r)) {
                *a += w * yr;
            }
        }
    }

    /// `self += y xᵀ`
    fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        for (r, yr) in y.iter().enumerate() {
            for (w, xv) in self.row_mut(r).iter_mut().zip(x) {
                *w += yr * xv;
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Path token vocabulary. Id 0 is the shared unknown token.
#[derive(Debug, Clone, PartialEq)]
pub struct PathVocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    learned: Vec<bool>,
}

pub fn is_edge_label(token: &str) -> bool {
    token.ends_with("()")
}

pub fn path_tokens(path: &str) -> Vec<&str> {
    path.split_whitespace().collect()
}

impl PathVocab {
    /// Collects tokens from rendered paths (sorted). A word is pretrained
    /// when `store` has a vector for it; edge labels never are.
    pub fn build<'a, I>(paths: I, store: Option<&EmbeddingStore>) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let set: BTreeSet<&str> = paths.into_iter().flat_map(path_tokens).collect();
        let entries = set.into_iter().map(|t| {
            let pretrained = !is_edge_label(t) && store.is_some_and(|s| s.contains(t));
            (t.to_string(), !pretrained)
        });
        Self::from_entries(entries)
    }

    fn from_entries<I: IntoIterator<Item = (String, bool)>>(entries: I) -> Self {
        let mut v = PathVocab {
            tokens: vec![UNK.to_string()],
            ids: HashMap::from([(UNK.to_string(), 0)]),
            learned: vec![true],
        };
        for (tok, learned) in entries {
            if tok == UNK || v.ids.contains_key(&tok) {
                continue;
            }
            let learned = learned || is_edge_label(&tok);
            v.ids.insert(tok.clone(), v.tokens.len());
            v.tokens.push(tok);
            v.learned.push(learned);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn is_learned(&self, id: usize) -> bool {
        self.learned[id]
    }

    pub fn learned_flags(&self) -> &[bool] {
        &self.learned
    }

    pub fn encode(&self, path: &str) -> Vec<usize> {
        path_tokens(path).into_iter().map(|t| self.id(t)).collect()
    }
}

/// Weights shared by every time step: `[W_x; 4]` (h×d), `[U_h; 4]` (h×h),
/// `[b; 4]` (h), in i, f, o, u order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub wx: [Matrix; 4],
    pub uh: [Matrix; 4],
    pub b: [Vec<f64>; 4],
}

impl CellParams {
    pub fn zeros(d: usize, h: usize) -> Self {
        CellParams {
            wx: std::array::from_fn(|_| Matrix::zeros(h, d)),
            uh: std::array::from_fn(|_| Matrix::zeros(h, h)),
            b: std::array::from_fn(|_| vec![0.0; h]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.wx[0].cols
    }

    pub fn hidden(&self) -> usize {
        self.uh[0].rows
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::with_capacity(12);
        v.extend(self.wx.iter().map(|m| m.data.as_slice()));
        v.extend(self.uh.iter().map(|m| m.data.as_slice()));
        v.extend(self.b.iter().map(Vec::as_slice));
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::with_capacity(12);
        v.extend(self.wx.iter_mut().map(|m| m.data.as_mut_slice()));
        v.extend(self.uh.iter_mut().map(|m| m.data.as_mut_slice()));
        v.extend(self.b.iter_mut().map(Vec::as_mut_slice));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// |V|×d, one row per vocabulary id.
    pub embed: Matrix,
    pub cell: CellParams,
    /// 2×h output projection.
    pub out: Matrix,
}

impl LstmParams {
    pub fn zeros(vocab_len: usize, d: usize, h: usize) -> Self {
        LstmParams {
            embed: Matrix::zeros(vocab_len, d),
            cell: CellParams::zeros(d, h),
            out: Matrix::zeros(2, h),
        }
    }

    pub fn dim(&self) -> usize {
        self.embed.cols
    }

    pub fn hidden(&self) -> usize {
        self.cell.hidden()
    }

    pub fn is_finite(&self) -> bool {
        self.embed.data.iter().all(|v| v.is_finite())
            && self.out.data.iter().all(|v| v.is_finite())
            && self.cell.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Gradient of the loss, shaped like [`LstmParams`]. Only touched rows of
/// the embedding matrix are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed: BTreeMap<usize, Vec<f64>>,
    pub cell: CellParams,
    pub out: Matrix,
}

impl Gradients {
    fn zeros(d: usize, h: usize) -> Self {
        Gradients {
            embed: BTreeMap::new(),
            cell: CellParams::zeros(d, h),
            out: Matrix::zeros(2, h),
        }
    }

    pub fn norm(&self) -> f64 {
        let mut s: f64 = self.embed.values().flatten().map(|v| v * v).sum();
        s += self.out.data.iter().map(|v| v * v).sum::<f64>();
        for sl in self.cell.slices() {
            s += sl.iter().map(|v| v * v).sum::<f64>();
        }
        s.sqrt()
    }

    fn scale(&mut self, k: f64) {
        self.embed.values_mut().flatten().for_each(|v| *v *= k);
        self.out.data.iter_mut().for_each(|v| *v *= k);
        for sl in self.cell.slices_mut() {
            sl.iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// Everything one cell step produces; the gates are kept for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub gates: [Vec<f64>; 4],
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn lstm_cell(cell: &CellParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<CellState, LstmError> {
    let (d, h) = (cell.input_dim(), cell.hidden());
    if x.len() != d || h_prev.len() != h || c_prev.len() != h {
        return Err(LstmError::Shape(format!(
            "cell expects x:{d} h:{h} c:{h}, got x:{} h:{} c:{}",
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    if ![x, h_prev, c_prev].iter().all(|v| v.iter().all(|a| a.is_finite())) {
        return Err(LstmError::NonFinite);
    }
    let gates: [Vec<f64>; 4] = std::array::from_fn(|g| {
        let mut z = cell.b[g].clone();
        cell.wx[g].mul_vec_into(x, &mut z);
        cell.uh[g].mul_vec_into(h_prev, &mut z);
        if g == GATE_U {
            z.iter().map(|v| v.tanh()).collect()
        } else {
            z.into_iter().map(sigmoid).collect()
        }
    });
    let c: Vec<f64> = (0..h)
        .map(|k| gates[GATE_I][k] * gates[GATE_U][k] + gates[GATE_F][k] * c_prev[k])
        .collect();
    let hn: Vec<f64> = (0..h).map(|k| gates[GATE_O][k] * c[k].tanh()).collect();
    Ok(CellState { gates, c, h: hn })
}

/// Per-step states of one encoded path. `steps[t]` is the state after
/// reading token `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEncoding {
    pub ids: Vec<usize>,
    pub steps: Vec<CellState>,
}

impl PathEncoding {
    /// The path vector `v_p`: the hidden state after the last token.
    pub fn vector(&self) -> &[f64] {
        &self.steps.last().expect("non-empty").h
    }
}

pub fn encode_ids(params: &LstmParams, ids: &[usize]) -> Result<PathEncoding, LstmError> {
    if ids.is_empty() {
        return Err(LstmError::EmptyPath);
    }
    let h = params.hidden();
    let mut steps: Vec<CellState> = Vec::with_capacity(ids.len());
    let zero = vec![0.0; h];
    for &id in ids {
        if id >= params.embed.rows {
            return Err(LstmError::Shape(format!("token id {id} outside embedding matrix")));
        }
        let (hp, cp) = match steps.last() {
            Some(s) => (s.h.as_slice(), s.c.as_slice()),
            None => (zero.as_slice(), zero.as_slice()),
        };
        let s = lstm_cell(&params.cell, params.embed.row(id), hp, cp)?;
        steps.push(s);
    }
    Ok(PathEncoding {
        ids: ids.to_vec(),
        steps,
    })
}

pub fn encode_path(params: &LstmParams, vocab: &PathVocab, path: &str) -> Result<PathEncoding, LstmError> {
    encode_ids(params, &vocab.encode(path))
}

fn logits(params: &LstmParams, v: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; 2];
    params.out.mul_vec_into(v, &mut z);
    z
}

pub fn predict_ids(params: &LstmParams, ids: &[usize]) -> Result<[f64; 2], LstmError> {
    let enc = encode_ids(params, ids)?;
    let p = softmax(&logits(params, enc.vector()));
    Ok([p[0], p[1]])
}

/// `(p_positive, p_negative)` for a rendered path.
pub fn predict_relation(params: &LstmParams, vocab: &PathVocab, path: &str) -> Result<[f64; 2], LstmError> {
    predict_ids(params, &vocab.encode(path))
}

fn class_index(label: Relation) -> usize {
    match label {
        Relation::Positive => 0,
        Relation::Negative => 1,
    }
}

/// Cross-entropy loss `-ln p[label]` and its gradient by backpropagation
/// through time. Embedding rows get gradient only when `learned[id]` or
/// `finetune` is set.
pub fn loss_and_gradients_ids(
    params: &LstmParams,
    learned: &[bool],
    ids: &[usize],
    label: Relation,
    finetune: bool,
) -> Result<(f64, Gradients), LstmError> {
    let enc = encode_ids(params, ids)?;
    let (d, h) = (params.dim(), params.hidden());
    let p = softmax(&logits(params, enc.vector()));
    let y = class_index(label);
    let loss = -p[y].ln();
    if !loss.is_finite() {
        return Err(LstmError::NonFiniteLoss);
    }

    let mut g = Gradients::zeros(d, h);
    let mut dz = p.clone();
    dz[y] -= 1.0;
    g.out.add_outer(&dz, enc.vector());
    let mut dh = vec![0.0; h];
    params.out.tmul_vec_into(&dz, &mut dh);
    let mut dc = vec![0.0; h];
    let zero = vec![0.0; h];

    for t in (0..enc.steps.len()).rev() {
        let s = &enc.steps[t];
        let (h_prev, c_prev) = if t == 0 {
            (&zero, &zero)
        } else {
            (&enc.steps[t - 1].h, &enc.steps[t - 1].c)
        };
        let [gi, gf, go, gu] = &s.gates;
        // pre-activation gradients per gate
        let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; h]);
        for k in 0..h {
            let tc = s.c[k].tanh();
            let d_o = dh[k] * tc;
            dc[k] += dh[k] * go[k] * (1.0 - tc * tc);
            let d_i = dc[k] * gu[k];
            let d_f = dc[k] * c_prev[k];
            let d_u = dc[k] * gi[k];
            da[GATE_I][k] = d_i * gi[k] * (1.0 - gi[k]);
            da[GATE_F][k] = d_f * gf[k] * (1.0 - gf[k]);
            da[GATE_O][k] = d_o * go[k] * (1.0 - go[k]);
            da[GATE_U][k] = d_u * (1.0 - gu[k] * gu[k]);
            dc[k] *= gf[k];
        }
        let x = params.embed.row(enc.ids[t]);
        let mut dx = vec![0.0; d];
        let mut dh_prev = vec![0.0; h];
        #[allow(clippy::needless_range_loop)]
        for gate in 0..4 {
            g.cell.wx[gate].add_outer(&da[gate], x);
            g.cell.uh[gate].add_outer(&da[gate], h_prev);
            for (b, a) in g.cell.b[gate].iter_mut().zip(&da[gate]) {
                *b += a;
            }
            params.cell.wx[gate].tmul_vec_into(&da[gate], &mut dx);
            params.cell.uh[gate].tmul_vec_into(&da[gate], &mut dh_prev);
        }
        let id = enc.ids[t];
        if finetune || learned.get(id).copied().unwrap_or(true) {
            let row = g.embed.entry(id).or_insert_with(|| vec![0.0; d]);
            for (r, v) in row.iter_mut().zip(&dx) {
                *r += v;
            }
        }
        dh = dh_prev;
    }
    Ok((loss, g))
}

pub fn loss_and_gradients(
    params: &LstmParams,
    vocab: &PathVocab,
    example: &RelationExample,
    finetune: bool,
) -> Result<(f64, Gradients), LstmError> {
    loss_and_gradients_ids(params, &vocab.learned, &vocab.encode(&example.path), example.label, finetune)
}

fn apply(params: &mut LstmParams, g: &Gradients, lr: f64) {
    for (&row, grad) in &g.embed {
        for (w, v) in params.embed.row_mut(row).iter_mut().zip(grad) {
            *w -= lr * v;
        }
    }
    for (w, v) in params.out.data.iter_mut().zip(&g.out.data) {
        *w -= lr * v;
    }
    for (ps, gs) in params.cell.slices_mut().into_iter().zip(g.cell.slices()) {
        for (w, v) in ps.iter_mut().zip(gs) {
            *w -= lr * v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Learned embedding rows start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Global gradient-norm clip threshold.
    pub clip: f64,
    pub hidden: usize,
    /// Also update rows copied from pretrained vectors.
    pub finetune: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 50,
            seed: 0,
            init_scale: 0.1,
            clip: 5.0,
            hidden: 64,
            finetune: false,
        }
    }
}

/// Word rows are copied from `store` when present; edge labels, unknown
/// words and out-of-vocabulary words get uniform `[-s, s]` rows. Gate and
/// output weights are uniform in `±1/√h`, biases zero except the forget
/// gate at 1.
pub fn init_params(
    vocab: &PathVocab,
    d: usize,
    h: usize,
    store: Option<&EmbeddingStore>,
    seed: u64,
    init_scale: f64,
) -> Result<LstmParams, LstmError> {
    if let Some(s) = store {
        if s.dim() != d {
            return Err(LstmError::EmbeddingDim {
                store: s.dim(),
                model: d,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut embed = Matrix::zeros(vocab.len(), d);
    for id in 0..vocab.len() {
        let copied = (!vocab.is_learned(id))
            .then(|| store.and_then(|s| s.get(vocab.token(id))))
            .flatten();
        match copied {
            Some(v) => embed.row_mut(id).copy_from_slice(v),
            None => {
                for w in embed.row_mut(id) {
                    *w = rng.gen_range(-init_scale..=init_scale);
                }
            }
        }
    }
    let k = 1.0 / (h as f64).sqrt();
    let wx = std::array::from_fn(|_| Matrix::uniform(h, d, k, &mut rng));
    let uh = std::array::from_fn(|_| Matrix::uniform(h, h, k, &mut rng));
    let mut b: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; h]);
    b[GATE_F].iter_mut().for_each(|v| *v = 1.0);
    let out = Matrix::uniform(2, h, k, &mut rng);
    Ok(LstmParams {
        embed,
        cell: CellParams { wx, uh, b },
        out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over the epoch's updates.
    pub loss: f64,
    /// Training accuracy after the epoch.
    pub accuracy: f64,
}

/// Fraction of examples whose argmax class matches the label. Ties go to
/// the negative class.
pub fn accuracy_ids(params: &LstmParams, data: &[(Vec<usize>, Relation)]) -> Result<f64, LstmError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (ids, label) in data {
        let p = predict_ids(params, ids)?;
        let predicted = if p[0] > p[1] {
            Relation::Positive
        } else {
            Relation::Negative
        };
        correct += usize::from(predicted == *label);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Seeded per-example SGD with gradient-norm clipping. Mutates `params` in
/// place and returns one trace row per epoch.
pub fn train_ids(
    params: &mut LstmParams,
    learned: &[bool],
    data: &[(Vec<usize>, Relation)],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>, LstmError> {
    let has = |l: Relation| data.iter().any(|(_, y)| *y == l);
    if !has(Relation::Positive) || !has(Relation::Negative) {
        return Err(LstmError::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (ids, label) = &data[i];
            let (loss, mut g) = loss_and_gradients_ids(params, learned, ids, *label, config.finetune)
                .map_err(|e| match e {
                    LstmError::NonFiniteLoss => LstmError::Diverged { epoch },
                    other => other,
                })?;
            let norm = g.norm();
            if !norm.is_finite() {
                return Err(LstmError::Diverged { epoch });
            }
            if norm > config.clip {
                g.scale(config.clip / norm);
            }
            apply(params, &g, config.learning_rate);
            total += loss;
        }
        if !params.is_finite() {
            return Err(LstmError::Diverged { epoch });
        }
        let stats = EpochStats {
            epoch,
            loss: total / data.len() as f64,
            accuracy: accuracy_ids(params, data)?,
        };
        log::debug!("epoch {epoch}: loss {:.6} acc {:.4}", stats.loss, stats.accuracy);
        trace.push(stats);
    }
    Ok(trace)
}

pub fn train(
    params: &mut LstmParams,
    vocab: &PathVocab,
    examples: &[RelationExample],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>, LstmError> {
    let data: Vec<(Vec<usize>, Relation)> = examples.iter().map(|e| (vocab.encode(&e.path), e.label)).collect();
    train_ids(params, &vocab.learned, &data, config)
}

/// Vocabulary plus weights: everything needed to score a path.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationModel {
    pub vocab: PathVocab,
    pub params: LstmParams,
}

#[derive(Serialize, Deserialize)]
struct VocabEntry {
    token: String,
    learned: bool,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    #[serde(default)]
    provenance: String,
    version: u32,
    dim: usize,
    hidden: usize,
    vocab: Vec<VocabEntry>,
    /// Row-major tensors keyed by name.
    tensors: BTreeMap<String, Vec<f64>>,
}

fn tensor_names() -> Vec<String> {
    let mut names = vec!["embed".to_string()];
    for kind in ["w_x", "u_h", "b_"] {
        for g in GATE_NAMES {
            names.push(format!("{kind}{g}"));
        }
    }
    names.push("w_r".into());
    names
}

impl RelationModel {
    pub fn predict(&self, path: &str) -> Result<[f64; 2], LstmError> {
        predict_relation(&self.params, &self.vocab, path)
    }

    /// `provenance` is stored verbatim and ignored on load.
    pub fn to_json(&self, provenance: &str) -> String {
        let p = &self.params;
        let mut slices: Vec<&[f64]> = vec![&p.embed.data];
        slices.extend(p.cell.slices());
        slices.push(&p.out.data);
        let tensors = tensor_names()
            .into_iter()
            .zip(slices)
            .map(|(n, s)| (n, s.iter().copied().map(round_sig9).collect()))
            .collect();
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            provenance: provenance.to_string(),
            version: MODEL_VERSION,
            dim: p.dim(),
            hidden: p.hidden(),
            vocab: (0..self.vocab.len())
                .map(|i| VocabEntry {
                    token: self.vocab.token(i).to_string(),
                    learned: self.vocab.is_learned(i),
                })
                .collect(),
            tensors,
        };
        serde_json::to_string(&file).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<RelationModel, LstmError> {
        let mut file: ModelFile = serde_json::from_str(text).map_err(|e| LstmError::Model(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(LstmError::Model(format!("unsupported model {} v{}", file.format, file.version)));
        }
        if file.vocab.first().map(|e| e.token.as_str()) != Some(UNK) {
            return Err(LstmError::Model("vocabulary must start with the unknown token".into()));
        }
        let (d, h, v) = (file.dim, file.hidden, file.vocab.len());
        let vocab = PathVocab::from_entries(file.vocab.into_iter().skip(1).map(|e| (e.token, e.learned)));
        if vocab.len() != v {
            return Err(LstmError::Model("duplicate vocabulary entries".into()));
        }
        let mut params = LstmParams::zeros(v, d, h);
        {
            let mut targets: Vec<&mut [f64]> = vec![&mut params.embed.data];
            targets.extend(params.cell.slices_mut());
            targets.push(&mut params.out.data);
            for (name, target) in tensor_names().into_iter().zip(targets) {
                let src = file
                    .tensors
                    .remove(&name)
                    .ok_or_else(|| LstmError::Model(format!("missing tensor {name}")))?;
                if src.len() != target.len() {
                    return Err(LstmError::Model(format!(
                        "tensor {name} has {} values, expected {}",
                        src.len(),
                        target.len()
                    )));
                }
                target.copy_from_slice(&src);
            }
        }
        if !params.is_finite() {
            return Err(LstmError::Model("non-finite weights".into()));
        }
        Ok(RelationModel { vocab, params })
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    fn cell_params(d: usize, h: usize, seed: u64) -> CellParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CellParams {
            wx: std::array::from_fn(|_| Matrix::uniform(h, d, 0.8, &mut rng)),
            uh: std::array::from_fn(|_| Matrix::uniform(h, h, 0.8, &mut rng)),
            b: std::array::from_fn(|_| (0..h).map(|_| rng.gen_range(-0.5..0.5)).collect()),
        }
    }

    fn sig(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    /// Straight-line scalar version of the cell equations.
    fn cell_oracle(p: &CellParams, x: &[f64], hp: &[f64], cp: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = hp.len();
        let mut c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for k in 0..h {
            let mut pre = [0.0f64; 4];
            for g in 0..4 {
                let mut acc = p.b[g][k];
                for j in 0..x.len() {
                    acc += p.wx[g].get(k, j) * x[j];
                }
                for j in 0..h {
                    acc += p.uh[g].get(k, j) * hp[j];
                }
                pre[g] = acc;
            }
            let i = sig(pre[0]);
            let f = sig(pre[1]);
            let o = sig(pre[2]);
            let u = pre[3].tanh();
            c[k] = i * u + f * cp[k];
            hn[k] = o * c[k].tanh();
        }
        (hn, c)
    }

    #[test]
    fn zero_cell() {
        let p = CellParams::zeros(2, 3);
        let s = lstm_cell(&p, &[0.3, -1.0], &[0.1, 0.2, 0.3], &[0.0; 3]).unwrap();
        for g in [GATE_I, GATE_F, GATE_O] {
            assert!(s.gates[g].iter().all(|v| (*v - 0.5).abs() < 1e-15));
        }
        assert!(s.gates[GATE_U].iter().all(|v| *v == 0.0));
        assert_eq!(s.c, [0.0; 3]);
        assert_eq!(s.h, [0.0; 3]);

        let s = lstm_cell(&p, &[1.0, 1.0], &[0.0; 3], &[2.0, -4.0, 0.5]).unwrap();
        assert_eq!(s.c, [1.0, -2.0, 0.25]);
    }

    #[test]
    fn cell_matches_scalar_oracle() {
        for seed in 0..5 {
            let p = cell_params(2, 3, seed);
            let x = [0.7, -0.3];
            let hp = [0.1, -0.5, 0.2];
            let cp = [0.4, 0.0, -1.1];
            let s = lstm_cell(&p, &x, &hp, &cp).unwrap();
            let (h, c) = cell_oracle(&p, &x, &hp, &cp);
            for k in 0..3 {
                assert!((s.h[k] - h[k]).abs() < 1e-14);
                assert!((s.c[k] - c[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cell_errors() {
        let p = CellParams::zeros(2, 3);
        assert!(matches!(lstm_cell(&p, &[0.0], &[0.0; 3], &[0.0; 3]), Err(LstmError::Shape(_))));
        assert!(matches!(
            lstm_cell(&p, &[f64::NAN, 0.0], &[0.0; 3], &[0.0; 3]),
            Err(LstmError::NonFinite)
        ));
    }

    fn random_params(v: usize, d: usize, h: usize, seed: u64) -> LstmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        LstmParams {
            embed: Matrix::uniform(v, d, 1.0, &mut rng),
            cell: cell_params(d, h, seed),
            out: Matrix::uniform(2, h, 1.0, &mut rng),
        }
    }

    #[test]
    fn encoding_composes_cells() {
        let p = random_params(5, 2, 3, 7);
        let ids = [3, 1, 4];
        let enc = encode_ids(&p, &ids).unwrap();
        let mut h = vec![0.0; 3];
        let mut c = vec![0.0; 3];
        for &id in &ids {
            let (hn, cn) = cell_oracle(&p.cell, p.embed.row(id), &h, &c);
            h = hn;
            c = cn;
        }
        for k in 0..3 {
            assert!((enc.vector()[k] - h[k]).abs() < 1e-14);
        }
        assert_eq!(enc.steps.len(), 3);

        let one = encode_ids(&p, &[2]).unwrap();
        let direct = lstm_cell(&p.cell, p.embed.row(2), &[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(one.vector(), direct.h.as_slice());
        assert!(matches!(encode_ids(&p, &[]), Err(LstmError::EmptyPath)));

        let zero = LstmParams::zeros(5, 2, 3);
        assert_eq!(encode_ids(&zero, &ids).unwrap().vector(), [0.0; 3]);
    }

    #[test]
    fn softmax_cases() {
        let mut p = random_params(4, 2, 3, 1);
        p.out = Matrix::zeros(2, 3);
        assert_eq!(predict_ids(&p, &[1, 2]).unwrap(), [0.5, 0.5]);
        let s = softmax(&[1.0, 1.0 + 3f64.ln()]);
        assert!((s[0] - 0.25).abs() < 1e-15 && (s[1] - 0.75).abs() < 1e-15);
        let t = softmax(&[1.0 + 1e3, 1.0 + 3f64.ln() + 1e3]);
        assert!((s[0] - t[0]).abs() < 1e-12);
    }

    #[test]
    fn uniform_output_loss_is_ln2() {
        let mut p = random_params(4, 2, 3, 2);
        p.out = Matrix::zeros(2, 3);
        let learned = vec![true; 4];
        for label in [Relation::Positive, Relation::Negative] {
            let (loss, _) = loss_and_gradients_ids(&p, &learned, &[1, 3, 2], label, false).unwrap();
            assert!((loss - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn frozen_rows_get_no_gradient() {
        let p = random_params(4, 2, 3, 3);
        let learned = [true, false, true, false];
        let (_, g) = loss_and_gradients_ids(&p, &learned, &[1, 2, 3], Relation::Positive, false).unwrap();
        assert_eq!(g.embed.keys().copied().collect::<Vec<_>>(), [2]);
        let (_, g) = loss_and_gradients_ids(&p, &learned, &[1, 2, 3], Relation::Positive, true).unwrap();
        assert_eq!(g.embed.keys().copied().collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn vocab_flags() {
        let store = EmbeddingStore::from_rows(2, [("sound", vec![1.0, 2.0]), ("filled", vec![3.0, 4.0])]);
        let v = PathVocab::build(["nsubjpass() filled prep_with() sound prep_of()", "amod()"], Some(&store));
        assert_eq!(v.token(0), UNK);
        assert!(!v.is_learned(v.id("sound")));
        assert!(v.is_learned(v.id("amod()")));
        assert!(v.is_learned(v.id("prep_of()")));
        assert_eq!(v.id("never-seen"), 0);

        let p = init_params(&v, 2, 4, Some(&store), 5, 0.1).unwrap();
        assert_eq!(p.embed.row(v.id("sound")), [1.0, 2.0]);
        assert!(p.embed.row(v.id("amod()")).iter().all(|x| x.abs() <= 0.1));
        assert!(p.cell.b[GATE_F].iter().all(|b| *b == 1.0));
        assert_eq!(p, init_params(&v, 2, 4, Some(&store), 5, 0.1).unwrap());
        assert!(matches!(
            init_params(&v, 3, 4, Some(&store), 5, 0.1),
            Err(LstmError::EmbeddingDim { store: 2, model: 3 })
        ));
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let v = PathVocab::build(["a() x b()", "c()"], None);
        let mut p = init_params(&v, 3, 4, None, 1, 0.1).unwrap();
        let before = p.clone();
        let data = vec![(v.encode("a() x b()"), Relation::Positive), (v.encode("c()"), Relation::Negative)];
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            hidden: 4,
            ..TrainConfig::default()
        };
        train_ids(&mut p, &v.learned, &data, &cfg).unwrap();
        assert_eq!(p, before);
        assert!(matches!(
            train_ids(&mut p, &v.learned, &data[..1], &cfg),
            Err(LstmError::SingleClass)
        ));
    }

    #[test]
    fn model_json_roundtrip() {
        let v = PathVocab::build(["a() x b()", "c()"], None);
        let m = RelationModel {
            params: init_params(&v, 3, 4, None, 1, 0.1).unwrap(),
            vocab: v,
        };
        let text = m.to_json("# test");
        let back = RelationModel::from_json(&text).unwrap();
        assert_eq!(back.vocab, m.vocab);
        assert_eq!(back.to_json("# test"), text);
        let (a, b) = (m.predict("a() x b()").unwrap(), back.predict("a() x b()").unwrap());
        assert!((a[0] - b[0]).abs() < 1e-7);
        assert!(RelationModel::from_json("{}").is_err());
    }
}
