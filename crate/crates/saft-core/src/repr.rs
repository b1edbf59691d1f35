//! Encoder–evaluator–decoder over feature–feature graphs, trained with the
//! shift-resistant bilevel procedure.
//!
//! The encoder aggregates sampled neighborhoods of a feature-similarity
//! graph into a fixed-size embedding; the evaluator predicts downstream
//! performance from the embedding; the decoder reconstructs the cross
//! sequence. An inner loop learns per-sample weights that minimize the
//! random-Fourier-feature cross-covariance between embedding dimensions,
//! and the outer loop trains on the reweighted joint loss.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsl::{self, CrossSequence, Token, Vocab};
use crate::error::{Result, SaftError};
use crate::nn::{dense, init_dense, lstm_cell, softmax_vec, ParamStore, Tape, Tensor, Var};
use crate::rl::TrainingCorpus;
use crate::tabular::Table;

pub const NODE_ATTR_DIM: usize = 8;

/// Feature–feature similarity graph: one node per feature, 8 statistics per
/// node, undirected edges between features whose |cosine| reaches the 95th
/// percentile of all pairwise values within the set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGraph {
    pub attrs: Vec<[f64; NODE_ATTR_DIM]>,
    /// (i, j, |cosine|) with i < j
    pub edges: Vec<(usize, usize, f64)>,
    pub neighbors: Vec<Vec<usize>>,
}

impl FeatureGraph {
    pub fn n_nodes(&self) -> usize {
        self.attrs.len()
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn column_stats(col: &[f64], target: &[f64]) -> [f64; NODE_ATTR_DIM] {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sorted = col.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = quantile(&sorted, 0.5);
    let q25 = quantile(&sorted, 0.25);
    let q75 = quantile(&sorted, 0.75);

    let ty_mean = target.iter().sum::<f64>() / n;
    let ty_var = target.iter().map(|y| (y - ty_mean) * (y - ty_mean)).sum::<f64>() / n;
    let corr = if std == 0.0 || ty_var == 0.0 {
        0.0
    } else {
        let cov = col
            .iter()
            .zip(target)
            .map(|(x, y)| (x - mean) * (y - ty_mean))
            .sum::<f64>()
            / n;
        (cov / (std * ty_var.sqrt())).abs().min(1.0)
    };
    [mean, std, min, max, median, q25, q75, corr]
}

fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).abs().min(1.0)
}

/// Deterministic function of (feature set, target). The edge threshold is
/// the k-th largest pairwise |cosine| with k = ceil(0.05 * n_pairs);
/// zero-similarity pairs never become edges.
pub fn build_graph(columns: &[Vec<f64>], target: &[f64]) -> FeatureGraph {
    let n = columns.len();
    let attrs: Vec<[f64; NODE_ATTR_DIM]> =
        columns.iter().map(|c| column_stats(c, target)).collect();
    let mut pair_sims = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pair_sims.push((i, j, abs_cosine(&columns[i], &columns[j])));
        }
    }
    let mut edges = Vec::new();
    if !pair_sims.is_empty() {
        let mut sims: Vec<f64> = pair_sims.iter().map(|&(_, _, s)| s).collect();
        sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let k = ((0.05 * sims.len() as f64).ceil() as usize).max(1);
        let threshold = sims[k - 1];
        for &(i, j, s) in &pair_sims {
            if s >= threshold && s > 0.0 {
                edges.push((i, j, s));
            }
        }
    }
    let mut neighbors = vec![Vec::new(); n];
    for &(i, j, _) in &edges {
        neighbors[i].push(j);
        neighbors[j].push(i);
    }
    FeatureGraph {
        attrs,
        edges,
        neighbors,
    }
}

/// Per-dimension random Fourier maps: x -> sqrt(2/D) * cos(omega_k x + b_k),
/// omega standard normal, b uniform on [0, 2*pi). Frozen after init.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffParams {
    pub d: usize,
    /// omega[dim][k]
    pub omega: Vec<Vec<f64>>,
    /// phase[dim][k]
    pub phase: Vec<Vec<f64>>,
}

impl RffParams {
    pub fn new(seed: u64, embed_dim: usize, d: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = (0..embed_dim)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let phase = (0..embed_dim)
            .map(|_| {
                (0..d)
                    .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                    .collect()
            })
            .collect();
        RffParams { d, omega, phase }
    }

    pub fn map(&self, dim: usize, x: f64) -> Vec<f64> {
        let scale = (2.0 / self.d as f64).sqrt();
        (0..self.d)
            .map(|k| scale * (self.omega[dim][k] * x + self.phase[dim][k]).cos())
            .collect()
    }
}

/// Logit-parametrized weights: r = N * softmax(logits), so r_n > 0 and
/// sum r_n = N at every iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights {
    pub logits: Vec<f64>,
}

impl SampleWeights {
    pub fn uniform(n: usize) -> Self {
        SampleWeights {
            logits: vec![0.0; n],
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        let n = self.logits.len() as f64;
        let w = softmax_vec(&self.logits);
        let r: Vec<f64> = w.iter().map(|x| x * n).collect();
        debug_assert!(r.iter().all(|x| *x > 0.0));
        debug_assert!((r.iter().sum::<f64>() - n).abs() < 1e-9 * n.max(1.0));
        r
    }
}

/// Whether the learned weights enter the covariance estimator inside the
/// centered terms (the displayed form) or as conventional per-sample
/// multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    #[default]
    Display,
    Conventional,
}

/// RFF images of every sample at every embedding dimension, precomputed
/// once per inner loop: `per_dim[i][n]` is the D-vector of sample n at
/// dimension i.
pub struct RffFeatures {
    pub per_dim: Vec<Vec<Vec<f64>>>,
}

impl RffFeatures {
    pub fn compute(embeddings: &[Vec<f64>], rff: &RffParams) -> Self {
        let dims = embeddings[0].len();
        let per_dim = (0..dims)
            .map(|i| embeddings.iter().map(|e| rff.map(i, e[i])).collect())
            .collect();
        RffFeatures { per_dim }
    }
}

/// Sum over dimension pairs i<j of the squared Frobenius norm of the
/// weighted partial cross-covariance, plus its analytic gradient in the
/// weights r.
///
/// Display form: C = 1/(N-1) * sum_n a_n b_n^T with
/// a_n = r_n f(E_ni) - mean_m r_m f(E_mi). Since the centered vectors sum
/// to zero, dC/dr_k = (f_k b_k^T + a_k g_k^T)/(N-1).
pub fn rff_cross_cov(weights: &[f64], feats: &RffFeatures, mode: WeightingMode) -> (f64, Vec<f64>) {
    let n = weights.len();
    assert!(n >= 2, "rff_cross_cov needs at least two samples");
    let dims = feats.per_dim.len();
    let d = feats.per_dim[0][0].len();
    let denom = (n - 1) as f64;
    let mut objective = 0.0;
    let mut grad_r = vec![0.0; n];

    // centered per-sample vectors for each dimension
    let centered: Vec<Vec<Vec<f64>>> = (0..dims)
        .map(|i| {
            let f = &feats.per_dim[i];
            match mode {
                WeightingMode::Display => {
                    let mut mean = vec![0.0; d];
                    for (nn, fv) in f.iter().enumerate() {
                        for k in 0..d {
                            mean[k] += weights[nn] * fv[k];
                        }
                    }
                    for m in &mut mean {
                        *m /= n as f64;
                    }
                    f.iter()
                        .enumerate()
                        .map(|(nn, fv)| (0..d).map(|k| weights[nn] * fv[k] - mean[k]).collect())
                        .collect()
                }
                WeightingMode::Conventional => {
                    let mut mean = vec![0.0; d];
                    for (nn, fv) in f.iter().enumerate() {
                        for k in 0..d {
                            mean[k] += weights[nn] * fv[k];
                        }
                    }
                    for m in &mut mean {
                        *m /= n as f64;
                    }
                    f.iter()
                        .map(|fv| (0..d).map(|k| fv[k] - mean[k]).collect())
                        .collect()
                }
            }
        })
        .collect();

    for i in 0..dims {
        for j in i + 1..dims {
            let a = &centered[i];
            let b = &centered[j];
            // M = sum_n w_n a_n b_n^T (w_n = 1 in display mode, r_n in
            // conventional mode; the weight already sits inside a_n there)
            let mut m = vec![0.0; d * d];
            for nn in 0..n {
                let wn = match mode {
                    WeightingMode::Display => 1.0,
                    WeightingMode::Conventional => weights[nn],
                };
                for p in 0..d {
                    for q in 0..d {
                        m[p * d + q] += wn * a[nn][p] * b[nn][q];
                    }
                }
            }
            let frob2: f64 = m.iter().map(|x| (x / denom) * (x / denom)).sum();
            objective += frob2;

            let coef = 2.0 / (denom * denom);
            match mode {
                WeightingMode::Display => {
                    // dObj/dr_k = coef * (f_k^T M b_k + a_k^T M g_k)
                    for k in 0..n {
                        let f_k = &feats.per_dim[i][k];
                        let g_k = &feats.per_dim[j][k];
                        let mut acc = 0.0;
                        for p in 0..d {
                            for q in 0..d {
                                acc += m[p * d + q] * (f_k[p] * b[k][q] + a[k][p] * g_k[q]);
                            }
                        }
                        grad_r[k] += coef * acc;
                    }
                }
                WeightingMode::Conventional => {
                    // the weighted centered sums vanish, so dM/dr_k = a_k b_k^T
                    for k in 0..n {
                        let mut acc = 0.0;
                        for p in 0..d {
                            for q in 0..d {
                                acc += m[p * d + q] * a[k][p] * b[k][q];
                            }
                        }
                        grad_r[k] += coef * acc;
                    }
                }
            }
        }
    }
    (objective, grad_r)
}

/// Objective and gradient in the logits (through r = N * softmax(z)).
pub fn rff_objective_logits(
    logits: &[f64],
    feats: &RffFeatures,
    mode: WeightingMode,
) -> (f64, Vec<f64>) {
    let n = logits.len();
    let w = softmax_vec(logits);
    let r: Vec<f64> = w.iter().map(|x| x * n as f64).collect();
    let (obj, grad_r) = rff_cross_cov(&r, feats, mode);
    let dot: f64 = grad_r.iter().zip(&w).map(|(g, wn)| g * wn).sum();
    let grad_z: Vec<f64> = (0..n)
        .map(|k| n as f64 * w[k] * (grad_r[k] - dot))
        .collect();
    (obj, grad_z)
}

/// Inner loop of the bilevel procedure: gradient descent on the weight
/// logits minimizing the summed cross-covariance objective.
pub fn optimize_weights(
    embeddings: &[Vec<f64>],
    rff: &RffParams,
    inner_epochs: usize,
    inner_lr: f64,
    mode: WeightingMode,
) -> Result<SampleWeights> {
    if embeddings.len() < 2 {
        return Err(SaftError::InvalidArgument(
            "optimize_weights needs at least two samples".into(),
        ));
    }
    let feats = RffFeatures::compute(embeddings, rff);
    let mut weights = SampleWeights::uniform(embeddings.len());
    for _ in 0..inner_epochs {
        let (_, grad) = rff_objective_logits(&weights.logits, &feats, mode);
        for (z, g) in weights.logits.iter_mut().zip(&grad) {
            *z -= inner_lr * g;
        }
        let r = weights.weights();
        let n = r.len() as f64;
        assert!(r.iter().all(|x| *x > 0.0), "weight positivity violated");
        assert!(
            (r.iter().sum::<f64>() - n).abs() < 1e-9 * n,
            "weight sum violated"
        );
    }
    Ok(weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// estimation-loss weight
    pub alpha: f64,
    /// reconstruction-loss weight (the single balance knob of the joint
    /// objective is an alias of this field)
    #[serde(alias = "gamma")]
    pub beta: f64,
    pub batch: usize,
    /// outer epochs
    pub epochs: usize,
    /// inner weight-optimization steps per batch
    pub inner_epochs: usize,
    pub inner_lr: f64,
    /// outer learning rate anneals linearly lr_start -> lr_end
    pub lr_start: f64,
    pub lr_end: f64,
    pub embed_dim: usize,
    pub enc_hidden: usize,
    pub eval_hidden: usize,
    pub dec_hidden: usize,
    pub token_dim: usize,
    pub rff_d: usize,
    /// max sampled neighbors per node and encoder layer
    pub neighbor_sample: usize,
    pub seed: u64,
    /// disable to train with uniform weights (the reweighting ablation)
    pub reweight: bool,
    pub weighting: WeightingMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 10.0,
            beta: 0.1,
            batch: 256,
            epochs: 500,
            inner_epochs: 20,
            inner_lr: 0.01,
            lr_start: 0.001,
            lr_end: 0.0005,
            embed_dim: 64,
            enc_hidden: 32,
            eval_hidden: 200,
            dec_hidden: 64,
            token_dim: 16,
            rff_d: 5,
            neighbor_sample: 5,
            seed: 0,
            reweight: true,
            weighting: WeightingMode::Display,
        }
    }
}

/// Encoder, evaluator, and decoder parameters plus the frozen pieces needed
/// to reproduce every forward pass.
#[derive(Debug, Clone)]
pub struct SaftModel {
    pub store: ParamStore,
    pub cfg: TrainConfig,
    pub vocab: Vocab,
}

impl SaftModel {
    pub fn new(cfg: TrainConfig, n_features: usize) -> Self {
        let vocab = Vocab::new(n_features);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let h = cfg.enc_hidden;
        store.add("enc_w1", init_dense(&mut rng, 2 * NODE_ATTR_DIM, h));
        store.add("enc_b1", Tensor::row_vec(vec![0.0; h]));
        store.add("enc_w2", init_dense(&mut rng, 2 * h, h));
        store.add("enc_b2", Tensor::row_vec(vec![0.0; h]));
        store.add("proj_w1", init_dense(&mut rng, h, h));
        store.add("proj_b1", Tensor::row_vec(vec![0.0; h]));
        store.add("proj_w2", init_dense(&mut rng, h, cfg.embed_dim));
        store.add("proj_b2", Tensor::row_vec(vec![0.0; cfg.embed_dim]));
        store.add(
            "eval_w1",
            init_dense(&mut rng, cfg.embed_dim, cfg.eval_hidden),
        );
        store.add("eval_b1", Tensor::row_vec(vec![0.0; cfg.eval_hidden]));
        store.add("eval_w2", init_dense(&mut rng, cfg.eval_hidden, 1));
        store.add("eval_b2", Tensor::row_vec(vec![0.0; 1]));
        store.add("dec_embed", init_dense(&mut rng, vocab.size(), cfg.token_dim));
        store.add("dec_h0_w", init_dense(&mut rng, cfg.embed_dim, cfg.dec_hidden));
        store.add("dec_h0_b", Tensor::row_vec(vec![0.0; cfg.dec_hidden]));
        store.add("dec_c0_w", init_dense(&mut rng, cfg.embed_dim, cfg.dec_hidden));
        store.add("dec_c0_b", Tensor::row_vec(vec![0.0; cfg.dec_hidden]));
        store.add(
            "dec_w",
            init_dense(&mut rng, cfg.token_dim + cfg.dec_hidden, 4 * cfg.dec_hidden),
        );
        store.add("dec_b", Tensor::row_vec(vec![0.0; 4 * cfg.dec_hidden]));
        store.add("dec_out_w", init_dense(&mut rng, cfg.dec_hidden, vocab.size()));
        store.add("dec_out_b", Tensor::row_vec(vec![0.0; vocab.size()]));
        SaftModel { store, cfg, vocab }
    }

    /// Two rounds of sampled-neighborhood aggregation (concat self with the
    /// mean of up to `neighbor_sample` seeded neighbors, dense + tanh, L2
    /// row normalization), mean readout, and a 2-layer projection head.
    pub fn encode_tape(&self, tape: &mut Tape, g: &FeatureGraph, sample_seed: u64) -> Var {
        let n = g.n_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let sampled: Vec<Vec<usize>> = g
            .neighbors
            .iter()
            .map(|nb| {
                if nb.len() <= self.cfg.neighbor_sample {
                    nb.clone()
                } else {
                    rand::seq::index::sample(&mut rng, nb.len(), self.cfg.neighbor_sample)
                        .into_iter()
                        .map(|k| nb[k])
                        .collect()
                }
            })
            .collect();

        let mut x = {
            let data: Vec<f64> = g.attrs.iter().flatten().cloned().collect();
            tape.leaf(Tensor::new(n, NODE_ATTR_DIM, data))
        };
        for layer in 0..2 {
            let (wn, bn) = if layer == 0 {
                ("enc_w1", "enc_b1")
            } else {
                ("enc_w2", "enc_b2")
            };
            let w = tape.param(&self.store, wn);
            let b = tape.param(&self.store, bn);
            let mut rows = Vec::with_capacity(n);
            for i in 0..n {
                let self_row = tape.row(x, i);
                let neigh = tape.gather_mean_rows(x, &sampled[i]);
                let cat = tape.concat_cols(self_row, neigh);
                let z = dense(tape, cat, w, b);
                rows.push(tape.tanh(z));
            }
            let stacked = tape.stack_rows(&rows);
            x = tape.l2_norm_rows(stacked);
        }
        let pooled = tape.mean_rows(x);
        let pw1 = tape.param(&self.store, "proj_w1");
        let pb1 = tape.param(&self.store, "proj_b1");
        let h = dense(tape, pooled, pw1, pb1);
        let h = tape.tanh(h);
        let pw2 = tape.param(&self.store, "proj_w2");
        let pb2 = tape.param(&self.store, "proj_b2");
        dense(tape, h, pw2, pb2)
    }

    pub fn encode(&self, g: &FeatureGraph) -> Vec<f64> {
        let mut tape = Tape::new();
        let e = self.encode_tape(&mut tape, g, self.cfg.seed);
        tape.value(e).data.clone()
    }

    /// 2-layer feedforward performance estimate.
    pub fn evaluate_tape(&self, tape: &mut Tape, e: Var) -> Var {
        let w1 = tape.param(&self.store, "eval_w1");
        let b1 = tape.param(&self.store, "eval_b1");
        let h = dense(tape, e, w1, b1);
        let h = tape.relu(h);
        let w2 = tape.param(&self.store, "eval_w2");
        let b2 = tape.param(&self.store, "eval_b2");
        dense(tape, h, w2, b2)
    }

    pub fn evaluate(&self, e: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let ev = tape.leaf(Tensor::row_vec(e.to_vec()));
        let p = self.evaluate_tape(&mut tape, ev);
        tape.scalar_value(p)
    }

    /// Estimate and its gradient with respect to the embedding, for the
    /// ascent search.
    pub fn evaluate_grad(&self, e: &[f64]) -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let ev = tape.leaf(Tensor::row_vec(e.to_vec()));
        let p = self.evaluate_tape(&mut tape, ev);
        tape.backward(p);
        (tape.scalar_value(p), tape.grad(ev).to_vec())
    }

    fn dec_init(&self, tape: &mut Tape, e: Var) -> (Var, Var) {
        let hw = tape.param(&self.store, "dec_h0_w");
        let hb = tape.param(&self.store, "dec_h0_b");
        let cw = tape.param(&self.store, "dec_c0_w");
        let cb = tape.param(&self.store, "dec_c0_b");
        let h = dense(tape, e, hw, hb);
        let h = tape.tanh(h);
        let c = dense(tape, e, cw, cb);
        let c = tape.tanh(c);
        (h, c)
    }

    /// Teacher-forced negative log-likelihood of `seq` under the decoder
    /// conditioned on embedding `e`. Returns (summed NLL node, token count).
    pub fn decoder_nll_tape(
        &self,
        tape: &mut Tape,
        e: Var,
        seq: &CrossSequence,
    ) -> Result<(Var, usize)> {
        for t in &seq.tokens {
            if self.vocab.token_id(*t) >= self.vocab.size() {
                return Err(SaftError::InvalidArgument(format!(
                    "token {t} outside vocabulary"
                )));
            }
        }
        if seq.len() < 2 {
            return Err(SaftError::InvalidArgument("sequence too short".into()));
        }
        let (mut h, mut c) = self.dec_init(tape, e);
        let embed = tape.param(&self.store, "dec_embed");
        let w = tape.param(&self.store, "dec_w");
        let b = tape.param(&self.store, "dec_b");
        let ow = tape.param(&self.store, "dec_out_w");
        let ob = tape.param(&self.store, "dec_out_b");
        let mut losses = Vec::with_capacity(seq.len() - 1);
        for step in 0..seq.len() - 1 {
            let x = tape.row(embed, self.vocab.token_id(seq.tokens[step]));
            let (h2, c2) = lstm_cell(tape, x, h, c, w, b);
            h = h2;
            c = c2;
            let logits = dense(tape, h, ow, ob);
            let target = self.vocab.token_id(seq.tokens[step + 1]);
            losses.push(tape.softmax_xent(logits, target));
        }
        let stacked = tape.stack_rows(&losses);
        Ok((tape.sum_all(stacked), losses.len()))
    }

    pub fn decoder_nll(&self, e: &[f64], seq: &CrossSequence) -> Result<f64> {
        let mut tape = Tape::new();
        let ev = tape.leaf(Tensor::row_vec(e.to_vec()));
        let (nll, _) = self.decoder_nll_tape(&mut tape, ev, seq)?;
        Ok(tape.scalar_value(nll))
    }

    /// One decoder step for autoregressive generation: next-token
    /// probabilities plus the updated recurrent state.
    pub fn decoder_step(
        &self,
        token: Token,
        state: Option<(Vec<f64>, Vec<f64>)>,
        e: &[f64],
    ) -> (Vec<f64>, (Vec<f64>, Vec<f64>)) {
        let mut tape = Tape::new();
        let (h, c) = match state {
            Some((h, c)) => {
                let h = tape.leaf(Tensor::row_vec(h));
                let c = tape.leaf(Tensor::row_vec(c));
                (h, c)
            }
            None => {
                let ev = tape.leaf(Tensor::row_vec(e.to_vec()));
                self.dec_init(&mut tape, ev)
            }
        };
        let embed = tape.param(&self.store, "dec_embed");
        let w = tape.param(&self.store, "dec_w");
        let b = tape.param(&self.store, "dec_b");
        let x = tape.row(embed, self.vocab.token_id(token));
        let (h2, c2) = lstm_cell(&mut tape, x, h, c, w, b);
        let ow = tape.param(&self.store, "dec_out_w");
        let ob = tape.param(&self.store, "dec_out_b");
        let logits = dense(&mut tape, h2, ow, ob);
        let probs = tape.softmax_probs(logits);
        (
            probs,
            (tape.value(h2).data.clone(), tape.value(c2).data.clone()),
        )
    }
}

/// Everything needed to reuse a trained model: parameters, the frozen RFF
/// maps, the vocabulary size, and the training configuration.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: SaftModel,
    pub rff: RffParams,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    n_features: usize,
    config: TrainConfig,
    rff: RffParams,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| SaftError::io(dir.display().to_string(), e))?;
        self.model.store.save(dir)?;
        let meta = CheckpointMeta {
            n_features: self.model.vocab.n_features,
            config: self.model.cfg.clone(),
            rff: self.rff.clone(),
        };
        let path = dir.join("model.json");
        std::fs::write(&path, serde_json::to_string_pretty(&meta)?)
            .map_err(|e| SaftError::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        let text = std::fs::read_to_string(&path).map_err(|e| {
            SaftError::Checkpoint(format!(
                "missing checkpoint metadata at {}: {e}",
                path.display()
            ))
        })?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        let store = ParamStore::load(dir)?;
        Ok(Checkpoint {
            model: SaftModel {
                store,
                cfg: meta.config,
                vocab: Vocab::new(meta.n_features),
            },
            rff: meta.rff,
        })
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

/// Algorithm: per batch, encode; run the inner weight loop on the detached
/// embeddings; backpropagate
/// L = alpha * sum_i r*_i (p_i - est_i)^2 + beta * L_rec
/// through encoder, evaluator, and decoder jointly.
pub fn bilevel_train(
    corpus: &TrainingCorpus,
    table: &Table,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainLog)> {
    if corpus.is_empty() {
        return Err(SaftError::InvalidArgument("empty corpus".into()));
    }
    // materialize every record once; invalid records are contract violations
    let mut graphs = Vec::with_capacity(corpus.len());
    for (id, rec) in corpus.iter().enumerate() {
        let set = dsl::apply_sequence(&rec.sequence, table).map_err(|e| {
            SaftError::InvalidArgument(format!("corpus record {id} does not materialize: {e}"))
        })?;
        graphs.push(build_graph(&set.columns, &table.target));
    }

    let model = SaftModel::new(cfg.clone(), table.n_features());
    // the 0x52ff offset keeps the RFF stream off the parameter-init stream
    let rff = RffParams::new(cfg.seed.wrapping_add(0x52ff), cfg.embed_dim, cfg.rff_d);
    let mut ckpt = Checkpoint { model, rff };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = if cfg.epochs <= 1 {
            cfg.lr_start
        } else {
            cfg.lr_start
                + (cfg.lr_end - cfg.lr_start) * epoch as f64 / (cfg.epochs - 1) as f64
        };
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            epoch_loss += bilevel_batch_step(&mut ckpt, corpus, &graphs, batch, cfg, lr)?;
        }
        epoch_losses.push(epoch_loss);
    }
    Ok((ckpt, TrainLog { epoch_losses }))
}

fn bilevel_batch_step(
    ckpt: &mut Checkpoint,
    corpus: &TrainingCorpus,
    graphs: &[FeatureGraph],
    batch: &[usize],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let model = &ckpt.model;
    let mut tape = Tape::new();
    let e_vars: Vec<Var> = batch
        .iter()
        .map(|&id| model.encode_tape(&mut tape, &graphs[id], cfg.seed))
        .collect();

    // inner loop on detached embeddings
    let weights = if cfg.reweight && batch.len() >= 2 {
        let detached: Vec<Vec<f64>> = e_vars
            .iter()
            .map(|&v| tape.value(v).data.clone())
            .collect();
        optimize_weights(
            &detached,
            &ckpt.rff,
            cfg.inner_epochs,
            cfg.inner_lr,
            cfg.weighting,
        )?
        .weights()
    } else {
        vec![1.0; batch.len()]
    };

    let mut terms = Vec::with_capacity(batch.len() * 2);
    for ((&id, &ev), r) in batch.iter().zip(&e_vars).zip(&weights) {
        let est = model.evaluate_tape(&mut tape, ev);
        let p = tape.leaf(Tensor::scalar(corpus[id].performance));
        let diff = tape.sub(est, p);
        let sq = tape.mul_elem(diff, diff);
        terms.push(tape.scale(sq, cfg.alpha * r));
        let (nll, _) = model.decoder_nll_tape(&mut tape, ev, &corpus[id].sequence)?;
        terms.push(tape.scale(nll, cfg.beta));
    }
    let stacked = tape.stack_rows(&terms);
    let loss = tape.sum_all(stacked);
    let loss_value = tape.scalar_value(loss);
    if !loss_value.is_finite() {
        // name the first record whose own terms are non-finite
        for (k, &id) in batch.iter().enumerate() {
            let a = tape.scalar_value(terms[2 * k]);
            let b = tape.scalar_value(terms[2 * k + 1]);
            if !a.is_finite() || !b.is_finite() {
                return Err(SaftError::NonFinite(format!(
                    "training loss for corpus record {id}"
                )));
            }
        }
        return Err(SaftError::NonFinite("training loss".into()));
    }
    tape.backward(loss);
    ckpt.model.store.zero_grads();
    tape.write_grads(&mut ckpt.model.store);
    ckpt.model.store.adam_step(lr)?;
    Ok(loss_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use crate::rl::{CollectedPair, PairProvenance};
    use crate::tabular::TaskKind;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch: 8,
            epochs: 5,
            embed_dim: 6,
            enc_hidden: 5,
            eval_hidden: 7,
            dec_hidden: 6,
            token_dim: 4,
            ..Default::default()
        }
    }

    fn seeded_columns(n_cols: usize, n_rows: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_cols)
            .map(|_| (0..n_rows).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    #[test]
    fn identical_columns_give_one_unit_edge() {
        let c = vec![1.0, 2.0, 3.0];
        let g = build_graph(&[c.clone(), c], &[0.0, 1.0, 0.0]);
        assert_eq!(g.edges.len(), 1);
        let (i, j, s) = g.edges[0];
        assert_eq!((i, j), (0, 1));
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_columns_give_no_edge() {
        let g = build_graph(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 1.0]);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn single_feature_graph_has_no_edges() {
        let g = build_graph(&[vec![1.0, 2.0]], &[0.0, 1.0]);
        assert_eq!(g.n_nodes(), 1);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn edge_count_matches_percentile_oracle() {
        let cols = seeded_columns(10, 40, 7);
        let y: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let g = build_graph(&cols, &y);
        // oracle: count pairs at or above the k-th largest |cosine|
        let mut sims = Vec::new();
        for i in 0..10 {
            for j in i + 1..10 {
                sims.push(abs_cosine(&cols[i], &cols[j]));
            }
        }
        assert_eq!(sims.len(), 45);
        let mut sorted = sims.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let k = (0.05f64 * 45.0).ceil() as usize; // = 3
        let threshold = sorted[k - 1];
        let expected = sims.iter().filter(|&&s| s >= threshold && s > 0.0).count();
        assert!(expected >= 3);
        assert_eq!(g.edges.len(), expected);
    }

    #[test]
    fn graph_attributes_finite_and_deterministic() {
        let cols = seeded_columns(5, 30, 1);
        let y: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let a = build_graph(&cols, &y);
        let b = build_graph(&cols, &y);
        assert_eq!(a, b);
        for attr in &a.attrs {
            assert!(attr.iter().all(|x| x.is_finite()));
        }
        for &(_, _, s) in &a.edges {
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn encode_permutation_invariant() {
        let cols = seeded_columns(6, 25, 3);
        let y: Vec<f64> = (0..25).map(|i| i as f64 * 0.1).collect();
        let g = build_graph(&cols, &y);
        // degree <= neighbor_sample so sampling is exhaustive
        let model = SaftModel::new(tiny_config(), 6);
        assert!(g.neighbors.iter().all(|nb| nb.len() <= model.cfg.neighbor_sample));
        let e1 = model.encode(&g);

        // relabel nodes with a rotation
        let n = g.n_nodes();
        let perm: Vec<usize> = (0..n).map(|i| (i + 2) % n).collect();
        let mut inv = vec![0usize; n];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        let attrs: Vec<[f64; NODE_ATTR_DIM]> = (0..n).map(|i| g.attrs[inv[i]]).collect();
        let neighbors: Vec<Vec<usize>> = (0..n)
            .map(|i| g.neighbors[inv[i]].iter().map(|&v| perm[v]).collect())
            .collect();
        let edges = g
            .edges
            .iter()
            .map(|&(i, j, s)| (perm[i].min(perm[j]), perm[i].max(perm[j]), s))
            .collect();
        let gp = FeatureGraph {
            attrs,
            edges,
            neighbors,
        };
        let e2 = model.encode(&gp);
        for (a, b) in e1.iter().zip(&e2) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn encode_deterministic() {
        let cols = seeded_columns(4, 20, 4);
        let y = vec![1.0; 20];
        let g = build_graph(&cols, &y);
        let model = SaftModel::new(tiny_config(), 4);
        assert_eq!(model.encode(&g), model.encode(&g));
        assert_eq!(model.encode(&g).len(), model.cfg.embed_dim);
    }

    #[test]
    fn evaluator_gradient_matches_finite_differences() {
        let model = SaftModel::new(tiny_config(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let e: Vec<f64> = (0..model.cfg.embed_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let (_, grad) = model.evaluate_grad(&e);
            for i in 0..e.len() {
                let h = 1e-5;
                let mut ep = e.clone();
                ep[i] += h;
                let mut em = e.clone();
                em[i] -= h;
                let fd = (model.evaluate(&ep) - model.evaluate(&em)) / (2.0 * h);
                let denom = grad[i].abs().max(fd.abs()).max(1e-8);
                assert!(
                    (grad[i] - fd).abs() / denom < 1e-4,
                    "dim {i}: {} vs {}",
                    grad[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn decoder_step_probabilities_sum_to_one() {
        let model = SaftModel::new(tiny_config(), 4);
        let e: Vec<f64> = (0..model.cfg.embed_dim).map(|i| i as f64 * 0.1).collect();
        let (probs, state) = model.decoder_step(Token::Sos, None, &e);
        assert_eq!(probs.len(), model.vocab.size());
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let (probs2, _) = model.decoder_step(Token::Feature(0), Some(state), &e);
        assert!((probs2.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn decoder_nll_nonnegative() {
        let model = SaftModel::new(tiny_config(), 4);
        let e = vec![0.2; model.cfg.embed_dim];
        let seq = CrossSequence::parse("<sos> f0 f1 + <sep> f2 <eos>").unwrap();
        let nll = model.decoder_nll(&e, &seq).unwrap();
        assert!(nll > 0.0);
    }

    #[test]
    fn decoder_rejects_out_of_vocab_feature() {
        let model = SaftModel::new(tiny_config(), 2);
        let e = vec![0.0; model.cfg.embed_dim];
        let seq = CrossSequence::parse("<sos> f7 <eos>").unwrap();
        assert!(model.decoder_nll(&e, &seq).is_err());
    }

    #[test]
    fn joint_path_gradients_pass_finite_differences() {
        // encoder -> evaluator and encoder -> decoder adjoints against
        // central differences over every parameter
        let cols = seeded_columns(3, 15, 9);
        let y: Vec<f64> = (0..15).map(|i| (i % 2) as f64).collect();
        let g = build_graph(&cols, &y);
        let seq = CrossSequence::parse("<sos> f0 f1 * <eos>").unwrap();
        let model = SaftModel::new(tiny_config(), 3);
        let cfg = model.cfg.clone();
        let vocab = model.vocab;
        let mut store = model.store;
        let report = grad_check(
            &mut store,
            |store, tape| {
                let m = SaftModel {
                    store: store.clone(),
                    cfg: cfg.clone(),
                    vocab,
                };
                // rebuild on the caller's tape with the caller's store
                let e = m.encode_tape(tape, &g, cfg.seed);
                let est = m.evaluate_tape(tape, e);
                let sq = tape.mul_elem(est, est);
                let (nll, _) = m.decoder_nll_tape(tape, e, &seq).unwrap();
                let both = tape.stack_rows(&[sq, nll]);
                tape.sum_all(both)
            },
            1e-3,
        );
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn constant_dimension_contributes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let embeddings: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![0.7, rng.random_range(-1.0..1.0)])
            .collect();
        let rff = RffParams::new(0, 2, 5);
        let feats = RffFeatures::compute(&embeddings, &rff);
        let uniform = vec![1.0; 20];
        let (obj, _) = rff_cross_cov(&uniform, &feats, WeightingMode::Display);
        assert!(obj.abs() < 1e-18, "objective {obj}");
    }

    #[test]
    fn two_sample_case_matches_hand_computation() {
        // N=2, D=1, dims=2: evaluate the displayed estimator directly
        let embeddings = vec![vec![0.3, -0.4], vec![-0.9, 0.8]];
        let rff = RffParams::new(3, 2, 1);
        let feats = RffFeatures::compute(&embeddings, &rff);
        let r = vec![1.3, 0.7];
        let (obj, _) = rff_cross_cov(&r, &feats, WeightingMode::Display);

        // independent scalar arithmetic straight from the formula
        let f = |dim: usize, x: f64| {
            (2.0f64).sqrt() * (rff.omega[dim][0] * x + rff.phase[dim][0]).cos()
        };
        let f1 = f(0, 0.3);
        let f2 = f(0, -0.9);
        let g1 = f(1, -0.4);
        let g2 = f(1, 0.8);
        let fbar = (r[0] * f1 + r[1] * f2) / 2.0;
        let gbar = (r[0] * g1 + r[1] * g2) / 2.0;
        let c = ((r[0] * f1 - fbar) * (r[0] * g1 - gbar)
            + (r[1] * f2 - fbar) * (r[1] * g2 - gbar))
            / 1.0; // N - 1 = 1
        let expected = c * c;
        assert!((obj - expected).abs() < 1e-9, "{obj} vs {expected}");
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        for seed in [0u64, 1, 2] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let embeddings: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let rff = RffParams::new(seed, 3, 4);
            let feats = RffFeatures::compute(&embeddings, &rff);
            for mode in [WeightingMode::Display, WeightingMode::Conventional] {
                let logits: Vec<f64> =
                    (0..8).map(|_| rng.random_range(-0.5..0.5)).collect();
                let (_, grad) = rff_objective_logits(&logits, &feats, mode);
                for i in 0..8 {
                    let h = 1e-6;
                    let mut zp = logits.clone();
                    zp[i] += h;
                    let mut zm = logits.clone();
                    zm[i] -= h;
                    let (op, _) = rff_objective_logits(&zp, &feats, mode);
                    let (om, _) = rff_objective_logits(&zm, &feats, mode);
                    let fd = (op - om) / (2.0 * h);
                    let denom = grad[i].abs().max(fd.abs()).max(1e-8);
                    assert!(
                        (grad[i] - fd).abs() / denom < 1e-4,
                        "seed {seed} mode {mode:?} logit {i}: {} vs {}",
                        grad[i],
                        fd
                    );
                }
            }
        }
    }

    fn confounded_embeddings(n: usize, seed: u64) -> Vec<Vec<f64>> {
        // dims 0 and 1 strongly correlated on the first half of the samples
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let x: f64 = rng.random_range(-1.0..1.0);
                if i < n / 2 {
                    vec![x, x]
                } else {
                    vec![x, rng.random_range(-1.0..1.0)]
                }
            })
            .collect()
    }

    #[test]
    fn optimize_weights_decorrelates_confounded_dims() {
        let embeddings = confounded_embeddings(200, 0);
        let rff = RffParams::new(1, 2, 5);
        let feats = RffFeatures::compute(&embeddings, &rff);
        let uniform = vec![1.0; 200];
        let (before, _) = rff_cross_cov(&uniform, &feats, WeightingMode::Display);
        let w = optimize_weights(&embeddings, &rff, 1000, 0.3, WeightingMode::Display).unwrap();
        let (after, _) = rff_cross_cov(&w.weights(), &feats, WeightingMode::Display);
        assert!(
            after <= 0.5 * before,
            "objective only moved {before} -> {after}"
        );
    }

    #[test]
    fn optimize_weights_leaves_iid_dims_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let embeddings: Vec<Vec<f64>> = (0..2000)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let rff = RffParams::new(1, 2, 5);
        let feats = RffFeatures::compute(&embeddings, &rff);
        let uniform = vec![1.0; 2000];
        let (before, _) = rff_cross_cov(&uniform, &feats, WeightingMode::Display);
        let w = optimize_weights(&embeddings, &rff, 1000, 0.3, WeightingMode::Display).unwrap();
        let (after, _) = rff_cross_cov(&w.weights(), &feats, WeightingMode::Display);
        assert!(
            (after - before).abs() <= 0.1 * before,
            "iid objective moved {before} -> {after}"
        );
    }

    #[test]
    fn single_sample_rejected() {
        let rff = RffParams::new(0, 2, 5);
        assert!(optimize_weights(&[vec![0.0, 0.0]], &rff, 5, 0.01, WeightingMode::Display).is_err());
    }

    #[test]
    fn weights_stay_on_the_simplex_scaled() {
        let embeddings = confounded_embeddings(40, 4);
        let rff = RffParams::new(4, 2, 5);
        let w = optimize_weights(&embeddings, &rff, 50, 0.05, WeightingMode::Display).unwrap();
        let r = w.weights();
        assert!(r.iter().all(|x| *x > 0.0));
        assert!((r.iter().sum::<f64>() - 40.0).abs() < 1e-9);
    }

    fn small_corpus(table: &Table, n: usize, seed: u64) -> TrainingCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| CollectedPair {
                sequence: dsl::random_valid_sequence(&mut rng, table.n_features(), 3, 2),
                performance: rng.random_range(0.0..1.0),
                provenance: PairProvenance {
                    episode: i,
                    step: 0,
                },
            })
            .collect()
    }

    fn small_table(seed: u64) -> Table {
        let cols = seeded_columns(3, 30, seed);
        let y: Vec<f64> = (0..30).map(|r| cols[0][r] + cols[1][r]).collect();
        Table::new(
            cols,
            vec!["f0".into(), "f1".into(), "f2".into()],
            y,
            TaskKind::Regression,
        )
        .unwrap()
    }

    #[test]
    fn bilevel_loss_decreases() {
        let table = small_table(0);
        let corpus = small_corpus(&table, 50, 1);
        let cfg = TrainConfig {
            epochs: 20,
            batch: 16,
            lr_start: 0.005,
            lr_end: 0.002,
            inner_epochs: 5,
            ..tiny_config()
        };
        let (_, log) = bilevel_train(&corpus, &table, &cfg).unwrap();
        assert_eq!(log.epoch_losses.len(), 20);
        let first = log.epoch_losses[0];
        let last = *log.epoch_losses.last().unwrap();
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn bilevel_deterministic() {
        let table = small_table(2);
        let corpus = small_corpus(&table, 12, 3);
        let cfg = TrainConfig {
            epochs: 3,
            ..tiny_config()
        };
        let (a, la) = bilevel_train(&corpus, &table, &cfg).unwrap();
        let (b, lb) = bilevel_train(&corpus, &table, &cfg).unwrap();
        assert_eq!(la.epoch_losses, lb.epoch_losses);
        for name in a.model.store.names() {
            assert_eq!(a.model.store.get(&name).data, b.model.store.get(&name).data);
        }
    }

    #[test]
    fn uniform_weight_estimation_term_matches_mean_square_identity() {
        // with all r*_i = 1 the weighted term equals N times the unweighted
        // mean-squared term
        let model = SaftModel::new(tiny_config(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let es: Vec<Vec<f64>> = (0..8)
            .map(|_| {
                (0..model.cfg.embed_dim)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let ps: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let weighted: f64 = es
            .iter()
            .zip(&ps)
            .map(|(e, p)| {
                let d = model.evaluate(e) - p;
                d * d
            })
            .sum();
        let mean_sq: f64 = es
            .iter()
            .zip(&ps)
            .map(|(e, p)| {
                let d = model.evaluate(e) - p;
                d * d
            })
            .sum::<f64>()
            / 8.0;
        assert!((weighted - 8.0 * mean_sq).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_reproduces_forward_outputs() {
        let table = small_table(4);
        let corpus = small_corpus(&table, 10, 5);
        let cfg = TrainConfig {
            epochs: 2,
            ..tiny_config()
        };
        let (ckpt, _) = bilevel_train(&corpus, &table, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();
        let loaded = Checkpoint::load(dir.path()).unwrap();

        let set = dsl::apply_sequence(&corpus[0].sequence, &table).unwrap();
        let g = build_graph(&set.columns, &table.target);
        let e1 = ckpt.model.encode(&g);
        let e2 = loaded.model.encode(&g);
        assert_eq!(e1, e2);
        assert_eq!(ckpt.model.evaluate(&e1), loaded.model.evaluate(&e2));
        assert_eq!(
            ckpt.model.decoder_nll(&e1, &corpus[0].sequence).unwrap(),
            loaded.model.decoder_nll(&e2, &corpus[0].sequence).unwrap()
        );
        for (a, b) in ckpt.rff.omega.iter().flatten().zip(loaded.rff.omega.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits(), "omega {a} vs {b}");
        }
        for (a, b) in ckpt.rff.phase.iter().flatten().zip(loaded.rff.phase.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits(), "phase {a} vs {b}");
        }
        assert_eq!(ckpt.rff.d, loaded.rff.d);
    }

    #[test]
    fn nonfinite_performance_aborts_with_record_id() {
        let table = small_table(7);
        let mut corpus = small_corpus(&table, 4, 8);
        corpus[2].performance = f64::NAN;
        let cfg = TrainConfig {
            epochs: 1,
            ..tiny_config()
        };
        let err = bilevel_train(&corpus, &table, &cfg).unwrap_err();
        assert!(err.to_string().contains('2'), "{err}");
    }
}
