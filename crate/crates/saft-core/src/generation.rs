//! Flatness-aware gradient-ascent search in the embedding space,
//! autoregressive decoding of candidate sequences, and final candidate
//! selection by measured downstream performance.

use serde::{Deserialize, Serialize};

use crate::dsl::{self, CrossSequence, Token, TransformedFeatureSet, Validity};
use crate::error::{Result, SaftError};
use crate::eval::{train_eval, DownstreamModelSpec, EvalProtocol};
use crate::repr::{build_graph, Checkpoint, SaftModel};
use crate::rl::TrainingCorpus;
use crate::tabular::Table;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AscentConfig {
    /// learning-rate bounds; the rate decreases eta1 -> eta2 within a cycle
    pub eta1: f64,
    pub eta2: f64,
    /// cycle length
    pub cycle: usize,
    /// total ascent iterations
    pub iterations: usize,
    /// number of top-performance seed embeddings
    pub seeds: usize,
    /// disable to return the final iterate instead of the cycle average
    /// (the flatness ablation)
    pub average: bool,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig {
            eta1: 0.001,
            eta2: 0.0005,
            cycle: 10,
            iterations: 200,
            seeds: 20,
            average: true,
        }
    }
}

/// A starting point for the ascent: a top corpus record together with its
/// frozen-parameter embedding.
#[derive(Debug, Clone)]
pub struct AscentSeed {
    pub sequence: CrossSequence,
    pub performance: f64,
    pub embedding: Vec<f64>,
}

/// The T corpus records with the highest recorded performance (ties keep
/// corpus order), encoded with frozen parameters.
pub fn select_seeds(
    corpus: &TrainingCorpus,
    ckpt: &Checkpoint,
    table: &Table,
    t: usize,
) -> Result<Vec<AscentSeed>> {
    if corpus.is_empty() {
        return Err(SaftError::InvalidArgument("empty corpus".into()));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| {
        corpus[b]
            .performance
            .partial_cmp(&corpus[a].performance)
            .unwrap()
    });
    order.truncate(t);
    let mut seeds = Vec::with_capacity(order.len());
    for id in order {
        let set = dsl::apply_sequence(&corpus[id].sequence, table)?;
        let g = build_graph(&set.columns, &table.target);
        seeds.push(AscentSeed {
            sequence: corpus[id].sequence.clone(),
            performance: corpus[id].performance,
            embedding: ckpt.model.encode(&g),
        });
    }
    Ok(seeds)
}

/// Gradient ascent with a cyclic learning rate and running averaging of
/// cycle-end iterates.
///
/// E starts at the seed; eta(i) = eta1 - (eta1-eta2)*((i-1) mod c)/max(c-1,1);
/// whenever i mod c = 0 the average picks up the current iterate:
/// E_hat <- (E_hat * n_models + E) / (n_models + 1) with n_models = i/c, so
/// E_hat is the running mean of the seed and every cycle-end iterate.
pub fn flatness_ascent<F>(seed: &[f64], grad: F, cfg: &AscentConfig) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut e = seed.to_vec();
    let mut e_hat = seed.to_vec();
    let c = cfg.cycle.max(1);
    for i in 1..=cfg.iterations {
        let eta = cfg.eta1
            - (cfg.eta1 - cfg.eta2) * ((i - 1) % c) as f64 / (c as f64 - 1.0).max(1.0);
        let g = grad(&e);
        if g.iter().any(|x| !x.is_finite()) {
            return Err(SaftError::NonFinite("ascent gradient".into()));
        }
        for (ev, gv) in e.iter_mut().zip(&g) {
            *ev += eta * gv;
        }
        if cfg.average && i % c == 0 {
            let n_models = (i / c) as f64;
            for (a, ev) in e_hat.iter_mut().zip(&e) {
                *a = (*a * n_models + ev) / (n_models + 1.0);
            }
        }
    }
    if cfg.average {
        Ok(e_hat)
    } else {
        Ok(e)
    }
}

/// Greedy autoregressive decoding from `<sos>`, conditioned on the
/// embedding, stopping at `<eos>` or `max_len` tokens. Returns the decoded
/// sequence (delimiters included) and whether it terminated on `<eos>`.
pub fn decode_full(e: &[f64], model: &SaftModel, max_len: usize) -> (CrossSequence, bool) {
    let mut tokens = vec![Token::Sos];
    let mut state = None;
    let mut terminated = false;
    while tokens.len() < max_len {
        let (probs, next_state) = model.decoder_step(*tokens.last().unwrap(), state, e);
        state = Some(next_state);
        // argmax with ties to the lowest token id
        let mut best = 0;
        for (id, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = id;
            }
        }
        let token = model.vocab.id_token(best).unwrap();
        tokens.push(token);
        if token == Token::Eos {
            terminated = true;
            break;
        }
    }
    (CrossSequence::new(tokens), terminated)
}

/// One decoded candidate, before materialization.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub seed: Vec<f64>,
    pub averaged: Vec<f64>,
    pub sequence: CrossSequence,
    pub terminated: bool,
    pub estimated: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateReport {
    pub sequence: String,
    pub estimated: f64,
    pub measured: Option<f64>,
    pub valid: bool,
    pub terminated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationReport {
    pub candidates: Vec<CandidateReport>,
    pub best_index: usize,
    pub best_sequence: String,
    pub best_measured: f64,
}

/// Validate and materialize every candidate against the table, score the
/// valid ones with the downstream model at a fixed split seed, and return
/// the one with the highest measured performance (estimation error would
/// otherwise silently pick bad candidates).
pub fn materialize_and_rank(
    candidates: &[Candidate],
    table: &Table,
    spec: &DownstreamModelSpec,
    split_seed: u64,
) -> Result<(TransformedFeatureSet, GenerationReport)> {
    if candidates.is_empty() {
        return Err(SaftError::InvalidArgument("no candidates".into()));
    }
    let mut reports = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64, TransformedFeatureSet)> = None;
    for (idx, cand) in candidates.iter().enumerate() {
        let valid = cand.terminated
            && matches!(
                dsl::validate(&cand.sequence, table.n_features()),
                Validity::Valid
            );
        let mut measured = None;
        if valid {
            if let Ok(set) = dsl::apply_sequence(&cand.sequence, table) {
                if let Ok(report) = train_eval(
                    &set.columns,
                    &table.target,
                    table.task,
                    spec,
                    split_seed,
                    EvalProtocol::Holdout,
                ) {
                    let p = report.primary_score;
                    measured = Some(p);
                    let better = match &best {
                        None => true,
                        Some((_, bp, _)) => p > *bp,
                    };
                    if better {
                        best = Some((idx, p, set));
                    }
                }
            }
        }
        reports.push(CandidateReport {
            sequence: cand.sequence.render(),
            estimated: cand.estimated,
            measured,
            valid,
            terminated: cand.terminated,
        });
    }
    match best {
        Some((idx, p, set)) => {
            let report = GenerationReport {
                best_sequence: reports[idx].sequence.clone(),
                best_index: idx,
                best_measured: p,
                candidates: reports,
            };
            Ok((set, report))
        }
        None => Err(SaftError::Generation(
            "no candidate produced a valid, scorable sequence".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub ascent: AscentConfig,
    pub max_len: usize,
    pub split_seed: u64,
    pub model: DownstreamModelSpec,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            ascent: AscentConfig::default(),
            max_len: dsl::MAX_SEQ_LEN,
            split_seed: 0,
            model: DownstreamModelSpec::default(),
        }
    }
}

/// Full generation stage: seed selection, flatness ascent, decoding, and
/// ranking by measured performance. Each seed contributes two candidates —
/// its own source sequence and the sequence decoded from the ascended
/// embedding — so generation can never fall below the seeds it started
/// from while decoded improvements still win on merit.
pub fn generate(
    corpus: &TrainingCorpus,
    ckpt: &Checkpoint,
    table: &Table,
    cfg: &GenerateConfig,
) -> Result<(TransformedFeatureSet, GenerationReport)> {
    let seeds = select_seeds(corpus, ckpt, table, cfg.ascent.seeds)?;
    let mut candidates = Vec::with_capacity(seeds.len() * 2);
    for seed in seeds {
        let averaged = flatness_ascent(
            &seed.embedding,
            |e| ckpt.model.evaluate_grad(e).1,
            &cfg.ascent,
        )?;
        let (sequence, terminated) = decode_full(&averaged, &ckpt.model, cfg.max_len);
        let estimated = ckpt.model.evaluate(&averaged);
        candidates.push(Candidate {
            seed: seed.embedding.clone(),
            averaged,
            sequence,
            terminated,
            estimated,
        });
        candidates.push(Candidate {
            seed: seed.embedding.clone(),
            averaged: seed.embedding.clone(),
            sequence: seed.sequence,
            terminated: true,
            estimated: ckpt.model.evaluate(&seed.embedding),
        });
    }
    materialize_and_rank(&candidates, table, &cfg.model, cfg.split_seed)
}
