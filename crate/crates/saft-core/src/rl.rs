//! Three-agent epsilon-greedy DQN that explores feature crosses to build a
//! large, high-quality, diverse corpus of (feature set, performance) pairs.
//!
//! Each crossing step picks a head feature, an operator, and a tail feature.
//! The reward is the downstream-performance improvement of the grown feature
//! set; agents train independently by experience replay on the Bellman
//! residual.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{self, CrossSequence, Token, BIN_OPS, UN_OPS};
use crate::error::{Result, SaftError};
use crate::eval::{train_eval, DownstreamModelSpec, EvalProtocol};
use crate::nn::{dense, init_dense, ParamStore, Tape, Tensor};
use crate::tabular::Table;

pub const STATE_DIM: usize = 16;
pub const N_OPS: usize = BIN_OPS.len() + UN_OPS.len();

/// 16 statistics summarizing a feature set: {mean, std, min, max} over each
/// of {column means, column stds, |column-target corr|, pairwise |corr|}.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub [f64; STATE_DIM]);

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn abs_corr(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    if sa == 0.0 || sb == 0.0 {
        return 0.0;
    }
    let n = a.len() as f64;
    let cov = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / n;
    (cov / (sa * sb)).abs().min(1.0)
}

fn aggregate(xs: &[f64]) -> [f64; 4] {
    if xs.is_empty() {
        return [0.0; 4];
    }
    let (mean, std) = mean_std(xs);
    let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    [mean, std, min, max]
}

pub fn featurize_state(features: &[Vec<f64>], target: &[f64]) -> StateVector {
    let means: Vec<f64> = features.iter().map(|c| mean_std(c).0).collect();
    let stds: Vec<f64> = features.iter().map(|c| mean_std(c).1).collect();
    let target_corrs: Vec<f64> = features.iter().map(|c| abs_corr(c, target)).collect();
    let mut pair_corrs = Vec::new();
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            pair_corrs.push(abs_corr(&features[i], &features[j]));
        }
    }
    let mut out = [0.0; STATE_DIM];
    for (block, xs) in [&means, &stds, &target_corrs, &pair_corrs].iter().enumerate() {
        let mut agg = aggregate(xs);
        if block < 2 {
            // column means/stds are unbounded (capped cross values reach
            // 1e100); compress so the Q-net inputs stay well-conditioned
            for x in &mut agg {
                *x = x.asinh();
            }
        }
        out[block * 4..block * 4 + 4].copy_from_slice(&agg);
    }
    StateVector(out)
}

/// One crossing step: joint action of the three agents plus the observed
/// reward and resulting state.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: StateVector,
    pub actions: (usize, usize, usize),
    pub reward: f64,
    pub next_state: StateVector,
    pub terminal: bool,
    /// number of features available when the action was taken / after it
    pub n_avail: usize,
    pub n_avail_next: usize,
}

/// Bounded FIFO of transitions with a seeded uniform batch sampler.
#[derive(Debug)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: VecDeque::new(),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, batch: usize) -> Vec<&Transition> {
        (0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

/// Two-layer Q-network (state -> hidden 64 -> one value per action).
#[derive(Debug)]
pub struct QAgent {
    pub net: ParamStore,
    pub target: ParamStore,
    pub out_dim: usize,
}

const Q_HIDDEN: usize = 64;

fn build_qnet(seed: u64, out_dim: usize) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    store.add("w1", init_dense(&mut rng, STATE_DIM, Q_HIDDEN));
    store.add("b1", Tensor::row_vec(vec![0.0; Q_HIDDEN]));
    store.add("w2", init_dense(&mut rng, Q_HIDDEN, out_dim));
    store.add("b2", Tensor::row_vec(vec![0.0; out_dim]));
    store
}

fn qnet_forward(store: &ParamStore, state: &StateVector) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row_vec(state.0.to_vec()));
    let w1 = tape.leaf(store.get("w1").clone());
    let b1 = tape.leaf(store.get("b1").clone());
    let h = dense(&mut tape, x, w1, b1);
    let h = tape.relu(h);
    let w2 = tape.leaf(store.get("w2").clone());
    let b2 = tape.leaf(store.get("b2").clone());
    let q = dense(&mut tape, h, w2, b2);
    tape.value(q).data.clone()
}

impl QAgent {
    pub fn new(seed: u64, out_dim: usize) -> Self {
        let net = build_qnet(seed, out_dim);
        let target = build_qnet(seed, out_dim);
        QAgent {
            net,
            target,
            out_dim,
        }
    }

    pub fn q_values(&self, state: &StateVector) -> Vec<f64> {
        qnet_forward(&self.net, state)
    }

    pub fn target_q_values(&self, state: &StateVector) -> Vec<f64> {
        qnet_forward(&self.target, state)
    }

    pub fn sync_target(&mut self) {
        for name in self.net.names() {
            *self.target.get_mut(&name) = self.net.get(&name).clone();
        }
    }
}

/// Head, operator, and tail agents, in that order.
pub struct Agents {
    pub head: QAgent,
    pub op: QAgent,
    pub tail: QAgent,
}

impl Agents {
    pub fn new(seed: u64, max_features: usize) -> Self {
        Agents {
            head: QAgent::new(seed.wrapping_add(1), max_features),
            op: QAgent::new(seed.wrapping_add(2), N_OPS),
            tail: QAgent::new(seed.wrapping_add(3), max_features),
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// With probability `eps` each agent exploits its Q-values (masked to the
/// currently available features; ties break to the lowest index); otherwise
/// it picks uniformly at random.
pub fn select_actions<R: Rng>(
    state: &StateVector,
    agents: &Agents,
    eps: f64,
    n_avail: usize,
    rng: &mut R,
) -> (usize, usize, usize) {
    let pick = |agent: &QAgent, n_valid: usize, rng: &mut R| -> usize {
        if rng.random_bool(eps) {
            let q = agent.q_values(state);
            argmax(&q[..n_valid.min(q.len())])
        } else {
            rng.random_range(0..n_valid)
        }
    };
    let head = pick(&agents.head, n_avail, rng);
    let op = pick(&agents.op, N_OPS, rng);
    let tail = pick(&agents.tail, n_avail, rng);
    (head, op, tail)
}

/// Build the new feature's postfix segment from the chosen actions. Unary
/// operators apply to the head feature only.
pub fn action_segment(segments: &[Vec<Token>], actions: (usize, usize, usize)) -> Vec<Token> {
    let (head, op, tail) = actions;
    if op < BIN_OPS.len() {
        let mut seg = segments[head].clone();
        seg.extend_from_slice(&segments[tail]);
        seg.push(Token::Bin(BIN_OPS[op]));
        seg
    } else {
        let mut seg = segments[head].clone();
        seg.push(Token::Un(UN_OPS[op - BIN_OPS.len()]));
        seg
    }
}

/// Evaluate the grown feature set and return (new column, reward).
pub fn episode_step(
    columns: &mut Vec<Vec<f64>>,
    segments: &mut Vec<Vec<Token>>,
    actions: (usize, usize, usize),
    table: &Table,
    spec: &DownstreamModelSpec,
    split_seed: u64,
    prev_p: f64,
) -> Result<f64> {
    let seg = action_segment(segments, actions);
    let col = dsl::eval_segment(&seg, table)?;
    columns.push(col);
    segments.push(seg);
    let report = train_eval(
        columns,
        &table.target,
        table.task,
        spec,
        split_seed,
        EvalProtocol::Holdout,
    )?;
    Ok(report.primary_score - prev_p)
}

/// One experience-replay regression step per agent: Q(s,a) is pulled toward
/// r + discount * max_a' Q_target(s',a'), with a zero bootstrap at terminal
/// states. Returns the mean Bellman MSE across agents.
pub fn dqn_train_step<R: Rng>(
    agents: &mut Agents,
    buffer: &ReplayBuffer,
    rng: &mut R,
    batch: usize,
    discount: f64,
    lr: f64,
) -> f64 {
    let samples = buffer.sample(rng, batch);
    let mut total_loss = 0.0;
    for which in 0..3 {
        let (agent, action_of): (&mut QAgent, fn(&Transition) -> usize) = match which {
            0 => (&mut agents.head, |t| t.actions.0),
            1 => (&mut agents.op, |t| t.actions.1),
            _ => (&mut agents.tail, |t| t.actions.2),
        };
        // targets from the frozen network
        let targets: Vec<f64> = samples
            .iter()
            .map(|t| {
                if t.terminal {
                    t.reward
                } else {
                    let q_next = qnet_forward(&agent.target, &t.next_state);
                    let n_valid = if which == 1 {
                        N_OPS
                    } else {
                        t.n_avail_next.min(q_next.len())
                    };
                    let best = q_next[..n_valid]
                        .iter()
                        .cloned()
                        .fold(f64::NEG_INFINITY, f64::max);
                    t.reward + discount * best
                }
            })
            // rewards from degenerate crosses can be astronomically
            // negative (1-RAE is unbounded below); clamp the regression
            // targets so one bad transition cannot blow up the network
            .map(|y| y.clamp(-10.0, 10.0))
            .collect();

        let mut tape = Tape::new();
        let w1 = tape.param(&agent.net, "w1");
        let b1 = tape.param(&agent.net, "b1");
        let w2 = tape.param(&agent.net, "w2");
        let b2 = tape.param(&agent.net, "b2");
        let mut losses = Vec::with_capacity(samples.len());
        for (t, y) in samples.iter().zip(&targets) {
            let x = tape.leaf(Tensor::row_vec(t.state.0.to_vec()));
            let h = dense(&mut tape, x, w1, b1);
            let h = tape.relu(h);
            let q = dense(&mut tape, h, w2, b2);
            let qa = tape.slice_cols(q, action_of(t), 1);
            let yv = tape.leaf(Tensor::scalar(*y));
            let diff = tape.sub(qa, yv);
            losses.push(tape.mul_elem(diff, diff));
        }
        let stacked = tape.stack_rows(&losses);
        let sum = tape.sum_all(stacked);
        let loss = tape.scale(sum, 1.0 / samples.len() as f64);
        tape.backward(loss);
        agent.net.zero_grads();
        tape.write_grads(&mut agent.net);
        agent.net.adam_step(lr).expect("finite DQN gradients");
        total_loss += tape.scalar_value(loss);
    }
    total_loss / 3.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub episodes: usize,
    pub steps: usize,
    pub cap: usize,
    pub diversity_frac: f64,
    pub seed: u64,
    pub split_seed: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub batch: usize,
    pub discount: f64,
    pub target_sync: usize,
    pub lr: f64,
    pub buffer_capacity: usize,
    pub model: DownstreamModelSpec,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            episodes: 512,
            steps: 10,
            cap: 5000,
            diversity_frac: 0.1,
            seed: 0,
            split_seed: 0,
            eps_start: 0.3,
            eps_end: 0.9,
            batch: 32,
            discount: 0.9,
            target_sync: 100,
            lr: 1e-3,
            buffer_capacity: 10_000,
            model: DownstreamModelSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairProvenance {
    pub episode: usize,
    pub step: usize,
}

/// A feature set the collector visited, keyed by the canonical rendering of
/// its cross sequence, labeled with its downstream performance.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectedPair {
    pub sequence: CrossSequence,
    pub performance: f64,
    pub provenance: PairProvenance,
}

pub type TrainingCorpus = Vec<CollectedPair>;

/// Per-episode reward/performance trace, kept for the telescoping-identity
/// check.
#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub rewards: Vec<f64>,
    pub p_trace: Vec<f64>,
}

#[derive(Debug)]
pub struct CollectOutcome {
    pub corpus: TrainingCorpus,
    pub episodes: Vec<EpisodeLog>,
    /// number of raw pairs before top-cap selection and dedup
    pub raw_pairs: usize,
}

/// Run the control/training alternation for `episodes x steps` crossing
/// steps and distill the visited pairs into a corpus: the top `cap` by
/// performance plus a seeded 10% diversity sample of the rest, deduplicated
/// by canonical rendering.
pub fn collect(table: &Table, cfg: &CollectConfig) -> Result<CollectOutcome> {
    if table.n_features() == 0 {
        return Err(SaftError::InvalidArgument("empty table".into()));
    }
    let max_features = table.n_features() + cfg.steps;
    let mut agents = Agents::new(cfg.seed, max_features);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pairs: Vec<CollectedPair> = Vec::new();
    let mut episodes = Vec::with_capacity(cfg.episodes);
    let mut train_steps = 0usize;

    let base_segments: Vec<Vec<Token>> =
        (0..table.n_features()).map(|i| vec![Token::Feature(i)]).collect();
    let base_p = train_eval(
        &table.columns,
        &table.target,
        table.task,
        &cfg.model,
        cfg.split_seed,
        EvalProtocol::Holdout,
    )?
    .primary_score;

    for episode in 0..cfg.episodes {
        let eps = if cfg.episodes <= 1 {
            cfg.eps_start
        } else {
            cfg.eps_start
                + (cfg.eps_end - cfg.eps_start) * episode as f64 / (cfg.episodes - 1) as f64
        };
        let mut columns = table.columns.clone();
        let mut segments = base_segments.clone();
        let mut p = base_p;
        let mut log = EpisodeLog {
            rewards: Vec::with_capacity(cfg.steps),
            p_trace: vec![base_p],
        };
        for step in 0..cfg.steps {
            let state = featurize_state(&columns, &table.target);
            let actions = select_actions(&state, &agents, eps, columns.len(), &mut rng);
            let reward = match episode_step(
                &mut columns,
                &mut segments,
                actions,
                table,
                &cfg.model,
                cfg.split_seed,
                p,
            ) {
                Ok(r) => r,
                Err(_) => break, // evaluation failure aborts the episode, not the run
            };
            let next_state = featurize_state(&columns, &table.target);
            p = log.p_trace.last().unwrap() + reward;
            log.rewards.push(reward);
            log.p_trace.push(p);
            buffer.push(Transition {
                state,
                actions,
                reward,
                next_state,
                terminal: step + 1 == cfg.steps,
                n_avail: columns.len() - 1,
                n_avail_next: columns.len(),
            });
            pairs.push(CollectedPair {
                sequence: CrossSequence::from_segments(&segments),
                performance: p,
                provenance: PairProvenance { episode, step },
            });
            if buffer.len() >= cfg.batch {
                dqn_train_step(
                    &mut agents,
                    &buffer,
                    &mut rng,
                    cfg.batch,
                    cfg.discount,
                    cfg.lr,
                );
                train_steps += 1;
                if train_steps % cfg.target_sync == 0 {
                    agents.head.sync_target();
                    agents.op.sync_target();
                    agents.tail.sync_target();
                }
            }
        }
        episodes.push(log);
    }

    let raw_pairs = pairs.len();

    // dedup by canonical rendering, keeping the first occurrence
    let mut seen = std::collections::HashSet::new();
    pairs.retain(|p| seen.insert(p.sequence.render()));

    // top `cap` by performance (stable: ties keep discovery order)
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        pairs[b]
            .performance
            .partial_cmp(&pairs[a].performance)
            .unwrap()
    });
    let top: Vec<usize> = order.iter().take(cfg.cap).cloned().collect();
    let rest: Vec<usize> = order.iter().skip(cfg.cap).cloned().collect();
    let n_extra = ((rest.len() as f64) * cfg.diversity_frac).floor() as usize;
    let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut rest_shuffled = rest;
    use rand::seq::SliceRandom;
    rest_shuffled.shuffle(&mut sample_rng);
    let mut keep: Vec<usize> = top;
    keep.extend(rest_shuffled.into_iter().take(n_extra));
    keep.sort_unstable();

    let corpus = keep.into_iter().map(|i| pairs[i].clone()).collect();
    Ok(CollectOutcome {
        corpus,
        episodes,
        raw_pairs,
    })
}

/// Corpus file: one record per line — rendered sequence, tab, performance,
/// tab, JSON provenance.
pub fn write_corpus(corpus: &TrainingCorpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    for pair in corpus {
        out.push_str(&pair.sequence.render());
        out.push('\t');
        out.push_str(&format!("{}", pair.performance));
        out.push('\t');
        out.push_str(&serde_json::to_string(&pair.provenance)?);
        out.push('\n');
    }
    let mut f =
        std::fs::File::create(path).map_err(|e| SaftError::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| SaftError::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<TrainingCorpus> {
    let text =
        std::fs::read_to_string(path).map_err(|e| SaftError::io(path.display().to_string(), e))?;
    let mut corpus = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (seq, p, prov) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(SaftError::InvalidArgument(format!(
                    "corpus line {} malformed",
                    i + 1
                )))
            }
        };
        corpus.push(CollectedPair {
            sequence: CrossSequence::parse(seq)?,
            performance: p.parse().map_err(|_| {
                SaftError::InvalidArgument(format!("corpus line {}: bad performance", i + 1))
            })?,
            provenance: serde_json::from_str(prov)?,
        });
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::TaskKind;

    fn product_table(n: usize, seed: u64) -> Table {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|r| f0[r] * f1[r]).collect();
        Table::new(
            vec![f0, f1, f2],
            vec!["f0".into(), "f1".into(), "f2".into()],
            y,
            TaskKind::Regression,
        )
        .unwrap()
    }

    #[test]
    fn state_constant_feature_zero_stds() {
        let s = featurize_state(&[vec![2.0, 2.0, 2.0]], &[0.0, 1.0, 0.0]);
        // std block (mean,std,min,max of column stds) all zero
        assert_eq!(&s.0[4..8], &[0.0, 0.0, 0.0, 0.0]);
        // single feature: pairwise block zero
        assert_eq!(&s.0[12..16], &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn state_duplicated_feature_pairwise_block() {
        let f0 = vec![1.0, 2.0, 3.0, 5.0];
        let s = featurize_state(&[f0.clone(), f0], &[0.0, 1.0, 0.0, 1.0]);
        // one pair with |corr| = 1: aggregates (mean,std,min,max) = (1,0,1,1)
        assert!((s.0[12] - 1.0).abs() < 1e-12);
        assert!(s.0[13].abs() < 1e-12);
        assert!((s.0[14] - 1.0).abs() < 1e-12);
        assert!((s.0[15] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn state_permutation_invariant() {
        let a = vec![1.0, -2.0, 0.5, 3.0];
        let b = vec![0.0, 1.0, 2.0, -1.0];
        let c = vec![5.0, 5.5, 4.5, 5.0];
        let y = vec![0.0, 1.0, 1.0, 0.0];
        let s1 = featurize_state(&[a.clone(), b.clone(), c.clone()], &y);
        let s2 = featurize_state(&[c, a, b], &y);
        for (x, z) in s1.0.iter().zip(&s2.0) {
            assert!((x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_exploitation_takes_argmax() {
        let mut agents = Agents::new(0, 4);
        // bias the head net so action 0 dominates
        for a in [&mut agents.head, &mut agents.op, &mut agents.tail] {
            let b2 = a.net.get_mut("b2");
            b2.data[0] = 100.0;
        }
        let state = StateVector([0.1; STATE_DIM]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let (h, o, t) = select_actions(&state, &agents, 1.0, 4, &mut rng);
            assert_eq!((h, o, t), (0, 0, 0));
        }
    }

    #[test]
    fn pure_exploration_is_uniform() {
        let agents = Agents::new(0, 5);
        let state = StateVector([0.0; STATE_DIM]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            let (h, _, _) = select_actions(&state, &agents, 0.0, 5, &mut rng);
            counts[h] += 1;
        }
        let expected = n as f64 / 5.0;
        let sigma = (expected * (1.0 - 1.0 / 5.0)).sqrt();
        for c in counts {
            assert!(
                (c as f64 - expected).abs() < 3.0 * sigma,
                "count {c} vs expected {expected}"
            );
        }
    }

    #[test]
    fn tie_break_to_lowest_index() {
        let agents = Agents::new(0, 3);
        let state = StateVector([0.0; STATE_DIM]);
        // zero weights and biases give all-equal Q values
        let mut agents = agents;
        for a in [&mut agents.head, &mut agents.op, &mut agents.tail] {
            for name in a.net.names() {
                a.net.get_mut(&name).data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (h, o, t) = select_actions(&state, &agents, 1.0, 3, &mut rng);
        assert_eq!((h, o, t), (0, 0, 0));
    }

    #[test]
    fn buffer_fifo_eviction() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(Transition {
                state: StateVector([i as f64; STATE_DIM]),
                actions: (0, 0, 0),
                reward: i as f64,
                next_state: StateVector([0.0; STATE_DIM]),
                terminal: false,
                n_avail: 1,
                n_avail_next: 2,
            });
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.items[0].reward, 2.0);
        assert_eq!(buf.items[2].reward, 4.0);
    }

    #[test]
    fn dqn_fixed_point_single_transition() {
        let mut agents = Agents::new(7, 2);
        let mut buf = ReplayBuffer::new(10);
        let s = StateVector([0.5; STATE_DIM]);
        buf.push(Transition {
            state: s.clone(),
            actions: (0, 0, 0),
            reward: 1.0,
            next_state: s.clone(),
            terminal: true,
            n_avail: 2,
            n_avail_next: 2,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for step in 0..2000 {
            dqn_train_step(&mut agents, &buf, &mut rng, 4, 0.9, 1e-3);
            if step % 100 == 0 {
                agents.head.sync_target();
                agents.op.sync_target();
                agents.tail.sync_target();
            }
        }
        let q = agents.head.q_values(&s);
        assert!((q[0] - 1.0).abs() < 1e-2, "Q(s,a) = {}", q[0]);
    }

    #[test]
    fn bellman_mse_decreases_on_frozen_buffer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agents = Agents::new(3, 4);
        let mut buf = ReplayBuffer::new(100);
        for _ in 0..50 {
            let s: Vec<f64> = (0..STATE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s2: Vec<f64> = (0..STATE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            buf.push(Transition {
                state: StateVector(s.try_into().unwrap()),
                actions: (
                    rng.random_range(0..4),
                    rng.random_range(0..N_OPS),
                    rng.random_range(0..4),
                ),
                reward: rng.random_range(-0.5..0.5),
                next_state: StateVector(s2.try_into().unwrap()),
                terminal: rng.random_bool(0.3),
                n_avail: 4,
                n_avail_next: 4,
            });
        }
        let first = dqn_train_step(&mut agents, &buf, &mut rng, 32, 0.9, 1e-3);
        let mut last = first;
        for _ in 0..99 {
            last = dqn_train_step(&mut agents, &buf, &mut rng, 32, 0.9, 1e-3);
        }
        assert!(last < first, "MSE {first} -> {last}");
    }

    #[test]
    fn action_segment_shapes() {
        let segs = vec![vec![Token::Feature(0)], vec![Token::Feature(1)]];
        let bin = action_segment(&segs, (0, 0, 1));
        assert_eq!(bin.len(), 3);
        let un = action_segment(&segs, (1, 5, 0));
        assert_eq!(un.len(), 2);
    }

    #[test]
    fn collect_counting_and_determinism() {
        let table = product_table(60, 0);
        let cfg = CollectConfig {
            episodes: 1,
            steps: 10,
            cap: 100,
            seed: 5,
            ..Default::default()
        };
        let a = collect(&table, &cfg).unwrap();
        assert!(a.corpus.len() <= 10);
        assert!(a.raw_pairs <= 10);
        let b = collect(&table, &cfg).unwrap();
        assert_eq!(a.corpus, b.corpus);
    }

    #[test]
    fn telescoping_rewards_exact() {
        let table = product_table(50, 1);
        let cfg = CollectConfig {
            episodes: 3,
            steps: 5,
            cap: 100,
            seed: 2,
            ..Default::default()
        };
        let out = collect(&table, &cfg).unwrap();
        for log in &out.episodes {
            for (i, r) in log.rewards.iter().enumerate() {
                let diff = log.p_trace[i + 1] - log.p_trace[i];
                assert_eq!(r.to_bits(), diff.to_bits());
            }
        }
    }

    #[test]
    fn corpus_pairs_revalidate_and_rescore() {
        let table = product_table(50, 3);
        let cfg = CollectConfig {
            episodes: 2,
            steps: 4,
            cap: 100,
            seed: 9,
            ..Default::default()
        };
        let out = collect(&table, &cfg).unwrap();
        assert!(!out.corpus.is_empty());
        for pair in &out.corpus {
            let set = dsl::apply_sequence(&pair.sequence, &table).unwrap();
            let report = train_eval(
                &set.columns,
                &table.target,
                table.task,
                &cfg.model,
                cfg.split_seed,
                EvalProtocol::Holdout,
            )
            .unwrap();
            assert_eq!(report.primary_score.to_bits(), pair.performance.to_bits());
        }
    }

    #[test]
    fn corpus_file_round_trip() {
        let table = product_table(50, 4);
        let cfg = CollectConfig {
            episodes: 1,
            steps: 3,
            cap: 10,
            seed: 0,
            ..Default::default()
        };
        let out = collect(&table, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.tsv");
        write_corpus(&out.corpus, &path).unwrap();
        let loaded = read_corpus(&path).unwrap();
        assert_eq!(loaded, out.corpus);
    }
}
