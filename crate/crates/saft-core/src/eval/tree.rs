//! CART decision trees and a seeded random forest, built directly on
//! column-major feature matrices.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tabular::TaskKind;

const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub task: TaskKind,
    /// Consider only ceil(sqrt(d)) seeded-sampled features per node.
    pub feature_subsample: bool,
}

#[derive(Debug, Clone)]
pub struct DecisionTree {
    root: Node,
    params: TreeParams,
}

impl DecisionTree {
    pub fn fit(columns: &[Vec<f64>], target: &[f64], params: TreeParams, seed: u64) -> Self {
        let rows: Vec<usize> = (0..target.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let root = build(columns, target, &rows, params, 0, &mut rng);
        DecisionTree { root, params }
    }

    pub fn predict_row(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if columns[*feature][row] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn task(&self) -> TaskKind {
        self.params.task
    }
}

fn leaf_value(target: &[f64], rows: &[usize], task: TaskKind) -> f64 {
    match task {
        TaskKind::Regression => rows.iter().map(|&r| target[r]).sum::<f64>() / rows.len() as f64,
        TaskKind::Classification => {
            // majority label, ties to the lowest label
            let mut labels: Vec<i64> = rows.iter().map(|&r| target[r].round() as i64).collect();
            labels.sort_unstable();
            let mut best = labels[0];
            let mut best_count = 0usize;
            let mut i = 0;
            while i < labels.len() {
                let mut j = i;
                while j < labels.len() && labels[j] == labels[i] {
                    j += 1;
                }
                if j - i > best_count {
                    best_count = j - i;
                    best = labels[i];
                }
                i = j;
            }
            best as f64
        }
    }
}

fn impurity(target: &[f64], rows: &[usize], task: TaskKind) -> f64 {
    match task {
        TaskKind::Regression => {
            let n = rows.len() as f64;
            let mean = rows.iter().map(|&r| target[r]).sum::<f64>() / n;
            rows.iter().map(|&r| (target[r] - mean).powi(2)).sum::<f64>() / n
        }
        TaskKind::Classification => {
            let mut labels: Vec<i64> = rows.iter().map(|&r| target[r].round() as i64).collect();
            labels.sort_unstable();
            let n = labels.len() as f64;
            let mut gini = 1.0;
            let mut i = 0;
            while i < labels.len() {
                let mut j = i;
                while j < labels.len() && labels[j] == labels[i] {
                    j += 1;
                }
                let p = (j - i) as f64 / n;
                gini -= p * p;
                i = j;
            }
            gini
        }
    }
}

fn build<R: Rng>(
    columns: &[Vec<f64>],
    target: &[f64],
    rows: &[usize],
    params: TreeParams,
    depth: usize,
    rng: &mut R,
) -> Node {
    if depth >= params.max_depth || rows.len() < 2 * params.min_leaf {
        return Node::Leaf(leaf_value(target, rows, params.task));
    }
    let parent_impurity = impurity(target, rows, params.task);
    if parent_impurity <= MIN_GAIN {
        return Node::Leaf(leaf_value(target, rows, params.task));
    }

    let d = columns.len();
    let candidates: Vec<usize> = if params.feature_subsample && d > 1 {
        let k = (d as f64).sqrt().ceil() as usize;
        let mut idx: Vec<usize> = (0..d).collect();
        idx.shuffle(rng);
        idx.truncate(k.max(1));
        idx.sort_unstable();
        idx
    } else {
        (0..d).collect()
    };

    let n = rows.len() as f64;
    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    for &f in &candidates {
        let mut pairs: Vec<(f64, f64)> = rows.iter().map(|&r| (columns[f][r], target[r])).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for cut in params.min_leaf..=(pairs.len() - params.min_leaf) {
            if cut == pairs.len() {
                break;
            }
            if pairs[cut - 1].0 == pairs[cut].0 {
                continue;
            }
            let (left, right) = pairs.split_at(cut);
            let gain = parent_impurity
                - (left.len() as f64 / n) * impurity_pairs(left, params.task)
                - (right.len() as f64 / n) * impurity_pairs(right, params.task);
            let threshold = 0.5 * (pairs[cut - 1].0 + pairs[cut].0);
            if gain > MIN_GAIN && best.map_or(true, |(g, _, _)| gain > g) {
                best = Some((gain, f, threshold));
            }
        }
    }

    match best {
        None => Node::Leaf(leaf_value(target, rows, params.task)),
        Some((_, feature, threshold)) => {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                .iter()
                .partition(|&&r| columns[feature][r] <= threshold);
            let left = build(columns, target, &left_rows, params, depth + 1, rng);
            let right = build(columns, target, &right_rows, params, depth + 1, rng);
            Node::Split {
                feature,
                threshold,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
    }
}

fn impurity_pairs(pairs: &[(f64, f64)], task: TaskKind) -> f64 {
    match task {
        TaskKind::Regression => {
            let n = pairs.len() as f64;
            let mean = pairs.iter().map(|p| p.1).sum::<f64>() / n;
            pairs.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / n
        }
        TaskKind::Classification => {
            let mut labels: Vec<i64> = pairs.iter().map(|p| p.1.round() as i64).collect();
            labels.sort_unstable();
            let n = labels.len() as f64;
            let mut gini = 1.0;
            let mut i = 0;
            while i < labels.len() {
                let mut j = i;
                while j < labels.len() && labels[j] == labels[i] {
                    j += 1;
                }
                let p = (j - i) as f64 / n;
                gini -= p * p;
                i = j;
            }
            gini
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    task: TaskKind,
}

#[derive(Debug, Clone, Copy)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub task: TaskKind,
    pub bootstrap: bool,
    pub feature_subsample: bool,
}

impl RandomForest {
    pub fn fit(columns: &[Vec<f64>], target: &[f64], params: ForestParams, seed: u64) -> Self {
        let n = target.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            task: params.task,
            feature_subsample: params.feature_subsample,
        };
        let trees = (0..params.n_trees)
            .map(|_| {
                let tree_seed: u64 = rng.random();
                if params.bootstrap {
                    let mut boot_rng = ChaCha8Rng::seed_from_u64(tree_seed);
                    let rows: Vec<usize> = (0..n).map(|_| boot_rng.random_range(0..n)).collect();
                    let boot_cols: Vec<Vec<f64>> = columns
                        .iter()
                        .map(|c| rows.iter().map(|&r| c[r]).collect())
                        .collect();
                    let boot_target: Vec<f64> = rows.iter().map(|&r| target[r]).collect();
                    DecisionTree::fit(&boot_cols, &boot_target, tree_params, tree_seed)
                } else {
                    DecisionTree::fit(columns, target, tree_params, tree_seed)
                }
            })
            .collect();
        RandomForest {
            trees,
            task: params.task,
        }
    }

    pub fn predict_row(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let votes: Vec<f64> = self
            .trees
            .iter()
            .map(|t| t.predict_row(columns, row))
            .collect();
        match self.task {
            TaskKind::Regression => votes.iter().sum::<f64>() / votes.len() as f64,
            TaskKind::Classification => {
                let mut labels: Vec<i64> = votes.iter().map(|v| v.round() as i64).collect();
                labels.sort_unstable();
                let mut best = labels[0];
                let mut best_count = 0usize;
                let mut i = 0;
                while i < labels.len() {
                    let mut j = i;
                    while j < labels.len() && labels[j] == labels[i] {
                        j += 1;
                    }
                    if j - i > best_count {
                        best_count = j - i;
                        best = labels[i];
                    }
                    i = j;
                }
                best as f64
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_sign_split() {
        let f0 = vec![-1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0];
        let y: Vec<f64> = f0.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
        let params = TreeParams {
            max_depth: 1,
            min_leaf: 2,
            task: TaskKind::Classification,
            feature_subsample: false,
        };
        let tree = DecisionTree::fit(&[f0.clone()], &y, params, 0);
        let cols = [f0];
        for row in 0..y.len() {
            assert_eq!(tree.predict_row(&cols, row), y[row]);
        }
    }

    #[test]
    fn xor_depth1_fails_forest_depth2_solves() {
        // 4 XOR patterns replicated 10x
        let mut f0 = Vec::new();
        let mut f1 = Vec::new();
        let mut y = Vec::new();
        for _ in 0..10 {
            for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                f0.push(a);
                f1.push(b);
                y.push(if (a != 0.0) ^ (b != 0.0) { 1.0 } else { 0.0 });
            }
        }
        let cols = vec![f0, f1];

        let shallow = DecisionTree::fit(
            &cols,
            &y,
            TreeParams {
                max_depth: 1,
                min_leaf: 2,
                task: TaskKind::Classification,
                feature_subsample: false,
            },
            0,
        );
        let acc_shallow = (0..y.len())
            .filter(|&r| shallow.predict_row(&cols, r) == y[r])
            .count() as f64
            / y.len() as f64;
        assert!((acc_shallow - 0.5).abs() < 0.11, "acc {acc_shallow}");

        let forest = RandomForest::fit(
            &cols,
            &y,
            ForestParams {
                n_trees: 10,
                max_depth: 2,
                min_leaf: 2,
                task: TaskKind::Classification,
                bootstrap: true,
                feature_subsample: false,
            },
            7,
        );
        let acc = (0..y.len())
            .filter(|&r| forest.predict_row(&cols, r) == y[r])
            .count() as f64
            / y.len() as f64;
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn single_tree_forest_matches_tree() {
        use rand::Rng as _;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..60).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = (0..60)
            .map(|r| cols[0][r] * 2.0 + cols[1][r] + rng.random_range(-0.1..0.1))
            .collect();
        let forest = RandomForest::fit(
            &cols,
            &y,
            ForestParams {
                n_trees: 1,
                max_depth: 20,
                min_leaf: 2,
                task: TaskKind::Regression,
                bootstrap: false,
                feature_subsample: false,
            },
            5,
        );
        // same derived tree seed as the forest draws for its first tree
        let mut seed_rng = ChaCha8Rng::seed_from_u64(5);
        let tree_seed: u64 = seed_rng.random();
        let tree = DecisionTree::fit(
            &cols,
            &y,
            TreeParams {
                max_depth: 20,
                min_leaf: 2,
                task: TaskKind::Regression,
                feature_subsample: false,
            },
            tree_seed,
        );
        for r in 0..60 {
            assert_eq!(forest.predict_row(&cols, r), tree.predict_row(&cols, r));
        }
    }
}
