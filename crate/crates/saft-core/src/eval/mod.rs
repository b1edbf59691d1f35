//! Self-contained downstream models (random forest, decision tree, ridge,
//! KNN) and the scoring metrics that label transformed feature sets.

pub mod linear;
pub mod metrics;
pub mod tree;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaftError};
use crate::tabular::TaskKind;

pub use metrics::{f1_precision_recall, regression_metrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RandomForest,
    DecisionTree,
    Ridge,
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownstreamModelSpec {
    pub kind: ModelKind,
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub lambda: f64,
    pub k: usize,
    pub seed: u64,
    pub bootstrap: bool,
    pub feature_subsample: bool,
}

impl Default for DownstreamModelSpec {
    fn default() -> Self {
        DownstreamModelSpec {
            kind: ModelKind::RandomForest,
            trees: 10,
            max_depth: 8,
            min_leaf: 2,
            lambda: 1.0,
            k: 5,
            seed: 0,
            bootstrap: true,
            feature_subsample: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalProtocol {
    /// Deterministic seeded 75/25 index-shuffled holdout.
    Holdout,
    /// Fit and score on the same rows.
    NoHoldout,
    /// Seeded 5-fold cross-validation, metrics averaged.
    KFold,
}

/// Scores produced by one downstream evaluation. `primary_score` is the p_i
/// used throughout corpus collection and representation training: F1 for
/// classification, 1-RAE for regression.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub primary_score: f64,
    pub task: TaskKind,
    pub model: ModelKind,
    pub n_features: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub one_minus_rae: Option<f64>,
    pub one_minus_mae: Option<f64>,
    pub one_minus_mse: Option<f64>,
}

enum Model {
    Forest(tree::RandomForest),
    Tree(tree::DecisionTree),
    Ridge(linear::Ridge),
    Knn(linear::Knn),
}

impl Model {
    fn fit(columns: &[Vec<f64>], target: &[f64], task: TaskKind, spec: &DownstreamModelSpec) -> Model {
        match spec.kind {
            ModelKind::RandomForest => Model::Forest(tree::RandomForest::fit(
                columns,
                target,
                tree::ForestParams {
                    n_trees: spec.trees,
                    max_depth: spec.max_depth,
                    min_leaf: spec.min_leaf,
                    task,
                    bootstrap: spec.bootstrap,
                    feature_subsample: spec.feature_subsample,
                },
                spec.seed,
            )),
            ModelKind::DecisionTree => Model::Tree(tree::DecisionTree::fit(
                columns,
                target,
                tree::TreeParams {
                    max_depth: spec.max_depth,
                    min_leaf: spec.min_leaf,
                    task,
                    feature_subsample: false,
                },
                spec.seed,
            )),
            ModelKind::Ridge => Model::Ridge(linear::Ridge::fit(columns, target, task, spec.lambda)),
            ModelKind::Knn => Model::Knn(linear::Knn::fit(columns, target, task, spec.k)),
        }
    }

    fn predict(&self, columns: &[Vec<f64>], n_rows: usize) -> Vec<f64> {
        (0..n_rows)
            .map(|r| match self {
                Model::Forest(m) => m.predict_row(columns, r),
                Model::Tree(m) => m.predict_row(columns, r),
                Model::Ridge(m) => m.predict_row(columns, r),
                Model::Knn(m) => m.predict_row(columns, r),
            })
            .collect()
    }
}

fn select_rows(columns: &[Vec<f64>], rows: &[usize]) -> Vec<Vec<f64>> {
    columns
        .iter()
        .map(|c| rows.iter().map(|&r| c[r]).collect())
        .collect()
}

fn check_inputs(columns: &[Vec<f64>], target: &[f64], task: TaskKind) -> Result<()> {
    if columns.is_empty() {
        return Err(SaftError::InvalidArgument("empty feature matrix".into()));
    }
    if target.len() < 10 {
        return Err(SaftError::InvalidArgument(
            "train_eval needs at least 10 rows".into(),
        ));
    }
    if task == TaskKind::Classification {
        let mut labels: Vec<i64> = target.iter().map(|y| y.round() as i64).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() < 2 {
            return Err(SaftError::InvalidArgument(
                "degenerate target: single class".into(),
            ));
        }
    }
    Ok(())
}

/// Fit the specified downstream model and score predictions on the
/// protocol's evaluation rows. Deterministic for a fixed
/// (data, spec, split_seed).
pub fn train_eval(
    columns: &[Vec<f64>],
    target: &[f64],
    task: TaskKind,
    spec: &DownstreamModelSpec,
    split_seed: u64,
    protocol: EvalProtocol,
) -> Result<EvalReport> {
    check_inputs(columns, target, task)?;
    // Exact duplicate columns carry no information and skew penalized models.
    let mut unique: Vec<Vec<f64>> = Vec::new();
    for c in columns {
        if !unique.contains(c) {
            unique.push(c.clone());
        }
    }
    let columns = &unique[..];
    let n = target.len();

    let fold_report = |train_rows: &[usize], test_rows: &[usize]| -> Result<EvalReport> {
        let train_cols = select_rows(columns, train_rows);
        let train_y: Vec<f64> = train_rows.iter().map(|&r| target[r]).collect();
        let test_cols = select_rows(columns, test_rows);
        let test_y: Vec<f64> = test_rows.iter().map(|&r| target[r]).collect();
        let model = Model::fit(&train_cols, &train_y, task, spec);
        let pred = model.predict(&test_cols, test_rows.len());
        report_from_predictions(&test_y, &pred, task, spec.kind, columns.len())
    };

    match protocol {
        EvalProtocol::NoHoldout => {
            let all: Vec<usize> = (0..n).collect();
            fold_report(&all, &all)
        }
        EvalProtocol::Holdout => {
            let mut rows: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
            rows.shuffle(&mut rng);
            let n_train = ((n as f64) * 0.75).round() as usize;
            let n_train = n_train.clamp(2, n - 2);
            fold_report(&rows[..n_train], &rows[n_train..])
        }
        EvalProtocol::KFold => {
            let mut rows: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
            rows.shuffle(&mut rng);
            let k = 5.min(n / 2).max(2);
            let mut reports = Vec::with_capacity(k);
            for fold in 0..k {
                let test: Vec<usize> = rows
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % k == fold)
                    .map(|(_, &r)| r)
                    .collect();
                let train: Vec<usize> = rows
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % k != fold)
                    .map(|(_, &r)| r)
                    .collect();
                reports.push(fold_report(&train, &test)?);
            }
            Ok(average_reports(&reports))
        }
    }
}

/// Fit on one table's columns and score on another's (a fixed, externally
/// provided split). Duplicate columns are dropped by train-column equality,
/// with the same indices removed from the test columns so the two stay
/// aligned.
pub fn train_test_eval(
    train_columns: &[Vec<f64>],
    train_target: &[f64],
    test_columns: &[Vec<f64>],
    test_target: &[f64],
    task: TaskKind,
    spec: &DownstreamModelSpec,
) -> Result<EvalReport> {
    check_inputs(train_columns, train_target, task)?;
    if train_columns.len() != test_columns.len() {
        return Err(SaftError::InvalidArgument(format!(
            "train has {} columns but test has {}",
            train_columns.len(),
            test_columns.len()
        )));
    }
    if test_target.is_empty() {
        return Err(SaftError::InvalidArgument("empty test set".into()));
    }
    let mut train_cols: Vec<Vec<f64>> = Vec::new();
    let mut test_cols: Vec<Vec<f64>> = Vec::new();
    for (tr, te) in train_columns.iter().zip(test_columns) {
        if !train_cols.contains(tr) {
            train_cols.push(tr.clone());
            test_cols.push(te.clone());
        }
    }
    let model = Model::fit(&train_cols, train_target, task, spec);
    let pred = model.predict(&test_cols, test_target.len());
    report_from_predictions(test_target, &pred, task, spec.kind, train_cols.len())
}

fn report_from_predictions(
    y_true: &[f64],
    y_pred: &[f64],
    task: TaskKind,
    model: ModelKind,
    n_features: usize,
) -> Result<EvalReport> {
    match task {
        TaskKind::Classification => {
            let (f1, precision, recall) = f1_precision_recall(y_true, y_pred)?;
            Ok(EvalReport {
                primary_score: f1,
                task,
                model,
                n_features,
                precision: Some(precision),
                recall: Some(recall),
                f1: Some(f1),
                one_minus_rae: None,
                one_minus_mae: None,
                one_minus_mse: None,
            })
        }
        TaskKind::Regression => {
            let (rae, mae, mse) = regression_metrics(y_true, y_pred)?;
            Ok(EvalReport {
                primary_score: rae,
                task,
                model,
                n_features,
                precision: None,
                recall: None,
                f1: None,
                one_minus_rae: Some(rae),
                one_minus_mae: Some(mae),
                one_minus_mse: Some(mse),
            })
        }
    }
}

fn average_reports(reports: &[EvalReport]) -> EvalReport {
    let k = reports.len() as f64;
    let avg = |f: fn(&EvalReport) -> Option<f64>| -> Option<f64> {
        if reports.iter().all(|r| f(r).is_some()) {
            Some(reports.iter().map(|r| f(r).unwrap()).sum::<f64>() / k)
        } else {
            None
        }
    };
    let mut out = reports[0].clone();
    out.precision = avg(|r| r.precision);
    out.recall = avg(|r| r.recall);
    out.f1 = avg(|r| r.f1);
    out.one_minus_rae = avg(|r| r.one_minus_rae);
    out.one_minus_mae = avg(|r| r.one_minus_mae);
    out.one_minus_mse = avg(|r| r.one_minus_mse);
    out.primary_score = reports.iter().map(|r| r.primary_score).sum::<f64>() / k;
    out
}
