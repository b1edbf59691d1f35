//! Ridge regression (closed form) and k-nearest-neighbors.

use crate::tabular::TaskKind;

/// Solve A x = b by Gaussian elimination with partial pivoting. A is square,
/// small (one row per feature), and SPD in practice.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        for row in col + 1..n {
            let factor = a[row][col] / diag;
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Ridge with an unpenalized intercept (features and target centered at fit
/// time). Classification fits one-vs-rest regressions on the label set.
#[derive(Debug, Clone)]
pub struct Ridge {
    task: TaskKind,
    feature_means: Vec<f64>,
    /// regression: one (weights, intercept); classification: one per label
    heads: Vec<(Vec<f64>, f64)>,
    labels: Vec<i64>,
}

impl Ridge {
    pub fn fit(columns: &[Vec<f64>], target: &[f64], task: TaskKind, lambda: f64) -> Self {
        let n = target.len() as f64;
        let feature_means: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / n).collect();
        let centered: Vec<Vec<f64>> = columns
            .iter()
            .zip(&feature_means)
            .map(|(c, m)| c.iter().map(|x| x - m).collect())
            .collect();
        let d = columns.len();
        let mut gram = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in i..d {
                let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                gram[i][j] = dot;
                gram[j][i] = dot;
            }
        }
        for (i, row) in gram.iter_mut().enumerate() {
            row[i] += lambda;
        }

        let fit_head = |ys: &[f64]| -> (Vec<f64>, f64) {
            let y_mean = ys.iter().sum::<f64>() / n;
            let rhs: Vec<f64> = centered
                .iter()
                .map(|c| c.iter().zip(ys).map(|(x, y)| x * (y - y_mean)).sum())
                .collect();
            let w = solve(gram.clone(), rhs);
            (w, y_mean)
        };

        match task {
            TaskKind::Regression => Ridge {
                task,
                feature_means,
                heads: vec![fit_head(target)],
                labels: Vec::new(),
            },
            TaskKind::Classification => {
                let mut labels: Vec<i64> = target.iter().map(|y| y.round() as i64).collect();
                labels.sort_unstable();
                labels.dedup();
                let heads = labels
                    .iter()
                    .map(|&l| {
                        let ys: Vec<f64> = target
                            .iter()
                            .map(|y| if y.round() as i64 == l { 1.0 } else { 0.0 })
                            .collect();
                        fit_head(&ys)
                    })
                    .collect();
                Ridge {
                    task,
                    feature_means,
                    heads,
                    labels,
                }
            }
        }
    }

    pub fn predict_row(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let score = |(w, b): &(Vec<f64>, f64)| -> f64 {
            b + w
                .iter()
                .zip(columns.iter().zip(&self.feature_means))
                .map(|(wi, (c, m))| wi * (c[row] - m))
                .sum::<f64>()
        };
        match self.task {
            TaskKind::Regression => score(&self.heads[0]),
            TaskKind::Classification => {
                let (mut best_label, mut best_score) = (self.labels[0], f64::NEG_INFINITY);
                for (l, head) in self.labels.iter().zip(&self.heads) {
                    let s = score(head);
                    if s > best_score {
                        best_score = s;
                        best_label = *l;
                    }
                }
                best_label as f64
            }
        }
    }
}

/// Brute-force KNN; classification votes by majority (ties to the lowest
/// label), regression averages.
#[derive(Debug, Clone)]
pub struct Knn {
    task: TaskKind,
    k: usize,
    train_columns: Vec<Vec<f64>>,
    train_target: Vec<f64>,
}

impl Knn {
    pub fn fit(columns: &[Vec<f64>], target: &[f64], task: TaskKind, k: usize) -> Self {
        Knn {
            task,
            k: k.min(target.len()).max(1),
            train_columns: columns.to_vec(),
            train_target: target.to_vec(),
        }
    }

    pub fn predict_row(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let n_train = self.train_target.len();
        let mut dists: Vec<(f64, usize)> = (0..n_train)
            .map(|t| {
                let d: f64 = self
                    .train_columns
                    .iter()
                    .zip(columns)
                    .map(|(tc, c)| (tc[t] - c[row]).powi(2))
                    .sum();
                (d, t)
            })
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let neighbors = &dists[..self.k];
        match self.task {
            TaskKind::Regression => {
                neighbors.iter().map(|&(_, t)| self.train_target[t]).sum::<f64>() / self.k as f64
            }
            TaskKind::Classification => {
                let mut labels: Vec<i64> = neighbors
                    .iter()
                    .map(|&(_, t)| self.train_target[t].round() as i64)
                    .collect();
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
    fn ridge_recovers_linear_relation() {
        let f0: Vec<f64> = (0..20).map(|i| i as f64 / 5.0 - 2.0).collect();
        let y: Vec<f64> = f0.iter().map(|x| 3.0 * x).collect();
        let model = Ridge::fit(&[f0.clone()], &y, TaskKind::Regression, 1e-6);
        let cols = [f0];
        for r in 0..20 {
            assert!((model.predict_row(&cols, r) - y[r]).abs() < 1e-3);
        }
    }

    #[test]
    fn ridge_duplicate_column_stable() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let f0: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f1: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..40).map(|r| 2.0 * f0[r] - f1[r]).collect();
        // at small lambda the prediction is the column-space projection, which
        // a duplicated column leaves untouched
        let base = Ridge::fit(&[f0.clone(), f1.clone()], &y, TaskKind::Regression, 1e-6);
        let dup = Ridge::fit(
            &[f0.clone(), f1.clone(), f0.clone()],
            &y,
            TaskKind::Regression,
            1e-6,
        );
        let cols2 = [f0.clone(), f1.clone()];
        let cols3 = [f0, f1.clone(), cols2[0].clone()];
        for r in 0..40 {
            let a = base.predict_row(&cols2, r);
            let b = dup.predict_row(&cols3, r);
            assert!((a - b).abs() < 1e-6, "row {r}: {a} vs {b}");
        }
    }

    #[test]
    fn knn_memorizes_training_points() {
        let f0 = vec![0.0, 1.0, 2.0, 3.0];
        let y = vec![0.0, 0.0, 1.0, 1.0];
        let model = Knn::fit(&[f0.clone()], &y, TaskKind::Classification, 1);
        let cols = [f0];
        for r in 0..4 {
            assert_eq!(model.predict_row(&cols, r), y[r]);
        }
    }
}
