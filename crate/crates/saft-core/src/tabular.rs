//! Dataset representation, CSV ingestion, z-score normalization and
//! KS-test-driven shift-aware train/test splitting.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaftError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Classification => write!(f, "classification"),
            TaskKind::Regression => write!(f, "regression"),
        }
    }
}

/// Column-major numeric feature matrix with named columns and a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<Vec<f64>>,
    pub names: Vec<String>,
    pub target: Vec<f64>,
    pub task: TaskKind,
}

impl Table {
    pub fn new(
        columns: Vec<Vec<f64>>,
        names: Vec<String>,
        target: Vec<f64>,
        task: TaskKind,
    ) -> Result<Self> {
        if columns.is_empty() {
            return Err(SaftError::InvalidTable("no feature columns".into()));
        }
        if names.len() != columns.len() {
            return Err(SaftError::InvalidTable(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n_rows = target.len();
        if n_rows < 2 {
            return Err(SaftError::InvalidTable("fewer than 2 rows".into()));
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(SaftError::InvalidTable(format!(
                    "column `{name}` has {} rows, target has {n_rows}",
                    col.len()
                )));
            }
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(SaftError::InvalidTable("duplicate column names".into()));
        }
        Ok(Table {
            columns,
            names,
            target,
            task,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    /// Row slice of every column plus target, preserving order.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Table {
        Table {
            columns: self
                .columns
                .iter()
                .map(|c| c[range.clone()].to_vec())
                .collect(),
            names: self.names.clone(),
            target: self.target[range].to_vec(),
            task: self.task,
        }
    }

    pub fn write_csv(&self, path: &Path, target_name: &str) -> Result<()> {
        let mut out = String::new();
        let mut header: Vec<&str> = self.names.iter().map(|s| s.as_str()).collect();
        header.push(target_name);
        out.push_str(&header.join(","));
        out.push('\n');
        for row in 0..self.n_rows() {
            let mut cells: Vec<String> = self.columns.iter().map(|c| fmt_num(c[row])).collect();
            cells.push(fmt_num(self.target[row]));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        let mut f = std::fs::File::create(path)
            .map_err(|e| SaftError::io(path.display().to_string(), e))?;
        f.write_all(out.as_bytes())
            .map_err(|e| SaftError::io(path.display().to_string(), e))?;
        Ok(())
    }
}

fn fmt_num(x: f64) -> String {
    // Round-trippable without trailing noise for integral values.
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Load a header-row CSV with all-numeric cells; `target_name` is removed
/// from the feature columns.
pub fn load_table(path: &Path, task: TaskKind, target_name: &str) -> Result<Table> {
    let text =
        std::fs::read_to_string(path).map_err(|e| SaftError::io(path.display().to_string(), e))?;
    parse_csv(&text, task, target_name)
}

pub fn parse_csv(text: &str, task: TaskKind, target_name: &str) -> Result<Table> {
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| SaftError::InvalidTable("empty file".into()))?;
    let header: Vec<String> = header_line.split(',').map(|s| s.trim().to_string()).collect();
    let target_idx = header
        .iter()
        .position(|h| h == target_name)
        .ok_or_else(|| SaftError::InvalidTable(format!("target column `{target_name}` not found")))?;

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(SaftError::CsvParse {
                row: row + 1,
                column: header.last().cloned().unwrap_or_default(),
                message: format!("expected {} cells, found {}", header.len(), cells.len()),
            });
        }
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| SaftError::CsvParse {
                row: row + 1,
                column: header[j].clone(),
                message: format!("non-numeric cell `{}`", cell.trim()),
            })?;
            columns[j].push(v);
        }
    }
    let target = columns.remove(target_idx);
    let mut names = header;
    names.remove(target_idx);
    if target.len() < 2 {
        return Err(SaftError::InvalidTable("fewer than 2 rows".into()));
    }
    Table::new(columns, names, target, task)
}

/// Per-column normalization statistics; population (divide-by-N) std.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormParams {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant_mask: Vec<bool>,
    /// Target statistics, present for regression tasks.
    pub target_mean: Option<f64>,
    pub target_std: Option<f64>,
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn zscore_fit(t: &Table) -> NormParams {
    let mut mean = Vec::with_capacity(t.n_features());
    let mut std = Vec::with_capacity(t.n_features());
    let mut constant_mask = Vec::with_capacity(t.n_features());
    for col in &t.columns {
        let (m, s) = moments(col);
        // relative tolerance: equal values can leave rounding dust in the
        // variance, which must still count as constant
        let constant = s <= 1e-12 * m.abs().max(1.0);
        mean.push(m);
        std.push(s);
        constant_mask.push(constant);
    }
    let (target_mean, target_std) = match t.task {
        TaskKind::Regression => {
            let (m, s) = moments(&t.target);
            (Some(m), Some(s))
        }
        TaskKind::Classification => (None, None),
    };
    NormParams {
        names: t.names.clone(),
        mean,
        std,
        constant_mask,
        target_mean,
        target_std,
    }
}

fn check_names(t: &Table, p: &NormParams) -> Result<()> {
    if t.names != p.names {
        return Err(SaftError::ColumnMismatch(format!(
            "table columns {:?} vs fitted {:?}",
            t.names, p.names
        )));
    }
    Ok(())
}

/// (x - mean) / std per column; constant columns map to all-zeros.
/// Regression targets are standardized too; classification labels untouched.
pub fn zscore_apply(t: &Table, p: &NormParams) -> Result<Table> {
    check_names(t, p)?;
    let columns = t
        .columns
        .iter()
        .enumerate()
        .map(|(j, col)| {
            if p.constant_mask[j] {
                vec![0.0; col.len()]
            } else {
                col.iter().map(|x| (x - p.mean[j]) / p.std[j]).collect()
            }
        })
        .collect();
    let target = match (t.task, p.target_mean, p.target_std) {
        (TaskKind::Regression, Some(m), Some(s)) if s > 0.0 => {
            t.target.iter().map(|y| (y - m) / s).collect()
        }
        _ => t.target.clone(),
    };
    Ok(Table {
        columns,
        names: t.names.clone(),
        target,
        task: t.task,
    })
}

/// Inverse of [`zscore_apply`]: x * std + mean per column.
pub fn zscore_invert(t: &Table, p: &NormParams) -> Result<Table> {
    check_names(t, p)?;
    let columns = t
        .columns
        .iter()
        .enumerate()
        .map(|(j, col)| {
            if p.constant_mask[j] {
                vec![p.mean[j]; col.len()]
            } else {
                col.iter().map(|x| x * p.std[j] + p.mean[j]).collect()
            }
        })
        .collect();
    let target = match (t.task, p.target_mean, p.target_std) {
        (TaskKind::Regression, Some(m), Some(s)) if s > 0.0 => {
            t.target.iter().map(|y| y * s + m).collect()
        }
        _ => t.target.clone(),
    };
    Ok(Table {
        columns,
        names: t.names.clone(),
        target,
        task: t.task,
    })
}

/// Denormalize a vector of predictions with the fitted target statistics.
pub fn invert_target(ys: &[f64], p: &NormParams) -> Vec<f64> {
    match (p.target_mean, p.target_std) {
        (Some(m), Some(s)) if s > 0.0 => ys.iter().map(|y| y * s + m).collect(),
        _ => ys.to_vec(),
    }
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic critical value.
///
/// Returns the sup-distance between the empirical CDFs and whether equality
/// is rejected at the given confidence level.
pub fn ks_two_sample(a: &[f64], b: &[f64], confidence: f64) -> Result<(f64, bool)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(SaftError::InvalidArgument(
            "ks_two_sample needs at least 2 points per sample".into(),
        ));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(SaftError::InvalidArgument(format!(
            "confidence {confidence} outside (0,1)"
        )));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let ecdf = |sorted: &[f64], x: f64| -> f64 {
        // number of elements <= x
        let mut lo = 0usize;
        let mut hi = sorted.len();
        while lo < hi {
            let mid = (lo + hi) / 2;
            if sorted[mid] <= x {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo as f64 / sorted.len() as f64
    };

    let mut stat: f64 = 0.0;
    for &x in sa.iter().chain(sb.iter()) {
        let d = (ecdf(&sa, x) - ecdf(&sb, x)).abs();
        if d > stat {
            stat = d;
        }
    }

    let n = sa.len() as f64;
    let m = sb.len() as f64;
    let alpha = 1.0 - confidence;
    let c_alpha = (-0.5 * (alpha / 2.0).ln()).sqrt();
    let critical = c_alpha * ((n + m) / (n * m)).sqrt();
    Ok((stat, stat > critical))
}

/// Shift-aware index split: train = first `train_frac` of rows, test = rest.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: Table,
    pub test: Table,
    pub shifted_feature: Option<usize>,
    pub ks_statistic: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSidecar {
    pub shifted_feature: Option<usize>,
    pub shifted_feature_name: Option<String>,
    pub ks_statistic: f64,
    pub confidence: f64,
}

/// Walk features in column order, splitting rows by observation index, and
/// stop at the first feature whose train/test marginals differ per the KS
/// test. Rows are never shuffled.
pub fn shift_split(t: &Table, train_frac: f64, confidence: f64) -> Result<SplitResult> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(SaftError::InvalidArgument(format!(
            "train_frac {train_frac} outside (0,1)"
        )));
    }
    if t.n_rows() < 10 {
        return Err(SaftError::InvalidTable(
            "shift_split needs at least 10 rows".into(),
        ));
    }
    let n_train = ((t.n_rows() as f64) * train_frac).round() as usize;
    let n_train = n_train.clamp(2, t.n_rows() - 2);
    let train = t.slice_rows(0..n_train);
    let test = t.slice_rows(n_train..t.n_rows());

    let mut shifted_feature = None;
    let mut ks_statistic = 0.0;
    for j in 0..t.n_features() {
        let (stat, reject) = ks_two_sample(&train.columns[j], &test.columns[j], confidence)?;
        if reject {
            shifted_feature = Some(j);
            ks_statistic = stat;
            break;
        }
    }
    Ok(SplitResult {
        train,
        test,
        shifted_feature,
        ks_statistic,
        confidence,
    })
}
