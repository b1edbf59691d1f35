//! Python bindings for the saft engine: sequence transforms, downstream
//! evaluation, the Kolmogorov–Smirnov split test, and the full pipeline.
//!
//! Structured results are returned as JSON strings so the Python side can
//! `json.loads` them without a conversion layer drifting from the Rust
//! schema.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use saft_core::dsl::{self, CrossSequence, Validity};
use saft_core::eval::{train_eval, DownstreamModelSpec, EvalProtocol};
use saft_core::pipeline::{run_pipeline as run_pipeline_rs, PipelineConfig, RunDirectory};
use saft_core::tabular::{self, Table, TaskKind};
use saft_core::SaftError;

fn to_py_err(e: SaftError) -> PyErr {
    match e {
        SaftError::Config(_) | SaftError::InvalidArgument(_) => {
            PyValueError::new_err(e.to_string())
        }
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_task(task: &str) -> PyResult<TaskKind> {
    match task {
        "regression" => Ok(TaskKind::Regression),
        "classification" => Ok(TaskKind::Classification),
        other => Err(PyValueError::new_err(format!(
            "task must be `regression` or `classification`, got `{other}`"
        ))),
    }
}

fn table_from_columns(columns: Vec<Vec<f64>>, target: Vec<f64>, task: TaskKind) -> PyResult<Table> {
    let names = (0..columns.len()).map(|i| format!("f{i}")).collect();
    Table::new(columns, names, target, task).map_err(to_py_err)
}

/// Check a rendered cross sequence against the grammar for a table with
/// `n_features` columns.
#[pyfunction]
fn validate_sequence(text: &str, n_features: usize) -> PyResult<bool> {
    let seq = CrossSequence::parse(text).map_err(to_py_err)?;
    Ok(matches!(dsl::validate(&seq, n_features), Validity::Valid))
}

/// Apply a rendered cross sequence to feature columns. Returns
/// `(columns, names)` for the transformed feature set.
#[pyfunction]
fn apply_sequence(
    text: &str,
    columns: Vec<Vec<f64>>,
) -> PyResult<(Vec<Vec<f64>>, Vec<String>)> {
    let n_rows = columns.first().map(|c| c.len()).unwrap_or(0);
    let table = table_from_columns(columns, vec![0.0; n_rows], TaskKind::Regression)?;
    let seq = CrossSequence::parse(text).map_err(to_py_err)?;
    let set = dsl::apply_sequence(&seq, &table).map_err(to_py_err)?;
    Ok((set.columns, set.provenance))
}

/// Two-sample Kolmogorov–Smirnov test. Returns `(statistic, rejected)`.
#[pyfunction]
fn ks_two_sample(a: Vec<f64>, b: Vec<f64>, confidence: f64) -> PyResult<(f64, bool)> {
    tabular::ks_two_sample(&a, &b, confidence).map_err(to_py_err)
}

/// Fit the default downstream model and score it under the named protocol
/// (`holdout`, `no_holdout`, or `kfold`). Returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (columns, target, task, protocol = "holdout", split_seed = 0))]
fn evaluate(
    columns: Vec<Vec<f64>>,
    target: Vec<f64>,
    task: &str,
    protocol: &str,
    split_seed: u64,
) -> PyResult<String> {
    let task = parse_task(task)?;
    let protocol = match protocol {
        "holdout" => EvalProtocol::Holdout,
        "no_holdout" => EvalProtocol::NoHoldout,
        "kfold" => EvalProtocol::KFold,
        other => {
            return Err(PyValueError::new_err(format!(
                "protocol must be holdout, no_holdout, or kfold, got `{other}`"
            )))
        }
    };
    let report = train_eval(
        &columns,
        &target,
        task,
        &DownstreamModelSpec::default(),
        split_seed,
        protocol,
    )
    .map_err(to_py_err)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Run the full pipeline from a configuration JSON document into `out_dir`.
/// Returns the final metrics report as JSON.
#[pyfunction]
fn run_pipeline(config_json: &str, out_dir: &str) -> PyResult<String> {
    let cfg = PipelineConfig::from_json(config_json).map_err(to_py_err)?;
    let run = RunDirectory::new(out_dir);
    let metrics = run_pipeline_rs(&run, &cfg).map_err(to_py_err)?;
    serde_json::to_string(&metrics).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn saft(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(apply_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(ks_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
