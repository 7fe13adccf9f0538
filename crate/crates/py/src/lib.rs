//! Python bindings: models cross the boundary as their JSON serialization,
//! tables as CSV text.

use cpelab::constructive::{
    build_family_learner, build_single_learner, verify_eventual_learning, FamilyLearnerSpec,
    SingleLearnerSpec,
};
use cpelab::experiments::{critical_period, nts_zero, CsvTable};
use cpelab::model::TransformerModel;
use cpelab::sequence::{betabinom_table, InfiniteSequenceSpec};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: cpelab::Error) -> PyErr {
    if cpelab::cli::exit_code(&e) == 1 {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn load(model_json: &str) -> PyResult<TransformerModel> {
    let m: TransformerModel = serde_json::from_str(model_json).map_err(json_err)?;
    m.validate().map_err(err)?;
    Ok(m)
}

fn spec(text: &str) -> PyResult<InfiniteSequenceSpec> {
    text.parse().map_err(err)
}

/// Model JSON of the single learner for `target` (e.g. "constant0").
#[pyfunction]
#[pyo3(signature = (target, leak = 0.1))]
fn construct_single(target: &str, leak: f64) -> PyResult<String> {
    let m = build_single_learner(&SingleLearnerSpec::new(spec(target)?, leak)).map_err(err)?;
    serde_json::to_string(&m).map_err(json_err)
}

/// `(model_json, epsilon)` of the family learner for `periods`.
#[pyfunction]
#[pyo3(signature = (periods, sharpness = 20.0))]
fn construct_family(periods: Vec<usize>, sharpness: f64) -> PyResult<(String, f64)> {
    let f = build_family_learner(&FamilyLearnerSpec::new(periods, sharpness)).map_err(err)?;
    Ok((serde_json::to_string(&f.model).map_err(json_err)?, f.epsilon))
}

/// Next-token distribution after `tokens`.
#[pyfunction]
fn forward(model_json: &str, tokens: Vec<usize>) -> PyResult<Vec<f64>> {
    Ok(load(model_json)?.forward(&tokens).map_err(err)?.into_vec())
}

/// `(verdict, first_failing, min_margin)`.
#[pyfunction]
fn verify(
    model_json: &str,
    target: &str,
    epsilon: f64,
    n0: usize,
    horizon: usize,
) -> PyResult<(String, Option<usize>, f64)> {
    let w = verify_eventual_learning(&load(model_json)?, &spec(target)?, epsilon, n0, horizon)
        .map_err(err)?;
    let verdict = if w.learned() { "learned" } else { "refuted" };
    Ok((verdict.into(), w.first_failing, w.min_margin()))
}

/// NTS table on the all-zero prompt, as CSV.
#[pyfunction]
#[pyo3(signature = (model_json, gammas, samples = 100, length = 190, seed = 0))]
fn nts(model_json: &str, gammas: Vec<f64>, samples: usize, length: usize, seed: u64) -> PyResult<String> {
    let rows = nts_zero(&load(model_json)?, &gammas, samples, length, seed).map_err(err)?;
    rows.as_slice().to_csv_string().map_err(err)
}

#[pyfunction]
#[pyo3(signature = (model_json, r = 10, p_max = 40, steps = 505))]
fn critical(model_json: &str, r: usize, p_max: usize, steps: usize) -> PyResult<Option<usize>> {
    Ok(critical_period(&load(model_json)?, r, p_max, steps).map_err(err)?.critical)
}

#[pyfunction]
fn betabinom(n: u64, u: f64, v: f64) -> PyResult<Vec<f64>> {
    betabinom_table(n, u, v).map_err(err)
}

/// Runs the command line and returns its exit code.
#[pyfunction]
fn run_cli(argv: Vec<String>) -> i32 {
    cpelab::cli::run(std::iter::once("cpelab".to_string()).chain(argv))
}

#[pymodule]
fn cpelab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(construct_single, m)?)?;
    m.add_function(wrap_pyfunction!(construct_family, m)?)?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(nts, m)?)?;
    m.add_function(wrap_pyfunction!(critical, m)?)?;
    m.add_function(wrap_pyfunction!(betabinom, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
