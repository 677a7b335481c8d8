use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use timid_core::eval;
use timid_core::ltl::{self, PropositionState};
use timid_core::model::load_checkpoint;
use timid_core::simgen::{generate_dataset as generate, Dataset, GeneratorConfig, Task};
use timid_core::train;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_trace(trace: Vec<BTreeMap<String, bool>>) -> Vec<PropositionState> {
    trace
        .into_iter()
        .map(|step| {
            let mut s = PropositionState::new();
            for (k, v) in step {
                s.set(k, v);
            }
            s
        })
        .collect()
}

/// Parse an LTL formula and return it in canonical text form.
#[pyfunction]
fn parse_ltl(text: &str) -> PyResult<String> {
    ltl::parse_ltl(text).map(|f| f.to_string()).map_err(value_err)
}

/// Finite-trace truth of `formula` over a list of `{atom: bool}` steps.
#[pyfunction]
fn eval_finite(formula: &str, trace: Vec<BTreeMap<String, bool>>) -> PyResult<bool> {
    let f = ltl::parse_ltl(formula).map_err(value_err)?;
    ltl::eval_finite(&f, &to_trace(trace)).map_err(value_err)
}

/// Per-step violation flags from the progression monitor.
#[pyfunction]
fn monitor(formula: &str, trace: Vec<BTreeMap<String, bool>>) -> PyResult<Vec<bool>> {
    let f = ltl::parse_ltl(formula).map_err(value_err)?;
    ltl::monitor(&f, &to_trace(trace))
        .map(|v| v.per_step_violation)
        .map_err(value_err)
}

/// Write a dataset to `out_dir`; returns the number of episodes.
#[pyfunction]
#[pyo3(signature = (out_dir, task="mutex", n_normal=125, n_anomalous=125, seed=1, feature_dim=64))]
fn generate_dataset(
    out_dir: PathBuf,
    task: &str,
    n_normal: usize,
    n_anomalous: usize,
    seed: u64,
    feature_dim: usize,
) -> PyResult<usize> {
    let config = GeneratorConfig {
        task: task.parse::<Task>().map_err(value_err)?,
        n_normal,
        n_anomalous,
        seed,
        feature_dim,
        ..GeneratorConfig::default()
    };
    generate(&config, &out_dir)
        .map(|m| m.episodes.len())
        .map_err(value_err)
}

/// Step labels of every episode in a dataset directory, keyed by id.
#[pyfunction]
fn load_labels(data_dir: PathBuf) -> PyResult<BTreeMap<String, Vec<bool>>> {
    let data = Dataset::load(&data_dir).map_err(value_err)?;
    Ok(data
        .episodes
        .into_iter()
        .map(|e| (e.id, e.step_labels))
        .collect())
}

/// Per-step mistake probabilities of every episode under a checkpoint.
#[pyfunction]
fn score(data_dir: PathBuf, checkpoint: PathBuf) -> PyResult<BTreeMap<String, Vec<f64>>> {
    let data = Dataset::load(&data_dir).map_err(value_err)?;
    let ckpt = load_checkpoint(&checkpoint).map_err(value_err)?;
    let prompts = &data.manifest.prompts;
    let prompt = ckpt
        .params
        .embed(&prompts.task_prompt, &prompts.mistake_prompt)
        .map_err(value_err)?;
    let episodes: Vec<_> = data.episodes.iter().collect();
    let scores = eval::score_episodes(&ckpt.params, &prompt, &episodes).map_err(value_err)?;
    Ok(scores.into_iter().map(|s| (s.id, s.probabilities)).collect())
}

#[pyfunction]
fn average_precision(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    eval::average_precision(&scores, &labels).map_err(value_err)
}

#[pyfunction]
fn average_recall(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    eval::average_recall(&scores, &labels).map_err(value_err)
}

#[pyfunction]
fn f1(ap: f64, ar: f64) -> f64 {
    eval::f1_from_ap_ar(ap, ar)
}

#[pyfunction]
fn mil_k(steps: usize) -> usize {
    train::mil_k(steps)
}

#[pymodule]
fn timid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MUTEX_FORMULA", ltl::MUTEX_FORMULA)?;
    m.add("ORDER_FORMULA", ltl::ORDER_FORMULA)?;
    m.add_function(wrap_pyfunction!(parse_ltl, m)?)?;
    m.add_function(wrap_pyfunction!(eval_finite, m)?)?;
    m.add_function(wrap_pyfunction!(monitor, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_labels, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(average_recall, m)?)?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(mil_k, m)?)?;
    Ok(())
}
