//! Python bindings: cost profiles, calibration helpers, routing rules, saved
//! predictor banks and synthetic corpus generation.

use std::collections::BTreeMap;

use fidelity_core::synthworld::{self, WorldSpec};
use fidelity_core::{calibration, features, policy, Error};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    features::tokenize(text)
}

/// Weighted isotonic fit; unit weights when `weights` is omitted.
#[pyfunction]
#[pyo3(signature = (values, weights=None))]
fn pava(values: Vec<f64>, weights: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let weights = weights.unwrap_or_else(|| vec![1.0; values.len()]);
    calibration::pava(&values, &weights).map_err(py_err)
}

#[pyfunction]
fn brier(probs: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    calibration::brier(&probs, &labels).map_err(py_err)
}

#[pyfunction]
fn ece(probs: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    calibration::ece(&probs, &labels).map_err(py_err)
}

#[pyfunction]
fn voi(p_next: f64, p_cur: f64, cost_next: f64, lam: f64) -> f64 {
    policy::voi(p_next, p_cur, cost_next, lam)
}

fn check_aligned(probs: &[f64], costs: &[f64]) -> PyResult<()> {
    if probs.is_empty() || probs.len() != costs.len() {
        return Err(PyValueError::new_err(
            "probs and costs must be non-empty and equally long",
        ));
    }
    Ok(())
}

type StepTuple = (usize, usize, f64, bool);

/// Greedy escalation. Returns the selected index and the steps as
/// `(from, to, voi, accepted)` tuples.
#[pyfunction]
#[pyo3(signature = (probs, costs, lam, tau=0.0))]
fn greedy_select(probs: Vec<f64>, costs: Vec<f64>, lam: f64, tau: f64) -> PyResult<(usize, Vec<StepTuple>)> {
    check_aligned(&probs, &costs)?;
    let cfg = fidelity_core::PolicyConfig::new(lam, tau).map_err(py_err)?;
    let (sel, steps) = policy::greedy_select(&probs, &costs, &cfg);
    Ok((
        sel,
        steps.iter().map(|s| (s.from, s.to, s.voi, s.accepted)).collect(),
    ))
}

#[pyfunction]
fn argmax_utility(probs: Vec<f64>, costs: Vec<f64>, lam: f64) -> PyResult<usize> {
    check_aligned(&probs, &costs)?;
    Ok(policy::argmax_utility(&probs, &costs, lam))
}

#[pyclass(name = "CostProfile", frozen)]
struct PyCostProfile {
    inner: fidelity_core::CostProfile,
}

#[pymethods]
impl PyCostProfile {
    /// A built-in profile name or a path to a profile JSON file.
    #[new]
    fn new(name_or_path: &str) -> PyResult<Self> {
        fidelity_core::CostProfile::resolve(name_or_path)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids()
    }

    fn normalized_costs(&self) -> Vec<f64> {
        self.inner.normalized_costs()
    }

    fn cost_table(&self) -> Vec<(String, f64)> {
        self.inner.cost_table()
    }

    fn __repr__(&self) -> String {
        format!(
            "CostProfile({:?})",
            self.inner.name.as_deref().unwrap_or("custom")
        )
    }
}

#[pyclass(name = "PredictorBank", frozen)]
struct PyPredictorBank {
    artifacts: fidelity_core::ModelArtifacts,
}

#[pymethods]
impl PyPredictorBank {
    /// Loads a model directory written by `fidelity train`.
    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        fidelity_core::ModelArtifacts::load(dir)
            .map(|artifacts| Self { artifacts })
            .map_err(py_err)
    }

    fn levels(&self) -> Vec<String> {
        self.artifacts.bank.levels().to_vec()
    }

    /// Calibrated success probability per level.
    fn predict(&self, question: &str) -> BTreeMap<String, f64> {
        self.artifacts.bank.predict_success_map(question)
    }

    /// Greedy routing. `lam` and `tau` default to the values saved with the
    /// model, the profile to the saved one (or edge-cloud).
    #[pyo3(signature = (question, lam=None, tau=None, profile=None))]
    fn route<'py>(
        &self,
        py: Python<'py>,
        question: &str,
        lam: Option<f64>,
        tau: Option<f64>,
        profile: Option<&PyCostProfile>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let profile = match (profile, &self.artifacts.profile) {
            (Some(p), _) => p.inner.clone(),
            (None, Some(p)) => p.clone(),
            (None, None) => fidelity_core::CostProfile::builtin("edge-cloud").map_err(py_err)?,
        };
        let saved = self.artifacts.policy.unwrap_or(fidelity_core::PolicyConfig {
            lambda: 0.001,
            tau: 0.0,
            marginal_cost: false,
        });
        let cfg = fidelity_core::PolicyConfig::new(lam.unwrap_or(saved.lambda), tau.unwrap_or(saved.tau))
            .map_err(py_err)?;
        let d =
            fidelity_core::route_greedy(&self.artifacts.bank, question, &cfg, &profile).map_err(py_err)?;

        let out = PyDict::new(py);
        out.set_item("selected", &d.selected)?;
        out.set_item("cost", d.cost)?;
        let probs = PyDict::new(py);
        for (k, v) in &d.probs {
            probs.set_item(k, v)?;
        }
        out.set_item("probs", probs)?;
        let trace: Vec<(String, String, f64, bool)> = d
            .voi_trace
            .iter()
            .map(|s| (s.from.clone(), s.to.clone(), s.voi, s.accepted))
            .collect();
        out.set_item("voi_trace", trace)?;
        Ok(out)
    }
}

/// Generates a synthetic corpus from a canned world name or a spec file and
/// writes the corpus and truth files. Returns the number of records.
#[pyfunction]
#[pyo3(signature = (world, corpus_path, truth_path, n=None, seed=0))]
fn generate(
    world: &str,
    corpus_path: &str,
    truth_path: &str,
    n: Option<usize>,
    seed: u64,
) -> PyResult<usize> {
    let mut spec = if synthworld::CANNED_WORLDS.contains(&world) {
        WorldSpec::canned(world, 1000, seed).map_err(py_err)?
    } else {
        let mut s = WorldSpec::load(world).map_err(py_err)?;
        s.seed = seed;
        s
    };
    if let Some(n) = n {
        spec.n_questions = n;
    }
    let corpus = synthworld::generate(&spec).map_err(py_err)?;
    corpus.write(corpus_path, truth_path).map_err(py_err)?;
    Ok(corpus.dataset.records().len())
}

/// Trains a bank with default booster settings on a corpus file and saves it
/// with the given routing parameters.
#[pyfunction]
#[pyo3(signature = (corpus_path, model_dir, lam=0.001, tau=0.0, profile=None))]
fn train(
    corpus_path: &str,
    model_dir: &str,
    lam: f64,
    tau: f64,
    profile: Option<&PyCostProfile>,
) -> PyResult<()> {
    let profile = match profile {
        Some(p) => p.inner.clone(),
        None => fidelity_core::CostProfile::builtin("edge-cloud").map_err(py_err)?,
    };
    let dataset = fidelity_core::load_records(corpus_path).map_err(py_err)?;
    let train_config = fidelity_core::TrainConfig::default();
    let method = fidelity_core::CalibrationMethod::Isotonic;
    let bank = fidelity_core::train_bank(
        &dataset,
        &profile.ids(),
        &fidelity_core::FeaturizerConfig::default(),
        &train_config,
        method,
    )
    .map_err(py_err)?;
    fidelity_core::ModelArtifacts {
        bank,
        train_config: Some(train_config),
        calibration: Some(method),
        policy: Some(fidelity_core::PolicyConfig::new(lam, tau).map_err(py_err)?),
        profile: Some(profile),
    }
    .save(model_dir)
    .map_err(py_err)
}

#[pymodule]
fn fidelity_routing(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(pava, m)?)?;
    m.add_function(wrap_pyfunction!(brier, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(voi, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_select, m)?)?;
    m.add_function(wrap_pyfunction!(argmax_utility, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<PyCostProfile>()?;
    m.add_class::<PyPredictorBank>()?;
    Ok(())
}
