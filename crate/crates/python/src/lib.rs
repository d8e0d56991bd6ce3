//! Python bindings: scoring rules, decision rules, instances with equilibrium
//! audits, action search and the training experiment. Structured results are
//! returned as JSON strings.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use zerosum::domain::ReportView;
use zerosum::equilibrium::suite::{default_suite, run_entry};
use zerosum::equilibrium::{audit, AuditOptions, SimplexGrid};
use zerosum::example::impossibility_example;
use zerosum::search::{demo_search, SearchMode};
use zerosum::training::{run_experiment_1, TrainConfig};
use zerosum::{BaseRule, DecisionRuleSpec, GroundTruth, Instance, Mechanism, Preference, ReportMatrix, Score, ZeroSumRule};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn base_rule(name: &str) -> PyResult<BaseRule> {
    match name {
        "log" => Ok(BaseRule::log()),
        "quadratic" | "brier" => Ok(BaseRule::quadratic()),
        other => Err(err(format!("unknown base rule {other:?}; expected log or brier"))),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(err)
}

/// Zero-sum scoring on top of a proper base rule.
#[pyclass(name = "ZeroSumRule", frozen)]
struct PyZeroSumRule {
    inner: ZeroSumRule,
}

#[pymethods]
impl PyZeroSumRule {
    #[new]
    #[pyo3(signature = (base = "log", constant = 0.0))]
    fn new(base: &str, constant: f64) -> PyResult<Self> {
        Ok(Self {
            inner: ZeroSumRule::new(base_rule(base)?).with_constant(constant),
        })
    }

    /// Scores once `outcome` is realized; `predictions[i]` is agent i's prediction for the chosen action.
    fn scores(&self, predictions: Vec<Vec<f64>>, outcome: usize) -> PyResult<Vec<f64>> {
        let base = predictions
            .iter()
            .map(|p| self.inner.base.score(p, outcome).map(Score::from_f64))
            .collect::<zerosum::Result<Vec<_>>>()
            .map_err(err)?;
        let s = self.inner.combine(&base).map_err(err)?;
        Ok(s.iter().map(|v| v.to_f64()).collect())
    }

    /// Expected scores when outcomes follow `truth`.
    fn expected_scores(&self, predictions: Vec<Vec<f64>>, truth: Vec<f64>) -> PyResult<Vec<f64>> {
        let base: Vec<Score> = predictions.iter().map(|p| self.inner.base.expected_score(p, &truth)).collect();
        let s = self.inner.combine(&base).map_err(err)?;
        Ok(s.iter().map(|v| v.to_f64()).collect())
    }

    fn __repr__(&self) -> String {
        format!("ZeroSumRule({})", Mechanism::ZeroSum(self.inner).label())
    }
}

/// A principal's decision rule.
#[pyclass(name = "DecisionRule", frozen)]
struct PyDecisionRule {
    inner: DecisionRuleSpec,
}

#[pymethods]
impl PyDecisionRule {
    /// `kind` is one of max, optimistic_max, mean_max, disagreement_seeking_max,
    /// random_max, random_mean_max (needs `epsilon`) and restricted_optimistic (needs `k`).
    #[new]
    #[pyo3(signature = (kind, agent = 0, tolerance = 0.0, epsilon = None, k = None))]
    fn new(kind: &str, agent: usize, tolerance: f64, epsilon: Option<f64>, k: Option<usize>) -> PyResult<Self> {
        let mut v = serde_json::json!({ "kind": kind });
        match kind {
            "max" => v["agent"] = agent.into(),
            "disagreement_seeking_max" => v["tolerance"] = tolerance.into(),
            "random_mean_max" => v["epsilon"] = epsilon.ok_or_else(|| err("random_mean_max needs epsilon"))?.into(),
            "restricted_optimistic" => v["k"] = k.ok_or_else(|| err("restricted_optimistic needs k"))?.into(),
            _ => {}
        }
        Ok(Self {
            inner: serde_json::from_value(v).map_err(err)?,
        })
    }

    /// Action probabilities for `reports[agent][action]` under `utility` over outcomes.
    fn decide(&self, reports: Vec<Vec<Vec<f64>>>, utility: Vec<f64>) -> PyResult<Vec<f64>> {
        let reports = ReportMatrix::from_rows(&reports).map_err(err)?;
        let pref = Preference::new(utility).map_err(err)?;
        self.inner
            .validate(reports.n_agents(), reports.n_actions())
            .map_err(err)?;
        Ok(self.inner.decide(&reports, &pref).probs().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("DecisionRule({})", self.inner.label())
    }
}

/// True outcome distributions per action, the principal's utility, and the number of agents.
#[pyclass(name = "Instance", frozen)]
struct PyInstance {
    inner: Instance,
}

#[pymethods]
impl PyInstance {
    #[new]
    fn new(truth: Vec<Vec<f64>>, utility: Vec<f64>, n_agents: usize) -> PyResult<Self> {
        let truth = GroundTruth::from_rows(&truth).map_err(err)?;
        let pref = Preference::new(utility).map_err(err)?;
        Ok(Self {
            inner: Instance::new(truth, pref, n_agents).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n_agents = 2))]
    fn two_action_example(n_agents: usize) -> Self {
        Self {
            inner: Instance::two_action_example(n_agents),
        }
    }

    #[getter]
    fn best_action(&self) -> usize {
        self.inner.best_action()
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.n_agents
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions
    }

    /// Exhaustive equilibrium audit on the resolution-`grid_resolution` simplex grid; JSON report.
    #[pyo3(signature = (rule, base = "log", zero_sum = true, grid_resolution = 4, strong = false))]
    fn audit(
        &self,
        py: Python<'_>,
        rule: &PyDecisionRule,
        base: &str,
        zero_sum: bool,
        grid_resolution: usize,
        strong: bool,
    ) -> PyResult<String> {
        let base = base_rule(base)?;
        let mechanism = if zero_sum {
            Mechanism::zero_sum(base)
        } else {
            Mechanism::Independent(base)
        };
        let grid = SimplexGrid::new(self.inner.n_outcomes, grid_resolution).map_err(err)?;
        let opts = AuditOptions {
            strong,
            ..AuditOptions::default()
        };
        let decision = rule.inner;
        let report = py
            .detach(|| audit(&mechanism, &decision, &self.inner, &grid, opts))
            .map_err(err)?;
        to_json(&report)
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.inner)
    }
}

/// The two-action example as JSON.
#[pyfunction]
#[pyo3(signature = (base = "log"))]
fn example(base: &str) -> PyResult<String> {
    to_json(&impossibility_example(base_rule(base)?).map_err(err)?)
}

/// Runs the default audit suite; JSON list of `{name, claim, passed}`.
#[pyfunction]
fn run_default_suite(py: Python<'_>) -> PyResult<String> {
    let outcomes = py.detach(|| {
        default_suite()
            .iter()
            .map(|e| run_entry(e, AuditOptions::default()))
            .collect::<zerosum::Result<Vec<_>>>()
    });
    let summary: Vec<serde_json::Value> = outcomes
        .map_err(err)?
        .iter()
        .map(|o| serde_json::json!({ "name": o.name, "claim": o.claim, "passed": o.passed() }))
        .collect();
    to_json(&summary)
}

/// Action search with honest agents on a random instance; JSON trace.
#[pyfunction]
#[pyo3(signature = (n_actions, mode = "binary", seed = 0, n_agents = 2, n_outcomes = 2))]
fn search(n_actions: usize, mode: &str, seed: u64, n_agents: usize, n_outcomes: usize) -> PyResult<String> {
    let mode = match mode {
        "binary" => SearchMode::Binary,
        "constant" => SearchMode::Constant,
        other => return Err(err(format!("unknown search mode {other:?}"))),
    };
    to_json(&demo_search(seed, n_actions, n_outcomes, n_agents, mode).map_err(err)?)
}

/// Trains one model; `config` is a JSON training config (defaults fill missing keys). JSON metric rows.
#[pyfunction]
#[pyo3(signature = (config = "{}"))]
fn train(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg: TrainConfig = serde_json::from_str(config).map_err(err)?;
    let out = py.detach(|| run_experiment_1(&cfg)).map_err(err)?;
    to_json(&out.rows)
}

#[pymodule]
pub fn zerosum_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyZeroSumRule>()?;
    m.add_class::<PyDecisionRule>()?;
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(example, m)?)?;
    m.add_function(wrap_pyfunction!(run_default_suite, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
