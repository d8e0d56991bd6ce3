//! Instances, outcome distributions, report matrices and principal preferences.
//!
//! A principal chooses among `n_actions` actions; each action induces a
//! distribution over `n_outcomes` outcomes. Agents report one predicted
//! distribution per action, which together form a [`ReportMatrix`].

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the sum of a probability vector.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A point on the probability simplex over outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct OutcomeDistribution(Vec<f64>);

impl OutcomeDistribution {
    /// Validates `probs` and renormalizes it if the sum is within tolerance of 1.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {p} is negative or not finite"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum}, not 1"
            )));
        }
        if sum == 1.0 {
            Ok(Self(probs))
        } else {
            Ok(Self(probs.into_iter().map(|p| p / sum).collect()))
        }
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// All mass on `outcome`.
    pub fn point(n: usize, outcome: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[outcome] = 1.0;
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `w * self + (1 - w) * other`.
    pub fn mix(&self, other: &Self, w: f64) -> Result<Self> {
        check_len("mixture operand", self.len(), other.len())?;
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::param(format!("mixing weight {w} outside [0, 1]")));
        }
        Self::new(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| w * a + (1.0 - w) * b)
                .collect(),
        )
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        Self(probs)
    }
}

impl TryFrom<Vec<f64>> for OutcomeDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<OutcomeDistribution> for Vec<f64> {
    fn from(d: OutcomeDistribution) -> Self {
        d.0
    }
}

impl AsRef<[f64]> for OutcomeDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        })
    }
}

/// Direction of the lexicographic tie-break on distribution entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// At the first differing entry, the larger probability is preferred.
    #[default]
    HigherFirst,
    /// At the first differing entry, the smaller probability is preferred.
    LowerFirst,
}

/// Outcome of a strict comparison between two distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strict {
    First,
    Second,
}

/// Expected-utility preferences with a lexicographic tie-break.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preference {
    utility: Vec<f64>,
    #[serde(default)]
    tie_break: TieBreak,
}

impl Preference {
    pub fn new(utility: Vec<f64>) -> Result<Self> {
        Self::with_tie_break(utility, TieBreak::default())
    }

    pub fn with_tie_break(utility: Vec<f64>, tie_break: TieBreak) -> Result<Self> {
        if utility.is_empty() {
            return Err(Error::param("utility vector is empty"));
        }
        if utility.iter().any(|u| !u.is_finite()) {
            return Err(Error::NonFinite("utility vector"));
        }
        Ok(Self { utility, tie_break })
    }

    pub fn utility(&self) -> &[f64] {
        &self.utility
    }

    pub fn tie_break(&self) -> TieBreak {
        self.tie_break
    }

    pub fn n_outcomes(&self) -> usize {
        self.utility.len()
    }

    pub fn expected_utility(&self, d: &[f64]) -> f64 {
        debug_assert_eq!(d.len(), self.utility.len());
        self.utility.iter().zip(d).map(|(u, p)| u * p).sum()
    }

    /// Total order on distributions; `Greater` means `d1` is preferred.
    ///
    /// Returns `Equal` only for entrywise identical vectors.
    pub fn compare(&self, d1: &[f64], d2: &[f64]) -> Ordering {
        let eu = self
            .expected_utility(d1)
            .total_cmp(&self.expected_utility(d2));
        if eu != Ordering::Equal {
            return eu;
        }
        for (a, b) in d1.iter().zip(d2) {
            let ord = a.total_cmp(b);
            if ord != Ordering::Equal {
                return match self.tie_break {
                    TieBreak::HigherFirst => ord,
                    TieBreak::LowerFirst => ord.reverse(),
                };
            }
        }
        Ordering::Equal
    }

    /// Compares predictions attached to actions; identical distributions go to
    /// the lower action index.
    pub fn compare_actions(&self, d1: &[f64], a1: usize, d2: &[f64], a2: usize) -> Ordering {
        self.compare(d1, d2).then_with(|| a2.cmp(&a1))
    }

    /// Strict preference between two distributions. Identical inputs resolve
    /// to the first argument, as if it carried the lower action index.
    pub fn prefer(&self, d1: &OutcomeDistribution, d2: &OutcomeDistribution) -> Result<Strict> {
        check_len("first distribution", self.n_outcomes(), d1.len())?;
        check_len("second distribution", self.n_outcomes(), d2.len())?;
        Ok(match self.compare_actions(d1.probs(), 0, d2.probs(), 1) {
            Ordering::Less => Strict::Second,
            _ => Strict::First,
        })
    }
}

/// Read access to an `n_agents x n_actions` array of predictions.
pub trait ReportView {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn prediction(&self, agent: usize, action: usize) -> &[f64];
}

/// Reports of every agent for every action: the object `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportMatrix {
    n_agents: usize,
    n_actions: usize,
    entries: Vec<OutcomeDistribution>,
}

impl ReportMatrix {
    /// Builds a matrix from per-agent rows of per-action predictions.
    pub fn new(rows: Vec<Vec<OutcomeDistribution>>) -> Result<Self> {
        let n_agents = rows.len();
        if n_agents == 0 {
            return Err(Error::param("report matrix needs at least one agent"));
        }
        let n_actions = rows[0].len();
        if n_actions == 0 {
            return Err(Error::param("report matrix needs at least one action"));
        }
        let n_outcomes = rows[0][0].len();
        for row in &rows {
            check_len("actions in report row", n_actions, row.len())?;
            for d in row {
                check_len("outcomes in prediction", n_outcomes, d.len())?;
            }
        }
        Ok(Self {
            n_agents,
            n_actions,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_rows(rows: &[Vec<Vec<f64>>]) -> Result<Self> {
        let rows = rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|d| OutcomeDistribution::new(d.clone()))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    pub fn get(&self, agent: usize, action: usize) -> &OutcomeDistribution {
        &self.entries[agent * self.n_actions + action]
    }

    pub fn set(&mut self, agent: usize, action: usize, d: OutcomeDistribution) -> Result<()> {
        check_len("outcomes in prediction", self.n_outcomes(), d.len())?;
        if agent >= self.n_agents {
            return Err(Error::OutOfRange { what: "agents", index: agent, len: self.n_agents });
        }
        if action >= self.n_actions {
            return Err(Error::OutOfRange { what: "actions", index: action, len: self.n_actions });
        }
        self.entries[agent * self.n_actions + action] = d;
        Ok(())
    }

    /// Every prediction of one agent (`p_i`).
    pub fn row(&self, agent: usize) -> &[OutcomeDistribution] {
        &self.entries[agent * self.n_actions..(agent + 1) * self.n_actions]
    }

    pub fn n_outcomes(&self) -> usize {
        self.entries[0].len()
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_agents)
            .map(|i| self.row(i).iter().map(|d| d.probs().to_vec()).collect())
            .collect()
    }
}

impl ReportView for ReportMatrix {
    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn prediction(&self, agent: usize, action: usize) -> &[f64] {
        self.get(agent, action).probs()
    }
}

/// True outcome distribution conditional on each action (`q`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruth {
    per_action: Vec<OutcomeDistribution>,
}

impl GroundTruth {
    pub fn new(per_action: Vec<OutcomeDistribution>) -> Result<Self> {
        let Some(first) = per_action.first() else {
            return Err(Error::param("ground truth needs at least one action"));
        };
        let n = first.len();
        for d in &per_action {
            check_len("outcomes in ground truth", n, d.len())?;
        }
        Ok(Self { per_action })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            rows.iter()
                .map(|r| OutcomeDistribution::new(r.clone()))
                .collect::<Result<_>>()?,
        )
    }

    pub fn action(&self, a: usize) -> &OutcomeDistribution {
        &self.per_action[a]
    }

    pub fn per_action(&self) -> &[OutcomeDistribution] {
        &self.per_action
    }

    pub fn n_actions(&self) -> usize {
        self.per_action.len()
    }

    pub fn n_outcomes(&self) -> usize {
        self.per_action[0].len()
    }
}

/// The unique preference-maximal action under the truth (`a*`).
pub fn best_action(truth: &GroundTruth, pref: &Preference) -> usize {
    argmax_action(truth.n_actions(), pref, |a| truth.action(a).probs())
}

/// Index of the most preferred prediction among `n_actions`, lower index on ties.
pub(crate) fn argmax_action<'a>(
    n_actions: usize,
    pref: &Preference,
    prediction: impl Fn(usize) -> &'a [f64],
) -> usize {
    let mut best = 0;
    for a in 1..n_actions {
        if pref.compare_actions(prediction(a), a, prediction(best), best) == Ordering::Greater {
            best = a;
        }
    }
    best
}

/// The all-honest report **q**: every agent predicts the truth.
pub fn honest_report(truth: &GroundTruth, n_agents: usize) -> ReportMatrix {
    ReportMatrix {
        n_agents,
        n_actions: truth.n_actions(),
        entries: (0..n_agents)
            .flat_map(|_| truth.per_action.iter().cloned())
            .collect(),
    }
}

/// A decision problem: actions, outcomes, agents, truth and principal preference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRepr", into = "InstanceRepr")]
pub struct Instance {
    pub n_actions: usize,
    pub n_outcomes: usize,
    pub n_agents: usize,
    pub truth: GroundTruth,
    pub pref: Preference,
}

impl Instance {
    pub fn new(truth: GroundTruth, pref: Preference, n_agents: usize) -> Result<Self> {
        let n_actions = truth.n_actions();
        let n_outcomes = truth.n_outcomes();
        if n_agents < 1 {
            return Err(Error::param("instance needs at least one agent"));
        }
        if n_outcomes < 2 {
            return Err(Error::param("instance needs at least two outcomes"));
        }
        check_len("utility entries", n_outcomes, pref.n_outcomes())?;
        Ok(Self {
            n_actions,
            n_outcomes,
            n_agents,
            truth,
            pref,
        })
    }

    /// Two actions, two outcomes, `q = {[0.5, 0.5], [0.25, 0.75]}` and a
    /// principal who wants outcome 0. The single-agent impossibility example.
    pub fn two_action_example(n_agents: usize) -> Self {
        let truth = GroundTruth::from_rows(&[vec![0.5, 0.5], vec![0.25, 0.75]])
            .expect("valid example truth");
        let pref = Preference::new(vec![1.0, 0.0]).expect("valid example utility");
        Self::new(truth, pref, n_agents).expect("valid example instance")
    }

    pub fn best_action(&self) -> usize {
        best_action(&self.truth, &self.pref)
    }

    pub fn honest_report(&self) -> ReportMatrix {
        honest_report(&self.truth, self.n_agents)
    }

    pub fn with_agents(&self, n_agents: usize) -> Result<Self> {
        Self::new(self.truth.clone(), self.pref.clone(), n_agents)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRepr {
    n_actions: usize,
    n_outcomes: usize,
    n_agents: usize,
    truth: Vec<Vec<f64>>,
    utility: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_default_tie_break")]
    tie_break: TieBreak,
}

fn is_default_tie_break(t: &TieBreak) -> bool {
    *t == TieBreak::default()
}

impl TryFrom<InstanceRepr> for Instance {
    type Error = Error;

    fn try_from(r: InstanceRepr) -> Result<Self> {
        let truth = GroundTruth::from_rows(&r.truth)?;
        check_len("truth rows", r.n_actions, truth.n_actions())?;
        check_len("truth columns", r.n_outcomes, truth.n_outcomes())?;
        let pref = Preference::with_tie_break(r.utility, r.tie_break)?;
        Instance::new(truth, pref, r.n_agents)
    }
}

impl From<Instance> for InstanceRepr {
    fn from(i: Instance) -> Self {
        InstanceRepr {
            n_actions: i.n_actions,
            n_outcomes: i.n_outcomes,
            n_agents: i.n_agents,
            truth: i
                .truth
                .per_action
                .into_iter()
                .map(Vec::from)
                .collect(),
            utility: i.pref.utility,
            tie_break: i.pref.tie_break,
        }
    }
}
