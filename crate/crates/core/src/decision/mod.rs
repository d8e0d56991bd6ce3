//! Decision rules mapping a report matrix to a (possibly random) action.

mod conditions;

pub(crate) use conditions::advance;
pub use conditions::{
    check_condition, check_condition_exhaustive, Condition, ConditionCounterexample,
    ConditionReport,
};

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{argmax_action, OutcomeDistribution, Preference, ReportView};
use crate::error::{Error, Result};

/// Probabilities at or below this count as zero when reading off supports.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// A distribution over actions (`D(p)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionDistribution(Vec<f64>);

impl ActionDistribution {
    pub fn point(n_actions: usize, action: usize) -> Self {
        let mut p = vec![0.0; n_actions];
        p[action] = 1.0;
        Self(p)
    }

    pub fn uniform_over(n_actions: usize, support: &[usize]) -> Self {
        let mut p = vec![0.0; n_actions];
        let w = 1.0 / support.len() as f64;
        for &a in support {
            p[a] = w;
        }
        Self(p)
    }

    /// Non-negative weights summing to 1 within 1e-9.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("{probs:?} is not an action distribution")));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn prob(&self, action: usize) -> f64 {
        self.0[action]
    }

    pub fn n_actions(&self) -> usize {
        self.0.len()
    }

    pub fn is_supported(&self, action: usize) -> bool {
        self.0[action] > SUPPORT_THRESHOLD
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.0.len()).filter(|&a| self.is_supported(a))
    }

    /// Most probable action, lowest index on ties.
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (a, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = a;
            }
        }
        best
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sample<G: Rng + ?Sized>(&self, rng: &mut G) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, &p) in self.0.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        self.mode()
    }
}

/// Which decision rule the principal commits to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecisionRuleSpec {
    /// Believe a single agent.
    Max {
        #[serde(default)]
        agent: usize,
    },
    OptimisticMax,
    MeanMax,
    DisagreementSeekingMax {
        /// Predictions closer than this (max-abs) count as agreeing; 0 is exact.
        #[serde(default)]
        tolerance: f64,
    },
    RandomMax,
    RandomMeanMax {
        epsilon: f64,
    },
    RestrictedOptimistic {
        k: usize,
    },
}

impl DecisionRuleSpec {
    pub fn validate(&self, n_agents: usize, n_actions: usize) -> Result<()> {
        match *self {
            DecisionRuleSpec::Max { agent } if agent >= n_agents => Err(Error::OutOfRange {
                what: "agents",
                index: agent,
                len: n_agents,
            }),
            DecisionRuleSpec::DisagreementSeekingMax { tolerance } if !(tolerance >= 0.0) => {
                Err(Error::param("disagreement tolerance must be non-negative"))
            }
            DecisionRuleSpec::RandomMeanMax { epsilon } => {
                if !(epsilon > 0.0 && epsilon < 1.0) {
                    return Err(Error::param(format!("epsilon {epsilon} outside (0, 1)")));
                }
                if n_agents < 2 {
                    return Err(Error::param("random-mean-max needs at least two agents"));
                }
                Ok(())
            }
            DecisionRuleSpec::RestrictedOptimistic { k } => {
                if k < 1 || k > n_actions {
                    return Err(Error::param(format!(
                        "support size {k} outside [1, {n_actions}]"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(
            self,
            DecisionRuleSpec::RandomMax
                | DecisionRuleSpec::RandomMeanMax { .. }
                | DecisionRuleSpec::RestrictedOptimistic { .. }
        )
    }

    /// Applies the rule. Parameters are assumed valid (see [`Self::validate`]).
    pub fn decide<R: ReportView>(&self, reports: &R, pref: &Preference) -> ActionDistribution {
        let m = reports.n_actions();
        match *self {
            DecisionRuleSpec::Max { agent } => {
                ActionDistribution::point(m, max_rule_for(reports, agent, pref))
            }
            DecisionRuleSpec::OptimisticMax => {
                ActionDistribution::point(m, optimistic_max(reports, pref))
            }
            DecisionRuleSpec::MeanMax => ActionDistribution::point(m, mean_max(reports, pref)),
            DecisionRuleSpec::DisagreementSeekingMax { tolerance } => ActionDistribution::point(
                m,
                disagreement_seeking_max_tol(reports, pref, tolerance),
            ),
            DecisionRuleSpec::RandomMax => random_max(reports, pref),
            DecisionRuleSpec::RandomMeanMax { epsilon } => {
                random_mean_max_unchecked(reports, pref, epsilon)
            }
            DecisionRuleSpec::RestrictedOptimistic { k } => {
                restricted_optimistic_unchecked(reports, pref, k)
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            DecisionRuleSpec::Max { agent } => format!("max(agent {agent})"),
            DecisionRuleSpec::OptimisticMax => "optimistic_max".into(),
            DecisionRuleSpec::MeanMax => "mean_max".into(),
            DecisionRuleSpec::DisagreementSeekingMax { tolerance } if tolerance > 0.0 => {
                format!("disagreement_seeking_max(tol={tolerance})")
            }
            DecisionRuleSpec::DisagreementSeekingMax { .. } => "disagreement_seeking_max".into(),
            DecisionRuleSpec::RandomMax => "random_max".into(),
            DecisionRuleSpec::RandomMeanMax { epsilon } => format!("random_mean_max(eps={epsilon})"),
            DecisionRuleSpec::RestrictedOptimistic { k } => format!("restricted_optimistic(k={k})"),
        }
    }
}

/// The max rule on one agent's per-action predictions.
pub fn max_rule(row: &[OutcomeDistribution], pref: &Preference) -> usize {
    argmax_action(row.len(), pref, |a| row[a].probs())
}

pub(crate) fn max_rule_for<R: ReportView>(reports: &R, agent: usize, pref: &Preference) -> usize {
    argmax_action(reports.n_actions(), pref, |a| reports.prediction(agent, a))
}

/// The agent holding the most preferred prediction for `action`.
fn top_agent<R: ReportView>(reports: &R, action: usize, pref: &Preference) -> usize {
    let mut best = 0;
    for i in 1..reports.n_agents() {
        if pref.compare(reports.prediction(i, action), reports.prediction(best, action))
            == Ordering::Greater
        {
            best = i;
        }
    }
    best
}

/// Action carrying the single most preferred prediction across all agents.
pub fn optimistic_max<R: ReportView>(reports: &R, pref: &Preference) -> usize {
    argmax_action(reports.n_actions(), pref, |a| {
        reports.prediction(top_agent(reports, a, pref), a)
    })
}

/// Per-action means, optionally leaving one agent out. Row-major `[action][outcome]`.
fn action_means<R: ReportView>(reports: &R, excluded: Option<usize>) -> Vec<f64> {
    let m = reports.n_actions();
    let k = reports.prediction(0, 0).len();
    let mut means = vec![0.0; m * k];
    let mut count = 0usize;
    for i in 0..reports.n_agents() {
        if Some(i) == excluded {
            continue;
        }
        count += 1;
        for a in 0..m {
            for (acc, p) in means[a * k..(a + 1) * k]
                .iter_mut()
                .zip(reports.prediction(i, a))
            {
                *acc += p;
            }
        }
    }
    let c = count as f64;
    means.iter_mut().for_each(|x| *x /= c);
    means
}

fn mean_max_excluding<R: ReportView>(reports: &R, pref: &Preference, excluded: Option<usize>) -> usize {
    let k = reports.prediction(0, 0).len();
    let means = action_means(reports, excluded);
    argmax_action(reports.n_actions(), pref, |a| &means[a * k..(a + 1) * k])
}

/// Max rule applied to the mean prediction for each action.
pub fn mean_max<R: ReportView>(reports: &R, pref: &Preference) -> usize {
    mean_max_excluding(reports, pref, None)
}

fn disagree(a: &[f64], b: &[f64], tol: f64) -> bool {
    if tol == 0.0 {
        a != b
    } else {
        a.iter().zip(b).any(|(x, y)| (x - y).abs() > tol)
    }
}

/// Lowest-indexed action on which some pair of agents disagrees, else the max
/// rule on the shared report.
pub fn disagreement_seeking_max<R: ReportView>(reports: &R, pref: &Preference) -> usize {
    disagreement_seeking_max_tol(reports, pref, 0.0)
}

pub fn disagreement_seeking_max_tol<R: ReportView>(
    reports: &R,
    pref: &Preference,
    tol: f64,
) -> usize {
    let n = reports.n_agents();
    for a in 0..reports.n_actions() {
        let first = reports.prediction(0, a);
        if (1..n).any(|i| disagree(first, reports.prediction(i, a), tol)) {
            return a;
        }
    }
    max_rule_for(reports, 0, pref)
}

/// Believe a uniformly random agent, then take their most preferred action.
pub fn random_max<R: ReportView>(reports: &R, pref: &Preference) -> ActionDistribution {
    let n = reports.n_agents();
    let mut probs = vec![0.0; reports.n_actions()];
    for i in 0..n {
        probs[max_rule_for(reports, i, pref)] += 1.0;
    }
    probs.iter_mut().for_each(|p| *p /= n as f64);
    ActionDistribution(probs)
}

/// Mean-max with probability `1 - epsilon`; with probability `epsilon / n`
/// each agent is dropped from the mean.
pub fn random_mean_max<R: ReportView>(
    reports: &R,
    pref: &Preference,
    epsilon: f64,
) -> Result<ActionDistribution> {
    DecisionRuleSpec::RandomMeanMax { epsilon }.validate(reports.n_agents(), reports.n_actions())?;
    Ok(random_mean_max_unchecked(reports, pref, epsilon))
}

fn random_mean_max_unchecked<R: ReportView>(
    reports: &R,
    pref: &Preference,
    epsilon: f64,
) -> ActionDistribution {
    let n = reports.n_agents();
    let mut probs = vec![0.0; reports.n_actions()];
    probs[mean_max_excluding(reports, pref, None)] += 1.0 - epsilon;
    let w = epsilon / n as f64;
    for i in 0..n {
        probs[mean_max_excluding(reports, pref, Some(i))] += w;
    }
    ActionDistribution(probs)
}

/// Actions ranked by their most preferred prediction, best first.
pub fn optimistic_ranking<R: ReportView>(reports: &R, pref: &Preference) -> Vec<usize> {
    let tops: Vec<usize> = (0..reports.n_actions())
        .map(|a| top_agent(reports, a, pref))
        .collect();
    let mut order: Vec<usize> = (0..reports.n_actions()).collect();
    order.sort_by(|&a, &b| {
        pref.compare_actions(
            reports.prediction(tops[b], b),
            b,
            reports.prediction(tops[a], a),
            a,
        )
    });
    order
}

/// Uniform over the `k` actions with the most preferred optimistic predictions.
pub fn restricted_optimistic<R: ReportView>(
    reports: &R,
    pref: &Preference,
    k: usize,
) -> Result<ActionDistribution> {
    DecisionRuleSpec::RestrictedOptimistic { k }.validate(reports.n_agents(), reports.n_actions())?;
    Ok(restricted_optimistic_unchecked(reports, pref, k))
}

fn restricted_optimistic_unchecked<R: ReportView>(
    reports: &R,
    pref: &Preference,
    k: usize,
) -> ActionDistribution {
    let ranking = optimistic_ranking(reports, pref);
    ActionDistribution::uniform_over(reports.n_actions(), &ranking[..k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{best_action, honest_report, GroundTruth, Instance, ReportMatrix};
    use proptest::prelude::*;

    fn d(p: &[f64]) -> OutcomeDistribution {
        OutcomeDistribution::new(p.to_vec()).unwrap()
    }

    fn pref() -> Preference {
        Preference::new(vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn max_rule_examples() {
        let inst = Instance::two_action_example(1);
        assert_eq!(max_rule(inst.truth.per_action(), &pref()), 0);
        assert_eq!(max_rule(&[d(&[0.2, 0.8]), d(&[0.25, 0.75])], &pref()), 1);
        assert_eq!(max_rule(&[d(&[0.2, 0.8])], &pref()), 0);
    }

    #[test]
    fn optimistic_max_examples() {
        let inst = Instance::two_action_example(2);
        assert_eq!(optimistic_max(&inst.honest_report(), &pref()), 0);

        let mut r = inst.honest_report();
        r.set(1, 1, d(&[0.6, 0.4])).unwrap();
        assert_eq!(optimistic_max(&r, &pref()), 1);

        let mut r = inst.honest_report();
        r.set(1, 0, d(&[0.1, 0.9])).unwrap();
        assert_eq!(optimistic_max(&r, &pref()), 0);
    }

    #[test]
    fn mean_max_examples() {
        let r = ReportMatrix::from_rows(&[
            vec![vec![0.5, 0.5], vec![0.25, 0.75]],
            vec![vec![0.3, 0.7], vec![0.25, 0.75]],
        ])
        .unwrap();
        assert_eq!(mean_max(&r, &pref()), 0);

        let inst = Instance::two_action_example(3);
        assert_eq!(mean_max(&inst.honest_report(), &pref()), inst.best_action());

        let single = ReportMatrix::from_rows(&[vec![vec![0.2, 0.8], vec![0.25, 0.75]]]).unwrap();
        assert_eq!(mean_max(&single, &pref()), max_rule(single.row(0), &pref()));
    }

    #[test]
    fn disagreement_seeking_examples() {
        let agree_then_disagree = ReportMatrix::from_rows(&[
            vec![vec![0.5, 0.5], vec![0.25, 0.75]],
            vec![vec![0.5, 0.5], vec![0.3, 0.7]],
        ])
        .unwrap();
        assert_eq!(disagreement_seeking_max(&agree_then_disagree, &pref()), 1);

        let inst = Instance::two_action_example(2);
        assert_eq!(disagreement_seeking_max(&inst.honest_report(), &pref()), 0);

        let both = ReportMatrix::from_rows(&[
            vec![vec![0.4, 0.6], vec![0.25, 0.75]],
            vec![vec![0.5, 0.5], vec![0.3, 0.7]],
        ])
        .unwrap();
        assert_eq!(disagreement_seeking_max(&both, &pref()), 0);

        // tiny noise on action 1 only: exact rule jumps there, tolerant rule does not
        let noisy = ReportMatrix::from_rows(&[
            vec![vec![0.5, 0.5], vec![0.25, 0.75]],
            vec![vec![0.5, 0.5], vec![0.25 + 1e-7, 0.75 - 1e-7]],
        ])
        .unwrap();
        assert_eq!(disagreement_seeking_max(&noisy, &pref()), 1);
        assert_eq!(disagreement_seeking_max_tol(&noisy, &pref(), 1e-6), 0);
    }

    #[test]
    fn random_max_examples() {
        let split = ReportMatrix::from_rows(&[
            vec![vec![0.5, 0.5], vec![0.25, 0.75]],
            vec![vec![0.1, 0.9], vec![0.25, 0.75]],
        ])
        .unwrap();
        assert_eq!(random_max(&split, &pref()).probs(), &[0.5, 0.5]);

        let inst = Instance::two_action_example(2);
        assert_eq!(random_max(&inst.honest_report(), &pref()).probs(), &[1.0, 0.0]);

        let three = ReportMatrix::from_rows(&[
            vec![vec![0.5, 0.5], vec![0.25, 0.75]],
            vec![vec![0.5, 0.5], vec![0.25, 0.75]],
            vec![vec![0.1, 0.9], vec![0.25, 0.75]],
        ])
        .unwrap();
        let p = random_max(&three, &pref());
        assert!((p.prob(0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.prob(1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn random_mean_max_examples() {
        let inst = Instance::two_action_example(2);
        let p = random_mean_max(&inst.honest_report(), &pref(), 0.3).unwrap();
        assert_eq!(p.probs(), &[1.0, 0.0]);

        // full mean -> a1, without agent 1 -> a2, without agent 2 -> a1
        let r = ReportMatrix::from_rows(&[
            vec![vec![0.5, 0.5], vec![0.25, 0.75]],
            vec![vec![0.2, 0.8], vec![0.25, 0.75]],
        ])
        .unwrap();
        assert_eq!(mean_max(&r, &pref()), 0);
        let p = random_mean_max(&r, &pref(), 0.1).unwrap();
        assert!((p.prob(0) - 0.95).abs() < 1e-12);
        assert!((p.prob(1) - 0.05).abs() < 1e-12);

        let tiny = random_mean_max(&r, &pref(), 1e-12).unwrap();
        assert!(tiny.max_abs_diff(&ActionDistribution::point(2, 0)) < 1e-11);

        assert!(random_mean_max(&r, &pref(), 0.0).is_err());
        assert!(random_mean_max(&r, &pref(), 1.0).is_err());
    }

    #[test]
    fn restricted_optimistic_examples() {
        let truth = GroundTruth::from_rows(&[
            vec![0.5, 0.5],
            vec![0.25, 0.75],
            vec![0.9, 0.1],
            vec![0.1, 0.9],
        ])
        .unwrap();
        let r = honest_report(&truth, 2);
        let k1 = restricted_optimistic(&r, &pref(), 1).unwrap();
        assert_eq!(k1, ActionDistribution::point(4, optimistic_max(&r, &pref())));
        let all = restricted_optimistic(&r, &pref(), 4).unwrap();
        assert_eq!(all.probs(), &[0.25; 4]);
        let half = restricted_optimistic(&r, &pref(), 2).unwrap();
        assert_eq!(half.probs(), &[0.5, 0.0, 0.5, 0.0]);
        assert!(restricted_optimistic(&r, &pref(), 0).is_err());
        assert!(restricted_optimistic(&r, &pref(), 5).is_err());
    }

    #[test]
    fn spec_serializes_with_kind_tag() {
        let s = DecisionRuleSpec::RandomMeanMax { epsilon: 0.1 };
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(text, r#"{"kind":"random_mean_max","epsilon":0.1}"#);
        let back: DecisionRuleSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let opt: DecisionRuleSpec = serde_json::from_str(r#"{"kind":"optimistic_max"}"#).unwrap();
        assert_eq!(opt, DecisionRuleSpec::OptimisticMax);
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect()
        })
    }

    fn all_rules(n_actions: usize) -> Vec<DecisionRuleSpec> {
        vec![
            DecisionRuleSpec::Max { agent: 0 },
            DecisionRuleSpec::OptimisticMax,
            DecisionRuleSpec::MeanMax,
            DecisionRuleSpec::DisagreementSeekingMax { tolerance: 0.0 },
            DecisionRuleSpec::RandomMax,
            DecisionRuleSpec::RandomMeanMax { epsilon: 0.1 },
            DecisionRuleSpec::RestrictedOptimistic { k: 1 },
            DecisionRuleSpec::RestrictedOptimistic { k: n_actions },
        ]
    }

    proptest! {
        #[test]
        fn honest_reports_pick_best_action(truth in prop::collection::vec(simplex(3), 1..6),
                                           u in prop::collection::vec(-1.0f64..1.0, 3),
                                           n in 2usize..4) {
            let q = GroundTruth::from_rows(&truth).unwrap();
            let pref = Preference::new(u).unwrap();
            let honest = honest_report(&q, n);
            let a_star = best_action(&q, &pref);
            for rule in all_rules(q.n_actions()) {
                let dist = rule.decide(&honest, &pref);
                prop_assert!((dist.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                if !matches!(rule, DecisionRuleSpec::RestrictedOptimistic { k } if k > 1) {
                    prop_assert_eq!(dist, ActionDistribution::point(q.n_actions(), a_star));
                }
            }
        }

        #[test]
        fn outputs_are_distributions(rows in prop::collection::vec(prop::collection::vec(simplex(3), 4), 2..4),
                                     u in prop::collection::vec(-1.0f64..1.0, 3)) {
            let r = ReportMatrix::from_rows(&rows).unwrap();
            let pref = Preference::new(u).unwrap();
            for rule in all_rules(4) {
                let dist = rule.decide(&r, &pref);
                prop_assert!((dist.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn optimistic_max_ignores_dominated_changes(rows in prop::collection::vec(prop::collection::vec(simplex(3), 3), 2..4),
                                                    u in prop::collection::vec(-1.0f64..1.0, 3),
                                                    replacement in simplex(3),
                                                    agent in 0usize..2, action in 0usize..3) {
            let r = ReportMatrix::from_rows(&rows).unwrap();
            let pref = Preference::new(u).unwrap();
            let chosen = optimistic_max(&r, &pref);
            let winner = r.get(top_agent(&r, chosen, &pref), chosen).probs().to_vec();
            prop_assume!(!(agent == top_agent(&r, chosen, &pref) && action == chosen));
            // replacement must stay below the global winner
            prop_assume!(pref.compare_actions(&replacement, action, &winner, chosen) == Ordering::Less);
            let mut moved = r.clone();
            moved.set(agent, action, OutcomeDistribution::new(replacement).unwrap()).unwrap();
            prop_assert_eq!(optimistic_max(&moved, &pref), chosen);
        }

        #[test]
        fn random_mean_max_weights_decompose(rows in prop::collection::vec(prop::collection::vec(simplex(2), 3), 2..5),
                                             eps in 0.01f64..0.99) {
            let r = ReportMatrix::from_rows(&rows).unwrap();
            let pref = Preference::new(vec![1.0, 0.0]).unwrap();
            let n = r.n_agents();
            let dist = random_mean_max(&r, &pref, eps).unwrap();
            let mut rebuilt = vec![0.0; 3];
            rebuilt[mean_max(&r, &pref)] += 1.0 - eps;
            for i in 0..n {
                rebuilt[mean_max_excluding(&r, &pref, Some(i))] += eps / n as f64;
            }
            for (a, b) in dist.probs().iter().zip(&rebuilt) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
