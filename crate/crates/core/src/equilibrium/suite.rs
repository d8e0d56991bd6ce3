//! The default audit suite: mechanism pairs with the property each should
//! satisfy on small bundled instances.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{audit, AuditOptions, AuditReport, SimplexGrid};
use crate::decision::DecisionRuleSpec;
use crate::domain::{GroundTruth, Instance, Preference};
use crate::error::{Error, Result};
use crate::scoring::{BaseRule, Mechanism, ZeroSumRule};

/// What an audited pair is expected to show.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    /// Honest is an equilibrium and every equilibrium takes `a*` with honest reports there.
    QuasiStrict,
    /// Quasi-strict, and every equilibrium is honest on all actions it can take.
    QuasiStrictHonestOnSupport,
    /// Honest reporting is the only equilibrium.
    Strict,
    /// Every equilibrium induces the same action distribution as honesty.
    HonestDecision,
    /// A control pair that must fail the quasi-strict audit.
    ExpectedFailure,
    /// Findings are reported without asserting anything.
    Exploratory,
}

impl Claim {
    pub fn holds(self, r: &AuditReport) -> bool {
        match self {
            Claim::QuasiStrict => r.quasi_strict(),
            Claim::QuasiStrictHonestOnSupport => r.quasi_strict() && r.all_honest_on_support,
            Claim::Strict => r.strict(),
            Claim::HonestDecision => {
                r.honest_is_equilibrium && r.all_match_honest_decision && r.all_honest_on_support
            }
            Claim::ExpectedFailure => !r.quasi_strict() && r.counterexample.is_some(),
            Claim::Exploratory => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteEntry {
    pub name: String,
    pub mechanism: Mechanism,
    pub decision: DecisionRuleSpec,
    pub instance: Instance,
    pub grid_resolution: usize,
    /// Restrict the audit to strong equilibria.
    #[serde(default)]
    pub strong: bool,
    pub claim: Claim,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub claim: Claim,
    pub claim_holds: bool,
    /// Every equilibrium of a zero-sum pair with `c = 0` scores 0 for every agent.
    /// `None` when the mechanism is not of that form.
    pub zero_scores_hold: Option<bool>,
    pub report: AuditReport,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.claim_holds && self.zero_scores_hold.unwrap_or(true)
    }
}

pub fn run_entry(entry: &SuiteEntry, opts: AuditOptions) -> Result<SuiteOutcome> {
    let grid = SimplexGrid::new(entry.instance.n_outcomes, entry.grid_resolution)?;
    let opts = AuditOptions {
        strong: entry.strong || opts.strong,
        ..opts
    };
    let report = audit(&entry.mechanism, &entry.decision, &entry.instance, &grid, opts)?;
    let zero_scores_hold = match entry.mechanism {
        Mechanism::ZeroSum(rule) if rule.constant == 0.0 => {
            Some(report.max_abs_equilibrium_score <= 1e-9)
        }
        _ => None,
    };
    Ok(SuiteOutcome {
        name: entry.name.clone(),
        claim: entry.claim,
        claim_holds: entry.claim.holds(&report),
        zero_scores_hold,
        report,
    })
}

fn instance(truth: &[Vec<f64>], utility: Vec<f64>, n_agents: usize) -> Instance {
    let truth = GroundTruth::from_rows(truth).expect("bundled truth is valid");
    Instance::new(truth, Preference::new(utility).expect("bundled utility"), n_agents)
        .expect("bundled instance is valid")
}

/// Small instances with every truth row on the stated grid.
pub fn bundled_instances() -> Vec<(&'static str, Instance, usize)> {
    vec![
        ("two_action", Instance::two_action_example(2), 4),
        (
            "three_action",
            instance(
                &[vec![0.5, 0.5], vec![0.25, 0.75], vec![0.75, 0.25]],
                vec![1.0, 0.0],
                2,
            ),
            4,
        ),
        (
            "three_outcome",
            instance(
                &[vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5]],
                vec![1.0, 0.5, 0.0],
                2,
            ),
            2,
        ),
    ]
}

/// A random instance whose truth rows are distinct points of the resolution-`k` grid
/// and whose utilities are uniform on `[0, 1]`.
pub fn random_instance(
    seed: u64,
    n_agents: usize,
    n_actions: usize,
    n_outcomes: usize,
    k: usize,
) -> Result<Instance> {
    let grid = SimplexGrid::new(n_outcomes, k)?;
    if n_actions > grid.len() {
        return Err(Error::param(format!(
            "{n_actions} distinct truth rows requested but the grid has {} points",
            grid.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = sample(&mut rng, grid.len(), n_actions)
        .into_iter()
        .map(|i| grid.point(i).clone())
        .collect();
    let utility = (0..n_outcomes).map(|_| rng.random::<f64>()).collect();
    Instance::new(GroundTruth::new(rows)?, Preference::new(utility)?, n_agents)
}

/// Every property the library claims, each on the bundled instances, plus a
/// non-zero-sum control that is expected to fail.
pub fn default_suite() -> Vec<SuiteEntry> {
    let zs = Mechanism::ZeroSum(ZeroSumRule::new(BaseRule::log()));
    let zs_quad = Mechanism::ZeroSum(ZeroSumRule::new(BaseRule::quadratic()));
    let mut out = Vec::new();
    for (label, inst, k) in bundled_instances() {
        let mut push = |name: &str, mechanism: Mechanism, decision, inst: &Instance, strong, claim| {
            out.push(SuiteEntry {
                name: format!("{name}/{label}"),
                mechanism,
                decision,
                instance: inst.clone(),
                grid_resolution: k,
                strong,
                claim,
            })
        };
        let three = inst.with_agents(3).expect("three agents");
        push("optimistic_max", zs, DecisionRuleSpec::OptimisticMax, &inst, false, Claim::QuasiStrict);
        push("optimistic_max_brier", zs_quad, DecisionRuleSpec::OptimisticMax, &inst, false, Claim::QuasiStrict);
        push("mean_max", zs, DecisionRuleSpec::MeanMax, &inst, false, Claim::QuasiStrict);
        push(
            "disagreement_seeking_max",
            zs,
            DecisionRuleSpec::DisagreementSeekingMax { tolerance: 0.0 },
            &inst,
            false,
            Claim::Strict,
        );
        push(
            "random_max",
            zs,
            DecisionRuleSpec::RandomMax,
            &inst,
            false,
            Claim::QuasiStrictHonestOnSupport,
        );
        push(
            "random_mean_max",
            zs,
            DecisionRuleSpec::RandomMeanMax { epsilon: 0.1 },
            &inst,
            false,
            Claim::QuasiStrictHonestOnSupport,
        );
        push(
            "restricted_optimistic",
            zs,
            DecisionRuleSpec::RestrictedOptimistic { k: 2 },
            &inst,
            false,
            Claim::HonestDecision,
        );
        push(
            "independent_log_control",
            Mechanism::Independent(BaseRule::log()),
            DecisionRuleSpec::OptimisticMax,
            &inst,
            false,
            Claim::ExpectedFailure,
        );
        if inst.n_actions == 2 && inst.n_outcomes == 2 {
            push("mean_max_strong_3", zs, DecisionRuleSpec::MeanMax, &three, true, Claim::QuasiStrict);
            push("mean_max_nash_3", zs, DecisionRuleSpec::MeanMax, &three, false, Claim::Exploratory);
            push(
                "random_mean_max_3",
                zs,
                DecisionRuleSpec::RandomMeanMax { epsilon: 0.1 },
                &three,
                false,
                Claim::QuasiStrictHonestOnSupport,
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_truth_is_on_grid() {
        for (_, inst, k) in bundled_instances() {
            let grid = SimplexGrid::new(inst.n_outcomes, k).unwrap();
            for q in inst.truth.per_action() {
                assert!(grid.index_of(q.probs()).is_some());
            }
        }
    }

    #[test]
    fn random_instances_are_reproducible_and_distinct() {
        let a = random_instance(7, 2, 3, 2, 4).unwrap();
        let b = random_instance(7, 2, 3, 2, 4).unwrap();
        assert_eq!(a, b);
        let rows = a.truth.per_action();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                assert_ne!(rows[i], rows[j]);
            }
        }
        assert!(random_instance(0, 2, 6, 2, 4).is_err());
    }

    #[test]
    fn suite_entries_round_trip_through_json() {
        let suite = default_suite();
        let json = serde_json::to_string(&suite).unwrap();
        let back: Vec<SuiteEntry> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, suite);
    }
}
