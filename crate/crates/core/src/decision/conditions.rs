//! Empirical checkers for the support-regularity conditions on stochastic
//! decision rules.
//!
//! * Condition 1: if one agent's predictions for a subset of actions all move
//!   to strictly more preferred distributions, and the subset had positive
//!   probability before, it keeps positive probability after.
//! * Condition 2: making one prediction strictly less preferred never drops
//!   another action from the support.
//! * Condition 3: changing the prediction for an action that has zero
//!   probability both before and after leaves the whole distribution alone.

use std::cmp::Ordering;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActionDistribution, SUPPORT_THRESHOLD};
use crate::domain::{Instance, OutcomeDistribution, ReportMatrix};
use crate::equilibrium::SimplexGrid;
use crate::error::{Error, Result};

/// Grid resolution used when sampling random profiles.
const SAMPLING_RESOLUTION: usize = 8;

/// Upper bound on perturbations visited by the exhaustive checker.
const EXHAUSTIVE_BUDGET: u128 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    ImprovedSubsetKeepsSupport,
    WorsenedPredictionKeepsOthers,
    ZeroProbabilityChangeIsInert,
}

impl Condition {
    pub const ALL: [Condition; 3] = [
        Condition::ImprovedSubsetKeepsSupport,
        Condition::WorsenedPredictionKeepsOthers,
        Condition::ZeroProbabilityChangeIsInert,
    ];

    pub fn number(self) -> u8 {
        match self {
            Condition::ImprovedSubsetKeepsSupport => 1,
            Condition::WorsenedPredictionKeepsOthers => 2,
            Condition::ZeroProbabilityChangeIsInert => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Condition::ImprovedSubsetKeepsSupport),
            2 => Ok(Condition::WorsenedPredictionKeepsOthers),
            3 => Ok(Condition::ZeroProbabilityChangeIsInert),
            _ => Err(Error::param(format!("no condition {n}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionCounterexample {
    pub agent: usize,
    /// Actions whose prediction for `agent` was changed.
    pub actions: Vec<usize>,
    pub before: Vec<Vec<Vec<f64>>>,
    pub after: Vec<Vec<Vec<f64>>>,
    pub decision_before: ActionDistribution,
    pub decision_after: ActionDistribution,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub passed: bool,
    pub cases_checked: u64,
    pub counterexample: Option<ConditionCounterexample>,
}

/// Does the change `before -> after` (by `agent` on `actions`) break the
/// conclusion of `condition`? Hypotheses other than Condition 3's
/// zero-probability requirement are the caller's responsibility.
fn violates(
    condition: Condition,
    actions: &[usize],
    d_before: &ActionDistribution,
    d_after: &ActionDistribution,
) -> bool {
    match condition {
        Condition::ImprovedSubsetKeepsSupport => {
            actions.iter().any(|&a| d_before.is_supported(a))
                && !actions.iter().any(|&a| d_after.is_supported(a))
        }
        Condition::WorsenedPredictionKeepsOthers => {
            let changed = actions[0];
            (0..d_before.n_actions())
                .any(|b| b != changed && d_before.is_supported(b) && !d_after.is_supported(b))
        }
        Condition::ZeroProbabilityChangeIsInert => {
            let changed = actions[0];
            !d_before.is_supported(changed)
                && !d_after.is_supported(changed)
                && d_before.max_abs_diff(d_after) > SUPPORT_THRESHOLD
        }
    }
}

struct Checker<'a, F> {
    rule: F,
    instance: &'a Instance,
    condition: Condition,
    cases: u64,
}

impl<F: Fn(&ReportMatrix) -> ActionDistribution> Checker<'_, F> {
    fn ordering(&self, a: &OutcomeDistribution, b: &OutcomeDistribution) -> Ordering {
        self.instance.pref.compare(a.probs(), b.probs())
    }

    fn test(
        &mut self,
        before: &ReportMatrix,
        d_before: &ActionDistribution,
        after: &ReportMatrix,
        agent: usize,
        actions: &[usize],
    ) -> Option<ConditionCounterexample> {
        self.cases += 1;
        let d_after = (self.rule)(after);
        violates(self.condition, actions, d_before, &d_after).then(|| ConditionCounterexample {
            agent,
            actions: actions.to_vec(),
            before: before.to_nested(),
            after: after.to_nested(),
            decision_before: d_before.clone(),
            decision_after: d_after,
        })
    }

    fn finish(self, counterexample: Option<ConditionCounterexample>) -> ConditionReport {
        ConditionReport {
            condition: self.condition,
            passed: counterexample.is_none(),
            cases_checked: self.cases,
            counterexample,
        }
    }
}

fn profile_from_cells(grid: &SimplexGrid, n_agents: usize, n_actions: usize, cells: &[usize]) -> ReportMatrix {
    let rows = (0..n_agents)
        .map(|i| {
            (0..n_actions)
                .map(|a| grid.point(cells[i * n_actions + a]).clone())
                .collect()
        })
        .collect();
    ReportMatrix::new(rows).expect("grid profile has consistent shape")
}

/// Samples `trials` random grid profiles and hypothesis-satisfying
/// perturbations, stopping at the first counterexample.
pub fn check_condition<F>(
    rule: F,
    instance: &Instance,
    condition: Condition,
    trials: usize,
    seed: u64,
) -> ConditionReport
where
    F: Fn(&ReportMatrix) -> ActionDistribution,
{
    let grid = SimplexGrid::new(instance.n_outcomes, SAMPLING_RESOLUTION)
        .expect("sampling grid is valid");
    let (n, m) = (instance.n_agents, instance.n_actions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checker = Checker {
        rule,
        instance,
        condition,
        cases: 0,
    };

    for _ in 0..trials {
        let cells: Vec<usize> = (0..n * m).map(|_| rng.random_range(0..grid.len())).collect();
        let before = profile_from_cells(&grid, n, m, &cells);
        let d_before = (checker.rule)(&before);
        let agent = rng.random_range(0..n);
        let mut after = before.clone();

        let actions: Vec<usize> = match condition {
            Condition::ImprovedSubsetKeepsSupport => {
                let mut subset: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.5)).collect();
                if subset.is_empty() {
                    subset.push(rng.random_range(0..m));
                }
                let mut ok = true;
                for &a in &subset {
                    let current = before.get(agent, a);
                    let better: Vec<&OutcomeDistribution> = grid
                        .points()
                        .iter()
                        .filter(|p| checker.ordering(p, current) == Ordering::Greater)
                        .collect();
                    match better.choose(&mut rng) {
                        Some(p) => after.set(agent, a, (*p).clone()).expect("shape"),
                        None => ok = false,
                    }
                }
                if !ok {
                    continue;
                }
                subset
            }
            Condition::WorsenedPredictionKeepsOthers => {
                let a = rng.random_range(0..m);
                let current = before.get(agent, a);
                let worse: Vec<&OutcomeDistribution> = grid
                    .points()
                    .iter()
                    .filter(|p| checker.ordering(p, current) == Ordering::Less)
                    .collect();
                let Some(p) = worse.choose(&mut rng) else {
                    continue;
                };
                after.set(agent, a, (*p).clone()).expect("shape");
                vec![a]
            }
            Condition::ZeroProbabilityChangeIsInert => {
                // Aim at unsupported actions so the hypothesis is usually met.
                let unsupported: Vec<usize> = (0..m).filter(|&a| !d_before.is_supported(a)).collect();
                let Some(&a) = unsupported.choose(&mut rng) else {
                    continue;
                };
                let p = grid.point(rng.random_range(0..grid.len()));
                after.set(agent, a, p.clone()).expect("shape");
                vec![a]
            }
        };

        if let Some(cx) = checker.test(&before, &d_before, &after, agent, &actions) {
            return checker.finish(Some(cx));
        }
    }
    checker.finish(None)
}

/// Visits every grid profile and every hypothesis-satisfying single-agent
/// perturbation on the same grid.
pub fn check_condition_exhaustive<F>(
    rule: F,
    instance: &Instance,
    condition: Condition,
    grid: &SimplexGrid,
) -> Result<ConditionReport>
where
    F: Fn(&ReportMatrix) -> ActionDistribution,
{
    let (n, m, g) = (instance.n_agents, instance.n_actions, grid.len());
    if grid.n_outcomes() != instance.n_outcomes {
        return Err(Error::DimensionMismatch {
            what: "grid outcomes",
            expected: instance.n_outcomes,
            actual: grid.n_outcomes(),
        });
    }
    let profiles = (g as u128).pow((n * m) as u32);
    let per_profile = match condition {
        Condition::ImprovedSubsetKeepsSupport => (n as u128) * (g as u128 + 1).pow(m as u32),
        _ => (n * m * g) as u128,
    };
    let size = profiles.saturating_mul(per_profile);
    if size > EXHAUSTIVE_BUDGET {
        return Err(Error::BudgetExceeded {
            size,
            budget: EXHAUSTIVE_BUDGET,
        });
    }

    // better[x] / worse[x]: grid points strictly above / below point x
    let ordering = |x: usize, y: usize| {
        instance
            .pref
            .compare(grid.point(x).probs(), grid.point(y).probs())
    };
    let better: Vec<Vec<usize>> = (0..g)
        .map(|x| (0..g).filter(|&y| ordering(y, x) == Ordering::Greater).collect())
        .collect();
    let worse: Vec<Vec<usize>> = (0..g)
        .map(|x| (0..g).filter(|&y| ordering(y, x) == Ordering::Less).collect())
        .collect();

    let mut checker = Checker {
        rule,
        instance,
        condition,
        cases: 0,
    };
    let mut cells = vec![0usize; n * m];
    loop {
        let before = profile_from_cells(grid, n, m, &cells);
        let d_before = (checker.rule)(&before);
        for agent in 0..n {
            let own = &cells[agent * m..(agent + 1) * m];
            match condition {
                Condition::ImprovedSubsetKeepsSupport => {
                    for mask in 1u32..(1 << m) {
                        let subset: Vec<usize> = (0..m).filter(|a| mask & (1 << a) != 0).collect();
                        let choices: Vec<&Vec<usize>> = subset.iter().map(|&a| &better[own[a]]).collect();
                        if choices.iter().any(|c| c.is_empty()) {
                            continue;
                        }
                        let mut pick = vec![0usize; subset.len()];
                        loop {
                            let mut after = before.clone();
                            for (slot, &a) in subset.iter().enumerate() {
                                after
                                    .set(agent, a, grid.point(choices[slot][pick[slot]]).clone())
                                    .expect("shape");
                            }
                            if let Some(cx) = checker.test(&before, &d_before, &after, agent, &subset) {
                                return Ok(checker.finish(Some(cx)));
                            }
                            if !advance(&mut pick, |slot| choices[slot].len()) {
                                break;
                            }
                        }
                    }
                }
                Condition::WorsenedPredictionKeepsOthers | Condition::ZeroProbabilityChangeIsInert => {
                    for a in 0..m {
                        let candidates: Vec<usize> = if condition == Condition::WorsenedPredictionKeepsOthers {
                            worse[own[a]].clone()
                        } else {
                            (0..g).filter(|&y| y != own[a]).collect()
                        };
                        for y in candidates {
                            let mut after = before.clone();
                            after.set(agent, a, grid.point(y).clone()).expect("shape");
                            if let Some(cx) = checker.test(&before, &d_before, &after, agent, &[a]) {
                                return Ok(checker.finish(Some(cx)));
                            }
                        }
                    }
                }
            }
        }
        if !advance(&mut cells, |_| g) {
            break;
        }
    }
    Ok(checker.finish(None))
}

/// Odometer increment; returns false once every digit has wrapped.
pub(crate) fn advance(digits: &mut [usize], radix: impl Fn(usize) -> usize) -> bool {
    for slot in (0..digits.len()).rev() {
        digits[slot] += 1;
        if digits[slot] < radix(slot) {
            return true;
        }
        digits[slot] = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::DecisionRuleSpec;
    use crate::domain::{GroundTruth, Preference};

    fn small_instance() -> Instance {
        let truth = GroundTruth::from_rows(&[vec![0.5, 0.5], vec![0.25, 0.75]]).unwrap();
        Instance::new(truth, Preference::new(vec![1.0, 0.0]).unwrap(), 2).unwrap()
    }

    #[test]
    fn random_max_meets_condition_two_exhaustively() {
        let inst = small_instance();
        let grid = SimplexGrid::new(2, 4).unwrap();
        let rule = DecisionRuleSpec::RandomMax;
        let report = check_condition_exhaustive(
            |r| rule.decide(r, &inst.pref),
            &inst,
            Condition::WorsenedPredictionKeepsOthers,
            &grid,
        )
        .unwrap();
        assert!(report.passed, "{:?}", report.counterexample);
        assert!(report.cases_checked > 0);
    }

    #[test]
    fn restricted_optimistic_meets_all_conditions_exhaustively() {
        let inst = small_instance();
        let grid = SimplexGrid::new(2, 4).unwrap();
        for k in 1..=2 {
            let rule = DecisionRuleSpec::RestrictedOptimistic { k };
            for c in Condition::ALL {
                let report =
                    check_condition_exhaustive(|r| rule.decide(r, &inst.pref), &inst, c, &grid).unwrap();
                assert!(report.passed, "k={k} {c:?}: {:?}", report.counterexample);
            }
        }
    }

    #[test]
    fn sampled_checks_pass_for_regular_rules() {
        let truth = GroundTruth::from_rows(&[vec![0.5, 0.3, 0.2], vec![0.25, 0.5, 0.25], vec![0.1, 0.1, 0.8]])
            .unwrap();
        let inst = Instance::new(truth, Preference::new(vec![1.0, 0.5, 0.0]).unwrap(), 3).unwrap();
        let rule = DecisionRuleSpec::RestrictedOptimistic { k: 2 };
        for c in Condition::ALL {
            let report = check_condition(|r| rule.decide(r, &inst.pref), &inst, c, 2000, 7);
            assert!(report.passed, "{c:?}: {:?}", report.counterexample);
            assert!(report.cases_checked > 100);
        }
    }

    fn fingerprint(r: &ReportMatrix) -> usize {
        use std::hash::{DefaultHasher, Hash, Hasher};
        let mut h = DefaultHasher::new();
        for p in r.to_nested().iter().flatten().flatten() {
            p.to_bits().hash(&mut h);
        }
        h.finish() as usize
    }

    #[test]
    fn broken_rule_yields_counterexample() {
        let truth = GroundTruth::from_rows(&[vec![0.5, 0.5], vec![0.25, 0.75], vec![0.75, 0.25]]).unwrap();
        let inst = Instance::new(truth, Preference::new(vec![1.0, 0.0]).unwrap(), 2).unwrap();
        let grid = SimplexGrid::new(2, 4).unwrap();
        // support jumps with any change to the reports
        let broken = |r: &ReportMatrix| ActionDistribution::point(3, fingerprint(r) % 3);
        for c in Condition::ALL {
            let report = check_condition_exhaustive(broken, &inst, c, &grid).unwrap();
            assert!(!report.passed, "{c:?} should fail");
            let cx = report.counterexample.unwrap();
            assert_ne!(cx.before, cx.after);
        }
        let sampled = check_condition(broken, &inst, Condition::WorsenedPredictionKeepsOthers, 500, 1);
        assert!(!sampled.passed);
    }

    #[test]
    fn condition_numbers_round_trip() {
        for c in Condition::ALL {
            assert_eq!(Condition::from_number(c.number()).unwrap(), c);
        }
        assert!(Condition::from_number(4).is_err());
    }
}
