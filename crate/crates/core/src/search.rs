//! Searching a large action space with a few pairwise comparisons between
//! action subsets.
//!
//! Each round elicits, from every agent, a prediction conditional on each of
//! two subsets being selected, and lets the decision rule pick a subset. The
//! prediction for a subset refers to its best inner action, which is where
//! honest recursion ends up.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decision::{ActionDistribution, DecisionRuleSpec};
use crate::domain::{argmax_action, GroundTruth, Instance, OutcomeDistribution, Preference, ReportMatrix};
use crate::error::{Error, Result};
use crate::scoring::{BaseRule, Score, Target, ZeroSumRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedResponse {
    pub subset: Vec<usize>,
    pub prediction: OutcomeDistribution,
}

/// An agent answering subset-conditional queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentOracle {
    /// Reports the truth for the preference-best action of each subset.
    Honest { truth: GroundTruth, pref: Preference },
    /// Fixed answers per subset; anything unscripted goes to `fallback`.
    Scripted {
        responses: Vec<ScriptedResponse>,
        #[serde(default)]
        pointer: Option<usize>,
        #[serde(default)]
        fallback: Option<Box<AgentOracle>>,
    },
}

impl AgentOracle {
    pub fn honest(truth: &GroundTruth, pref: &Preference) -> Self {
        AgentOracle::Honest {
            truth: truth.clone(),
            pref: pref.clone(),
        }
    }

    /// Prediction conditional on `subset` being selected.
    pub fn predict(&self, subset: &[usize]) -> Result<OutcomeDistribution> {
        match self {
            AgentOracle::Honest { truth, pref } => Ok(subset_truth(truth, pref, subset)?.clone()),
            AgentOracle::Scripted {
                responses, fallback, ..
            } => {
                if let Some(r) = responses.iter().find(|r| r.subset == subset) {
                    return Ok(r.prediction.clone());
                }
                match fallback {
                    Some(f) => f.predict(subset),
                    None => Err(Error::param(format!("no scripted response for subset {subset:?}"))),
                }
            }
        }
    }

    /// The action this agent names as the one that will be chosen.
    pub fn point(&self, actions: &[usize]) -> Result<usize> {
        match self {
            AgentOracle::Honest { truth, pref } => best_in(truth, pref, actions),
            AgentOracle::Scripted {
                pointer: Some(a), ..
            } => Ok(*a),
            AgentOracle::Scripted {
                fallback: Some(f), ..
            } => f.point(actions),
            AgentOracle::Scripted { .. } => Err(Error::param("scripted oracle has no pointer")),
        }
    }
}

fn best_in(truth: &GroundTruth, pref: &Preference, subset: &[usize]) -> Result<usize> {
    if subset.is_empty() {
        return Err(Error::param("empty action subset"));
    }
    for &a in subset {
        if a >= truth.n_actions() {
            return Err(Error::OutOfRange {
                what: "actions",
                index: a,
                len: truth.n_actions(),
            });
        }
    }
    let local = argmax_action(subset.len(), pref, |i| truth.action(subset[i]).probs());
    Ok(subset[local])
}

/// Truth distribution of a subset: that of its preference-best action.
pub fn subset_truth<'a>(
    truth: &'a GroundTruth,
    pref: &Preference,
    subset: &[usize],
) -> Result<&'a OutcomeDistribution> {
    Ok(truth.action(best_in(truth, pref, subset)?))
}

/// The two-action instance faced in a single round.
pub fn round_instance(
    truth: &GroundTruth,
    pref: &Preference,
    first: &[usize],
    second: &[usize],
    n_agents: usize,
) -> Result<Instance> {
    let rows = vec![
        subset_truth(truth, pref, first)?.clone(),
        subset_truth(truth, pref, second)?.clone(),
    ];
    Instance::new(GroundTruth::new(rows)?, pref.clone(), n_agents)
}

/// Decision rule, scoring rule and preference of the principal running a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Principal {
    pub decision: DecisionRuleSpec,
    pub mechanism: ZeroSumRule,
    pub pref: Preference,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchRound {
    pub subsets: [Vec<usize>; 2],
    /// `reports[i][s]`: agent `i`'s prediction conditional on subset `s`.
    pub reports: Vec<Vec<Vec<f64>>>,
    pub decision: ActionDistribution,
    /// 0 or 1.
    pub chosen: usize,
    /// Expected zero-sum scores at the chosen subset, when the truth is known.
    pub scores: Option<Vec<Score>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchTrace {
    pub rounds: Vec<SearchRound>,
    pub comparisons: usize,
    pub result: usize,
    pub pointer: Option<usize>,
    pub pointer_confirmed: Option<bool>,
}

fn check_setup(actions: &[usize], agents: &[AgentOracle], principal: &Principal) -> Result<()> {
    if actions.is_empty() {
        return Err(Error::param("empty action set"));
    }
    if agents.len() < 2 {
        return Err(Error::param("search needs at least two agents"));
    }
    if principal.mechanism.constant != 0.0 {
        return Err(Error::param("search requires the zero-sum constant to be 0"));
    }
    principal.decision.validate(agents.len(), 2)
}

fn compare<G: Rng + ?Sized>(
    first: &[usize],
    second: &[usize],
    agents: &[AgentOracle],
    principal: &Principal,
    truth: Option<&GroundTruth>,
    rng: &mut G,
) -> Result<SearchRound> {
    let rows = agents
        .iter()
        .map(|o| Ok(vec![o.predict(first)?, o.predict(second)?]))
        .collect::<Result<Vec<_>>>()?;
    let reports = ReportMatrix::new(rows)?;
    let decision = principal.decision.decide(&reports, &principal.pref);
    let chosen = if principal.decision.is_deterministic() {
        decision.mode()
    } else {
        decision.sample(rng)
    };
    let scores = truth
        .map(|t| {
            let meta = GroundTruth::new(vec![
                subset_truth(t, &principal.pref, first)?.clone(),
                subset_truth(t, &principal.pref, second)?.clone(),
            ])?;
            crate::scoring::zero_sum_scores(&principal.mechanism, chosen, &reports, Target::Expected(&meta))
                .map(|s| s.per_agent)
        })
        .transpose()?;
    Ok(SearchRound {
        subsets: [first.to_vec(), second.to_vec()],
        reports: reports.to_nested(),
        decision,
        chosen,
        scores,
    })
}

fn halve(
    mut current: Vec<usize>,
    agents: &[AgentOracle],
    principal: &Principal,
    truth: Option<&GroundTruth>,
    rng: &mut (impl Rng + ?Sized),
    rounds: &mut Vec<SearchRound>,
) -> Result<usize> {
    while current.len() > 1 {
        let second = current.split_off(current.len().div_ceil(2));
        let round = compare(&current, &second, agents, principal, truth, rng)?;
        if round.chosen == 1 {
            current = second;
        }
        rounds.push(round);
    }
    Ok(current[0])
}

/// Repeatedly splits the candidates by index (the first `⌈m/2⌉` go to the
/// first half) and keeps the half the decision rule picks.
///
/// `truth`, when given, is used only to record each round's expected scores.
pub fn binary_action_search<G: Rng + ?Sized>(
    actions: &[usize],
    agents: &[AgentOracle],
    principal: &Principal,
    truth: Option<&GroundTruth>,
    rng: &mut G,
) -> Result<(usize, SearchTrace)> {
    check_setup(actions, agents, principal)?;
    let mut rounds = Vec::new();
    let result = halve(actions.to_vec(), agents, principal, truth, rng, &mut rounds)?;
    Ok((
        result,
        SearchTrace {
            comparisons: rounds.len(),
            rounds,
            result,
            pointer: None,
            pointer_confirmed: None,
        },
    ))
}

/// Asks `pointer_agent` which action will be chosen and compares that action
/// against all others. If the pointer is rejected, the remaining actions are
/// searched by halving.
pub fn constant_comparison_search<G: Rng + ?Sized>(
    actions: &[usize],
    agents: &[AgentOracle],
    principal: &Principal,
    pointer_agent: &AgentOracle,
    truth: Option<&GroundTruth>,
    rng: &mut G,
) -> Result<(usize, SearchTrace)> {
    check_setup(actions, agents, principal)?;
    if actions.len() == 1 {
        return Ok((
            actions[0],
            SearchTrace {
                rounds: Vec::new(),
                comparisons: 0,
                result: actions[0],
                pointer: None,
                pointer_confirmed: None,
            },
        ));
    }
    let named = pointer_agent.point(actions)?;
    if !actions.contains(&named) {
        return Err(Error::param(format!("pointer named action {named} outside the action set")));
    }
    let rest: Vec<usize> = actions.iter().copied().filter(|&a| a != named).collect();
    let first = compare(&[named], &rest, agents, principal, truth, rng)?;
    let confirmed = first.chosen == 0;
    let mut rounds = vec![first];
    let result = if confirmed {
        named
    } else {
        halve(rest, agents, principal, truth, rng, &mut rounds)?
    };
    Ok((
        result,
        SearchTrace {
            comparisons: rounds.len(),
            rounds,
            result,
            pointer: Some(named),
            pointer_confirmed: Some(confirmed),
        },
    ))
}

/// Number of halving rounds before `target` (a position in `0..m`) is isolated.
pub fn halving_path_length(m: usize, target: usize) -> usize {
    let (mut lo, mut len, mut depth) = (0, m, 0);
    while len > 1 {
        let first = len.div_ceil(2);
        if target < lo + first {
            len = first;
        } else {
            lo += first;
            len -= first;
        }
        depth += 1;
    }
    depth
}

/// Random truth rows (normalized uniform weights) and uniform `[0, 1]` utilities.
pub fn random_truth(seed: u64, n_actions: usize, n_outcomes: usize) -> Result<(GroundTruth, Preference)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n_actions)
        .map(|_| {
            let w: Vec<f64> = (0..n_outcomes).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = w.iter().sum();
            OutcomeDistribution::new(w.iter().map(|x| x / s).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let u = (0..n_outcomes).map(|_| rng.random::<f64>()).collect();
    Ok((GroundTruth::new(rows)?, Preference::new(u)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Binary,
    Constant,
}

/// Honest agents on a random instance, an optimistic principal with zero-sum log scoring.
pub fn demo_search(
    seed: u64,
    n_actions: usize,
    n_outcomes: usize,
    n_agents: usize,
    mode: SearchMode,
) -> Result<SearchTrace> {
    let (truth, pref) = random_truth(seed, n_actions, n_outcomes)?;
    let agents = vec![AgentOracle::honest(&truth, &pref); n_agents];
    let principal = Principal {
        decision: DecisionRuleSpec::OptimisticMax,
        mechanism: ZeroSumRule::new(BaseRule::log()),
        pref: pref.clone(),
    };
    let actions: Vec<usize> = (0..n_actions).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (_, trace) = match mode {
        SearchMode::Binary => binary_action_search(&actions, &agents, &principal, Some(&truth), &mut rng)?,
        SearchMode::Constant => {
            constant_comparison_search(&actions, &agents, &principal, &agents[0], Some(&truth), &mut rng)?
        }
    };
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::best_action;
    use crate::equilibrium::{audit, AuditOptions, SimplexGrid};

    fn principal(pref: &Preference) -> Principal {
        Principal {
            decision: DecisionRuleSpec::OptimisticMax,
            mechanism: ZeroSumRule::new(BaseRule::log()),
            pref: pref.clone(),
        }
    }


    #[test]
    fn honest_search_finds_best_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let m = rng.random_range(2..=16);
            let o = rng.random_range(2..=4);
            let (truth, pref) = random_truth(rng.random(), m, o).unwrap();
            let a_star = best_action(&truth, &pref);
            let agents = vec![AgentOracle::honest(&truth, &pref); 2];
            let actions: Vec<usize> = (0..m).collect();
            let p = principal(&pref);
            let (a, trace) = binary_action_search(&actions, &agents, &p, Some(&truth), &mut rng).unwrap();
            assert_eq!(a, a_star);
            assert_eq!(trace.comparisons, trace.rounds.len());
            assert_eq!(trace.comparisons, halving_path_length(m, a_star));
            assert!(trace.comparisons <= (m as f64).log2().ceil() as usize);
            for r in &trace.rounds {
                for s in r.scores.as_ref().unwrap() {
                    assert!(s.cmp_tol(Score::ZERO, 1e-12).is_eq());
                }
            }
            let (a, trace) =
                constant_comparison_search(&actions, &agents, &p, &agents[0], Some(&truth), &mut rng).unwrap();
            assert_eq!(a, a_star);
            assert_eq!(trace.comparisons, 1);
            assert_eq!(trace.pointer_confirmed, Some(true));
        }
    }

    #[test]
    fn eight_actions_take_three_rounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (truth, pref) = random_truth(rng.random(), 8, 3).unwrap();
        let agents = vec![AgentOracle::honest(&truth, &pref); 3];
        let actions: Vec<usize> = (0..8).collect();
        let (a, trace) = binary_action_search(&actions, &agents, &principal(&pref), None, &mut rng).unwrap();
        assert_eq!(a, best_action(&truth, &pref));
        assert_eq!(trace.comparisons, 3);
        assert_eq!(trace.rounds[0].subsets, [vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
    }

    #[test]
    fn five_actions_split_three_then_two() {
        // best action first, so the search walks the larger half every time
        let truth = GroundTruth::from_rows(&[
            vec![0.9, 0.1],
            vec![0.5, 0.5],
            vec![0.3, 0.7],
            vec![0.2, 0.8],
            vec![0.1, 0.9],
        ])
        .unwrap();
        let pref = Preference::new(vec![1.0, 0.0]).unwrap();
        let agents = vec![AgentOracle::honest(&truth, &pref); 2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, trace) = binary_action_search(&[0, 1, 2, 3, 4], &agents, &principal(&pref), None, &mut rng).unwrap();
        assert_eq!(a, 0);
        assert_eq!(trace.comparisons, 3);
        let sizes: Vec<(usize, usize)> = trace
            .rounds
            .iter()
            .map(|r| (r.subsets[0].len(), r.subsets[1].len()))
            .collect();
        assert_eq!(sizes, vec![(3, 2), (2, 1), (1, 1)]);
    }

    #[test]
    fn demo_runs_both_modes() {
        let t = demo_search(4, 8, 3, 2, SearchMode::Binary).unwrap();
        assert_eq!(t.comparisons, 3);
        let (truth, pref) = random_truth(4, 8, 3).unwrap();
        assert_eq!(t.result, best_action(&truth, &pref));
        let c = demo_search(4, 8, 3, 3, SearchMode::Constant).unwrap();
        assert_eq!((c.comparisons, c.result, c.pointer_confirmed), (1, t.result, Some(true)));
    }

    #[test]
    fn single_action_needs_no_comparisons() {
        let inst = Instance::two_action_example(2);
        let agents = vec![AgentOracle::honest(&inst.truth, &inst.pref); 2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = principal(&inst.pref);
        let (a, t) = binary_action_search(&[1], &agents, &p, None, &mut rng).unwrap();
        assert_eq!((a, t.comparisons), (1, 0));
        let (a, t) = constant_comparison_search(&[1], &agents, &p, &agents[0], None, &mut rng).unwrap();
        assert_eq!((a, t.comparisons), (1, 0));
        assert!(binary_action_search(&[], &agents, &p, None, &mut rng).is_err());
    }

    #[test]
    fn rejected_pointer_falls_back_to_halving() {
        let truth = GroundTruth::from_rows(&[
            vec![0.5, 0.5],
            vec![0.25, 0.75],
            vec![0.75, 0.25],
            vec![0.0, 1.0],
        ])
        .unwrap();
        let pref = Preference::new(vec![1.0, 0.0]).unwrap();
        let agents = vec![AgentOracle::honest(&truth, &pref); 2];
        let liar = AgentOracle::Scripted {
            responses: vec![],
            pointer: Some(1),
            fallback: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, trace) =
            constant_comparison_search(&[0, 1, 2, 3], &agents, &principal(&pref), &liar, None, &mut rng).unwrap();
        assert_eq!(a, 2);
        assert_eq!(trace.pointer, Some(1));
        assert_eq!(trace.pointer_confirmed, Some(false));
        assert_eq!(trace.rounds[0].chosen, 1);
        assert!(trace.comparisons <= 1 + 2);

        let outside = AgentOracle::Scripted {
            responses: vec![],
            pointer: Some(9),
            fallback: None,
        };
        assert!(constant_comparison_search(&[0, 1, 2, 3], &agents, &principal(&pref), &outside, None, &mut rng)
            .is_err());
    }

    #[test]
    fn setup_is_validated() {
        let inst = Instance::two_action_example(2);
        let agents = vec![AgentOracle::honest(&inst.truth, &inst.pref); 2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = principal(&inst.pref);
        assert!(binary_action_search(&[0, 1], &agents[..1], &p, None, &mut rng).is_err());
        p.mechanism = p.mechanism.with_constant(1.0);
        assert!(binary_action_search(&[0, 1], &agents, &p, None, &mut rng).is_err());
    }

    #[test]
    fn scripted_oracle_answers_from_table() {
        let inst = Instance::two_action_example(2);
        let o = AgentOracle::Scripted {
            responses: vec![ScriptedResponse {
                subset: vec![0],
                prediction: OutcomeDistribution::new(vec![0.1, 0.9]).unwrap(),
            }],
            pointer: None,
            fallback: Some(Box::new(AgentOracle::honest(&inst.truth, &inst.pref))),
        };
        assert_eq!(o.predict(&[0]).unwrap().probs(), &[0.1, 0.9]);
        assert_eq!(o.predict(&[1]).unwrap().probs(), &[0.25, 0.75]);
        assert_eq!(o.point(&[0, 1]).unwrap(), 0);
    }

    #[test]
    fn honest_subset_reports_are_equilibria_in_every_round() {
        let truth = GroundTruth::from_rows(&[
            vec![0.25, 0.75],
            vec![0.5, 0.5],
            vec![1.0, 0.0],
            vec![0.75, 0.25],
        ])
        .unwrap();
        let pref = Preference::new(vec![1.0, 0.0]).unwrap();
        let agents = vec![AgentOracle::honest(&truth, &pref); 2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = principal(&pref);
        let (_, trace) = binary_action_search(&[0, 1, 2, 3], &agents, &p, None, &mut rng).unwrap();
        let grid = SimplexGrid::new(2, 4).unwrap();
        for r in &trace.rounds {
            let inst = round_instance(&truth, &pref, &r.subsets[0], &r.subsets[1], 2).unwrap();
            let report = audit(
                &crate::scoring::Mechanism::ZeroSum(p.mechanism),
                &p.decision,
                &inst,
                &grid,
                AuditOptions::default(),
            )
            .unwrap();
            assert!(report.honest_is_equilibrium);
            assert!(report.quasi_strict());
        }
    }
}
