use rayon::prelude::*;
use serde::Serialize;

use super::{Game, Profile, SimplexGrid, DEFAULT_TOLERANCE};
use crate::decision::{ActionDistribution, DecisionRuleSpec};
use crate::domain::{best_action, GroundTruth, Instance};
use crate::error::{Error, Result};
use crate::scoring::{Mechanism, Score};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditOptions {
    /// Maximum number of profiles to enumerate.
    pub budget: u128,
    pub tol: f64,
    /// Keep only equilibria that survive coalition deviations.
    pub strong: bool,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            budget: 10_000_000,
            tol: DEFAULT_TOLERANCE,
            strong: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumRecord {
    pub cells: Vec<usize>,
    pub reports: Vec<Vec<Vec<f64>>>,
    pub decision: ActionDistribution,
    pub scores: Vec<Score>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Honest reporting admits a profitable deviation.
    HonestNotEquilibrium,
    /// An equilibrium puts probability on an action other than the best one.
    EquilibriumAvoidsBestAction,
    /// An equilibrium has some agent misreporting the best action.
    EquilibriumDishonestAtBestAction,
    /// An equilibrium other than honest reporting exists.
    ExtraEquilibrium,
}

/// A single agent moving from `from` to a new row.
#[derive(Debug, Clone, Serialize)]
pub struct Deviation {
    pub agent: usize,
    pub from: Vec<Vec<Vec<f64>>>,
    pub to_row: Vec<Vec<f64>>,
    pub score_before: Score,
    pub score_after: Score,
    pub gain: Score,
}

#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub kind: ViolationKind,
    pub profile: EquilibriumRecord,
    /// For an honest profile that is not an equilibrium, its best improving
    /// deviation. For a bad equilibrium, a profitable move into it from the
    /// profile where the deviating agent reported honestly.
    pub deviation: Option<Deviation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub mechanism: String,
    pub decision: String,
    pub instance: Instance,
    pub grid_resolution: usize,
    pub strong: bool,
    pub profiles_checked: u64,
    pub a_star: usize,
    pub honest_is_equilibrium: bool,
    pub equilibrium_count: usize,
    pub equilibria: Vec<EquilibriumRecord>,
    /// Every equilibrium takes the best action with probability 1.
    pub all_choose_a_star: bool,
    /// Every equilibrium has all agents truthful about the best action.
    pub all_honest_at_a_star: bool,
    /// Honest reporting is the only equilibrium.
    pub only_honest: bool,
    /// Every equilibrium is truthful on every action it can take.
    pub all_honest_on_support: bool,
    /// Every equilibrium induces the same action distribution as honesty.
    pub all_match_honest_decision: bool,
    pub honest_decision: ActionDistribution,
    pub max_abs_equilibrium_score: f64,
    pub counterexample: Option<Counterexample>,
}

impl AuditReport {
    /// Honest is an equilibrium; all equilibria take `a*` and are honest there.
    pub fn quasi_strict(&self) -> bool {
        self.honest_is_equilibrium && self.all_choose_a_star && self.all_honest_at_a_star
    }

    /// Honest reporting is the unique equilibrium.
    pub fn strict(&self) -> bool {
        self.honest_is_equilibrium && self.only_honest
    }
}

fn snap_truth(truth: &GroundTruth, grid: &SimplexGrid) -> Result<(GroundTruth, Vec<usize>)> {
    let mut cells = Vec::with_capacity(truth.n_actions());
    for (a, q) in truth.per_action().iter().enumerate() {
        let c = grid.index_of(q.probs()).ok_or_else(|| {
            Error::param(format!(
                "truth for action {a} is not on the resolution-{} grid",
                grid.resolution()
            ))
        })?;
        cells.push(c);
    }
    let snapped = GroundTruth::new(cells.iter().map(|&c| grid.point(c).clone()).collect())?;
    Ok((snapped, cells))
}

struct Indexing {
    n_agents: usize,
    rows_per_agent: u64,
}

impl Indexing {
    fn rows(&self, mut idx: u64, out: &mut [u64]) {
        for slot in out.iter_mut().rev() {
            *slot = idx % self.rows_per_agent;
            idx /= self.rows_per_agent;
        }
    }

    /// Index of the other agents' rows once `agent` is dropped.
    fn key_without(&self, rows: &[u64], agent: usize) -> usize {
        rows.iter()
            .enumerate()
            .filter(|(j, _)| *j != agent)
            .fold(0u64, |acc, (_, &r)| acc * self.rows_per_agent + r) as usize
    }

    fn key_count(&self) -> usize {
        (self.rows_per_agent as usize).pow(self.n_agents as u32 - 1)
    }
}

fn fill_cells(game: &Game<'_>, rows: &[u64], cells: &mut [usize]) {
    let m = game.n_actions();
    for (i, &r) in rows.iter().enumerate() {
        game.decode_row(r as usize, &mut cells[i * m..(i + 1) * m]);
    }
}

const FLOOR: Score = Score {
    infinite: f64::NEG_INFINITY,
    finite: 0.0,
};

/// Enumerates every grid profile, finds all equilibria, and checks them
/// against the properness claims.
pub fn audit(
    mechanism: &Mechanism,
    decision: &DecisionRuleSpec,
    instance: &Instance,
    grid: &SimplexGrid,
    opts: AuditOptions,
) -> Result<AuditReport> {
    let (truth, honest_row) = snap_truth(&instance.truth, grid)?;
    let pref = &instance.pref;
    let n = instance.n_agents;
    let game = Game::new(*mechanism, *decision, &truth, pref, grid, n)?;
    let rows_per_agent = game.rows_per_agent() as u128;
    let total = rows_per_agent
        .checked_pow(n as u32)
        .filter(|t| *t <= opts.budget)
        .ok_or(Error::BudgetExceeded {
            size: rows_per_agent.saturating_pow(n as u32),
            budget: opts.budget,
        })? as u64;
    let ix = Indexing {
        n_agents: n,
        rows_per_agent: rows_per_agent as u64,
    };
    let m = instance.n_actions;
    let tol = opts.tol;

    // Pass 1: each agent's best attainable score against every configuration of the others.
    let maxima = (0..total)
        .into_par_iter()
        .fold(
            || vec![vec![FLOOR; ix.key_count()]; n],
            |mut acc, idx| {
                let mut rows = vec![0u64; n];
                let mut cells = vec![0usize; n * m];
                ix.rows(idx, &mut rows);
                fill_cells(&game, &rows, &mut cells);
                let s = game.scores(&cells);
                for i in 0..n {
                    let slot = &mut acc[i][ix.key_without(&rows, i)];
                    if s[i].exceeds(*slot, 0.0) {
                        *slot = s[i];
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![vec![FLOOR; ix.key_count()]; n],
            |mut a, b| {
                for (xa, xb) in a.iter_mut().zip(b) {
                    for (u, v) in xa.iter_mut().zip(xb) {
                        if v.exceeds(*u, 0.0) {
                            *u = v;
                        }
                    }
                }
                a
            },
        );

    // Pass 2: profiles where every agent is within tol of their best response.
    let mut equilibria: Vec<EquilibriumRecord> = (0..total)
        .into_par_iter()
        .filter_map(|idx| {
            let mut rows = vec![0u64; n];
            let mut cells = vec![0usize; n * m];
            ix.rows(idx, &mut rows);
            fill_cells(&game, &rows, &mut cells);
            let d = game.decide(&cells);
            let s = game.scores_given(&cells, &d);
            let stable = (0..n).all(|i| !maxima[i][ix.key_without(&rows, i)].exceeds(s[i], tol));
            stable.then(|| {
                let profile = Profile::new(n, m, cells).expect("shape");
                EquilibriumRecord {
                    reports: profile.to_nested(grid),
                    cells: profile.cells,
                    decision: d,
                    scores: s,
                }
            })
        })
        .collect();

    if opts.strong {
        let kept: Result<Vec<bool>> = equilibria
            .par_iter()
            .map(|e| {
                let p = Profile::new(n, m, e.cells.clone())?;
                Ok(game.coalition_deviation(&p, tol, 2)?.is_none())
            })
            .collect();
        let kept = kept?;
        let mut it = kept.iter();
        equilibria.retain(|_| *it.next().expect("one flag per equilibrium"));
    }

    let honest = Profile::new(n, m, honest_row.repeat(n))?;
    let honest_decision = game.decide(&honest.cells);
    let honest_is_equilibrium = equilibria.iter().any(|e| e.cells == honest.cells);
    let a_star = best_action(&truth, pref);

    let chooses_a_star = |e: &EquilibriumRecord| e.decision.prob(a_star) >= 1.0 - 1e-9;
    let honest_at = |e: &EquilibriumRecord, a: usize| (0..n).all(|i| e.cells[i * m + a] == honest_row[a]);

    let all_choose_a_star = equilibria.iter().all(chooses_a_star);
    let all_honest_at_a_star = equilibria.iter().all(|e| honest_at(e, a_star));
    let only_honest = equilibria.iter().all(|e| e.cells == honest.cells);
    let all_honest_on_support = equilibria
        .iter()
        .all(|e| e.decision.support().all(|a| honest_at(e, a)));
    let all_match_honest_decision = equilibria
        .iter()
        .all(|e| e.decision.max_abs_diff(&honest_decision) <= 1e-9);
    let max_abs_equilibrium_score = equilibria
        .iter()
        .flat_map(|e| e.scores.iter().map(|s| s.max_abs()))
        .fold(0.0, f64::max);

    let record_of = |p: &Profile| {
        let d = game.decide(&p.cells);
        EquilibriumRecord {
            cells: p.cells.clone(),
            reports: p.to_nested(grid),
            scores: game.scores_given(&p.cells, &d),
            decision: d,
        }
    };

    let counterexample = if !honest_is_equilibrium {
        let deviation = game.improving_deviation(&honest, tol).map(|(agent, row, gain)| {
            let before = game.scores(&honest.cells)[agent];
            Deviation {
                agent,
                from: honest.to_nested(grid),
                to_row: row.iter().map(|&c| grid.point(c).probs().to_vec()).collect(),
                score_before: before,
                score_after: before + gain,
                gain,
            }
        });
        Some(Counterexample {
            kind: ViolationKind::HonestNotEquilibrium,
            profile: record_of(&honest),
            deviation,
        })
    } else {
        let bad = equilibria
            .iter()
            .find(|e| !chooses_a_star(e))
            .map(|e| (ViolationKind::EquilibriumAvoidsBestAction, e))
            .or_else(|| {
                equilibria
                    .iter()
                    .find(|e| !honest_at(e, a_star))
                    .map(|e| (ViolationKind::EquilibriumDishonestAtBestAction, e))
            })
            .or_else(|| {
                equilibria
                    .iter()
                    .find(|e| e.cells != honest.cells)
                    .map(|e| (ViolationKind::ExtraEquilibrium, e))
            });
        bad.map(|(kind, e)| {
            let target = Profile::new(n, m, e.cells.clone()).expect("shape");
            Counterexample {
                kind,
                profile: e.clone(),
                deviation: manipulation_into(&game, &target, &honest_row, tol),
            }
        })
    };

    Ok(AuditReport {
        mechanism: mechanism.label(),
        decision: decision.label(),
        instance: Instance::new(truth.clone(), pref.clone(), n)?,
        grid_resolution: grid.resolution(),
        strong: opts.strong,
        profiles_checked: total,
        a_star,
        honest_is_equilibrium,
        equilibrium_count: equilibria.len(),
        equilibria,
        all_choose_a_star,
        all_honest_at_a_star,
        only_honest,
        all_honest_on_support,
        all_match_honest_decision,
        honest_decision,
        max_abs_equilibrium_score,
        counterexample,
    })
}

/// Some agent who, starting from an honest row with everyone else as in
/// `target`, strictly gains by switching to their row in `target`.
fn manipulation_into(game: &Game<'_>, target: &Profile, honest_row: &[usize], tol: f64) -> Option<Deviation> {
    let after = game.scores(&target.cells);
    (0..target.n_agents).find_map(|i| {
        if target.row(i) == honest_row {
            return None;
        }
        let from = target.with_row(i, honest_row);
        let before = game.scores(&from.cells)[i];
        let gain = after[i] - before;
        gain.exceeds(Score::ZERO, tol).then(|| Deviation {
            agent: i,
            from: from.to_nested(game.grid()),
            to_row: target
                .row(i)
                .iter()
                .map(|&c| game.grid().point(c).probs().to_vec())
                .collect(),
            score_before: before,
            score_after: after[i],
            gain,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{BaseRule, ZeroSumRule};

    fn zs() -> Mechanism {
        Mechanism::ZeroSum(ZeroSumRule::new(BaseRule::log()))
    }

    #[test]
    fn optimistic_max_is_quasi_strict_on_example() {
        let inst = Instance::two_action_example(2);
        let grid = SimplexGrid::new(2, 4).unwrap();
        let r = audit(&zs(), &DecisionRuleSpec::OptimisticMax, &inst, &grid, AuditOptions::default()).unwrap();
        assert!(r.honest_is_equilibrium);
        assert!(r.all_choose_a_star);
        assert!(r.all_honest_at_a_star);
        assert!(r.quasi_strict());
        assert!(r.max_abs_equilibrium_score <= 1e-9);
        assert_eq!(r.profiles_checked, 625);
    }

    #[test]
    fn disagreement_seeking_is_strict_on_example() {
        let inst = Instance::two_action_example(2);
        let grid = SimplexGrid::new(2, 4).unwrap();
        let rule = DecisionRuleSpec::DisagreementSeekingMax { tolerance: 0.0 };
        let r = audit(&zs(), &rule, &inst, &grid, AuditOptions::default()).unwrap();
        assert!(r.strict(), "{:?}", r.counterexample);
        assert_eq!(r.equilibrium_count, 1);
    }

    #[test]
    fn independent_log_scoring_fails_with_profitable_manipulation() {
        let inst = Instance::two_action_example(2);
        let grid = SimplexGrid::new(2, 4).unwrap();
        let r = audit(
            &Mechanism::Independent(BaseRule::log()),
            &DecisionRuleSpec::OptimisticMax,
            &inst,
            &grid,
            AuditOptions::default(),
        )
        .unwrap();
        assert!(!r.all_choose_a_star);
        assert!(!r.quasi_strict());
        let cx = r.counterexample.unwrap();
        assert_eq!(cx.kind, ViolationKind::EquilibriumAvoidsBestAction);
        let dev = cx.deviation.expect("explicit improving deviation");
        assert!(dev.gain.exceeds(Score::ZERO, 1e-9));
    }

    #[test]
    fn single_agent_honesty_is_not_an_equilibrium() {
        let inst = Instance::two_action_example(1);
        let grid = SimplexGrid::new(2, 4).unwrap();
        let r = audit(
            &Mechanism::Independent(BaseRule::log()),
            &DecisionRuleSpec::Max { agent: 0 },
            &inst,
            &grid,
            AuditOptions::default(),
        )
        .unwrap();
        assert!(!r.honest_is_equilibrium);
        let cx = r.counterexample.unwrap();
        assert_eq!(cx.kind, ViolationKind::HonestNotEquilibrium);
        assert!(cx.deviation.unwrap().gain.exceeds(Score::ZERO, 1e-9));
    }

    #[test]
    fn budget_and_grid_errors() {
        let inst = Instance::two_action_example(2);
        let grid = SimplexGrid::new(2, 4).unwrap();
        let tight = AuditOptions {
            budget: 100,
            ..Default::default()
        };
        assert!(matches!(
            audit(&zs(), &DecisionRuleSpec::OptimisticMax, &inst, &grid, tight),
            Err(Error::BudgetExceeded { size: 625, budget: 100 })
        ));
        let coarse = SimplexGrid::new(2, 3).unwrap();
        assert!(audit(&zs(), &DecisionRuleSpec::OptimisticMax, &inst, &coarse, AuditOptions::default()).is_err());
    }
}
