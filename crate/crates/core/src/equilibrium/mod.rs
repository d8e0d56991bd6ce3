//! Brute-force equilibrium analysis on discretized prediction simplices.
//!
//! Every agent's report row is drawn from a [`SimplexGrid`], so the game
//! between agents is finite and equilibria can be enumerated exactly.
//! Deviations are restricted to the same grid as the profiles.

mod audit;
mod grid;
pub mod suite;

pub use audit::{audit, AuditOptions, AuditReport, Counterexample, Deviation, EquilibriumRecord, ViolationKind};
pub use grid::{enumerate_grid, SimplexGrid};

use serde::{Deserialize, Serialize};

use crate::decision::{advance, ActionDistribution, DecisionRuleSpec};
use crate::domain::{check_len, GroundTruth, Preference, ReportMatrix, ReportView};
use crate::error::{Error, Result};
use crate::scoring::{Mechanism, Score, ScoreVector, Target};

/// Default tolerance on score improvements.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Largest coalition enumeration `is_strong_equilibrium` will attempt.
pub const STRONG_BUDGET: u128 = 100_000_000;

/// Expected joint scores: exact expectation over the decision distribution.
pub fn expected_scores(
    mechanism: &Mechanism,
    decision: &DecisionRuleSpec,
    reports: &ReportMatrix,
    truth: &GroundTruth,
    pref: &Preference,
) -> Result<ScoreVector> {
    decision.validate(reports.n_agents(), reports.n_actions())?;
    check_len("truth actions", reports.n_actions(), truth.n_actions())?;
    let d = decision.decide(reports, pref);
    let mut total = vec![Score::ZERO; reports.n_agents()];
    for a in d.support() {
        let s = mechanism.scores(a, reports, Target::Expected(truth))?;
        for (acc, v) in total.iter_mut().zip(&s.per_agent) {
            *acc += *v * d.prob(a);
        }
    }
    Ok(ScoreVector { per_agent: total })
}

/// A report profile whose entries are grid indices, agent-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Profile {
    pub n_agents: usize,
    pub n_actions: usize,
    pub cells: Vec<usize>,
}

impl Profile {
    pub fn new(n_agents: usize, n_actions: usize, cells: Vec<usize>) -> Result<Self> {
        check_len("profile cells", n_agents * n_actions, cells.len())?;
        Ok(Self {
            n_agents,
            n_actions,
            cells,
        })
    }

    /// Looks every entry of `reports` up on `grid`.
    pub fn from_reports(reports: &ReportMatrix, grid: &SimplexGrid) -> Result<Self> {
        let mut cells = Vec::with_capacity(reports.n_agents() * reports.n_actions());
        for i in 0..reports.n_agents() {
            for a in 0..reports.n_actions() {
                let p = reports.prediction(i, a);
                cells.push(grid.index_of(p).ok_or_else(|| {
                    Error::param(format!("prediction {p:?} of agent {i} for action {a} is off the grid"))
                })?);
            }
        }
        Self::new(reports.n_agents(), reports.n_actions(), cells)
    }

    pub fn row(&self, agent: usize) -> &[usize] {
        &self.cells[agent * self.n_actions..(agent + 1) * self.n_actions]
    }

    pub fn with_row(&self, agent: usize, row: &[usize]) -> Self {
        let mut out = self.clone();
        out.cells[agent * self.n_actions..(agent + 1) * self.n_actions].copy_from_slice(row);
        out
    }

    pub fn view<'a>(&'a self, grid: &'a SimplexGrid) -> GridProfile<'a> {
        GridProfile {
            grid,
            n_agents: self.n_agents,
            n_actions: self.n_actions,
            cells: &self.cells,
        }
    }

    pub fn to_reports(&self, grid: &SimplexGrid) -> ReportMatrix {
        let rows = (0..self.n_agents)
            .map(|i| self.row(i).iter().map(|&c| grid.point(c).clone()).collect())
            .collect();
        ReportMatrix::new(rows).expect("profile shape is consistent")
    }

    pub fn to_nested(&self, grid: &SimplexGrid) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_agents)
            .map(|i| {
                self.row(i)
                    .iter()
                    .map(|&c| grid.point(c).probs().to_vec())
                    .collect()
            })
            .collect()
    }
}

/// Borrowed [`ReportView`] over grid indices.
#[derive(Clone, Copy)]
pub struct GridProfile<'a> {
    grid: &'a SimplexGrid,
    n_agents: usize,
    n_actions: usize,
    cells: &'a [usize],
}

impl ReportView for GridProfile<'_> {
    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn prediction(&self, agent: usize, action: usize) -> &[f64] {
        self.grid.point(self.cells[agent * self.n_actions + action]).probs()
    }
}

/// The finite game induced by a mechanism, a decision rule, a truth and a grid.
///
/// Expected base scores for every (grid point, action) pair are tabulated
/// up front, so evaluating a profile costs one decision plus table lookups.
pub struct Game<'a> {
    mechanism: Mechanism,
    decision: DecisionRuleSpec,
    pref: &'a Preference,
    grid: &'a SimplexGrid,
    n_agents: usize,
    n_actions: usize,
    table: Vec<Score>,
}

impl<'a> Game<'a> {
    pub fn new(
        mechanism: Mechanism,
        decision: DecisionRuleSpec,
        truth: &GroundTruth,
        pref: &'a Preference,
        grid: &'a SimplexGrid,
        n_agents: usize,
    ) -> Result<Self> {
        let n_actions = truth.n_actions();
        decision.validate(n_agents, n_actions)?;
        mechanism.base().validate()?;
        if n_agents < mechanism.min_agents() {
            return Err(Error::param(format!(
                "{} needs at least {} agents",
                mechanism.label(),
                mechanism.min_agents()
            )));
        }
        check_len("grid outcomes", truth.n_outcomes(), grid.n_outcomes())?;
        check_len("utility entries", truth.n_outcomes(), pref.n_outcomes())?;
        let mut table = Vec::with_capacity(grid.len() * n_actions);
        for p in grid.points() {
            for a in 0..n_actions {
                table.push(mechanism.base().expected_score(p.probs(), truth.action(a).probs()));
            }
        }
        Ok(Self {
            mechanism,
            decision,
            pref,
            grid,
            n_agents,
            n_actions,
            table,
        })
    }

    pub fn grid(&self) -> &SimplexGrid {
        self.grid
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Number of distinct report rows for one agent.
    pub fn rows_per_agent(&self) -> usize {
        self.grid.len().pow(self.n_actions as u32)
    }

    pub(crate) fn view<'b>(&'b self, cells: &'b [usize]) -> GridProfile<'b> {
        GridProfile {
            grid: self.grid,
            n_agents: self.n_agents,
            n_actions: self.n_actions,
            cells,
        }
    }

    pub fn decide(&self, cells: &[usize]) -> ActionDistribution {
        self.decision.decide(&self.view(cells), self.pref)
    }

    pub fn scores_given(&self, cells: &[usize], d: &ActionDistribution) -> Vec<Score> {
        let mut total = vec![Score::ZERO; self.n_agents];
        let mut base = vec![Score::ZERO; self.n_agents];
        for a in d.support() {
            for (i, b) in base.iter_mut().enumerate() {
                *b = self.table[cells[i * self.n_actions + a] * self.n_actions + a];
            }
            let joint = self
                .mechanism
                .combine(&base)
                .expect("agent count validated at construction");
            let w = d.prob(a);
            for (acc, s) in total.iter_mut().zip(joint) {
                *acc += s * w;
            }
        }
        total
    }

    /// Expected score of every agent at the profile `cells`.
    pub fn scores(&self, cells: &[usize]) -> Vec<Score> {
        self.scores_given(cells, &self.decide(cells))
    }

    pub(crate) fn decode_row(&self, mut row: usize, out: &mut [usize]) {
        let g = self.grid.len();
        for slot in out.iter_mut().rev() {
            *slot = row % g;
            row /= g;
        }
    }

    /// Every grid row maximizing `agent`'s expected score, holding the others fixed.
    pub fn best_response(&self, agent: usize, profile: &Profile, tol: f64) -> BestResponse {
        let m = self.n_actions;
        let mut cells = profile.cells.clone();
        let mut values = Vec::with_capacity(self.rows_per_agent());
        for r in 0..self.rows_per_agent() {
            self.decode_row(r, &mut cells[agent * m..(agent + 1) * m]);
            values.push(self.scores(&cells)[agent]);
        }
        let best = values
            .iter()
            .copied()
            .reduce(|a, b| if b.exceeds(a, 0.0) { b } else { a })
            .expect("at least one row");
        let rows = values
            .iter()
            .enumerate()
            .filter(|(_, v)| !best.exceeds(**v, tol))
            .map(|(r, _)| {
                let mut row = vec![0; m];
                self.decode_row(r, &mut row);
                row
            })
            .collect();
        BestResponse { value: best, rows }
    }

    /// The most profitable single-agent deviation gaining more than `tol`.
    pub fn improving_deviation(&self, profile: &Profile, tol: f64) -> Option<(usize, Vec<usize>, Score)> {
        let current = self.scores(&profile.cells);
        let m = self.n_actions;
        let mut best: Option<(usize, Vec<usize>, Score)> = None;
        let mut cells = profile.cells.clone();
        for agent in 0..self.n_agents {
            cells.copy_from_slice(&profile.cells);
            for r in 0..self.rows_per_agent() {
                self.decode_row(r, &mut cells[agent * m..(agent + 1) * m]);
                let gain = self.scores(&cells)[agent] - current[agent];
                if gain.exceeds(Score::ZERO, tol)
                    && best.as_ref().is_none_or(|(_, _, g)| gain.exceeds(*g, 0.0))
                {
                    best = Some((agent, cells[agent * m..(agent + 1) * m].to_vec(), gain));
                }
            }
        }
        best
    }

    /// No agent can gain more than `tol` by switching to another grid row.
    pub fn is_equilibrium(&self, profile: &Profile, tol: f64) -> bool {
        let current = self.scores(&profile.cells);
        let m = self.n_actions;
        let mut cells = profile.cells.clone();
        for agent in 0..self.n_agents {
            cells.copy_from_slice(&profile.cells);
            for r in 0..self.rows_per_agent() {
                self.decode_row(r, &mut cells[agent * m..(agent + 1) * m]);
                if self.scores(&cells)[agent].exceeds(current[agent], tol) {
                    return false;
                }
            }
        }
        true
    }

    fn coalition_evaluations(&self, min_size: usize) -> u128 {
        let rows = self.rows_per_agent() as u128;
        (1u32..(1 << self.n_agents))
            .filter(|mask| mask.count_ones() as usize >= min_size)
            .map(|mask| rows.saturating_pow(mask.count_ones()))
            .fold(0u128, |a, b| a.saturating_add(b))
    }

    /// A coalition deviation leaving every member at least as well off (within
    /// `tol`) and some member better by more than `tol`.
    pub fn coalition_deviation(
        &self,
        profile: &Profile,
        tol: f64,
        min_size: usize,
    ) -> Result<Option<CoalitionDeviation>> {
        if self.n_agents > 3 {
            return Err(Error::param("strong equilibrium checks support at most 3 agents"));
        }
        let size = self.coalition_evaluations(min_size);
        if size > STRONG_BUDGET {
            return Err(Error::BudgetExceeded {
                size,
                budget: STRONG_BUDGET,
            });
        }
        let current = self.scores(&profile.cells);
        let m = self.n_actions;
        let rows = self.rows_per_agent();
        for mask in 1u32..(1 << self.n_agents) {
            let members: Vec<usize> = (0..self.n_agents).filter(|i| mask & (1 << i) != 0).collect();
            if members.len() < min_size {
                continue;
            }
            let mut picks = vec![0usize; members.len()];
            let mut cells = profile.cells.clone();
            loop {
                for (slot, &i) in members.iter().enumerate() {
                    self.decode_row(picks[slot], &mut cells[i * m..(i + 1) * m]);
                }
                let after = self.scores(&cells);
                let weakly = members.iter().all(|&i| !current[i].exceeds(after[i], tol));
                let strictly = members.iter().any(|&i| after[i].exceeds(current[i], tol));
                if weakly && strictly {
                    return Ok(Some(CoalitionDeviation {
                        members: members.clone(),
                        profile: Profile::new(self.n_agents, m, cells)?,
                        before: current,
                        after,
                    }));
                }
                if !advance(&mut picks, |_| rows) {
                    break;
                }
            }
        }
        Ok(None)
    }

    /// No coalition of agents has a jointly profitable grid deviation.
    pub fn is_strong_equilibrium(&self, profile: &Profile, tol: f64) -> Result<bool> {
        Ok(self.coalition_deviation(profile, tol, 1)?.is_none())
    }
}

#[derive(Debug, Clone)]
pub struct BestResponse {
    pub value: Score,
    pub rows: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct CoalitionDeviation {
    pub members: Vec<usize>,
    pub profile: Profile,
    pub before: Vec<Score>,
    pub after: Vec<Score>,
}
