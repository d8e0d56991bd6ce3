//! Strictly proper base scoring rules and joint (multi-agent) scoring rules.
//!
//! Log scores can be `-inf`. Expected scores are carried as [`Score`], an
//! extended real `infinite * ∞ + finite`, which is what you get from
//! replacing `log 0` by `-M` and letting `M` grow. Sums and averages of
//! such values stay well defined, so the zero-sum identity holds even when
//! several agents put zero mass on a realized outcome.

use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::domain::{check_len, GroundTruth, ReportView};
use crate::error::{Error, Result};

/// An extended real number `infinite * ∞ + finite`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub infinite: f64,
    pub finite: f64,
}

impl Score {
    pub const ZERO: Score = Score {
        infinite: 0.0,
        finite: 0.0,
    };

    pub fn finite(x: f64) -> Self {
        Score {
            infinite: 0.0,
            finite: x,
        }
    }

    /// Maps `±inf` onto a unit infinite coefficient.
    pub fn from_f64(x: f64) -> Self {
        if x == f64::NEG_INFINITY {
            Score {
                infinite: -1.0,
                finite: 0.0,
            }
        } else if x == f64::INFINITY {
            Score {
                infinite: 1.0,
                finite: 0.0,
            }
        } else {
            Score::finite(x)
        }
    }

    pub fn to_f64(self) -> f64 {
        if self.infinite > 0.0 {
            f64::INFINITY
        } else if self.infinite < 0.0 {
            f64::NEG_INFINITY
        } else {
            self.finite
        }
    }

    pub fn is_finite(self) -> bool {
        self.infinite == 0.0
    }

    /// Lexicographic comparison where components within `tol` count as equal.
    pub fn cmp_tol(self, other: Score, tol: f64) -> Ordering {
        let di = self.infinite - other.infinite;
        if di > tol {
            return Ordering::Greater;
        }
        if di < -tol {
            return Ordering::Less;
        }
        let df = self.finite - other.finite;
        if df > tol {
            Ordering::Greater
        } else if df < -tol {
            Ordering::Less
        } else {
            Ordering::Equal
        }
    }

    /// `self > other + tol` in the extended ordering.
    pub fn exceeds(self, other: Score, tol: f64) -> bool {
        self.cmp_tol(other, tol) == Ordering::Greater
    }

    pub fn max_abs(self) -> f64 {
        self.infinite.abs().max(self.finite.abs())
    }
}

impl Add for Score {
    type Output = Score;
    fn add(self, rhs: Score) -> Score {
        Score {
            infinite: self.infinite + rhs.infinite,
            finite: self.finite + rhs.finite,
        }
    }
}

impl AddAssign for Score {
    fn add_assign(&mut self, rhs: Score) {
        *self = *self + rhs;
    }
}

impl Sub for Score {
    type Output = Score;
    fn sub(self, rhs: Score) -> Score {
        Score {
            infinite: self.infinite - rhs.infinite,
            finite: self.finite - rhs.finite,
        }
    }
}

impl Neg for Score {
    type Output = Score;
    fn neg(self) -> Score {
        Score {
            infinite: -self.infinite,
            finite: -self.finite,
        }
    }
}

impl Mul<f64> for Score {
    type Output = Score;
    fn mul(self, w: f64) -> Score {
        Score {
            infinite: self.infinite * w,
            finite: self.finite * w,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    #[default]
    Log,
    /// `2 p_o - sum p^2`, the Brier score in reward orientation.
    #[serde(alias = "brier")]
    Quadratic,
}

/// A strictly proper single-agent scoring rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BaseRule {
    pub kind: BaseKind,
    /// Probabilities below this are clamped before taking logs; 0 disables.
    #[serde(default)]
    pub log_floor: f64,
}

impl BaseRule {
    pub const MAX_LOG_FLOOR: f64 = 1e-3;

    pub fn log() -> Self {
        BaseRule {
            kind: BaseKind::Log,
            log_floor: 0.0,
        }
    }

    pub fn quadratic() -> Self {
        BaseRule {
            kind: BaseKind::Quadratic,
            log_floor: 0.0,
        }
    }

    pub fn with_log_floor(self, log_floor: f64) -> Result<Self> {
        let rule = BaseRule { log_floor, ..self };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=Self::MAX_LOG_FLOOR).contains(&self.log_floor) {
            return Err(Error::param(format!(
                "log_floor {} outside [0, {}]",
                self.log_floor,
                Self::MAX_LOG_FLOOR
            )));
        }
        Ok(())
    }

    /// Score of `pred` once `outcome` is realized. May be `-inf` for the log rule.
    pub fn score(&self, pred: &[f64], outcome: usize) -> Result<f64> {
        if outcome >= pred.len() {
            return Err(Error::OutOfRange {
                what: "outcomes",
                index: outcome,
                len: pred.len(),
            });
        }
        Ok(self.score_unchecked(pred, outcome))
    }

    fn score_unchecked(&self, pred: &[f64], outcome: usize) -> f64 {
        match self.kind {
            BaseKind::Log => self.clamped_log(pred[outcome]),
            BaseKind::Quadratic => 2.0 * pred[outcome] - sum_sq(pred),
        }
    }

    fn clamped_log(&self, p: f64) -> f64 {
        let p = p.max(self.log_floor);
        if p == 0.0 {
            f64::NEG_INFINITY
        } else {
            p.ln()
        }
    }

    /// Expected score under `truth`, as an extended real.
    pub fn expected_score(&self, pred: &[f64], truth: &[f64]) -> Score {
        debug_assert_eq!(pred.len(), truth.len());
        match self.kind {
            BaseKind::Log => {
                let mut s = Score::ZERO;
                for (&p, &q) in pred.iter().zip(truth) {
                    if q == 0.0 {
                        continue;
                    }
                    let l = self.clamped_log(p);
                    if l == f64::NEG_INFINITY {
                        s.infinite -= q;
                    } else {
                        s.finite += q * l;
                    }
                }
                s
            }
            BaseKind::Quadratic => {
                let inner: f64 = pred.iter().zip(truth).map(|(p, q)| p * q).sum();
                Score::finite(2.0 * inner - sum_sq(pred))
            }
        }
    }

    /// `sum_o truth[o] * score(pred, o)`, with `0 * -inf = 0`.
    pub fn expected(&self, pred: &[f64], truth: &[f64]) -> Result<f64> {
        check_len("truth outcomes", pred.len(), truth.len())?;
        Ok(self.expected_score(pred, truth).to_f64())
    }
}

fn sum_sq(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum()
}

/// `S_i = s(p_i) - mean_{j != i} s(p_j) + c`, scored on the chosen action only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ZeroSumRule {
    pub base: BaseRule,
    #[serde(default)]
    pub constant: f64,
}

impl ZeroSumRule {
    pub fn new(base: BaseRule) -> Self {
        ZeroSumRule {
            base,
            constant: 0.0,
        }
    }

    pub fn with_constant(self, constant: f64) -> Self {
        ZeroSumRule { constant, ..self }
    }

    /// Turns per-agent base scores into zero-sum scores.
    pub fn combine(&self, base: &[Score]) -> Result<Vec<Score>> {
        let n = base.len();
        if n < 2 {
            return Err(Error::param("zero-sum scoring needs at least two agents"));
        }
        let others = (n - 1) as f64;
        Ok((0..n)
            .map(|i| {
                let mut rest = Score::ZERO;
                for (j, s) in base.iter().enumerate() {
                    if j != i {
                        rest += *s;
                    }
                }
                base[i] - rest * (1.0 / others) + Score::finite(self.constant)
            })
            .collect())
    }
}

/// What a joint score is evaluated against.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Expected score under the true distribution of the chosen action.
    Expected(&'a GroundTruth),
    /// Score once this outcome is realized.
    Realized(usize),
}

/// Scores for all agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub per_agent: Vec<Score>,
}

impl ScoreVector {
    pub fn values(&self) -> Vec<f64> {
        self.per_agent.iter().map(|s| s.to_f64()).collect()
    }

    pub fn total(&self) -> Score {
        self.per_agent.iter().fold(Score::ZERO, |acc, s| acc + *s)
    }

    pub fn len(&self) -> usize {
        self.per_agent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_agent.is_empty()
    }
}

fn base_scores<R: ReportView>(
    base: &BaseRule,
    action: usize,
    reports: &R,
    target: Target<'_>,
) -> Result<Vec<Score>> {
    if action >= reports.n_actions() {
        return Err(Error::OutOfRange {
            what: "actions",
            index: action,
            len: reports.n_actions(),
        });
    }
    (0..reports.n_agents())
        .map(|i| {
            let pred = reports.prediction(i, action);
            match target {
                Target::Expected(truth) => {
                    check_len("truth actions", reports.n_actions(), truth.n_actions())?;
                    let q = truth.action(action).probs();
                    check_len("truth outcomes", pred.len(), q.len())?;
                    Ok(base.expected_score(pred, q))
                }
                Target::Realized(o) => base.score(pred, o).map(Score::from_f64),
            }
        })
        .collect()
}

/// Zero-sum joint scores for the chosen `action`.
pub fn zero_sum_scores<R: ReportView>(
    rule: &ZeroSumRule,
    action: usize,
    reports: &R,
    target: Target<'_>,
) -> Result<ScoreVector> {
    if reports.n_agents() < 2 {
        return Err(Error::param("zero-sum scoring needs at least two agents"));
    }
    let base = base_scores(&rule.base, action, reports, target)?;
    Ok(ScoreVector {
        per_agent: rule.combine(&base)?,
    })
}

/// A joint scoring rule: zero-sum, or every agent scored on their own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Mechanism {
    ZeroSum(ZeroSumRule),
    /// Each agent receives the plain base score; with one agent this is the
    /// classic single-predictor setting.
    Independent(BaseRule),
}

impl Mechanism {
    pub fn zero_sum(base: BaseRule) -> Self {
        Mechanism::ZeroSum(ZeroSumRule::new(base))
    }

    pub fn base(&self) -> &BaseRule {
        match self {
            Mechanism::ZeroSum(r) => &r.base,
            Mechanism::Independent(b) => b,
        }
    }

    pub fn min_agents(&self) -> usize {
        match self {
            Mechanism::ZeroSum(_) => 2,
            Mechanism::Independent(_) => 1,
        }
    }

    pub fn combine(&self, base: &[Score]) -> Result<Vec<Score>> {
        match self {
            Mechanism::ZeroSum(r) => r.combine(base),
            Mechanism::Independent(_) => Ok(base.to_vec()),
        }
    }

    pub fn scores<R: ReportView>(
        &self,
        action: usize,
        reports: &R,
        target: Target<'_>,
    ) -> Result<ScoreVector> {
        let base = base_scores(self.base(), action, reports, target)?;
        Ok(ScoreVector {
            per_agent: self.combine(&base)?,
        })
    }

    pub fn label(&self) -> String {
        let base = match self.base().kind {
            BaseKind::Log => "log",
            BaseKind::Quadratic => "quadratic",
        };
        match self {
            Mechanism::ZeroSum(r) if r.constant != 0.0 => {
                format!("zero_sum({base}, c={})", r.constant)
            }
            Mechanism::ZeroSum(_) => format!("zero_sum({base})"),
            Mechanism::Independent(_) => format!("independent({base})"),
        }
    }
}
