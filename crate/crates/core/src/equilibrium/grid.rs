use crate::domain::OutcomeDistribution;
use crate::error::{Error, Result};

/// Distributions whose probabilities are all multiples of `1 / resolution`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexGrid {
    n_outcomes: usize,
    resolution: usize,
    points: Vec<OutcomeDistribution>,
}

impl SimplexGrid {
    pub fn new(n_outcomes: usize, resolution: usize) -> Result<Self> {
        Ok(Self {
            n_outcomes,
            resolution,
            points: enumerate_grid(n_outcomes, resolution)?,
        })
    }

    pub fn n_outcomes(&self) -> usize {
        self.n_outcomes
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[OutcomeDistribution] {
        &self.points
    }

    pub fn point(&self, index: usize) -> &OutcomeDistribution {
        &self.points[index]
    }

    /// Grid index of `d`, matching entries to within 1e-9.
    pub fn index_of(&self, d: &[f64]) -> Option<usize> {
        if d.len() != self.n_outcomes {
            return None;
        }
        let k = self.resolution as f64;
        let counts: Option<Vec<usize>> = d
            .iter()
            .map(|&p| {
                let c = (p * k).round();
                ((p * k - c).abs() <= 1e-9 * k.max(1.0) && c >= 0.0).then_some(c as usize)
            })
            .collect();
        let counts = counts?;
        if counts.iter().sum::<usize>() != self.resolution {
            return None;
        }
        Some(composition_rank(&counts, self.resolution))
    }
}

/// Lexicographic rank of a composition among all compositions of `k`
/// into `counts.len()` parts.
fn composition_rank(counts: &[usize], k: usize) -> usize {
    let mut rank = 0;
    let mut remaining = k;
    let parts = counts.len();
    for (slot, &c) in counts.iter().enumerate().take(parts - 1) {
        let rest = parts - slot - 1;
        // compositions whose current entry is smaller than c
        for smaller in 0..c {
            rank += binomial(remaining - smaller + rest - 1, rest - 1);
        }
        remaining -= c;
    }
    rank
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// All compositions of `k` into `n_outcomes` non-negative parts, scaled by
/// `1 / k`, in lexicographic order of the counts.
pub fn enumerate_grid(n_outcomes: usize, k: usize) -> Result<Vec<OutcomeDistribution>> {
    if k < 1 {
        return Err(Error::param("grid resolution must be at least 1"));
    }
    if n_outcomes < 1 {
        return Err(Error::param("grid needs at least one outcome"));
    }
    let mut out = Vec::with_capacity(binomial(k + n_outcomes - 1, n_outcomes - 1));
    let mut counts = vec![0usize; n_outcomes];
    fill(&mut counts, 0, k, k, &mut out);
    Ok(out)
}

fn fill(counts: &mut [usize], slot: usize, remaining: usize, k: usize, out: &mut Vec<OutcomeDistribution>) {
    if slot + 1 == counts.len() {
        counts[slot] = remaining;
        let probs = counts.iter().map(|&c| c as f64 / k as f64).collect();
        out.push(OutcomeDistribution::from_raw(probs));
        return;
    }
    for c in 0..=remaining {
        counts[slot] = c;
        fill(counts, slot + 1, remaining - c, k, out);
    }
}
