//! A toy performative-prediction environment: a frozen random network maps
//! (context, action) to an outcome distribution, and a principal picks actions
//! by a softmax over the expected utility of the predictions it receives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decision::ActionDistribution;
use crate::domain::{OutcomeDistribution, ReportMatrix, ReportView};
use crate::error::{Error, Result};
use crate::nn::{encode_input, Mlp};

pub const N_ACTIONS: usize = 8;
pub const N_OUTCOMES: usize = 8;
pub const CONTEXT_DIM: usize = 8;

/// How several predictions for one action are merged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consolidation {
    /// Keep the prediction with the highest expected utility.
    #[default]
    Optimistic,
    /// Average the expected utilities.
    Mean,
}

/// Which actions may receive probability.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    #[default]
    Full,
    /// Only actions whose consolidated expected utility exceeds the median.
    AboveMedian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub seed: u64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    1.0
}

/// The principal's softmax decision together with what produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Consolidated expected utility per action.
    pub eu: Vec<f64>,
    /// For optimistic consolidation, the agent whose prediction was kept.
    pub source: Vec<usize>,
    pub supported: Vec<bool>,
    pub pi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Cross-entropy against the truth, actions weighted by the principal's decision.
    pub nll_induced: f64,
    /// Cross-entropy against the truth, actions weighted uniformly.
    pub nll_uniform: f64,
    /// Principal's expected utility under the true outcome distributions.
    pub utility: f64,
    /// `nll_uniform - nll_induced`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub spec: EnvSpec,
    truth_net: Mlp,
    utility: Vec<f64>,
}

impl Environment {
    /// A fresh environment: a randomly initialized truth network and
    /// utilities drawn uniformly from `[0, 1]`, both fixed by `spec.seed`.
    pub fn new(spec: EnvSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let truth_net = Mlp::xavier(&crate::nn::DEFAULT_SIZES, &mut rng)?;
        let mut urng = ChaCha8Rng::seed_from_u64(spec.seed);
        urng.set_stream(1);
        let utility = (0..N_OUTCOMES).map(|_| urng.random::<f64>()).collect();
        Self::from_parts(spec, truth_net, utility)
    }

    pub fn from_parts(spec: EnvSpec, truth_net: Mlp, utility: Vec<f64>) -> Result<Self> {
        if !(spec.temperature > 0.0) {
            return Err(Error::param(format!("temperature {} must be positive", spec.temperature)));
        }
        if truth_net.n_inputs() != CONTEXT_DIM + N_ACTIONS || truth_net.n_outputs() != N_OUTCOMES {
            return Err(Error::param("truth network has the wrong input or output size"));
        }
        if utility.len() != N_OUTCOMES || utility.iter().any(|u| !u.is_finite()) {
            return Err(Error::param("utility must have one finite entry per outcome"));
        }
        Ok(Self {
            spec,
            truth_net,
            utility,
        })
    }

    pub fn utility(&self) -> &[f64] {
        &self.utility
    }

    pub fn truth_net(&self) -> &Mlp {
        &self.truth_net
    }

    pub fn temperature(&self) -> f64 {
        self.spec.temperature
    }

    pub fn sample_context<G: Rng + ?Sized>(&self, rng: &mut G) -> Vec<f64> {
        (0..CONTEXT_DIM).map(|_| rng.sample(StandardNormal)).collect()
    }

    pub fn true_distribution(&self, context: &[f64], action: usize) -> Result<OutcomeDistribution> {
        if action >= N_ACTIONS {
            return Err(Error::OutOfRange {
                what: "actions",
                index: action,
                len: N_ACTIONS,
            });
        }
        self.truth_net.predict(&encode_input(context, action, N_ACTIONS))
    }

    /// True outcome distributions for every action.
    pub fn truth_rows(&self, context: &[f64]) -> Result<Vec<Vec<f64>>> {
        (0..N_ACTIONS)
            .map(|a| Ok(self.true_distribution(context, a)?.probs().to_vec()))
            .collect()
    }

    pub fn expected_utility(&self, p: &[f64]) -> f64 {
        self.utility.iter().zip(p).map(|(u, x)| u * x).sum()
    }

    /// Softmax decision over consolidated expected utilities.
    /// `reports[i][a]` is agent `i`'s prediction for action `a`.
    pub fn decide(&self, reports: &[Vec<Vec<f64>>], consolidation: Consolidation, support: Support) -> Decision {
        let n = reports.len();
        let mut eu = vec![0.0; N_ACTIONS];
        let mut source = vec![0; N_ACTIONS];
        for a in 0..N_ACTIONS {
            match consolidation {
                Consolidation::Optimistic => {
                    let mut best = f64::NEG_INFINITY;
                    for (i, r) in reports.iter().enumerate() {
                        let v = self.expected_utility(&r[a]);
                        if v > best {
                            best = v;
                            source[a] = i;
                        }
                    }
                    eu[a] = best;
                }
                Consolidation::Mean => {
                    eu[a] = reports.iter().map(|r| self.expected_utility(&r[a])).sum::<f64>() / n as f64;
                }
            }
        }
        let supported = match support {
            Support::Full => vec![true; N_ACTIONS],
            Support::AboveMedian => {
                let mut sorted = eu.clone();
                sorted.sort_by(f64::total_cmp);
                let median = 0.5 * (sorted[N_ACTIONS / 2 - 1] + sorted[N_ACTIONS / 2]);
                let mask: Vec<bool> = eu.iter().map(|&v| v > median).collect();
                if mask.iter().any(|&m| m) {
                    mask
                } else {
                    vec![true; N_ACTIONS]
                }
            }
        };
        let t = self.spec.temperature;
        let max = eu
            .iter()
            .zip(&supported)
            .filter(|(_, s)| **s)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut pi: Vec<f64> = eu
            .iter()
            .zip(&supported)
            .map(|(v, s)| if *s { ((v - max) / t).exp() } else { 0.0 })
            .collect();
        let z: f64 = pi.iter().sum();
        for p in &mut pi {
            *p /= z;
        }
        Decision {
            eu,
            source,
            supported,
            pi,
        }
    }

    /// The principal's decision with optimistic consolidation and full support.
    pub fn principal_decision(&self, reports: &ReportMatrix) -> Result<ActionDistribution> {
        if reports.n_actions() != N_ACTIONS || reports.n_outcomes() != N_OUTCOMES {
            return Err(Error::param("reports must cover 8 actions and 8 outcomes"));
        }
        let nested: Vec<Vec<Vec<f64>>> = (0..reports.n_agents())
            .map(|i| (0..N_ACTIONS).map(|a| reports.prediction(i, a).to_vec()).collect())
            .collect();
        let d = self.decide(&nested, Consolidation::Optimistic, Support::Full);
        ActionDistribution::from_probs(d.pi)
    }

    /// Averages over `contexts`, with the predictor's dropout-free outputs as the single report.
    pub fn metrics(&self, predictor: &Mlp, contexts: &[Vec<f64>], support: Support) -> Result<Metrics> {
        if contexts.is_empty() {
            return Err(Error::param("metrics need at least one context"));
        }
        let mut acc = [0.0; 3];
        for ctx in contexts {
            let truth = self.truth_rows(ctx)?;
            let preds = (0..N_ACTIONS)
                .map(|a| Ok(predictor.predict(&encode_input(ctx, a, N_ACTIONS))?.probs().to_vec()))
                .collect::<Result<Vec<_>>>()?;
            let d = self.decide(std::slice::from_ref(&preds), Consolidation::Optimistic, support);
            for a in 0..N_ACTIONS {
                let ce = crate::nn::cross_entropy(&preds[a], &truth[a]).0;
                acc[0] += d.pi[a] * ce;
                acc[1] += ce / N_ACTIONS as f64;
                acc[2] += d.pi[a] * self.expected_utility(&truth[a]);
            }
        }
        let k = contexts.len() as f64;
        let (nll_induced, nll_uniform, utility) = (acc[0] / k, acc[1] / k, acc[2] / k);
        Ok(Metrics {
            nll_induced,
            nll_uniform,
            utility,
            gap: nll_uniform - nll_induced,
        })
    }
}
