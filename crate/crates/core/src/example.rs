//! The two-action impossibility example: a lone forecaster scored by a proper
//! rule profits from misreporting, while two forecasters under the zero-sum
//! rule cannot.

use serde::Serialize;

use crate::decision::DecisionRuleSpec;
use crate::domain::{Instance, OutcomeDistribution};
use crate::equilibrium::suite::{run_entry, Claim, SuiteEntry};
use crate::equilibrium::{expected_scores, AuditOptions};
use crate::error::Result;
use crate::scoring::{BaseRule, Mechanism, ZeroSumRule};

/// The single agent's misreport for action 0: just below action 1's expected utility.
pub const MANIPULATED_REPORT: [f64; 2] = [0.2, 0.8];
/// The second agent's report for action 0 in the zero-sum comparison.
pub const RIVAL_REPORT: [f64; 2] = [0.25, 0.75];

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub name: String,
    pub claim: Claim,
    pub holds: bool,
    pub quasi_strict: bool,
    pub equilibria: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExampleReport {
    pub base: String,
    pub truth: Vec<Vec<f64>>,
    pub utility: Vec<f64>,
    /// Expected score of the lone agent reporting honestly.
    pub single_honest: f64,
    /// Expected score of the lone agent after steering the decision to action 1.
    pub single_manipulated: f64,
    pub manipulated_report: Vec<f64>,
    /// Zero-sum scores when agent 0 is honest and agent 1 reports `RIVAL_REPORT` for action 0.
    pub zero_sum_scores: Vec<f64>,
    pub verdicts: Vec<Verdict>,
}

pub fn impossibility_example(base: BaseRule) -> Result<ExampleReport> {
    let single = Instance::two_action_example(1);
    let pair = Instance::two_action_example(2);
    let indep = Mechanism::Independent(base);
    let zs = Mechanism::ZeroSum(ZeroSumRule::new(base));
    let max = DecisionRuleSpec::Max { agent: 0 };

    let honest = expected_scores(&indep, &max, &single.honest_report(), &single.truth, &single.pref)?;
    let mut manipulated = single.honest_report();
    manipulated.set(0, 0, OutcomeDistribution::new(MANIPULATED_REPORT.to_vec())?)?;
    let manip = expected_scores(&indep, &max, &manipulated, &single.truth, &single.pref)?;

    let mut rival = pair.honest_report();
    rival.set(1, 0, OutcomeDistribution::new(RIVAL_REPORT.to_vec())?)?;
    let zero_sum = expected_scores(&zs, &DecisionRuleSpec::OptimisticMax, &rival, &pair.truth, &pair.pref)?;

    let entries = [
        ("single_agent_proper_rule", indep, max, single.clone(), Claim::ExpectedFailure),
        ("zero_sum_optimistic_max", zs, DecisionRuleSpec::OptimisticMax, pair.clone(), Claim::QuasiStrict),
        (
            "zero_sum_disagreement_seeking_max",
            zs,
            DecisionRuleSpec::DisagreementSeekingMax { tolerance: 0.0 },
            pair.clone(),
            Claim::Strict,
        ),
    ];
    let mut verdicts = Vec::new();
    for (name, mechanism, decision, instance, claim) in entries {
        let entry = SuiteEntry {
            name: name.to_string(),
            mechanism,
            decision,
            instance,
            grid_resolution: 20,
            strong: false,
            claim,
        };
        let out = run_entry(&entry, AuditOptions::default())?;
        verdicts.push(Verdict {
            name: out.name.clone(),
            claim,
            holds: out.passed(),
            quasi_strict: out.report.quasi_strict(),
            equilibria: out.report.equilibrium_count,
        });
    }

    Ok(ExampleReport {
        base: format!("{:?}", base.kind).to_lowercase(),
        truth: pair.truth.per_action().iter().map(|q| q.probs().to_vec()).collect(),
        utility: pair.pref.utility().to_vec(),
        single_honest: honest.values()[0],
        single_manipulated: manip.values()[0],
        manipulated_report: MANIPULATED_REPORT.to_vec(),
        zero_sum_scores: zero_sum.values(),
        verdicts,
    })
}

impl ExampleReport {
    pub fn all_hold(&self) -> bool {
        self.verdicts.iter().all(|v| v.holds)
    }

    /// Human-readable summary.
    pub fn render(&self) -> String {
        let mut s = format!(
            "two-action example, {} scoring\n  truth {:?}, utility {:?}\n",
            self.base, self.truth, self.utility
        );
        s += &format!("  single agent, honest:        {:.6}\n", self.single_honest);
        s += &format!(
            "  single agent, manipulated:   {:.6}  (reports {:?} for action 0)\n",
            self.single_manipulated, self.manipulated_report
        );
        s += &format!(
            "  zero-sum pair, rival misreport: [{:.6}, {:.6}]\n",
            self.zero_sum_scores[0], self.zero_sum_scores[1]
        );
        for v in &self.verdicts {
            s += &format!(
                "  {:<36} claim {:<12} {}  (quasi-strict {}, {} equilibria)\n",
                v.name,
                format!("{:?}", v.claim),
                if v.holds { "PASS" } else { "FAIL" },
                v.quasi_strict,
                v.equilibria
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn log_example_numbers() {
        let r = impossibility_example(BaseRule::log()).unwrap();
        assert_abs_diff_eq!(r.single_honest, -0.693147, epsilon = 1e-6);
        assert_abs_diff_eq!(r.single_manipulated, -0.562335, epsilon = 1e-6);
        assert_abs_diff_eq!(r.zero_sum_scores[0], 0.143841, epsilon = 1e-6);
        assert_abs_diff_eq!(r.zero_sum_scores[1], -0.143841, epsilon = 1e-6);
        assert!(r.all_hold(), "{}", r.render());
        assert_eq!(r.base, "log");
    }

    #[test]
    fn brier_example_shows_the_same_incentive() {
        let r = impossibility_example(BaseRule::quadratic()).unwrap();
        // 2<q,p> - |p|^2 with p = q: |q|^2
        assert_abs_diff_eq!(r.single_honest, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.single_manipulated, 0.625, epsilon = 1e-12);
        // honest 0.5 minus the rival's 2(0.125 + 0.375) - 0.625 = 0.375
        assert_abs_diff_eq!(r.zero_sum_scores[0], 0.125, epsilon = 1e-12);
        assert!(r.all_hold(), "{}", r.render());
    }
}
