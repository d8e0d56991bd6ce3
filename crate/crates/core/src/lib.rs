//! Zero-sum joint scoring mechanisms for eliciting honest conditional predictions
//! from several agents, with brute-force equilibrium audits, action search and a
//! small training testbed for performative prediction.

pub mod decision;
pub mod domain;
pub mod equilibrium;
pub mod error;
pub mod example;
pub mod scoring;
pub mod nn;
pub mod report;
pub mod search;
pub mod toyenv;
pub mod training;

pub use decision::{ActionDistribution, DecisionRuleSpec};
pub use domain::{GroundTruth, Instance, OutcomeDistribution, Preference, ReportMatrix, TieBreak};
pub use error::{Error, Result};
pub use scoring::{BaseRule, Mechanism, Score, ScoreVector, ZeroSumRule};
