//! Consensus rules over one case's agent assessments.
//!
//! Every rule produces two aggregates: a decision score over the agents'
//! binary votes, which is thresholded, and a continuous score over their risk
//! scores, which feeds AP and AUC for the vote rows.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentAssessment;

pub const MAJORITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum VoteError {
    #[error("no assessments for case `{0}`")]
    Empty(String),
    #[error("cannot combine votes for different cases `{0}` and `{1}`")]
    CaseMismatch(String, String),
    #[error("negative weight {weight} for agent `{agent}`")]
    NegativeWeight { agent: String, weight: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRule {
    Majority,
    PrecisionWeighted,
    RecallWeighted,
    Bprv,
}

impl VoteRule {
    pub const ALL: [VoteRule; 4] = [
        VoteRule::Majority,
        VoteRule::PrecisionWeighted,
        VoteRule::RecallWeighted,
        VoteRule::Bprv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VoteRule::Majority => "majority",
            VoteRule::PrecisionWeighted => "precision_weighted",
            VoteRule::RecallWeighted => "recall_weighted",
            VoteRule::Bprv => "bprv",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name)
    }
}

impl fmt::Display for VoteRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub rule: VoteRule,
    pub case_id: String,
    /// Continuous score used for ranking metrics.
    pub aggregate_score: f64,
    /// Weighted share of positive votes, compared against the threshold.
    pub decision_score: f64,
    pub decision: bool,
    pub threshold_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoteThresholds {
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub bprv: f64,
}

impl Default for VoteThresholds {
    fn default() -> Self {
        Self {
            precision_weighted: 0.75,
            recall_weighted: 0.25,
            bprv: 0.5,
        }
    }
}

fn case_of(case_id: &str, assessments: &[&AgentAssessment]) -> Result<(), VoteError> {
    if assessments.is_empty() {
        return Err(VoteError::Empty(case_id.to_string()));
    }
    if let Some(a) = assessments.iter().find(|a| a.case_id != case_id) {
        return Err(VoteError::CaseMismatch(case_id.to_string(), a.case_id.clone()));
    }
    Ok(())
}

/// Fraction of positive votes; an exact half is a negative decision.
pub fn majority(case_id: &str, assessments: &[&AgentAssessment]) -> Result<VoteResult, VoteError> {
    case_of(case_id, assessments)?;
    let score =
        assessments.iter().filter(|a| a.decision).count() as f64 / assessments.len() as f64;
    Ok(VoteResult {
        rule: VoteRule::Majority,
        case_id: case_id.to_string(),
        aggregate_score: score,
        decision_score: score,
        decision: score > MAJORITY_THRESHOLD,
        threshold_used: MAJORITY_THRESHOLD,
    })
}

/// Weights are looked up by agent id. Missing or undefined weights count as
/// zero; if every present agent ends up with zero weight the vote falls back
/// to uniform weights.
pub fn weighted_vote(
    rule: VoteRule,
    case_id: &str,
    assessments: &[&AgentAssessment],
    weights: &BTreeMap<String, Option<f64>>,
    threshold: f64,
) -> Result<VoteResult, VoteError> {
    case_of(case_id, assessments)?;
    let mut w: Vec<f64> = Vec::with_capacity(assessments.len());
    for a in assessments {
        let weight = weights
            .get(&a.agent_id)
            .copied()
            .flatten()
            .filter(|v| v.is_finite())
            .unwrap_or(0.0);
        if weight < 0.0 {
            return Err(VoteError::NegativeWeight {
                agent: a.agent_id.clone(),
                weight,
            });
        }
        w.push(weight);
    }
    let mut total: f64 = w.iter().sum();
    if total <= 0.0 {
        w.iter_mut().for_each(|x| *x = 1.0);
        total = w.len() as f64;
    }
    let decision_score = assessments
        .iter()
        .zip(&w)
        .filter(|(a, _)| a.decision)
        .map(|(_, w)| w)
        .sum::<f64>()
        / total;
    let aggregate_score = assessments
        .iter()
        .zip(&w)
        .map(|(a, w)| w * a.risk_score)
        .sum::<f64>()
        / total;
    Ok(VoteResult {
        rule,
        case_id: case_id.to_string(),
        aggregate_score: aggregate_score.clamp(0.0, 1.0),
        decision_score: decision_score.clamp(0.0, 1.0),
        decision: decision_score >= threshold,
        threshold_used: threshold,
    })
}

/// Midpoint of the precision- and recall-weighted votes.
pub fn bprv(pwv: &VoteResult, rwv: &VoteResult, threshold: f64) -> Result<VoteResult, VoteError> {
    if pwv.case_id != rwv.case_id {
        return Err(VoteError::CaseMismatch(pwv.case_id.clone(), rwv.case_id.clone()));
    }
    let decision_score = (pwv.decision_score + rwv.decision_score) / 2.0;
    Ok(VoteResult {
        rule: VoteRule::Bprv,
        case_id: pwv.case_id.clone(),
        aggregate_score: (pwv.aggregate_score + rwv.aggregate_score) / 2.0,
        decision_score,
        decision: decision_score >= threshold,
        threshold_used: threshold,
    })
}

/// Per-agent validation precision and recall, used as vote weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VoteWeights {
    pub precision: BTreeMap<String, Option<f64>>,
    pub recall: BTreeMap<String, Option<f64>>,
}

/// All four rules for one case, in [`VoteRule::ALL`] order.
pub fn vote_all(
    case_id: &str,
    assessments: &[&AgentAssessment],
    weights: &VoteWeights,
    thresholds: &VoteThresholds,
) -> Result<[VoteResult; 4], VoteError> {
    let m = majority(case_id, assessments)?;
    let p = weighted_vote(
        VoteRule::PrecisionWeighted,
        case_id,
        assessments,
        &weights.precision,
        thresholds.precision_weighted,
    )?;
    let r = weighted_vote(
        VoteRule::RecallWeighted,
        case_id,
        assessments,
        &weights.recall,
        thresholds.recall_weighted,
    )?;
    let b = bprv(&p, &r, thresholds.bprv)?;
    Ok([m, p, r, b])
}
