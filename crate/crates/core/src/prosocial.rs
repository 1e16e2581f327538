//! Prosocial gate: a weighted score over Boolean issue flags decides whether
//! the board may run at all.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ASSERTED_VALUE: f64 = 0.99;
pub const UNASSERTED_VALUE: f64 = 0.01;
pub const DEFAULT_THRESHOLD: f64 = 0.336;
/// Equal thirds written as 0.333 sum to 0.999, so weights only have to sum to
/// one within this tolerance.
pub const WEIGHT_SUM_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum GateError {
    #[error("at least one issue flag is required")]
    NoFlags,
    #[error("flag `{name}` has weight {weight} outside [0, 1]")]
    BadWeight { name: String, weight: f64 },
    #[error("flag weights sum to {0}, expected 1 within 0.01")]
    WeightSum(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueFlag {
    pub name: String,
    pub asserted: bool,
    pub weight: f64,
}

impl IssueFlag {
    pub fn new(name: impl Into<String>, asserted: bool, weight: f64) -> Self {
        Self {
            name: name.into(),
            asserted,
            weight,
        }
    }

    pub fn value(&self) -> f64 {
        if self.asserted {
            ASSERTED_VALUE
        } else {
            UNASSERTED_VALUE
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsocialDecision {
    pub pscore: f64,
    pub threshold: f64,
    pub permitted: bool,
}

impl ProsocialDecision {
    /// Three decimals, e.g. `0.989`.
    pub fn display_score(&self) -> String {
        format!("{:.3}", self.pscore)
    }
}

pub fn pscore(flags: &[IssueFlag]) -> Result<f64, GateError> {
    if flags.is_empty() {
        return Err(GateError::NoFlags);
    }
    for f in flags {
        if !(0.0..=1.0).contains(&f.weight) {
            return Err(GateError::BadWeight {
                name: f.name.clone(),
                weight: f.weight,
            });
        }
    }
    let total: f64 = flags.iter().map(|f| f.weight).sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(GateError::WeightSum(total));
    }
    Ok(flags.iter().map(|f| f.value() * f.weight).sum())
}

/// Permits the run iff the full-precision score reaches the threshold.
pub fn gate(flags: &[IssueFlag], threshold: f64) -> Result<ProsocialDecision, GateError> {
    let pscore = pscore(flags)?;
    Ok(ProsocialDecision {
        pscore,
        threshold,
        permitted: pscore >= threshold,
    })
}
