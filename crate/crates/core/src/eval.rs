//! Classification metrics, reasoning alignment and the blended
//! classification/reasoning score.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("no cases to evaluate")]
    Empty,
    #[error("average precision needs at least one positive label")]
    NoPositives,
    #[error("alpha + beta must equal 1, got {0}")]
    WeightSum(f64),
    #[error("metric value {0} outside [0, 1]")]
    OutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CaseType {
    TP,
    FP,
    TN,
    FN,
}

impl CaseType {
    pub const ALL: [CaseType; 4] = [CaseType::TP, CaseType::FP, CaseType::TN, CaseType::FN];

    pub fn of(decision: bool, label: bool) -> Self {
        match (decision, label) {
            (true, true) => CaseType::TP,
            (true, false) => CaseType::FP,
            (false, false) => CaseType::TN,
            (false, true) => CaseType::FN,
        }
    }
}

impl fmt::Display for CaseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    /// `None` when nothing was predicted positive.
    pub fn precision(&self) -> Option<f64> {
        let denom = self.tp + self.fp;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }

    /// 0 when there are no positive labels.
    pub fn recall(&self) -> f64 {
        let denom = self.tp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            self.tp as f64 / denom as f64
        }
    }
}

pub fn confusion_metrics(decisions: &[bool], labels: &[bool]) -> Result<Confusion, EvalError> {
    if decisions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(decisions.len(), labels.len()));
    }
    if decisions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut c = Confusion::default();
    for (&d, &l) in decisions.iter().zip(labels) {
        match CaseType::of(d, l) {
            CaseType::TP => c.tp += 1,
            CaseType::FP => c.fp += 1,
            CaseType::TN => c.tn += 1,
            CaseType::FN => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucResult {
    pub value: f64,
    /// Set when only one class is present or every score is tied; `value`
    /// is then 0.5.
    pub degenerate: bool,
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed with integer pair counts, so the result is
/// exactly `count / (2 * n_pos * n_neg)`.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<AucResult, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|l| **l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    let constant = scores.windows(2).all(|w| w[0] == w[1]);
    if n_pos == 0 || n_neg == 0 || constant {
        return Ok(AucResult {
            value: 0.5,
            degenerate: true,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the number of (pos, neg) wins plus ties
    let mut doubled: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        doubled += pos * (2 * negatives_below + neg);
        negatives_below += neg;
        i = j;
    }
    Ok(AucResult {
        value: doubled as f64 / (2 * n_pos * n_neg) as f64,
        degenerate: false,
    })
}

/// `sum_k (R_k - R_{k-1}) * P_k` over descending score thresholds; tied
/// scores enter together.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    if n_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub subject: String,
    pub round: u32,
    pub auc: f64,
    #[serde(default)]
    pub auc_degenerate: bool,
    /// Absent when the evaluated cases contain no positive label.
    pub ap: Option<f64>,
    /// Absent ("nan") when nothing was predicted positive.
    pub precision: Option<f64>,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub cases: usize,
}

impl MetricRow {
    pub fn compute(
        subject: impl Into<String>,
        round: u32,
        scores: &[f64],
        decisions: &[bool],
        labels: &[bool],
    ) -> Result<Self, EvalError> {
        let c = confusion_metrics(decisions, labels)?;
        let auc = auc_roc(scores, labels)?;
        let ap = match average_precision(scores, labels) {
            Ok(ap) => Some(ap),
            Err(EvalError::NoPositives) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            subject: subject.into(),
            round,
            auc: auc.value,
            auc_degenerate: auc.degenerate,
            ap,
            precision: c.precision(),
            recall: c.recall(),
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            cases: labels.len(),
        })
    }

    pub fn precision_display(&self) -> String {
        fmt_opt(self.precision, 3)
    }
}

pub fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(v) => format!("{v:.decimals$}"),
        None => "nan".into(),
    }
}

/// Supplies token embeddings for alignment scoring. Both texts are passed
/// together so vocabulary-based providers can share one index.
pub trait EmbeddingProvider: Send + Sync {
    fn embed_pair(&self, candidate: &[String], reference: &[String]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>);

    /// Cosine similarity for every (candidate, reference) token pair.
    fn similarities(&self, candidate: &[String], reference: &[String]) -> Vec<Vec<f64>> {
        let (ce, re) = self.embed_pair(candidate, reference);
        ce.iter()
            .map(|c| re.iter().map(|r| cosine(c, r)).collect())
            .collect()
    }
}

/// One dimension per distinct lowercase token; greedy matching then reduces
/// to token-overlap precision and recall.
#[derive(Debug, Clone, Copy, Default)]
pub struct OneHotEmbedding;

impl EmbeddingProvider for OneHotEmbedding {
    fn embed_pair(&self, candidate: &[String], reference: &[String]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut vocab: HashMap<&str, usize> = HashMap::new();
        for t in candidate.iter().chain(reference) {
            let next = vocab.len();
            vocab.entry(t.as_str()).or_insert(next);
        }
        let encode = |tokens: &[String]| {
            tokens
                .iter()
                .map(|t| {
                    let mut v = vec![0.0; vocab.len()];
                    v[vocab[t.as_str()]] = 1.0;
                    v
                })
                .collect()
        };
        (encode(candidate), encode(reference))
    }

    // one-hot cosine is just token equality
    fn similarities(&self, candidate: &[String], reference: &[String]) -> Vec<Vec<f64>> {
        candidate
            .iter()
            .map(|c| reference.iter().map(|r| if c == r { 1.0 } else { 0.0 }).collect())
            .collect()
    }
}

/// Adapts a per-token function, for providers without shared state.
pub struct TokenFn<F>(pub F);

impl<F> EmbeddingProvider for TokenFn<F>
where
    F: Fn(&str) -> Vec<f64> + Send + Sync,
{
    fn embed_pair(&self, candidate: &[String], reference: &[String]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            candidate.iter().map(|t| (self.0)(t)).collect(),
            reference.iter().map(|t| (self.0)(t)).collect(),
        )
    }
}

/// Lowercased whitespace tokens with surrounding punctuation stripped.
pub fn alignment_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Greedy matching: each candidate token takes its best cosine match in the
/// reference (precision) and vice versa (recall).
pub fn alignment_score(
    candidate: &str,
    reference: &str,
    embed: &dyn EmbeddingProvider,
) -> AlignmentScore {
    let cand = alignment_tokens(candidate);
    let refr = alignment_tokens(reference);
    if cand.is_empty() || refr.is_empty() {
        return AlignmentScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let sims = embed.similarities(&cand, &refr);
    let best = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    let precision = sims
        .iter()
        .map(|row| best(&mut row.iter().copied()))
        .sum::<f64>()
        / cand.len() as f64;
    let recall = (0..refr.len())
        .map(|j| best(&mut sims.iter().map(|row| row[j])))
        .sum::<f64>()
        / refr.len() as f64;
    let precision = precision.clamp(0.0, 1.0);
    let recall = recall.clamp(0.0, 1.0);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    AlignmentScore {
        precision,
        recall,
        f1,
    }
}

/// `A * alpha + B * beta` with `alpha + beta = 1`.
pub fn bcr_score(a: f64, alpha: f64, b: f64, beta: f64) -> Result<f64, EvalError> {
    if ((alpha + beta) - 1.0).abs() > 1e-9 || alpha < 0.0 || beta < 0.0 {
        return Err(EvalError::WeightSum(alpha + beta));
    }
    for v in [a, b] {
        if !(0.0..=1.0).contains(&v) {
            return Err(EvalError::OutOfRange(v));
        }
    }
    Ok(a * alpha + b * beta)
}
