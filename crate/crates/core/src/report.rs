//! Consolidated run report: metric tables per round, documentation burden,
//! confidence breakdowns, reasoning alignment against a reference agent and
//! BCR scores.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{alignment_score, bcr_score, CaseType, EmbeddingProvider, EvalError, MetricRow};
use crate::mar::{
    burden_stats, confidence_breakdown, outcomes_from_labels, BreakdownRow, BurdenRow, CodeMap, MarEntry, MarError, Target,
};
use crate::rounds::{MetricKind, RoundState, StopCheck};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no rounds to report")]
    EmptyRounds,
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("BCR entry `{label}`: {detail}")]
    Bcr { label: String, detail: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Mar(#[from] MarError),
    #[error("CSV output failed: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMetric {
    Precision,
    Recall,
    #[default]
    F1,
}

/// One BCR combination. `a_value`/`b_value` pin an input directly;
/// otherwise A comes from `agent`'s metric row and B from its mean
/// alignment against the reference agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcrSpec {
    pub label: String,
    #[serde(default)]
    pub agent: Option<String>,
    #[serde(default = "default_a_metric")]
    pub a_metric: MetricKind,
    #[serde(default)]
    pub b_metric: AlignMetric,
    #[serde(default)]
    pub a_value: Option<f64>,
    #[serde(default)]
    pub b_value: Option<f64>,
    #[serde(default = "half")]
    pub alpha: f64,
    #[serde(default = "half")]
    pub beta: f64,
    /// Defaults to the last round.
    #[serde(default)]
    pub round: Option<u32>,
}

fn default_a_metric() -> MetricKind {
    MetricKind::Ap
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    /// Agent id whose reasoning is the alignment reference; defaults to the
    /// first agent.
    pub reference_agent: Option<String>,
    pub bcr: Vec<BcrSpec>,
    /// Also write metrics.csv.
    pub csv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTable {
    pub round: u32,
    pub rows: Vec<MetricRow>,
    pub stop_check: Option<StopCheck>,
    pub failures: usize,
    pub dropped_cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub round: u32,
    pub candidate: String,
    pub reference: String,
    /// Case type of the reference agent's decision.
    pub case_type: CaseType,
    pub cases: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcrRow {
    pub label: String,
    pub round: u32,
    pub a: f64,
    pub alpha: f64,
    pub b: f64,
    pub beta: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rounds: Vec<RoundTable>,
    pub burden: Vec<BurdenRow>,
    pub confidence: Vec<BreakdownRow>,
    pub alignment: Vec<AlignmentRow>,
    pub bcr: Vec<BcrRow>,
    /// External codes for each diagnosis and agent name in the log.
    #[serde(default)]
    pub vocabulary: Vec<VocabularyRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyRow {
    /// `ad` or `an`.
    pub term: String,
    pub value: String,
    pub icd9: Option<String>,
    pub icd10: Option<String>,
    pub snomed: Option<String>,
    pub person_name: Option<String>,
}

/// Maps every distinct diagnosis code and agent name in `entries`; codes
/// without a mapping get empty columns.
pub fn vocabulary_rows(entries: &[MarEntry], codes: &CodeMap) -> Vec<VocabularyRow> {
    let ads: BTreeSet<&str> = entries.iter().map(|e| e.ad.as_str()).collect();
    let ans: BTreeSet<&str> = entries.iter().map(|e| e.an.as_str()).collect();
    let get = |v: &str, t| codes.map_code(v, t).ok().map(str::to_string);
    ads.into_iter()
        .map(|ad| VocabularyRow {
            term: "ad".into(),
            value: ad.into(),
            icd9: get(ad, Target::Icd9),
            icd10: get(ad, Target::Icd10),
            snomed: get(ad, Target::Snomed),
            person_name: None,
        })
        .chain(ans.into_iter().map(|an| VocabularyRow {
            term: "an".into(),
            value: an.into(),
            icd9: None,
            icd10: None,
            snomed: None,
            person_name: get(an, Target::PersonName),
        }))
        .collect()
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Mean P/R/F1 of a candidate's reasoning against the reference agent's,
/// grouped by the reference agent's case type.
fn alignment_rows(
    round: &RoundState,
    entries: &BTreeMap<(String, u32, String), &MarEntry>,
    names: &BTreeMap<String, String>,
    reference: &str,
    embed: &dyn EmbeddingProvider,
) -> Vec<AlignmentRow> {
    let ref_name = &names[reference];
    let mut sums: BTreeMap<(String, CaseType), (usize, f64, f64, f64)> = BTreeMap::new();
    for a in round.assessments.iter().filter(|a| a.agent_id == reference) {
        let ct = CaseType::of(a.decision, round.labels[&a.case_id]);
        let Some(ref_entry) = entries.get(&(ref_name.clone(), round.round, a.case_id.clone())) else {
            continue;
        };
        for (id, name) in names {
            if id == reference {
                continue;
            }
            let Some(cand) = entries.get(&(name.clone(), round.round, a.case_id.clone())) else {
                continue;
            };
            let s = alignment_score(&cand.adr, &ref_entry.adr, embed);
            let acc = sums.entry((id.clone(), ct)).or_default();
            acc.0 += 1;
            acc.1 += s.precision;
            acc.2 += s.recall;
            acc.3 += s.f1;
        }
    }
    sums.into_iter()
        .map(|((candidate, case_type), (n, p, r, f))| AlignmentRow {
            round: round.round,
            candidate,
            reference: reference.to_string(),
            case_type,
            cases: n,
            precision: p / n as f64,
            recall: r / n as f64,
            f1: f / n as f64,
        })
        .collect()
}

/// Assembles the report from sealed rounds and the record log.
pub fn build_report(
    rounds: &[RoundState],
    mar_entries: &[MarEntry],
    cfg: &ReportConfig,
    embed: &dyn EmbeddingProvider,
) -> Result<Report, ReportError> {
    let first = rounds.first().ok_or(ReportError::EmptyRounds)?;

    // agent id -> name, in first-seen order of ids
    let mut names: BTreeMap<String, String> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for r in rounds {
        for a in &r.assessments {
            if !names.contains_key(&a.agent_id) {
                order.push(a.agent_id.clone());
                names.insert(a.agent_id.clone(), a.agent_name.clone());
            }
        }
    }
    let reference = match &cfg.reference_agent {
        Some(id) if names.contains_key(id) => Some(id.clone()),
        Some(id) => return Err(ReportError::UnknownAgent(id.clone())),
        None => order.first().cloned(),
    };

    let tables = rounds
        .iter()
        .map(|r| RoundTable {
            round: r.round,
            rows: r.metrics.clone(),
            stop_check: r.stop_check,
            failures: r.failures.len(),
            dropped_cases: r.dropped_cases.len(),
        })
        .collect();

    let burden = if mar_entries.is_empty() {
        Vec::new()
    } else {
        burden_stats(mar_entries)?
    };
    let labels = &first.labels;
    let confidence = confidence_breakdown(mar_entries, &outcomes_from_labels(mar_entries, labels))?;

    let index: BTreeMap<(String, u32, String), &MarEntry> = mar_entries
        .iter()
        .map(|e| ((e.an.clone(), e.round, e.case_id.clone()), e))
        .collect();
    let mut alignment = Vec::new();
    if let Some(reference) = &reference {
        for r in rounds {
            alignment.extend(alignment_rows(r, &index, &names, reference, embed));
        }
    }

    let mut bcr = Vec::new();
    for spec in &cfg.bcr {
        let err = |detail: String| ReportError::Bcr {
            label: spec.label.clone(),
            detail,
        };
        let round_no = spec.round.unwrap_or(rounds[rounds.len() - 1].round);
        let round = rounds
            .iter()
            .find(|r| r.round == round_no)
            .ok_or_else(|| err(format!("round {round_no} not in run")))?;
        let a = match (spec.a_value, &spec.agent) {
            (Some(v), _) => v,
            (None, Some(agent)) => round
                .metric(agent)
                .and_then(|row| spec.a_metric.of(row))
                .ok_or_else(|| err(format!("no {:?} for `{agent}` in round {round_no}", spec.a_metric)))?,
            (None, None) => return Err(err("needs `agent` or `a_value`".into())),
        };
        let b = match (spec.b_value, &spec.agent) {
            (Some(v), _) => v,
            (None, Some(agent)) if Some(agent) == reference.as_ref() => 1.0,
            (None, Some(agent)) => {
                let rows: Vec<&AlignmentRow> = alignment
                    .iter()
                    .filter(|r| r.round == round_no && &r.candidate == agent)
                    .collect();
                let n: usize = rows.iter().map(|r| r.cases).sum();
                if n == 0 {
                    return Err(err(format!("no alignment scores for `{agent}`")));
                }
                rows.iter()
                    .map(|r| {
                        r.cases as f64
                            * match spec.b_metric {
                                AlignMetric::Precision => r.precision,
                                AlignMetric::Recall => r.recall,
                                AlignMetric::F1 => r.f1,
                            }
                    })
                    .sum::<f64>()
                    / n as f64
            }
            (None, None) => return Err(err("needs `agent` or `b_value`".into())),
        };
        bcr.push(BcrRow {
            label: spec.label.clone(),
            round: round_no,
            a,
            alpha: spec.alpha,
            b,
            beta: spec.beta,
            score: bcr_score(a, spec.alpha, b, spec.beta)?,
        });
    }

    Ok(Report {
        rounds: tables,
        burden,
        confidence,
        alignment,
        bcr,
        vocabulary: Vec::new(),
    })
}

/// The metric tables as CSV, one line per (round, subject).
pub fn metrics_csv(report: &Report) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "round", "subject", "auc", "auc_degenerate", "ap", "precision", "recall", "tp", "fp", "tn", "fn",
    ])?;
    for t in &report.rounds {
        for r in &t.rows {
            w.write_record([
                r.round.to_string(),
                r.subject.clone(),
                format!("{:.3}", r.auc),
                r.auc_degenerate.to_string(),
                crate::eval::fmt_opt(r.ap, 3),
                r.precision_display(),
                format!("{:.3}", r.recall),
                r.tp.to_string(),
                r.fp.to_string(),
                r.tn.to_string(),
                r.fn_.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
