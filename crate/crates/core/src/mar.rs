//! Multiagent records: an append-only JSONL log of agent outputs, code
//! mapping to external vocabularies, and burden/confidence summaries.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{bin_confidence, normalize_code, AgentAssessment, ConfidenceBin, NEGATIVE_CODE, POSITIVE_CODE};
use crate::eval::CaseType;

#[derive(Debug, Error)]
pub enum MarError {
    #[error("log I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("log line {line} is not a valid entry: {source}")]
    Decode { line: usize, source: serde_json::Error },
    #[error("invalid entry: {0}")]
    Invalid(String),
    #[error("log `{0}` already exists")]
    Exists(PathBuf),
    #[error("no mapping for `{code}` in {target}")]
    UnknownCode { code: String, target: String },
    #[error("mapping table is invalid: {0}")]
    Table(String),
    #[error("group {agent} round {round} is empty")]
    EmptyGroup { agent: String, round: u32 },
    #[error("no outcome for agent `{agent}` round {round} case `{case_id}`")]
    MissingOutcome { agent: String, round: u32, case_id: String },
}

/// One persisted agent output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarEntry {
    pub run_id: String,
    pub round: u32,
    pub case_id: String,
    /// Agent name.
    pub an: String,
    /// Agent diagnosis code.
    pub ad: String,
    /// Agent diagnostic reasoning.
    pub adr: String,
    pub acl_label: ConfidenceBin,
    pub acl_numeric: f64,
    /// Documentation length in tokens.
    pub adl: usize,
    /// Seconds spent on documentation.
    pub atsd: f64,
    pub ts: DateTime<Utc>,
}

impl MarEntry {
    pub fn from_assessment(run_id: &str, a: &AgentAssessment, ts: DateTime<Utc>) -> Self {
        Self {
            run_id: run_id.to_string(),
            round: a.round,
            case_id: a.case_id.clone(),
            an: a.agent_name.clone(),
            ad: normalize_code(&a.diagnosis_code)
                .unwrap_or(&a.diagnosis_code)
                .to_string(),
            adr: a.reasoning.clone(),
            acl_label: a.confidence_bin,
            acl_numeric: a.confidence,
            adl: a.doc_tokens,
            atsd: a.doc_seconds,
            ts,
        }
    }

    pub fn validate(&self) -> Result<(), MarError> {
        if self.ad != POSITIVE_CODE && self.ad != NEGATIVE_CODE {
            return Err(MarError::Invalid(format!("unknown diagnosis code `{}`", self.ad)));
        }
        let bin = bin_confidence(self.acl_numeric).map_err(|e| MarError::Invalid(e.to_string()))?;
        if bin != self.acl_label {
            return Err(MarError::Invalid(format!(
                "confidence label {} does not match numeric {}",
                self.acl_label.label(),
                self.acl_numeric
            )));
        }
        if !self.atsd.is_finite() || self.atsd < 0.0 {
            return Err(MarError::Invalid(format!("atsd {} must be finite and >= 0", self.atsd)));
        }
        if self.run_id.is_empty() || self.case_id.is_empty() || self.an.is_empty() {
            return Err(MarError::Invalid("run_id, case_id and an must be non-empty".into()));
        }
        Ok(())
    }

    pub fn decision(&self) -> bool {
        self.ad == POSITIVE_CODE
    }
}

/// Destination for validated entries.
pub trait MarSink {
    fn append(&mut self, entry: &MarEntry) -> Result<(), MarError>;
}

/// In-memory sink, mostly for tests.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemorySink(pub Vec<MarEntry>);

impl MarSink for MemorySink {
    fn append(&mut self, entry: &MarEntry) -> Result<(), MarError> {
        entry.validate()?;
        self.0.push(entry.clone());
        Ok(())
    }
}

/// Append-only JSONL writer. Each append is flushed and synced to disk
/// before it returns.
pub struct MarWriter {
    path: PathBuf,
    file: File,
    lines: usize,
}

impl MarWriter {
    /// Creates a new log, failing if one is already there.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, MarError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => MarError::Exists(path.clone()),
                _ => MarError::Io(e),
            })?;
        Ok(Self { path, file, lines: 0 })
    }

    /// Opens an existing log (or creates one) for further appends.
    pub fn open_append(path: impl AsRef<Path>) -> Result<Self, MarError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file, lines: 0 })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Entries appended through this writer.
    pub fn appended(&self) -> usize {
        self.lines
    }
}

impl MarSink for MarWriter {
    fn append(&mut self, entry: &MarEntry) -> Result<(), MarError> {
        entry.validate()?;
        let mut line = serde_json::to_vec(entry).map_err(|e| MarError::Invalid(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        self.file.sync_data()?;
        self.lines += 1;
        Ok(())
    }
}

pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<MarEntry>, MarError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: MarEntry =
            serde_json::from_str(&line).map_err(|source| MarError::Decode { line: i + 1, source })?;
        out.push(entry);
    }
    Ok(out)
}

/// Timestamp source. `Logical` yields `start + n` seconds for the n-th
/// entry so logs of deterministic runs are byte-identical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clock {
    System,
    Logical { start: DateTime<Utc> },
}

/// Turns assessments into entries and forwards them to a sink.
pub struct MarRecorder<'a> {
    run_id: String,
    clock: Clock,
    sink: &'a mut dyn MarSink,
    seq: i64,
}

impl<'a> MarRecorder<'a> {
    pub fn new(run_id: impl Into<String>, clock: Clock, sink: &'a mut dyn MarSink) -> Self {
        Self {
            run_id: run_id.into(),
            clock,
            sink,
            seq: 0,
        }
    }

    pub fn record(&mut self, a: &AgentAssessment) -> Result<MarEntry, MarError> {
        let ts = match self.clock {
            Clock::System => Utc::now(),
            Clock::Logical { start } => start + Duration::seconds(self.seq),
        };
        let entry = MarEntry::from_assessment(&self.run_id, a, ts);
        self.sink.append(&entry)?;
        self.seq += 1;
        Ok(entry)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Icd9,
    Icd10,
    Snomed,
    /// Agent name to a person name via the alias table.
    PersonName,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Icd9 => "icd9",
            Target::Icd10 => "icd10",
            Target::Snomed => "snomed",
            Target::PersonName => "person_name",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeMapping {
    pub abt_code: String,
    pub icd9: String,
    pub icd10: String,
    pub snomed: String,
}

#[derive(Debug, Clone, Deserialize)]
struct ExternalCodes {
    icd9: String,
    icd10: String,
    snomed: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMap {
    codes: BTreeMap<String, CodeMapping>,
    aliases: BTreeMap<String, String>,
}

impl Default for CodeMap {
    fn default() -> Self {
        let mut codes = BTreeMap::new();
        codes.insert(
            POSITIVE_CODE.to_string(),
            CodeMapping {
                abt_code: POSITIVE_CODE.into(),
                icd9: "589.4".into(),
                icd10: "N17.9".into(),
                snomed: "140031000119103".into(),
            },
        );
        Self {
            codes,
            aliases: BTreeMap::new(),
        }
    }
}

impl CodeMap {
    /// Parses `{abt_code: {icd9, icd10, snomed}}`.
    pub fn from_json(text: &str) -> Result<Self, MarError> {
        let raw: BTreeMap<String, ExternalCodes> =
            serde_json::from_str(text).map_err(|e| MarError::Table(e.to_string()))?;
        let mut codes = BTreeMap::new();
        for (code, ext) in raw {
            let canonical = normalize_code(&code).map(str::to_string).unwrap_or(code);
            let mapping = CodeMapping {
                abt_code: canonical.clone(),
                icd9: ext.icd9,
                icd10: ext.icd10,
                snomed: ext.snomed,
            };
            if codes.insert(canonical.clone(), mapping).is_some() {
                return Err(MarError::Table(format!("duplicate code `{canonical}`")));
            }
        }
        Ok(Self {
            codes,
            aliases: BTreeMap::new(),
        })
    }

    pub fn with_aliases(mut self, aliases: BTreeMap<String, String>) -> Self {
        self.aliases = aliases;
        self
    }

    pub fn mappings(&self) -> impl Iterator<Item = &CodeMapping> {
        self.codes.values()
    }

    /// Maps a diagnosis code (or, for [`Target::PersonName`], an agent name).
    pub fn map_code(&self, ad: &str, target: Target) -> Result<&str, MarError> {
        let unknown = || MarError::UnknownCode {
            code: ad.to_string(),
            target: target.name().to_string(),
        };
        if target == Target::PersonName {
            return self.aliases.get(ad).map(String::as_str).ok_or_else(unknown);
        }
        let code = normalize_code(ad).unwrap_or(ad);
        let m = self.codes.get(code).ok_or_else(unknown)?;
        Ok(match target {
            Target::Icd9 => &m.icd9,
            Target::Icd10 => &m.icd10,
            Target::Snomed => &m.snomed,
            Target::PersonName => unreachable!(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
}

/// Linear interpolation between closest ranks on `(n - 1) * p`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            p25: quantile(&v, 0.25),
            p50: quantile(&v, 0.5),
            p75: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurdenRow {
    pub agent: String,
    pub round: u32,
    pub entries: usize,
    pub atsd: Summary,
    pub adl: Summary,
}

/// One row per (agent name, round), ordered by agent then round.
pub fn burden_stats(entries: &[MarEntry]) -> Result<Vec<BurdenRow>, MarError> {
    let mut groups: BTreeMap<(&str, u32), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for e in entries {
        let g = groups.entry((&e.an, e.round)).or_default();
        g.0.push(e.atsd);
        g.1.push(e.adl as f64);
    }
    groups
        .into_iter()
        .map(|((agent, round), (atsd, adl))| {
            let empty = || MarError::EmptyGroup {
                agent: agent.to_string(),
                round,
            };
            Ok(BurdenRow {
                agent: agent.to_string(),
                round,
                entries: atsd.len(),
                atsd: Summary::of(&atsd).ok_or_else(empty)?,
                adl: Summary::of(&adl).ok_or_else(empty)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub agent: String,
    pub round: u32,
    pub case_type: CaseType,
    pub cases: usize,
    pub high_pct: f64,
    pub medium_pct: f64,
    pub low_pct: f64,
}

/// Outcome lookup keyed by (agent name, round, case id).
pub type Outcomes = BTreeMap<(String, u32, String), CaseType>;

/// Case types from each entry's own diagnosis and the true labels.
pub fn outcomes_from_labels(entries: &[MarEntry], labels: &BTreeMap<String, bool>) -> Outcomes {
    entries
        .iter()
        .filter_map(|e| {
            let label = *labels.get(&e.case_id)?;
            Some((
                (e.an.clone(), e.round, e.case_id.clone()),
                CaseType::of(e.decision(), label),
            ))
        })
        .collect()
}

/// Percentage of entries in each confidence bin per non-empty
/// (agent, round, case type) cell.
pub fn confidence_breakdown(entries: &[MarEntry], outcomes: &Outcomes) -> Result<Vec<BreakdownRow>, MarError> {
    let mut cells: BTreeMap<(&str, u32, CaseType), [usize; 3]> = BTreeMap::new();
    for e in entries {
        let key = (e.an.clone(), e.round, e.case_id.clone());
        let ct = *outcomes.get(&key).ok_or_else(|| MarError::MissingOutcome {
            agent: e.an.clone(),
            round: e.round,
            case_id: e.case_id.clone(),
        })?;
        let counts = cells.entry((&e.an, e.round, ct)).or_default();
        match e.acl_label {
            ConfidenceBin::High => counts[0] += 1,
            ConfidenceBin::Medium => counts[1] += 1,
            ConfidenceBin::Low => counts[2] += 1,
        }
    }
    Ok(cells
        .into_iter()
        .map(|((agent, round, case_type), [h, m, l])| {
            let n = (h + m + l) as f64;
            BreakdownRow {
                agent: agent.to_string(),
                round,
                case_type,
                cases: h + m + l,
                high_pct: 100.0 * h as f64 / n,
                medium_pct: 100.0 * m as f64 / n,
                low_pct: 100.0 * l as f64 / n,
            }
        })
        .collect())
}
