//! Run configuration and end-to-end wiring used by the CLI.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{build_agent, rag_retrieve, Agent, AgentKind, AgentProfile, AssessSettings, CaseContext};
use crate::dataset::{load_csv, stratified_split, synth_generate, Dataset, Dummy, Schema, Split, SplitRatios};
use crate::eval::{confusion_metrics, OneHotEmbedding};
use crate::mar::{read_all, Clock, CodeMap, MarRecorder, MarWriter};
use crate::notes::{self, Note};
use crate::prosocial::{gate, IssueFlag, ProsocialDecision, DEFAULT_THRESHOLD};
use crate::report::{build_report, metrics_csv, vocabulary_rows, Report, ReportConfig};
use crate::rounds::{run_rounds_with, RoundInputs, RoundState, RoundsConfig, RoundsError};
use crate::structure::{
    fit_reference_model, rank_features, render_template, sample_background, FitOptions, GlobalRanking,
    ReferenceModel, StructureTemplate, MAX_SHAPLEY_DUMMIES,
};
use crate::voting::VoteWeights;

pub const EXIT_OK: i32 = 0;
pub const EXIT_GATE_DENIED: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;
pub const EXIT_USAGE: i32 = 64;

pub const TEMPLATE_FILE: &str = "template.json";
pub const MAR_FILE: &str = "mar.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("prosocial gate denied the run (pscore {:.3} < threshold {})", .0.pscore, .0.threshold)]
    GateDenied(ProsocialDecision),
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => EXIT_CONFIG,
            PipelineError::GateDenied(_) => EXIT_GATE_DENIED,
            PipelineError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Runtime(e.to_string())
}

fn config(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedWeight {
    pub feature: String,
    pub bin: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
    },
    Synth {
        n: usize,
        #[serde(default)]
        planted: Vec<PlantedWeight>,
        #[serde(default)]
        intercept: f64,
        #[serde(default)]
        synth_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: SplitRatios,
    pub split_seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: SplitRatios::DEFAULT,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureConfig {
    pub k: usize,
    pub background_size: usize,
    pub background_seed: u64,
    /// Cap on validation records used for the ranking; all when absent.
    pub eval_size: Option<usize>,
    pub fit: FitOptions,
    pub outcome_name: String,
    /// Reuse a previously learned template instead of fitting.
    pub template_path: Option<PathBuf>,
}

impl Default for StructureConfig {
    fn default() -> Self {
        Self {
            k: 10,
            background_size: 64,
            background_seed: 0,
            eval_size: None,
            fit: FitOptions::default(),
            outcome_name: "acute kidney injury (AKI)".into(),
            template_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProsocialConfig {
    pub flags: Vec<IssueFlag>,
    #[serde(default = "default_gate_threshold")]
    pub threshold: f64,
}

fn default_gate_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Logical when every agent is a mock, wall clock otherwise.
    #[default]
    Auto,
    System,
    Logical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarConfig {
    /// JSON `{abt_code: {icd9, icd10, snomed}}`; the built-in table otherwise.
    pub code_map: Option<PathBuf>,
    /// JSON `{agent_name: person_name}`.
    pub aliases: Option<PathBuf>,
    pub clock: ClockMode,
    pub logical_start: DateTime<Utc>,
}

impl Default for MarConfig {
    fn default() -> Self {
        Self {
            code_map: None,
            aliases: None,
            clock: ClockMode::Auto,
            logical_start: Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_run_id")]
    pub run_id: String,
    pub schema: Schema,
    pub data: DataSource,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub structure: StructureConfig,
    pub prosocial: ProsocialConfig,
    pub agents: Vec<AgentProfile>,
    #[serde(default)]
    pub agent_seed: u64,
    #[serde(default)]
    pub rounds: RoundsConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub mar: MarConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_run_id() -> String {
    "run".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Sets `a.b.c=value` on a JSON document. `value` is parsed as JSON when it
/// can be, else taken as a string.
pub fn apply_override(doc: &mut serde_json::Value, assignment: &str) -> Result<(), PipelineError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            serde_json::Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| serde_json::Value::Object(Default::default()))
            }
            serde_json::Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| config(format!("`{part}` in `{path}` is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| config(format!("index {idx} out of range ({len}) in `{path}`")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(config(format!("`{path}` does not name an object field"))),
        };
    }
    Err(config("empty override path"))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads, overrides, resolves paths relative to the file and validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
        let mut doc: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::Csv { path } = &mut cfg.data {
            resolve(base, path);
        }
        if let Some(p) = &mut cfg.structure.template_path {
            resolve(base, p);
        }
        for p in [&mut cfg.mar.code_map, &mut cfg.mar.aliases].into_iter().flatten() {
            resolve(base, p);
        }
        resolve(base, &mut cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn agent_ids(&self) -> Vec<String> {
        self.agents.iter().map(|a| a.id.clone()).collect()
    }

    /// Every range and reference check, run before any work starts.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.run_id.is_empty() {
            return Err(config("run_id must be non-empty"));
        }
        match &self.data {
            DataSource::Csv { path } => {
                if !path.is_file() {
                    return Err(config(format!("data file {} does not exist", path.display())));
                }
            }
            DataSource::Synth { n, planted, intercept, .. } => {
                if *n == 0 {
                    return Err(config("synth n must be >= 1"));
                }
                if !intercept.is_finite() {
                    return Err(config("synth intercept must be finite"));
                }
                for p in planted {
                    if !self.schema.contains_dummy(&Dummy::new(p.feature.clone(), p.bin)) || !p.weight.is_finite() {
                        return Err(config(format!("planted weight {}={} is not a valid dummy", p.feature, p.bin)));
                    }
                }
            }
        }
        self.split.ratios.validate().map_err(config)?;

        let s = &self.structure;
        match &s.template_path {
            Some(p) if !p.is_file() => return Err(config(format!("template {} does not exist", p.display()))),
            Some(_) => {}
            None => {
                let d = self.schema.dummy_count();
                if d > MAX_SHAPLEY_DUMMIES {
                    return Err(config(format!(
                        "{d} dummies exceed the exact attribution limit of {MAX_SHAPLEY_DUMMIES}; reduce the number of features or bins"
                    )));
                }
                if s.k == 0 || s.k > d {
                    return Err(config(format!("k = {} must lie in 1..={d}", s.k)));
                }
            }
        }
        if s.background_size == 0 || s.eval_size == Some(0) {
            return Err(config("background_size and eval_size must be >= 1"));
        }
        if s.fit.epochs == 0 || !(s.fit.learning_rate > 0.0) || !(s.fit.l2 >= 0.0) {
            return Err(config("fit needs epochs >= 1, learning_rate > 0 and l2 >= 0"));
        }

        gate(&self.prosocial.flags, self.prosocial.threshold).map_err(config)?;
        if !(0.0..=1.0).contains(&self.prosocial.threshold) {
            return Err(config("prosocial threshold must lie in [0, 1]"));
        }

        if self.agents.is_empty() {
            return Err(config("at least one agent is required"));
        }
        let mut names = BTreeSet::new();
        for a in &self.agents {
            a.validate().map_err(config)?;
            if !names.insert(&a.name) {
                return Err(config(format!("agent name `{}` is not unique", a.name)));
            }
            if let Some(var) = a.remote.as_ref().and_then(|r| r.api_key_env.as_ref()) {
                if std::env::var_os(var).is_none() {
                    return Err(config(format!("agent `{}` needs environment variable `{var}`", a.id)));
                }
            }
        }
        let ids = self.agent_ids();
        self.rounds.validate(&ids).map_err(config)?;

        if let Some(r) = &self.report.reference_agent {
            if !ids.contains(r) {
                return Err(config(format!("report reference agent `{r}` is not configured")));
            }
        }
        for b in &self.report.bcr {
            if (b.alpha + b.beta - 1.0).abs() > 1e-9 {
                return Err(config(format!("BCR `{}`: alpha + beta must be 1", b.label)));
            }
            if b.agent.as_ref().is_some_and(|a| !ids.contains(a)) {
                return Err(config(format!("BCR `{}` names an unknown agent", b.label)));
            }
            if b.agent.is_none() && (b.a_value.is_none() || b.b_value.is_none()) {
                return Err(config(format!("BCR `{}` needs an agent or both values", b.label)));
            }
        }
        self.code_map()?;
        Ok(())
    }

    pub fn code_map(&self) -> Result<CodeMap, PipelineError> {
        let mut map = match &self.mar.code_map {
            Some(p) => CodeMap::from_json(&fs::read_to_string(p).map_err(|e| config(format!("{}: {e}", p.display())))?)
                .map_err(config)?,
            None => CodeMap::default(),
        };
        if let Some(p) = &self.mar.aliases {
            let text = fs::read_to_string(p).map_err(|e| config(format!("{}: {e}", p.display())))?;
            let aliases: BTreeMap<String, String> = serde_json::from_str(&text).map_err(config)?;
            map = map.with_aliases(aliases);
        }
        Ok(map)
    }

    pub fn clock(&self) -> Clock {
        let logical = Clock::Logical {
            start: self.mar.logical_start,
        };
        match self.mar.clock {
            ClockMode::System => Clock::System,
            ClockMode::Logical => logical,
            ClockMode::Auto if self.agents.iter().all(|a| a.kind != AgentKind::Remote) => logical,
            ClockMode::Auto => Clock::System,
        }
    }
}

pub fn check_gate(cfg: &RunConfig) -> Result<ProsocialDecision, PipelineError> {
    gate(&cfg.prosocial.flags, cfg.prosocial.threshold).map_err(config)
}

/// Loads or synthesizes the data and assigns split tags.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, PipelineError> {
    let ds = match &cfg.data {
        DataSource::Csv { path } => load_csv(path, &cfg.schema).map_err(config)?,
        DataSource::Synth {
            n,
            planted,
            intercept,
            synth_seed,
        } => {
            let planted: BTreeMap<Dummy, f64> = planted
                .iter()
                .map(|p| (Dummy::new(p.feature.clone(), p.bin), p.weight))
                .collect();
            synth_generate(&cfg.schema, *n, &planted, *intercept, *synth_seed).map_err(config)?
        }
    };
    stratified_split(&ds, cfg.split.ratios, cfg.split.split_seed).map_err(runtime)
}

/// Learned structure as written to `template.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateDoc {
    pub template: StructureTemplate,
    #[serde(default)]
    pub ranking: Option<GlobalRanking>,
    #[serde(default)]
    pub model: Option<ReferenceModel>,
}

impl TemplateDoc {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("template serializes");
        s.push('\n');
        s
    }
}

pub fn learn(cfg: &RunConfig, ds: &Dataset) -> Result<TemplateDoc, PipelineError> {
    let s = &cfg.structure;
    let train = ds.subset(Split::Train);
    let valid = ds.subset(Split::Valid);
    let fit = fit_reference_model(&train, s.fit).map_err(runtime)?;
    let background = sample_background(&train, s.background_size, s.background_seed);
    // rank on the validation split; fall back to train when it is empty
    let pool = if valid.is_empty() { train } else { valid };
    let eval_set = match s.eval_size {
        Some(n) if n < pool.len() => Dataset::new(
            pool.schema.clone(),
            sample_background(&pool, n, s.background_seed.wrapping_add(1)),
        )
        .map_err(runtime)?,
        _ => pool,
    };
    let ranking = rank_features(&fit.model, &eval_set, &background, s.k).map_err(runtime)?;
    let template = render_template(&ranking, &cfg.schema, &s.outcome_name).map_err(runtime)?;
    tracing::info!(k = template.k(), "structure template rendered");
    Ok(TemplateDoc {
        template,
        ranking: Some(ranking),
        model: Some(fit.model),
    })
}

fn load_template(cfg: &RunConfig, path: &Path) -> Result<TemplateDoc, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
    let doc: TemplateDoc = serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))?;
    for c in &doc.template.clauses {
        if !cfg.schema.contains_dummy(&Dummy::new(c.feature.clone(), c.bin)) {
            return Err(config(format!("template clause {}={} is not in the schema", c.feature, c.bin)));
        }
    }
    Ok(doc)
}

pub fn notes_preview(cfg: &RunConfig, split: Option<Split>, limit: Option<usize>) -> Result<Vec<Note>, PipelineError> {
    let ds = load_dataset(cfg)?;
    let picked = match split {
        Some(s) => ds.subset(s),
        None => ds,
    };
    Ok(picked
        .records
        .iter()
        .take(limit.unwrap_or(usize::MAX))
        .map(|r| notes::serialize(r, &picked.schema))
        .collect())
}

/// Vote weights from configured validation metrics; missing values are
/// measured by an independent pass of the agent over the valid split.
pub fn vote_weights(
    cfg: &RunConfig,
    agents: &[Box<dyn Agent>],
    valid: &Dataset,
    train: &Dataset,
    template: &StructureTemplate,
) -> Result<VoteWeights, PipelineError> {
    use rayon::prelude::*;
    let settings = AssessSettings {
        peer_weight: cfg.rounds.peer_weight,
        rag_weight: cfg.rounds.rag_weight,
        decision_threshold: cfg.rounds.decision_threshold,
        prevalence: train.prevalence(),
        seed: cfg.agent_seed,
    };
    let mut weights = VoteWeights::default();
    for agent in agents {
        let p = agent.profile();
        let (mut precision, mut recall) = (p.valid_precision, p.valid_recall);
        if (precision.is_none() || recall.is_none()) && !valid.is_empty() {
            let outcomes: Vec<Option<(bool, bool)>> = valid
                .records
                .par_iter()
                .map(|r| {
                    let note = notes::serialize(r, &valid.schema);
                    let rag = if p.uses_rag { rag_retrieve(r, train).ok() } else { None };
                    let ctx = CaseContext {
                        round: 0,
                        record: r,
                        note: &note,
                        schema: &valid.schema,
                        template,
                        rag: rag.as_ref(),
                        peers: &[],
                        settings,
                    };
                    match agent.assess(&ctx) {
                        Ok(a) => Some((a.decision, r.label)),
                        Err(e) => {
                            tracing::warn!(agent = %p.id, case = %r.id, error = %e, "validation assessment failed");
                            None
                        }
                    }
                })
                .collect();
            let (d, l): (Vec<bool>, Vec<bool>) = outcomes.into_iter().flatten().unzip();
            if let Ok(c) = confusion_metrics(&d, &l) {
                precision = precision.or(c.precision());
                if recall.is_none() && c.tp + c.fn_ > 0 {
                    recall = Some(c.recall());
                }
            }
        }
        tracing::info!(agent = %p.id, ?precision, ?recall, "vote weights");
        weights.precision.insert(p.id.clone(), precision);
        weights.recall.insert(p.id.clone(), recall);
    }
    Ok(weights)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Replace an existing record log and round files.
    pub force: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub decision: ProsocialDecision,
    pub rounds: usize,
    pub stopped_early: bool,
    pub output_dir: PathBuf,
}

fn write(path: &Path, contents: &str) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn round_file(dir: &Path, n: u32) -> PathBuf {
    dir.join(format!("round_{n}.json"))
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializes");
    s.push('\n');
    s
}

/// Gate, learn (or load) the template, run rounds, write the record log,
/// round files and report. A denied gate writes nothing.
pub fn run(cfg: &RunConfig, opts: RunOptions) -> Result<RunSummary, PipelineError> {
    let decision = check_gate(cfg)?;
    if !decision.permitted {
        return Err(PipelineError::GateDenied(decision));
    }
    let out = &cfg.output_dir;
    let mar_path = out.join(MAR_FILE);
    if mar_path.exists() {
        if !opts.force {
            return Err(config(format!("{} exists; pass --force to replace it", mar_path.display())));
        }
        fs::remove_file(&mar_path).map_err(runtime)?;
    }
    if out.is_dir() && opts.force {
        for entry in fs::read_dir(out).map_err(runtime)? {
            let path = entry.map_err(runtime)?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("round_") && name.ends_with(".json") {
                fs::remove_file(&path).map_err(runtime)?;
            }
        }
    }

    let ds = load_dataset(cfg)?;
    let doc = match &cfg.structure.template_path {
        Some(p) => load_template(cfg, p)?,
        None => learn(cfg, &ds)?,
    };
    let train = ds.subset(Split::Train);
    let valid = ds.subset(Split::Valid);
    let test = ds.subset(Split::Test);
    let agents: Vec<Box<dyn Agent>> = cfg
        .agents
        .iter()
        .cloned()
        .map(build_agent)
        .collect::<Result<_, _>>()
        .map_err(config)?;
    let weights = vote_weights(cfg, &agents, &valid, &train, &doc.template)?;
    let codes = cfg.code_map()?;

    fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    write(&out.join(TEMPLATE_FILE), &doc.to_json())?;
    let mut writer = MarWriter::create(&mar_path).map_err(runtime)?;
    let inputs = RoundInputs {
        agents: &agents,
        test: &test,
        train: &train,
        template: &doc.template,
        weights: &weights,
        seed: cfg.agent_seed,
    };
    let rounds = {
        let mut recorder = MarRecorder::new(cfg.run_id.clone(), cfg.clock(), &mut writer);
        run_rounds_with(&inputs, &cfg.rounds, &mut recorder, |state| {
            fs::write(round_file(out, state.round), to_pretty(state))
                .map_err(|e| RoundsError::Output(e.to_string()))
        })
        .map_err(runtime)?
    };
    drop(writer);

    let entries = read_all(&mar_path).map_err(runtime)?;
    let mut report = build_report(&rounds, &entries, &cfg.report, &OneHotEmbedding).map_err(runtime)?;
    report.vocabulary = vocabulary_rows(&entries, &codes);
    write(&out.join(REPORT_FILE), &report.to_json())?;
    if cfg.report.csv {
        write(&out.join(METRICS_CSV_FILE), &metrics_csv(&report).map_err(runtime)?)?;
    }
    Ok(RunSummary {
        decision,
        rounds: rounds.len(),
        stopped_early: rounds.last().and_then(|r| r.stop_check).is_some_and(|c| c.stop),
        output_dir: out.clone(),
    })
}

/// Round files in a run directory, in round order.
pub fn read_rounds(dir: &Path) -> Result<Vec<RoundState>, PipelineError> {
    let mut found: Vec<(u32, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))? {
        let path = entry.map_err(runtime)?.path();
        let n = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("round_"))
            .and_then(|n| n.strip_suffix(".json"))
            .and_then(|n| n.parse().ok());
        if let Some(n) = n {
            found.push((n, path));
        }
    }
    found.sort();
    found
        .into_iter()
        .map(|(_, p)| {
            let text = fs::read_to_string(&p).map_err(runtime)?;
            serde_json::from_str(&text).map_err(|e| runtime(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Recomputes the report of an existing run directory.
pub fn report_from_dir(dir: &Path, cfg: &ReportConfig, codes: &CodeMap) -> Result<Report, PipelineError> {
    let rounds = read_rounds(dir)?;
    let entries = read_all(dir.join(MAR_FILE)).map_err(runtime)?;
    let mut report = build_report(&rounds, &entries, cfg, &OneHotEmbedding).map_err(runtime)?;
    report.vocabulary = vocabulary_rows(&entries, codes);
    Ok(report)
}
