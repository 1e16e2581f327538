//! Smart rounds: round 0 is independent, each later round lets every agent
//! read its in-neighbors' sealed assessments from the round before. Rounds
//! stop once the chosen metric gains less than `q`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    rag_retrieve, Agent, AgentAssessment, AgentError, AssessSettings, CaseContext, RetrievedNote,
    DEFAULT_DECISION_THRESHOLD, DEFAULT_PEER_WEIGHT, DEFAULT_RAG_WEIGHT,
};
use crate::dataset::Dataset;
use crate::eval::{EvalError, MetricRow};
use crate::mar::{MarError, MarRecorder};
use crate::notes::{self, Note};
use crate::structure::StructureTemplate;
use crate::voting::{vote_all, VoteError, VoteResult, VoteRule, VoteThresholds, VoteWeights};

pub const DEFAULT_Q: f64 = 0.040;

#[derive(Debug, Error)]
pub enum RoundsError {
    #[error("invalid rounds configuration: {0}")]
    Config(String),
    #[error("explicit rounds need at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("test set is empty")]
    EmptyTest,
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Vote(#[from] VoteError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Mar(#[from] MarError),
    #[error("round output failed: {0}")]
    Output(String),
}

/// True iff the gain `p - o` is below `q`.
pub fn early_stop(p: f64, o: f64, q: f64) -> bool {
    p - o < q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Ap,
    Auc,
    Precision,
    Recall,
}

impl MetricKind {
    pub fn of(self, row: &MetricRow) -> Option<f64> {
        match self {
            MetricKind::Ap => row.ap,
            MetricKind::Auc => Some(row.auc),
            MetricKind::Precision => row.precision,
            MetricKind::Recall => Some(row.recall),
        }
    }
}

/// Which metric row and column drive early stopping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopMetric {
    /// Agent id or vote rule name.
    pub subject: String,
    pub metric: MetricKind,
}

impl Default for StopMetric {
    fn default() -> Self {
        Self {
            subject: VoteRule::Bprv.name().into(),
            metric: MetricKind::Ap,
        }
    }
}

impl fmt::Display for StopMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?}", self.subject, self.metric)
    }
}

/// Who consults whom in explicit rounds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionGraph {
    /// Every agent reads every other agent.
    #[default]
    Complete,
    /// Nobody reads anybody.
    Empty,
    /// Agent id to the ids it reads.
    Edges(BTreeMap<String, Vec<String>>),
}

impl InteractionGraph {
    pub fn in_neighbors(&self, agent: &str, all: &[String]) -> Vec<String> {
        match self {
            InteractionGraph::Complete => all.iter().filter(|a| *a != agent).cloned().collect(),
            InteractionGraph::Empty => Vec::new(),
            InteractionGraph::Edges(e) => e.get(agent).cloned().unwrap_or_default(),
        }
    }

    fn validate(&self, ids: &[String]) -> Result<(), RoundsError> {
        if let InteractionGraph::Edges(edges) = self {
            for (to, froms) in edges {
                for id in std::iter::once(to).chain(froms) {
                    if !ids.contains(id) {
                        return Err(RoundsError::Config(format!("graph references unknown agent `{id}`")));
                    }
                }
                if froms.contains(to) {
                    return Err(RoundsError::Config(format!("graph has a self-loop on `{to}`")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundsConfig {
    pub q: f64,
    /// Total rounds including round 0.
    pub max_rounds: u32,
    pub stop_metric: StopMetric,
    /// Weight on an agent's own score in a peer update.
    pub peer_weight: f64,
    /// Weight on the retrieved note's label.
    pub rag_weight: f64,
    pub graph: InteractionGraph,
    pub decision_threshold: f64,
    pub votes: VoteThresholds,
}

impl Default for RoundsConfig {
    fn default() -> Self {
        Self {
            q: DEFAULT_Q,
            max_rounds: 5,
            stop_metric: StopMetric::default(),
            peer_weight: DEFAULT_PEER_WEIGHT,
            rag_weight: DEFAULT_RAG_WEIGHT,
            graph: InteractionGraph::Complete,
            decision_threshold: DEFAULT_DECISION_THRESHOLD,
            votes: VoteThresholds::default(),
        }
    }
}

impl RoundsConfig {
    pub fn validate(&self, agent_ids: &[String]) -> Result<(), RoundsError> {
        let bad = |m: String| Err(RoundsError::Config(m));
        if !(self.q >= 0.0) || !self.q.is_finite() {
            return bad(format!("q must be >= 0, got {}", self.q));
        }
        if self.max_rounds < 1 {
            return bad("max_rounds must be >= 1".into());
        }
        for (name, v) in [
            ("peer_weight", self.peer_weight),
            ("rag_weight", self.rag_weight),
            ("decision_threshold", self.decision_threshold),
            ("votes.precision_weighted", self.votes.precision_weighted),
            ("votes.recall_weighted", self.votes.recall_weighted),
            ("votes.bprv", self.votes.bprv),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if VoteRule::from_name(&self.stop_metric.subject).is_none()
            && !agent_ids.contains(&self.stop_metric.subject)
        {
            return bad(format!("stop metric subject `{}` is neither a vote rule nor an agent", self.stop_metric.subject));
        }
        let unique: BTreeSet<&String> = agent_ids.iter().collect();
        if unique.len() != agent_ids.len() {
            return bad("agent ids must be unique".into());
        }
        if self.max_rounds >= 2 && agent_ids.len() < 2 {
            return Err(RoundsError::TooFewAgents(agent_ids.len()));
        }
        self.graph.validate(agent_ids)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub agent_id: String,
    pub case_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopCheck {
    pub current: Option<f64>,
    pub previous: Option<f64>,
    pub q: f64,
    pub stop: bool,
}

/// Sealed snapshot of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: u32,
    /// Agent order, then case order.
    pub assessments: Vec<AgentAssessment>,
    /// Per rule, one result per voted case in case order.
    pub votes: BTreeMap<VoteRule, Vec<VoteResult>>,
    /// Agents in configured order, then the four vote rules.
    pub metrics: Vec<MetricRow>,
    pub labels: BTreeMap<String, bool>,
    pub failures: Vec<CaseFailure>,
    /// Cases every agent failed on.
    pub dropped_cases: Vec<String>,
    #[serde(default)]
    pub stop_check: Option<StopCheck>,
}

impl RoundState {
    pub fn get(&self, agent_id: &str, case_id: &str) -> Option<&AgentAssessment> {
        self.assessments
            .iter()
            .find(|a| a.agent_id == agent_id && a.case_id == case_id)
    }

    pub fn metric(&self, subject: &str) -> Option<&MetricRow> {
        self.metrics.iter().find(|m| m.subject == subject)
    }
}

/// Inputs shared by every round.
pub struct RoundInputs<'a> {
    pub agents: &'a [Box<dyn Agent>],
    pub test: &'a Dataset,
    pub train: &'a Dataset,
    pub template: &'a StructureTemplate,
    pub weights: &'a VoteWeights,
    pub seed: u64,
}

struct Prepared {
    notes: Vec<Note>,
    rag: Vec<Option<RetrievedNote>>,
}

fn prepare(inputs: &RoundInputs<'_>) -> Result<Prepared, RoundsError> {
    let any_rag = inputs.agents.iter().any(|a| a.profile().uses_rag);
    let notes = inputs
        .test
        .records
        .iter()
        .map(|r| notes::serialize(r, &inputs.test.schema))
        .collect();
    let rag = inputs
        .test
        .records
        .par_iter()
        .map(|r| {
            if any_rag {
                rag_retrieve(r, inputs.train).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Prepared { notes, rag })
}

/// Runs a single round given the previous sealed round, if any.
fn run_round(
    inputs: &RoundInputs<'_>,
    cfg: &RoundsConfig,
    prepared: &Prepared,
    round: u32,
    previous: Option<&RoundState>,
) -> Result<RoundState, RoundsError> {
    let ids: Vec<String> = inputs.agents.iter().map(|a| a.profile().id.clone()).collect();
    let settings = AssessSettings {
        peer_weight: cfg.peer_weight,
        rag_weight: cfg.rag_weight,
        decision_threshold: cfg.decision_threshold,
        prevalence: inputs.train.prevalence(),
        seed: inputs.seed,
    };
    let prev_index: BTreeMap<(&str, &str), &AgentAssessment> = previous
        .map(|p| {
            p.assessments
                .iter()
                .map(|a| ((a.agent_id.as_str(), a.case_id.as_str()), a))
                .collect()
        })
        .unwrap_or_default();
    let neighbors: Vec<Vec<String>> = ids.iter().map(|id| cfg.graph.in_neighbors(id, &ids)).collect();
    let n_cases = inputs.test.records.len();

    let results: Vec<Result<AgentAssessment, CaseFailure>> = (0..ids.len() * n_cases)
        .into_par_iter()
        .map(|job| {
            let (ai, ci) = (job / n_cases, job % n_cases);
            let agent = &inputs.agents[ai];
            let record = &inputs.test.records[ci];
            let peers: Vec<&AgentAssessment> = if previous.is_some() {
                neighbors[ai]
                    .iter()
                    .filter_map(|p| prev_index.get(&(p.as_str(), record.id.as_str())).copied())
                    .collect()
            } else {
                Vec::new()
            };
            let ctx = CaseContext {
                round,
                record,
                note: &prepared.notes[ci],
                schema: &inputs.test.schema,
                template: inputs.template,
                rag: if agent.profile().uses_rag { prepared.rag[ci].as_ref() } else { None },
                peers: &peers,
                settings,
            };
            agent.assess(&ctx).map_err(|e| CaseFailure {
                agent_id: ids[ai].clone(),
                case_id: record.id.clone(),
                error: e.to_string(),
            })
        })
        .collect();

    let mut assessments = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(a) => assessments.push(a),
            Err(f) => {
                tracing::warn!(round, agent = %f.agent_id, case = %f.case_id, error = %f.error, "assessment failed; case excluded");
                failures.push(f);
            }
        }
    }
    seal(inputs, cfg, round, assessments, failures)
}

fn seal(
    inputs: &RoundInputs<'_>,
    cfg: &RoundsConfig,
    round: u32,
    assessments: Vec<AgentAssessment>,
    failures: Vec<CaseFailure>,
) -> Result<RoundState, RoundsError> {
    let labels: BTreeMap<String, bool> = inputs
        .test
        .records
        .iter()
        .map(|r| (r.id.clone(), r.label))
        .collect();
    let mut by_case: BTreeMap<&str, Vec<&AgentAssessment>> = BTreeMap::new();
    for a in &assessments {
        by_case.entry(a.case_id.as_str()).or_default().push(a);
    }

    let mut votes: BTreeMap<VoteRule, Vec<VoteResult>> =
        VoteRule::ALL.iter().map(|r| (*r, Vec::new())).collect();
    let mut vote_labels = Vec::new();
    let mut dropped_cases = Vec::new();
    for r in &inputs.test.records {
        let Some(case) = by_case.get(r.id.as_str()) else {
            tracing::warn!(round, case = %r.id, "every agent failed; case dropped");
            dropped_cases.push(r.id.clone());
            continue;
        };
        for v in vote_all(&r.id, case, inputs.weights, &cfg.votes)? {
            votes.get_mut(&v.rule).expect("all rules present").push(v);
        }
        vote_labels.push(r.label);
    }

    let mut metrics = Vec::new();
    for agent in inputs.agents {
        let id = &agent.profile().id;
        let mine: Vec<&AgentAssessment> = assessments.iter().filter(|a| &a.agent_id == id).collect();
        if mine.is_empty() {
            tracing::warn!(round, agent = %id, "no successful assessments; metrics skipped");
            continue;
        }
        let scores: Vec<f64> = mine.iter().map(|a| a.risk_score).collect();
        let decisions: Vec<bool> = mine.iter().map(|a| a.decision).collect();
        let ls: Vec<bool> = mine.iter().map(|a| labels[&a.case_id]).collect();
        metrics.push(MetricRow::compute(id.clone(), round, &scores, &decisions, &ls)?);
    }
    if !vote_labels.is_empty() {
        for rule in VoteRule::ALL {
            let rs = &votes[&rule];
            let scores: Vec<f64> = rs.iter().map(|v| v.aggregate_score).collect();
            let decisions: Vec<bool> = rs.iter().map(|v| v.decision).collect();
            metrics.push(MetricRow::compute(rule.name(), round, &scores, &decisions, &vote_labels)?);
        }
    }

    Ok(RoundState {
        round,
        assessments,
        votes,
        metrics,
        labels,
        failures,
        dropped_cases,
        stop_check: None,
    })
}

fn stop_value(state: &RoundState, m: &StopMetric) -> Option<f64> {
    state.metric(&m.subject).and_then(|row| m.metric.of(row))
}

/// Runs rounds until the stop rule fires or `max_rounds` is reached. Every
/// sealed round's assessments are recorded in agent, then case, order.
pub fn run_rounds(
    inputs: &RoundInputs<'_>,
    cfg: &RoundsConfig,
    recorder: &mut MarRecorder<'_>,
) -> Result<Vec<RoundState>, RoundsError> {
    run_rounds_with(inputs, cfg, recorder, |_| Ok(()))
}

/// As [`run_rounds`], calling `on_sealed` after each round is recorded.
pub fn run_rounds_with(
    inputs: &RoundInputs<'_>,
    cfg: &RoundsConfig,
    recorder: &mut MarRecorder<'_>,
    mut on_sealed: impl FnMut(&RoundState) -> Result<(), RoundsError>,
) -> Result<Vec<RoundState>, RoundsError> {
    let ids: Vec<String> = inputs.agents.iter().map(|a| a.profile().id.clone()).collect();
    cfg.validate(&ids)?;
    if inputs.test.is_empty() {
        return Err(RoundsError::EmptyTest);
    }
    let prepared = prepare(inputs)?;
    let mut rounds: Vec<RoundState> = Vec::new();
    for round in 0..cfg.max_rounds {
        let mut state = run_round(inputs, cfg, &prepared, round, rounds.last())?;
        if let Some(prev) = rounds.last() {
            let current = stop_value(&state, &cfg.stop_metric);
            let previous = stop_value(prev, &cfg.stop_metric);
            let stop = match (current, previous) {
                (Some(p), Some(o)) => early_stop(p, o, cfg.q),
                _ => false,
            };
            state.stop_check = Some(StopCheck {
                current,
                previous,
                q: cfg.q,
                stop,
            });
        }
        for a in &state.assessments {
            recorder.record(a)?;
        }
        on_sealed(&state)?;
        let stop = state.stop_check.is_some_and(|c| c.stop);
        tracing::info!(round, stop, "round sealed");
        rounds.push(state);
        if stop {
            break;
        }
    }
    Ok(rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentKind, AgentProfile, MockAgent, MockParams};
    use crate::dataset::{FeatureSpec, PatientRecord, Schema};
    use crate::mar::{Clock, MemorySink};
    use crate::structure::{Clause, Direction};
    use chrono::{TimeZone, Utc};

    #[test]
    fn early_stop_rule() {
        assert!(early_stop(0.195, 0.161, 0.040));
        assert!(!early_stop(0.30, 0.10, 0.04));
        assert!(!early_stop(0.5, 0.25, 0.25));
        assert!(early_stop(0.1, 0.3, 0.04));
    }

    fn fixture() -> (Dataset, Dataset, StructureTemplate) {
        let schema = Schema::new(vec![
            FeatureSpec::new("egfr", 3, "eGFR"),
            FeatureSpec::new("bun", 3, "BUN"),
        ])
        .unwrap();
        let rec = |id: &str, a, b, l| PatientRecord {
            id: id.into(),
            bins: vec![a, b],
            label: l,
        };
        let test = Dataset::new(
            schema.clone(),
            vec![
                rec("t1", 1, 3, true),
                rec("t2", 1, 1, true),
                rec("t3", 2, 2, false),
                rec("t4", 3, 1, false),
                rec("t5", 2, 3, true),
                rec("t6", 3, 3, false),
            ],
        )
        .unwrap();
        let train = Dataset::new(
            schema,
            vec![rec("r1", 1, 3, true), rec("r2", 3, 1, false), rec("r3", 2, 2, false)],
        )
        .unwrap();
        let clause = |f: &str, b, rank, d| Clause {
            feature: f.into(),
            display_name: f.into(),
            bin: b,
            bin_count: 3,
            rank,
            direction: d,
        };
        let template = StructureTemplate::new(
            vec![
                clause("egfr", 1, 1, Direction::Increased),
                clause("bun", 3, 2, Direction::Increased),
                clause("egfr", 3, 3, Direction::Decreased),
            ],
            "AKI",
        )
        .unwrap();
        (test, train, template)
    }

    fn agents() -> Vec<Box<dyn Agent>> {
        let mk = |id: &str, kind, offset, gain, noise| -> Box<dyn Agent> {
            Box::new(
                MockAgent::new(AgentProfile::mock(
                    id,
                    kind,
                    MockParams {
                        offset,
                        gain,
                        noise,
                        seconds_per_token: 0.01,
                    },
                ))
                .unwrap(),
            )
        };
        vec![
            mk("a1", AgentKind::SfMock, -2.5, 2.0, 0.0),
            mk("a2", AgentKind::SfMock, 0.0, 3.0, 0.0),
            mk("a3", AgentKind::NsfMock, 0.0, 0.0, 0.2),
        ]
    }

    fn run(cfg: &RoundsConfig) -> (Vec<RoundState>, Vec<crate::mar::MarEntry>) {
        let (test, train, template) = fixture();
        let agents = agents();
        let weights = VoteWeights::default();
        let inputs = RoundInputs {
            agents: &agents,
            test: &test,
            train: &train,
            template: &template,
            weights: &weights,
            seed: 3,
        };
        let mut sink = MemorySink::default();
        let start = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap();
        let rounds = {
            let mut rec = MarRecorder::new("t", Clock::Logical { start }, &mut sink);
            run_rounds(&inputs, cfg, &mut rec).unwrap()
        };
        (rounds, sink.0)
    }

    #[test]
    fn single_round_bound() {
        let (rounds, mar) = run(&RoundsConfig {
            max_rounds: 1,
            ..Default::default()
        });
        assert_eq!(rounds.len(), 1);
        assert!(rounds[0].stop_check.is_none());
        assert_eq!(mar.len(), 3 * 6);
        assert_eq!(rounds[0].metrics.len(), 3 + 4);
    }

    #[test]
    fn empty_graph_repeats_round_zero() {
        let (rounds, _) = run(&RoundsConfig {
            max_rounds: 2,
            graph: InteractionGraph::Empty,
            ..Default::default()
        });
        assert_eq!(rounds.len(), 2);
        for (a, b) in rounds[0].assessments.iter().zip(&rounds[1].assessments) {
            assert_eq!(a.risk_score, b.risk_score);
            assert_eq!(a.reasoning, b.reasoning);
        }
        assert!(rounds[1].stop_check.unwrap().stop, "zero gain stops");
    }

    #[test]
    fn explicit_round_uses_snapshot() {
        let cfg = RoundsConfig {
            max_rounds: 2,
            q: 0.0,
            ..Default::default()
        };
        let (rounds, mar) = run(&cfg);
        assert_eq!(rounds.len(), 2);
        assert_eq!(mar.len(), 2 * 3 * 6);
        // round 1 of a1 on t1 equals the peer update of its round-0 score
        let own = rounds[0].get("a1", "t1").unwrap();
        let peers = [rounds[0].get("a2", "t1").unwrap(), rounds[0].get("a3", "t1").unwrap()];
        let expected = crate::agents::peer_update(own.risk_score, &peers, cfg.peer_weight);
        assert!((rounds[1].get("a1", "t1").unwrap().risk_score - expected).abs() < 1e-12);
        // MAR order: round, agent, case
        assert_eq!((mar[0].round, mar[0].an.as_str(), mar[0].case_id.as_str()), (0, "a1", "t1"));
        assert_eq!((mar[18].round, mar[18].an.as_str()), (1, "a1"));
    }

    #[test]
    fn deterministic_and_order_independent() {
        let cfg = RoundsConfig {
            max_rounds: 3,
            q: 0.0,
            ..Default::default()
        };
        let (a, ma) = run(&cfg);
        let (b, mb) = run(&cfg);
        assert_eq!(a, b);
        assert_eq!(ma, mb);

        // reversing the case order leaves every assessment unchanged
        let (mut test, train, template) = fixture();
        test.records.reverse();
        let agents = agents();
        let weights = VoteWeights::default();
        let inputs = RoundInputs {
            agents: &agents,
            test: &test,
            train: &train,
            template: &template,
            weights: &weights,
            seed: 3,
        };
        let mut sink = MemorySink::default();
        let rev = {
            let mut rec = MarRecorder::new("t", Clock::System, &mut sink);
            run_rounds(&inputs, &cfg, &mut rec).unwrap()
        };
        for (ra, rb) in a.iter().zip(&rev) {
            for x in &ra.assessments {
                assert_eq!(Some(x), rb.get(&x.agent_id, &x.case_id));
            }
        }
    }

    #[test]
    fn validation() {
        let ids: Vec<String> = vec!["a".into(), "b".into()];
        assert!(RoundsConfig::default().validate(&ids).is_ok());
        let neg = RoundsConfig {
            q: -0.1,
            ..Default::default()
        };
        assert!(neg.validate(&ids).is_err());
        assert!(matches!(
            RoundsConfig::default().validate(&ids[..1]),
            Err(RoundsError::TooFewAgents(1))
        ));
        let loops = RoundsConfig {
            graph: InteractionGraph::Edges([("a".to_string(), vec!["a".to_string()])].into()),
            ..Default::default()
        };
        assert!(loops.validate(&ids).is_err());
        let cfg: RoundsConfig = serde_json::from_str(r#"{"graph": {"edges": {"a": ["b"]}}, "max_rounds": 2}"#).unwrap();
        assert_eq!(cfg.graph.in_neighbors("a", &ids), vec!["b".to_string()]);
        assert!(cfg.graph.in_neighbors("b", &ids).is_empty());
    }

    struct Flaky(AgentProfile);

    impl Agent for Flaky {
        fn profile(&self) -> &AgentProfile {
            &self.0
        }
        fn assess(&self, ctx: &CaseContext<'_>) -> Result<AgentAssessment, AgentError> {
            if ctx.record.id == "t2" || ctx.record.id == "t3" && self.0.id == "bad" {
                Err(AgentError::Parse("garbled".into()))
            } else {
                crate::agents::sf_assess(&self.0, ctx)
            }
        }
    }

    #[test]
    fn failures_are_excluded() {
        let (test, train, template) = fixture();
        let agents: Vec<Box<dyn Agent>> = vec![
            Box::new(Flaky(AgentProfile::mock("good", AgentKind::SfMock, MockParams::default()))),
            Box::new(Flaky(AgentProfile::mock("bad", AgentKind::SfMock, MockParams::default()))),
        ];
        let weights = VoteWeights::default();
        let inputs = RoundInputs {
            agents: &agents,
            test: &test,
            train: &train,
            template: &template,
            weights: &weights,
            seed: 0,
        };
        let mut sink = MemorySink::default();
        let mut rec = MarRecorder::new("t", Clock::System, &mut sink);
        let rounds = run_rounds(
            &inputs,
            &RoundsConfig {
                max_rounds: 1,
                ..Default::default()
            },
            &mut rec,
        )
        .unwrap();
        let r = &rounds[0];
        assert_eq!(r.failures.len(), 3);
        assert_eq!(r.dropped_cases, vec!["t2".to_string()]);
        assert_eq!(r.metric("good").unwrap().cases, 5);
        assert_eq!(r.metric("bad").unwrap().cases, 4);
        assert_eq!(r.votes[&VoteRule::Majority].len(), 5);
    }
}
