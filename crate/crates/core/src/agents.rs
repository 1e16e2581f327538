//! Diagnostic agents.
//!
//! Two deterministic mock families stand in for language models:
//! structure-following agents score a case from the clauses of the structure
//! template it matches, and non-structure-following agents start from the
//! training prevalence plus seeded per-case noise. Both can blend in the
//! label of the nearest training note (retrieval) and the previous round's
//! peer assessments. [`RemoteAgent`] talks to a chat-completion endpoint
//! instead.

use std::fmt::Write as _;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{sigmoid, Dataset, PatientRecord, Schema};
use crate::notes::{self, Note, Tokenizer, WhitespaceTokenizer};
use crate::structure::StructureTemplate;

pub const POSITIVE_CODE: &str = "1.01";
pub const NEGATIVE_CODE: &str = "0.00";
pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;
pub const DEFAULT_PEER_WEIGHT: f64 = 0.5;
pub const DEFAULT_RAG_WEIGHT: f64 = 0.25;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("reply could not be parsed: {0}")]
    Parse(String),
    #[error("reply failed validation: {0}")]
    Validation(String),
    #[error("agent misconfigured: {0}")]
    Config(String),
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceRange(f64),
    #[error("training set is empty")]
    EmptyTraining,
}

/// Maps an external diagnosis code onto the canonical set. `I.01` is a
/// known typographical variant of the positive code.
pub fn normalize_code(code: &str) -> Option<&'static str> {
    match code.trim() {
        "1.01" | "I.01" => Some(POSITIVE_CODE),
        "0.00" => Some(NEGATIVE_CODE),
        _ => None,
    }
}

pub fn code_for(decision: bool) -> &'static str {
    if decision {
        POSITIVE_CODE
    } else {
        NEGATIVE_CODE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConfidenceBin {
    Low,
    Medium,
    High,
}

impl ConfidenceBin {
    pub const ALL: [ConfidenceBin; 3] = [ConfidenceBin::High, ConfidenceBin::Medium, ConfidenceBin::Low];

    pub fn label(self) -> &'static str {
        match self {
            ConfidenceBin::Low => "Low",
            ConfidenceBin::Medium => "Medium",
            ConfidenceBin::High => "High",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "Low" => Some(ConfidenceBin::Low),
            "Medium" | "Moderate" => Some(ConfidenceBin::Medium),
            "High" => Some(ConfidenceBin::High),
            _ => None,
        }
    }
}

/// Rounds to two decimals, then Low <= 0.33 < Medium <= 0.67 < High.
pub fn bin_confidence(c: f64) -> Result<ConfidenceBin, AgentError> {
    if !(0.0..=1.0).contains(&c) {
        return Err(AgentError::ConfidenceRange(c));
    }
    let hundredths = (c * 100.0).round() as u32;
    Ok(match hundredths {
        0..=33 => ConfidenceBin::Low,
        34..=67 => ConfidenceBin::Medium,
        _ => ConfidenceBin::High,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    SfMock,
    NsfMock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockParams {
    /// Logit offset added before the clause contributions.
    pub offset: f64,
    /// Logit gain of a rank-1 clause; lower ranks scale down linearly.
    pub gain: f64,
    /// Half-width of the per-case uniform noise around the prevalence.
    pub noise: f64,
    /// Simulated documentation time per reasoning token.
    pub seconds_per_token: f64,
}

impl Default for MockParams {
    fn default() -> Self {
        Self {
            offset: 0.0,
            gain: 4.0,
            noise: 0.0,
            seconds_per_token: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Full chat-completions URL.
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "EndpointConfig::default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "EndpointConfig::default_retries")]
    pub retries: u32,
    #[serde(default)]
    pub retry_backoff_ms: u64,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "EndpointConfig::default_concurrency")]
    pub max_concurrency: usize,
}

impl EndpointConfig {
    fn default_timeout() -> f64 {
        60.0
    }
    fn default_retries() -> u32 {
        2
    }
    fn default_concurrency() -> usize {
        4
    }

    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: Self::default_timeout(),
            retries: Self::default_retries(),
            retry_backoff_ms: 0,
            temperature: 0.0,
            max_concurrency: Self::default_concurrency(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: String,
    /// Agent name as written to the record log.
    pub name: String,
    pub kind: AgentKind,
    #[serde(default)]
    pub uses_rag: bool,
    /// Remote agents only: include the structure template in the prompt.
    #[serde(default = "default_true")]
    pub follows_structure: bool,
    #[serde(default)]
    pub valid_precision: Option<f64>,
    #[serde(default)]
    pub valid_recall: Option<f64>,
    #[serde(default)]
    pub mock: MockParams,
    #[serde(default)]
    pub remote: Option<EndpointConfig>,
}

fn default_true() -> bool {
    true
}

impl AgentProfile {
    pub fn mock(id: impl Into<String>, kind: AgentKind, mock: MockParams) -> Self {
        let id = id.into();
        Self {
            name: id.clone(),
            id,
            kind,
            uses_rag: false,
            follows_structure: kind != AgentKind::NsfMock,
            valid_precision: None,
            valid_recall: None,
            mock,
            remote: None,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        for v in [self.valid_precision, self.valid_recall].into_iter().flatten() {
            if !(0.0..=1.0).contains(&v) {
                return Err(AgentError::Config(format!(
                    "agent `{}`: validation metric {v} outside [0, 1]",
                    self.id
                )));
            }
        }
        if self.mock.noise < 0.0 || self.mock.seconds_per_token < 0.0 {
            return Err(AgentError::Config(format!(
                "agent `{}`: noise and seconds_per_token must be >= 0",
                self.id
            )));
        }
        if self.kind == AgentKind::Remote && self.remote.is_none() {
            return Err(AgentError::Config(format!(
                "agent `{}` is remote but has no endpoint",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAssessment {
    pub agent_id: String,
    pub agent_name: String,
    pub case_id: String,
    pub round: u32,
    pub diagnosis_code: String,
    pub decision: bool,
    pub risk_score: f64,
    pub confidence: f64,
    pub confidence_bin: ConfidenceBin,
    pub reasoning: String,
    pub doc_tokens: usize,
    pub doc_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedNote {
    pub neighbor_id: String,
    pub note: Note,
    pub label: bool,
    pub distance: usize,
}

/// Nearest training record by Hamming distance over bins; ties go to the
/// lexicographically smallest id.
pub fn rag_retrieve(record: &PatientRecord, train: &Dataset) -> Result<RetrievedNote, AgentError> {
    let best = train
        .records
        .iter()
        .map(|r| {
            let d = r.bins.iter().zip(&record.bins).filter(|(a, b)| a != b).count();
            (d, r)
        })
        .min_by(|(da, ra), (db, rb)| da.cmp(db).then_with(|| ra.id.cmp(&rb.id)))
        .ok_or(AgentError::EmptyTraining)?;
    Ok(RetrievedNote {
        neighbor_id: best.1.id.clone(),
        note: notes::serialize(best.1, &train.schema),
        label: best.1.label,
        distance: best.0,
    })
}

/// `lambda * own + (1 - lambda) * confidence-weighted peer mean`. Peers with
/// zero total confidence are averaged unweighted; no peers leaves `own`
/// unchanged.
pub fn peer_update(own: f64, peers: &[&AgentAssessment], lambda: f64) -> f64 {
    match peer_aggregate(peers) {
        Some(agg) => lambda * own + (1.0 - lambda) * agg,
        None => own,
    }
}

fn peer_aggregate(peers: &[&AgentAssessment]) -> Option<f64> {
    if peers.is_empty() {
        return None;
    }
    let total: f64 = peers.iter().map(|p| p.confidence).sum();
    Some(if total > 0.0 {
        peers.iter().map(|p| p.confidence * p.risk_score).sum::<f64>() / total
    } else {
        peers.iter().map(|p| p.risk_score).sum::<f64>() / peers.len() as f64
    })
}

/// Shared run parameters for one assessment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssessSettings {
    pub peer_weight: f64,
    pub rag_weight: f64,
    pub decision_threshold: f64,
    /// Training-split prevalence, the non-structure-following prior.
    pub prevalence: f64,
    pub seed: u64,
}

impl Default for AssessSettings {
    fn default() -> Self {
        Self {
            peer_weight: DEFAULT_PEER_WEIGHT,
            rag_weight: DEFAULT_RAG_WEIGHT,
            decision_threshold: DEFAULT_DECISION_THRESHOLD,
            prevalence: 0.0,
            seed: 0,
        }
    }
}

/// Everything an agent sees for one case in one round.
#[derive(Debug, Clone, Copy)]
pub struct CaseContext<'a> {
    pub round: u32,
    pub record: &'a PatientRecord,
    pub note: &'a Note,
    pub schema: &'a Schema,
    pub template: &'a StructureTemplate,
    pub rag: Option<&'a RetrievedNote>,
    pub peers: &'a [&'a AgentAssessment],
    pub settings: AssessSettings,
}

pub trait Agent: Send + Sync {
    fn profile(&self) -> &AgentProfile;
    fn assess(&self, ctx: &CaseContext<'_>) -> Result<AgentAssessment, AgentError>;
}

struct Draft {
    score: f64,
    reasoning: String,
}

fn finish(
    profile: &AgentProfile,
    ctx: &CaseContext<'_>,
    draft: Draft,
    tokenizer: &dyn Tokenizer,
) -> Result<AgentAssessment, AgentError> {
    let mut score = draft.score;
    let mut reasoning = draft.reasoning;
    if let Some(rag) = ctx.rag {
        let mu = ctx.settings.rag_weight;
        score = (1.0 - mu) * score + mu * if rag.label { 1.0 } else { 0.0 };
        let _ = write!(
            reasoning,
            " A similar prior note (distance {}) had a {} outcome.",
            rag.distance,
            if rag.label { "positive" } else { "negative" }
        );
    }
    if let Some(agg) = peer_aggregate(ctx.peers) {
        score = peer_update(score, ctx.peers, ctx.settings.peer_weight);
        let _ = write!(
            reasoning,
            " After consulting {} peer assessment(s) with a combined risk of {:.3}, the estimate was revised.",
            ctx.peers.len(),
            agg
        );
    }
    let score = score.clamp(0.0, 1.0);
    let decision = score >= ctx.settings.decision_threshold;
    let _ = write!(
        reasoning,
        " Overall the estimated risk is {:.3}, so the diagnosis is {} {}.",
        score,
        if decision { "positive for" } else { "negative for" },
        ctx.template.outcome_name
    );
    let confidence = (2.0 * score - 1.0).abs().clamp(0.0, 1.0);
    let doc_tokens = tokenizer.count(&reasoning);
    Ok(AgentAssessment {
        agent_id: profile.id.clone(),
        agent_name: profile.name.clone(),
        case_id: ctx.record.id.clone(),
        round: ctx.round,
        diagnosis_code: code_for(decision).to_string(),
        decision,
        risk_score: score,
        confidence,
        confidence_bin: bin_confidence(confidence)?,
        reasoning,
        doc_tokens,
        doc_seconds: doc_tokens as f64 * profile.mock.seconds_per_token,
    })
}

/// Structure-following mock: `sigmoid(offset + sum dir * (k - rank + 1)/k * gain)`
/// over the template clauses the record matches.
pub fn sf_assess(profile: &AgentProfile, ctx: &CaseContext<'_>) -> Result<AgentAssessment, AgentError> {
    let k = ctx.template.k() as f64;
    let mut logit = profile.mock.offset;
    let mut reasoning = String::new();
    for clause in &ctx.template.clauses {
        if ctx.record.bin(ctx.schema, &clause.feature) != Some(clause.bin) {
            continue;
        }
        logit += clause.direction.sign() * (k - clause.rank as f64 + 1.0) / k * profile.mock.gain;
        if !reasoning.is_empty() {
            reasoning.push(' ');
        }
        let _ = write!(
            reasoning,
            "The patient has {} in bin {}, indicating {} risk for {}.",
            clause.display_name,
            clause.bin,
            clause.direction.word(),
            ctx.template.outcome_name
        );
    }
    if reasoning.is_empty() {
        reasoning.push_str("The patient has no findings that match the global structure.");
    }
    finish(
        profile,
        ctx,
        Draft {
            score: sigmoid(logit),
            reasoning,
        },
        &WhitespaceTokenizer,
    )
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Non-structure-following mock: training prevalence plus seeded noise in
/// `[-noise, +noise]`, fixed per (seed, agent, case).
pub fn nsf_assess(profile: &AgentProfile, ctx: &CaseContext<'_>) -> Result<AgentAssessment, AgentError> {
    let eps = profile.mock.noise;
    let jitter = if eps > 0.0 {
        let seed = ctx.settings.seed ^ fnv1a(&profile.id) ^ fnv1a(&ctx.record.id).rotate_left(29);
        ChaCha8Rng::seed_from_u64(seed).gen_range(-eps..=eps)
    } else {
        0.0
    };
    let score = (ctx.settings.prevalence + jitter).clamp(0.0, 1.0);
    let reasoning = format!(
        "The note lists {} laboratory findings. Without a global structure the estimate starts from the population rate of {:.3}.",
        ctx.schema.len(),
        ctx.settings.prevalence
    );
    finish(profile, ctx, Draft { score, reasoning }, &WhitespaceTokenizer)
}

pub struct MockAgent {
    profile: AgentProfile,
}

impl MockAgent {
    pub fn new(profile: AgentProfile) -> Result<Self, AgentError> {
        if profile.kind == AgentKind::Remote {
            return Err(AgentError::Config(format!("agent `{}` is not a mock", profile.id)));
        }
        profile.validate()?;
        Ok(Self { profile })
    }
}

impl Agent for MockAgent {
    fn profile(&self) -> &AgentProfile {
        &self.profile
    }

    fn assess(&self, ctx: &CaseContext<'_>) -> Result<AgentAssessment, AgentError> {
        match self.profile.kind {
            AgentKind::SfMock => sf_assess(&self.profile, ctx),
            _ => nsf_assess(&self.profile, ctx),
        }
    }
}

pub fn build_agent(profile: AgentProfile) -> Result<Box<dyn Agent>, AgentError> {
    Ok(match profile.kind {
        AgentKind::Remote => Box::new(RemoteAgent::new(profile)?),
        _ => Box::new(MockAgent::new(profile)?),
    })
}

// ---- remote agent ----

#[derive(Debug, Serialize)]
pub struct ChatMessage {
    pub role: &'static str,
    pub content: String,
}

#[derive(Debug, Serialize)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
}

#[derive(Debug, Deserialize)]
struct ChatReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Fields an endpoint must return inside its reply text.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReplyFields {
    pub diagnosis: String,
    pub risk_score: f64,
    pub confidence: f64,
    pub reasoning: String,
}

pub fn build_messages(ctx: &CaseContext<'_>, follows_structure: bool) -> Vec<ChatMessage> {
    let outcome = &ctx.template.outcome_name;
    let system = format!(
        "You are a diagnostic agent on a consensus board. Decide whether the patient will develop {outcome}. \
         Answer with a single JSON object: {{\"diagnosis\": \"{POSITIVE_CODE}\" for positive or \"{NEGATIVE_CODE}\" for negative, \
         \"risk_score\": number between 0 and 1, \"confidence\": number between 0 and 1, \"reasoning\": short explanation}}."
    );
    let mut user = String::new();
    if follows_structure {
        let _ = writeln!(user, "Global structure: {}\n", ctx.template.rendered_text);
    }
    let _ = writeln!(user, "Patient note: {}", ctx.note.text);
    if let Some(rag) = ctx.rag {
        let _ = writeln!(
            user,
            "\nSimilar prior note: {}\nOutcome of that patient: {}",
            rag.note.text,
            if rag.label { "positive" } else { "negative" }
        );
    }
    if !ctx.peers.is_empty() {
        let _ = writeln!(user, "\nPeer assessments from the previous round:");
        for p in ctx.peers {
            let _ = writeln!(
                user,
                "- {}: diagnosis {}, risk {:.3}, confidence {:.2}. Reasoning: {}",
                p.agent_name, p.diagnosis_code, p.risk_score, p.confidence, p.reasoning
            );
        }
    }
    vec![
        ChatMessage {
            role: "system",
            content: system,
        },
        ChatMessage {
            role: "user",
            content: user,
        },
    ]
}

/// Finds the first JSON object in `content` that carries the reply fields.
pub fn parse_reply(content: &str) -> Result<ReplyFields, AgentError> {
    for (start, _) in content.match_indices('{') {
        let mut stream =
            serde_json::Deserializer::from_str(&content[start..]).into_iter::<serde_json::Value>();
        if let Some(Ok(value)) = stream.next() {
            if value.get("diagnosis").is_some() {
                return serde_json::from_value(value)
                    .map_err(|e| AgentError::Parse(format!("reply object has wrong field types: {e}")));
            }
        }
    }
    Err(AgentError::Parse(format!(
        "no JSON object with a diagnosis in reply: {}",
        content.chars().take(120).collect::<String>()
    )))
}

pub fn validate_reply(reply: &ReplyFields, threshold: f64) -> Result<(&'static str, bool), AgentError> {
    let code = normalize_code(&reply.diagnosis)
        .ok_or_else(|| AgentError::Validation(format!("unknown diagnosis `{}`", reply.diagnosis)))?;
    for (name, v) in [("risk_score", reply.risk_score), ("confidence", reply.confidence)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(AgentError::Validation(format!("{name} {v} outside [0, 1]")));
        }
    }
    let decision = reply.risk_score >= threshold;
    if (code == POSITIVE_CODE) != decision {
        return Err(AgentError::Validation(format!(
            "diagnosis {code} contradicts risk_score {} at threshold {threshold}",
            reply.risk_score
        )));
    }
    Ok((code, decision))
}

/// Counting semaphore capping in-flight requests per endpoint.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Sends one chat-completion request with bounded retries and returns the
/// first choice's message content and the wall-clock duration.
pub fn chat_completion(
    endpoint: &EndpointConfig,
    messages: Vec<ChatMessage>,
) -> Result<(String, Duration), AgentError> {
    let api_key = match &endpoint.api_key_env {
        Some(var) => Some(std::env::var(var).map_err(|_| {
            AgentError::Config(format!("environment variable `{var}` is not set"))
        })?),
        None => None,
    };
    let http: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into();
    let body = ChatRequest {
        model: &endpoint.model,
        messages,
        temperature: endpoint.temperature,
    };
    let started = Instant::now();
    let mut attempt = 0;
    loop {
        attempt += 1;
        let mut req = http.post(&endpoint.url);
        if let Some(key) = &api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let retryable = match req.send_json(&body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| AgentError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    })?;
                if (200..300).contains(&status) {
                    let parsed: ChatResponse = serde_json::from_str(&text)
                        .map_err(|e| AgentError::Parse(format!("malformed completion body: {e}")))?;
                    let content = parsed
                        .choices
                        .into_iter()
                        .next()
                        .and_then(|c| c.message.content)
                        .ok_or_else(|| AgentError::Parse("completion has no message content".into()))?;
                    return Ok((content, started.elapsed()));
                }
                let err = AgentError::Http { status, body: text };
                if status == 429 || status >= 500 {
                    err
                } else {
                    return Err(err);
                }
            }
            Err(e) => AgentError::Transport {
                attempts: attempt,
                message: e.to_string(),
            },
        };
        if attempt > endpoint.retries {
            return Err(match retryable {
                AgentError::Transport { message, .. } => AgentError::Transport {
                    attempts: attempt,
                    message,
                },
                other => other,
            });
        }
        tracing::debug!(url = %endpoint.url, attempt, error = %retryable, "retrying chat completion");
        if endpoint.retry_backoff_ms > 0 {
            std::thread::sleep(Duration::from_millis(endpoint.retry_backoff_ms << (attempt - 1).min(6)));
        }
    }
}

pub struct RemoteAgent {
    profile: AgentProfile,
    endpoint: EndpointConfig,
    permits: Permits,
}

impl RemoteAgent {
    pub fn new(profile: AgentProfile) -> Result<Self, AgentError> {
        profile.validate()?;
        let endpoint = profile
            .remote
            .clone()
            .ok_or_else(|| AgentError::Config(format!("agent `{}` has no endpoint", profile.id)))?;
        if endpoint.timeout_secs <= 0.0 || !endpoint.timeout_secs.is_finite() {
            return Err(AgentError::Config("timeout_secs must be positive".into()));
        }
        Ok(Self {
            permits: Permits::new(endpoint.max_concurrency),
            profile,
            endpoint,
        })
    }
}

impl Agent for RemoteAgent {
    fn profile(&self) -> &AgentProfile {
        &self.profile
    }

    fn assess(&self, ctx: &CaseContext<'_>) -> Result<AgentAssessment, AgentError> {
        let messages = build_messages(ctx, self.profile.follows_structure);
        let _permit = self.permits.acquire();
        let (content, elapsed) = chat_completion(&self.endpoint, messages)?;
        let reply = parse_reply(&content)?;
        let (code, decision) = validate_reply(&reply, ctx.settings.decision_threshold)?;
        Ok(AgentAssessment {
            agent_id: self.profile.id.clone(),
            agent_name: self.profile.name.clone(),
            case_id: ctx.record.id.clone(),
            round: ctx.round,
            diagnosis_code: code.to_string(),
            decision,
            risk_score: reply.risk_score,
            confidence: reply.confidence,
            confidence_bin: bin_confidence(reply.confidence)?,
            doc_tokens: notes::token_count(&reply.reasoning),
            reasoning: reply.reasoning,
            doc_seconds: elapsed.as_secs_f64(),
        })
    }
}

/// Sends `prompt` as a single user message and converts the reply.
pub fn remote_assess(
    profile: &AgentProfile,
    case_id: &str,
    round: u32,
    prompt: &str,
    decision_threshold: f64,
) -> Result<AgentAssessment, AgentError> {
    let endpoint = profile
        .remote
        .as_ref()
        .ok_or_else(|| AgentError::Config(format!("agent `{}` has no endpoint", profile.id)))?;
    let (content, elapsed) = chat_completion(
        endpoint,
        vec![ChatMessage {
            role: "user",
            content: prompt.to_string(),
        }],
    )?;
    let reply = parse_reply(&content)?;
    let (code, decision) = validate_reply(&reply, decision_threshold)?;
    Ok(AgentAssessment {
        agent_id: profile.id.clone(),
        agent_name: profile.name.clone(),
        case_id: case_id.to_string(),
        round,
        diagnosis_code: code.to_string(),
        decision,
        risk_score: reply.risk_score,
        confidence: reply.confidence,
        confidence_bin: bin_confidence(reply.confidence)?,
        doc_tokens: notes::token_count(&reply.reasoning),
        reasoning: reply.reasoning,
        doc_seconds: elapsed.as_secs_f64(),
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn assessment(agent: &str, case: &str, score: f64) -> AgentAssessment {
        let confidence = (2.0 * score - 1.0).abs();
        AgentAssessment {
            agent_id: agent.into(),
            agent_name: agent.into(),
            case_id: case.into(),
            round: 0,
            diagnosis_code: code_for(score >= 0.5).into(),
            decision: score >= 0.5,
            risk_score: score,
            confidence,
            confidence_bin: bin_confidence(confidence).unwrap(),
            reasoning: String::new(),
            doc_tokens: 0,
            doc_seconds: 0.0,
        }
    }
}
