//! Global structure learning.
//!
//! A logistic reference model is fitted over bin-level dummy indicators, then
//! explained with exact Shapley values computed by enumerating every
//! coalition of dummies. Absent dummies take their value from a background
//! record and the coalition value is the background mean of the model output
//! (interventional expectation). Mean absolute attributions over an
//! evaluation split rank the dummies, and the best `k` are rendered as the
//! structure template that structure-following agents read.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{classes, sigmoid, Dataset, Dummy, PatientRecord, Schema};

/// Brute force over `2^d` coalitions.
pub const MAX_SHAPLEY_DUMMIES: usize = 15;
/// Pairwise interactions cost `d^2 * 2^d`.
pub const MAX_INTERACTION_DUMMIES: usize = 12;

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("training set has a single class; both outcomes are required")]
    SingleClass,
    #[error("background sample is empty")]
    EmptyBackground,
    #[error("evaluation set is empty")]
    EmptyEval,
    #[error(
        "{dummies} dummy indicators exceed the exact enumeration limit of {limit}; \
         reduce the number of features or bins"
    )]
    TooManyDummies { dummies: usize, limit: usize },
    #[error("k must be between 1 and {dummies}, got {k}")]
    BadK { k: usize, dummies: usize },
    #[error("ranking is empty")]
    EmptyRanking,
    #[error("record `{0}` does not match the model schema")]
    SchemaMismatch(String),
    #[error("invalid fit options: {0}")]
    FitOptions(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputScale {
    /// sigmoid of the linear predictor
    #[default]
    Probability,
    /// the linear predictor itself; coalition values are then additive
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DummyWeight {
    pub feature: String,
    pub bin: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct ReferenceModel {
    schema: Schema,
    offsets: Vec<usize>,
    weights: Vec<f64>,
    intercept: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    schema: Schema,
    intercept: f64,
    weights: Vec<DummyWeight>,
}

impl From<ReferenceModel> for ModelDoc {
    fn from(m: ReferenceModel) -> Self {
        let weights = m
            .schema
            .dummies()
            .into_iter()
            .zip(&m.weights)
            .map(|(d, &w)| DummyWeight {
                feature: d.feature,
                bin: d.bin,
                weight: w,
            })
            .collect();
        ModelDoc {
            schema: m.schema,
            intercept: m.intercept,
            weights,
        }
    }
}

impl TryFrom<ModelDoc> for ReferenceModel {
    type Error = String;

    fn try_from(doc: ModelDoc) -> Result<Self, Self::Error> {
        let map = doc
            .weights
            .into_iter()
            .map(|w| (Dummy::new(w.feature, w.bin), w.weight))
            .collect();
        ReferenceModel::from_weights(doc.schema, &map, doc.intercept).map_err(|e| e.to_string())
    }
}

impl ReferenceModel {
    /// Builds a model from sparse weights; unlisted dummies get weight 0.
    pub fn from_weights(
        schema: Schema,
        weights: &BTreeMap<Dummy, f64>,
        intercept: f64,
    ) -> Result<Self, StructureError> {
        let mut model = Self::zeros(schema, intercept);
        for (dummy, &w) in weights {
            let idx = model
                .dummy_index(dummy)
                .ok_or_else(|| StructureError::SchemaMismatch(dummy.to_string()))?;
            model.weights[idx] = w;
        }
        Ok(model)
    }

    fn zeros(schema: Schema, intercept: f64) -> Self {
        let mut offsets = Vec::with_capacity(schema.len());
        let mut acc = 0;
        for f in schema.features() {
            offsets.push(acc);
            acc += f.bin_count as usize;
        }
        Self {
            weights: vec![0.0; acc],
            offsets,
            schema,
            intercept,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn dummies(&self) -> Vec<Dummy> {
        self.schema.dummies()
    }

    pub fn dummy_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, dummy: &Dummy) -> Option<f64> {
        self.dummy_index(dummy).map(|i| self.weights[i])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn dummy_index(&self, dummy: &Dummy) -> Option<usize> {
        let fi = self.schema.index_of(&dummy.feature)?;
        let count = self.schema.features()[fi].bin_count;
        (1..=count)
            .contains(&dummy.bin)
            .then(|| self.offsets[fi] + dummy.bin as usize - 1)
    }

    /// Dense 0/1 indicator vector for a record.
    pub fn indicators(&self, bins: &[u32]) -> Vec<f64> {
        let mut x = vec![0.0; self.weights.len()];
        for (off, b) in self.offsets.iter().zip(bins) {
            x[off + *b as usize - 1] = 1.0;
        }
        x
    }

    fn active<'a>(&'a self, bins: &'a [u32]) -> impl Iterator<Item = usize> + 'a {
        self.offsets
            .iter()
            .zip(bins)
            .map(|(off, b)| off + *b as usize - 1)
    }

    pub fn logit(&self, bins: &[u32]) -> f64 {
        self.intercept + self.active(bins).map(|i| self.weights[i]).sum::<f64>()
    }

    pub fn score(&self, bins: &[u32]) -> f64 {
        sigmoid(self.logit(bins))
    }

    fn output(&self, bins: &[u32], scale: OutputScale) -> f64 {
        match scale {
            OutputScale::Probability => self.score(bins),
            OutputScale::Logit => self.logit(bins),
        }
    }

    fn check(&self, record: &PatientRecord) -> Result<(), StructureError> {
        record
            .validate(&self.schema)
            .map_err(|_| StructureError::SchemaMismatch(record.id.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.5,
            l2: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub model: ReferenceModel,
    /// Mean log-loss (plus penalty) after each epoch.
    pub loss_history: Vec<f64>,
}

/// Full-batch gradient descent on the mean log-loss.
///
/// A step that would raise the loss is retried with half the step size, so
/// the recorded loss never increases from one epoch to the next.
pub fn fit_reference_model(train: &Dataset, opts: FitOptions) -> Result<TrainingRun, StructureError> {
    if train.is_empty() {
        return Err(StructureError::EmptyTraining);
    }
    if classes(train).len() < 2 {
        return Err(StructureError::SingleClass);
    }
    if !(opts.learning_rate > 0.0 && opts.learning_rate.is_finite()) || !(opts.l2 >= 0.0) {
        return Err(StructureError::FitOptions(format!("{opts:?}")));
    }
    let mut model = ReferenceModel::zeros(train.schema.clone(), 0.0);
    let d = model.dummy_count();

    // Collapse duplicate bin vectors; the loss only depends on counts.
    let mut groups: BTreeMap<&[u32], (f64, f64)> = BTreeMap::new();
    for r in &train.records {
        let g = groups.entry(r.bins.as_slice()).or_default();
        g.0 += 1.0;
        if r.label {
            g.1 += 1.0;
        }
    }
    let rows: Vec<(Vec<usize>, f64, f64)> = groups
        .into_iter()
        .map(|(bins, (n, pos))| (model.active(bins).collect(), n, pos))
        .collect();
    let n_total = train.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for w in model.weights.iter_mut() {
        *w = rng.gen_range(-0.01..0.01);
    }

    let loss = |weights: &[f64], intercept: f64| -> f64 {
        let mut total = 0.0;
        for (active, n, pos) in &rows {
            let z = intercept + active.iter().map(|&i| weights[i]).sum::<f64>();
            // log(1 + e^z) computed stably
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            total += n * softplus - pos * z;
        }
        total / n_total + 0.5 * opts.l2 * weights.iter().map(|w| w * w).sum::<f64>()
    };

    let mut current = loss(&model.weights, model.intercept);
    let mut history = Vec::with_capacity(opts.epochs);
    let mut grad = vec![0.0; d];
    for _ in 0..opts.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (active, n, pos) in &rows {
            let z = model.intercept + active.iter().map(|&i| model.weights[i]).sum::<f64>();
            let residual = n * sigmoid(z) - pos;
            grad_b += residual;
            for &i in active {
                grad[i] += residual;
            }
        }
        grad_b /= n_total;
        for (g, w) in grad.iter_mut().zip(&model.weights) {
            *g = *g / n_total + opts.l2 * w;
        }

        let mut step = opts.learning_rate;
        loop {
            let trial: Vec<f64> = model
                .weights
                .iter()
                .zip(&grad)
                .map(|(w, g)| w - step * g)
                .collect();
            let trial_b = model.intercept - step * grad_b;
            let trial_loss = loss(&trial, trial_b);
            if trial_loss <= current {
                model.weights = trial;
                model.intercept = trial_b;
                current = trial_loss;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
        history.push(current);
    }
    Ok(TrainingRun {
        model,
        loss_history: history,
    })
}

/// Deterministic background sample: all of `ds` when it is small enough,
/// otherwise `size` records chosen without replacement, in dataset order.
pub fn sample_background(ds: &Dataset, size: usize, seed: u64) -> Vec<PatientRecord> {
    if ds.len() <= size {
        return ds.records.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, ds.len(), size).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| ds.records[i].clone()).collect()
}

/// Coalition values `v(S)` for every subset mask of `players` players.
#[derive(Debug, Clone)]
pub struct CoalitionTable {
    players: usize,
    values: Vec<f64>,
}

impl CoalitionTable {
    pub fn from_fn(players: usize, value: impl Fn(usize) -> f64) -> Self {
        Self {
            players,
            values: (0..1usize << players).map(value).collect(),
        }
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn value(&self, mask: usize) -> f64 {
        self.values[mask]
    }

    /// `phi_i = sum_{S without i} |S|!(d-|S|-1)!/d! * (v(S+i) - v(S))`
    pub fn shapley(&self) -> Vec<f64> {
        let d = self.players;
        let weights: Vec<f64> = (0..d)
            .map(|s| 1.0 / (d as f64 * binomial(d - 1, s)))
            .collect();
        (0..d)
            .map(|i| {
                let bit = 1usize << i;
                let mut phi = 0.0;
                for mask in 0..1usize << d {
                    if mask & bit == 0 {
                        let gain = self.values[mask | bit] - self.values[mask];
                        phi += weights[mask.count_ones() as usize] * gain;
                    }
                }
                phi
            })
            .collect()
    }

    /// Pairwise interaction values split symmetrically between `(i, j)` and
    /// `(j, i)`; the diagonal holds what is left of each player's Shapley
    /// value, so every row sums to that player's attribution.
    pub fn interactions(&self, phi: &[f64]) -> Vec<Vec<f64>> {
        let d = self.players;
        let mut m = vec![vec![0.0; d]; d];
        if d >= 2 {
            let weights: Vec<f64> = (0..d - 1)
                .map(|s| 1.0 / (2.0 * (d - 1) as f64 * binomial(d - 2, s)))
                .collect();
            for i in 0..d {
                for j in i + 1..d {
                    let (bi, bj) = (1usize << i, 1usize << j);
                    let mut acc = 0.0;
                    for mask in 0..1usize << d {
                        if mask & (bi | bj) == 0 {
                            let delta = self.values[mask | bi | bj]
                                - self.values[mask | bi]
                                - self.values[mask | bj]
                                + self.values[mask];
                            acc += weights[mask.count_ones() as usize] * delta;
                        }
                    }
                    m[i][j] = acc;
                    m[j][i] = acc;
                }
            }
        }
        for i in 0..d {
            let off: f64 = (0..d).filter(|&j| j != i).map(|j| m[i][j]).sum();
            m[i][i] = phi[i] - off;
        }
        m
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Background records collapsed to distinct bin vectors with multiplicities.
fn collapse(background: &[PatientRecord]) -> Vec<(&[u32], f64)> {
    let mut counts: BTreeMap<&[u32], f64> = BTreeMap::new();
    for r in background {
        *counts.entry(r.bins.as_slice()).or_default() += 1.0;
    }
    counts.into_iter().collect()
}

/// Interventional coalition values for one instance.
pub fn coalition_table(
    model: &ReferenceModel,
    instance: &PatientRecord,
    background: &[PatientRecord],
    scale: OutputScale,
    limit: usize,
) -> Result<CoalitionTable, StructureError> {
    let d = model.dummy_count();
    if d > limit {
        return Err(StructureError::TooManyDummies { dummies: d, limit });
    }
    if background.is_empty() {
        return Err(StructureError::EmptyBackground);
    }
    model.check(instance)?;
    for b in background {
        model.check(b)?;
    }
    let collapsed = collapse(background);
    let total: f64 = collapsed.iter().map(|(_, c)| c).sum();
    let x = model.indicators(&instance.bins);
    let size = 1usize << d;
    let mut values = vec![0.0; size];
    let mut partial = vec![0.0; size];
    for (bins, count) in &collapsed {
        let b = model.indicators(bins);
        let base = model.logit(bins);
        let delta: Vec<f64> = (0..d).map(|i| model.weights[i] * (x[i] - b[i])).collect();
        // partial[S] sums delta over S, adding the lowest bit last; a zero
        // delta therefore leaves the sum bit-identical.
        partial[0] = 0.0;
        for mask in 1..size {
            let low = mask.trailing_zeros() as usize;
            partial[mask] = delta[low] + partial[mask & (mask - 1)];
        }
        for (v, p) in values.iter_mut().zip(&partial) {
            let z = base + p;
            let out = match scale {
                OutputScale::Probability => sigmoid(z),
                OutputScale::Logit => z,
            };
            *v += count * out;
        }
    }
    for v in &mut values {
        *v /= total;
    }
    Ok(CoalitionTable { players: d, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub record_id: String,
    pub dummies: Vec<Dummy>,
    pub phi: Vec<f64>,
    /// Mean model output over the background.
    pub base_value: f64,
    /// Model output for the instance itself.
    pub output: f64,
}

impl Attribution {
    pub fn phi_of(&self, dummy: &Dummy) -> Option<f64> {
        self.dummies.iter().position(|d| d == dummy).map(|i| self.phi[i])
    }
}

pub fn exact_shapley(
    model: &ReferenceModel,
    instance: &PatientRecord,
    background: &[PatientRecord],
) -> Result<Attribution, StructureError> {
    exact_shapley_scaled(model, instance, background, OutputScale::Probability)
}

pub fn exact_shapley_scaled(
    model: &ReferenceModel,
    instance: &PatientRecord,
    background: &[PatientRecord],
    scale: OutputScale,
) -> Result<Attribution, StructureError> {
    let table = coalition_table(model, instance, background, scale, MAX_SHAPLEY_DUMMIES)?;
    Ok(Attribution {
        record_id: instance.id.clone(),
        dummies: model.dummies(),
        phi: table.shapley(),
        base_value: table.value(0),
        output: model.output(&instance.bins, scale),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    pub dummies: Vec<Dummy>,
    /// Main effects on the diagonal, interaction effects off it.
    pub values: Vec<Vec<f64>>,
}

impl InteractionMatrix {
    pub fn row_sums(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.iter().sum()).collect()
    }
}

pub fn shapley_interactions(
    model: &ReferenceModel,
    instance: &PatientRecord,
    background: &[PatientRecord],
) -> Result<InteractionMatrix, StructureError> {
    shapley_interactions_scaled(model, instance, background, OutputScale::Probability)
}

pub fn shapley_interactions_scaled(
    model: &ReferenceModel,
    instance: &PatientRecord,
    background: &[PatientRecord],
    scale: OutputScale,
) -> Result<InteractionMatrix, StructureError> {
    let table = coalition_table(model, instance, background, scale, MAX_INTERACTION_DUMMIES)?;
    let phi = table.shapley();
    Ok(InteractionMatrix {
        dummies: model.dummies(),
        values: table.interactions(&phi),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub dummy: Dummy,
    pub mean_abs_phi: f64,
    pub mean_signed_phi: f64,
    /// Mean signed phi over the evaluation records that have this bin;
    /// absent when no record does.
    #[serde(default)]
    pub mean_active_phi: Option<f64>,
    pub rank: usize,
}

impl RankEntry {
    /// Sign of the attribution among records having the bin, falling back
    /// to the overall mean when none do. Zero reads as decreased.
    pub fn direction(&self) -> Direction {
        if self.mean_active_phi.unwrap_or(self.mean_signed_phi) > 0.0 {
            Direction::Increased
        } else {
            Direction::Decreased
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalRanking {
    pub entries: Vec<RankEntry>,
    pub total_dummies: usize,
    pub eval_size: usize,
    /// Mean |interaction| over the evaluation set, when the dummy count is
    /// small enough to enumerate pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_abs_interactions: Option<InteractionMatrix>,
}

/// Attributions averaged over `eval_set`, sorted by mean |phi| (descending)
/// and truncated to the best `k`.
///
/// Means that agree to within 1e-12 count as tied and fall back to feature
/// name, then bin, ascending.
pub fn rank_features(
    model: &ReferenceModel,
    eval_set: &Dataset,
    background: &[PatientRecord],
    k: usize,
) -> Result<GlobalRanking, StructureError> {
    let d = model.dummy_count();
    if k < 1 || k > d {
        return Err(StructureError::BadK { k, dummies: d });
    }
    if eval_set.is_empty() {
        return Err(StructureError::EmptyEval);
    }
    if d > MAX_SHAPLEY_DUMMIES {
        return Err(StructureError::TooManyDummies {
            dummies: d,
            limit: MAX_SHAPLEY_DUMMIES,
        });
    }
    let mut unique: BTreeMap<&[u32], (usize, f64)> = BTreeMap::new();
    for (i, r) in eval_set.records.iter().enumerate() {
        unique.entry(r.bins.as_slice()).or_insert((i, 0.0)).1 += 1.0;
    }
    let with_interactions = d <= MAX_INTERACTION_DUMMIES;
    let per_instance = unique
        .values()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&(i, count)| {
            let table = coalition_table(
                model,
                &eval_set.records[i],
                background,
                OutputScale::Probability,
                MAX_SHAPLEY_DUMMIES,
            )?;
            let phi = table.shapley();
            let inter = with_interactions.then(|| table.interactions(&phi));
            Ok((count, model.active(&eval_set.records[i].bins).collect::<Vec<_>>(), phi, inter))
        })
        .collect::<Result<Vec<_>, StructureError>>()?;

    let n = eval_set.len() as f64;
    let mut abs = vec![0.0; d];
    let mut signed = vec![0.0; d];
    let mut active_sum = vec![0.0; d];
    let mut active_n = vec![0.0; d];
    let mut inter_sum = with_interactions.then(|| vec![vec![0.0; d]; d]);
    for (count, active, phi, inter) in &per_instance {
        for i in 0..d {
            abs[i] += count * phi[i].abs();
            signed[i] += count * phi[i];
        }
        for &i in active {
            active_sum[i] += count * phi[i];
            active_n[i] += count;
        }
        if let (Some(sum), Some(m)) = (inter_sum.as_mut(), inter) {
            for (srow, mrow) in sum.iter_mut().zip(m) {
                for (s, v) in srow.iter_mut().zip(mrow) {
                    *s += count * v.abs();
                }
            }
        }
    }
    let dummies = model.dummies();
    let mut entries: Vec<RankEntry> = dummies
        .iter()
        .enumerate()
        .map(|(i, dummy)| RankEntry {
            dummy: dummy.clone(),
            mean_abs_phi: abs[i] / n,
            mean_signed_phi: signed[i] / n,
            mean_active_phi: (active_n[i] > 0.0).then(|| active_sum[i] / active_n[i]),
            rank: 0,
        })
        .collect();
    let key = |x: f64| (x * 1e12).round() as i128;
    entries.sort_by(|a, b| {
        key(b.mean_abs_phi)
            .cmp(&key(a.mean_abs_phi))
            .then_with(|| a.dummy.cmp(&b.dummy))
    });
    entries.truncate(k);
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    let mean_abs_interactions = inter_sum.map(|sum| InteractionMatrix {
        dummies: dummies.clone(),
        values: sum
            .into_iter()
            .map(|row| row.into_iter().map(|v| v / n).collect())
            .collect(),
    });
    Ok(GlobalRanking {
        entries,
        total_dummies: d,
        eval_size: eval_set.len(),
        mean_abs_interactions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increased,
    Decreased,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Increased => 1.0,
            Direction::Decreased => -1.0,
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Direction::Increased => "increased",
            Direction::Decreased => "decreased",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub feature: String,
    pub display_name: String,
    pub bin: u32,
    pub bin_count: u32,
    pub rank: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureTemplate {
    pub outcome_name: String,
    pub clauses: Vec<Clause>,
    pub rendered_text: String,
}

impl StructureTemplate {
    pub fn new(clauses: Vec<Clause>, outcome_name: impl Into<String>) -> Result<Self, StructureError> {
        if clauses.is_empty() {
            return Err(StructureError::EmptyRanking);
        }
        let outcome_name = outcome_name.into();
        let rendered_text = clauses
            .iter()
            .map(|c| render_clause(c, &outcome_name))
            .collect::<Vec<_>>()
            .join(" ");
        Ok(Self {
            outcome_name,
            clauses,
            rendered_text,
        })
    }

    pub fn k(&self) -> usize {
        self.clauses.len()
    }
}

/// Direction per [`RankEntry::direction`].
pub fn render_template(
    ranking: &GlobalRanking,
    schema: &Schema,
    outcome_name: &str,
) -> Result<StructureTemplate, StructureError> {
    let clauses = ranking
        .entries
        .iter()
        .map(|e| {
            let f = schema
                .feature(&e.dummy.feature)
                .ok_or_else(|| StructureError::SchemaMismatch(e.dummy.to_string()))?;
            Ok(Clause {
                feature: f.name.clone(),
                display_name: f.display_name.clone(),
                bin: e.dummy.bin,
                bin_count: f.bin_count,
                rank: e.rank,
                direction: e.direction(),
            })
        })
        .collect::<Result<Vec<_>, StructureError>>()?;
    StructureTemplate::new(clauses, outcome_name)
}

pub fn render_clause(c: &Clause, outcome: &str) -> String {
    let effect = match (c.direction, c.rank) {
        (Direction::Increased, 1) => "the highest risk",
        (Direction::Increased, _) => "increased risk",
        (Direction::Decreased, _) => "decreased risk",
    };
    format!(
        "Having the {} bin (i.e., {}) for {} is the {} important feature and indicates {} for {}.",
        bin_descriptor(c.bin, c.bin_count),
        c.bin,
        c.display_name,
        importance_ordinal(c.rank),
        effect,
        outcome
    )
}

fn bin_descriptor(bin: u32, bin_count: u32) -> String {
    if bin == bin_count {
        "highest".into()
    } else if bin == 1 {
        "lowest".into()
    } else if bin - 1 <= bin_count - bin {
        format!("{} lowest", ordinal_word(bin as usize))
    } else {
        format!("{} highest", ordinal_word((bin_count - bin + 1) as usize))
    }
}

fn importance_ordinal(rank: usize) -> String {
    if rank == 1 {
        "most".into()
    } else {
        format!("{} most", ordinal_word(rank))
    }
}

fn ordinal_word(n: usize) -> String {
    const WORDS: [&str; 20] = [
        "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth",
        "tenth", "eleventh", "twelfth", "thirteenth", "fourteenth", "fifteenth", "sixteenth",
        "seventeenth", "eighteenth", "nineteenth", "twentieth",
    ];
    match n {
        1..=20 => WORDS[n - 1].to_string(),
        _ => {
            let suffix = match (n % 10, n % 100) {
                (_, 11..=13) => "th",
                (1, _) => "st",
                (2, _) => "nd",
                (3, _) => "rd",
                _ => "th",
            };
            format!("{n}{suffix}")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureSpec;

    fn schema() -> Schema {
        Schema::new(vec![
            FeatureSpec::new("a", 2, "A"),
            FeatureSpec::new("b", 3, "B"),
        ])
        .unwrap()
    }

    fn rec(id: &str, bins: &[u32], label: bool) -> PatientRecord {
        PatientRecord {
            id: id.into(),
            bins: bins.to_vec(),
            label,
        }
    }

    #[test]
    fn single_weight_matches_closed_form() {
        // v(S) only depends on whether (a,1) is in S, so phi_(a,1) is
        // mean_b [f(x with a=1) - f(b)] restricted to that dummy.
        let w = 1.3;
        let model =
            ReferenceModel::from_weights(schema(), &BTreeMap::from([(Dummy::new("a", 1), w)]), -0.4)
                .unwrap();
        let x = rec("x", &[1, 2], true);
        let bg = vec![rec("b1", &[1, 1], false), rec("b2", &[2, 3], false), rec("b3", &[2, 2], true)];
        let att = exact_shapley(&model, &x, &bg).unwrap();
        let expected: f64 = bg
            .iter()
            .map(|b| sigmoid(-0.4 + w) - sigmoid(-0.4 + if b.bins[0] == 1 { w } else { 0.0 }))
            .sum::<f64>()
            / 3.0;
        let j = att.phi_of(&Dummy::new("a", 1)).unwrap();
        assert!((j - expected).abs() < 1e-12);
        for (d, p) in att.dummies.iter().zip(&att.phi) {
            if *d != Dummy::new("a", 1) {
                assert_eq!(*p, 0.0, "{d}");
            }
        }
    }

    #[test]
    fn instance_equal_to_background_has_zero_attribution() {
        let model = ReferenceModel::from_weights(
            schema(),
            &BTreeMap::from([(Dummy::new("a", 1), 0.7), (Dummy::new("b", 3), -1.1)]),
            0.2,
        )
        .unwrap();
        let x = rec("x", &[1, 3], true);
        let att = exact_shapley(&model, &x, &[x.clone()]).unwrap();
        assert!(att.phi.iter().all(|p| *p == 0.0));
        assert!((att.base_value - att.output).abs() < 1e-15);
    }

    #[test]
    fn efficiency_holds() {
        let model = ReferenceModel::from_weights(
            schema(),
            &BTreeMap::from([
                (Dummy::new("a", 1), 0.7),
                (Dummy::new("a", 2), -0.3),
                (Dummy::new("b", 3), -1.1),
                (Dummy::new("b", 1), 2.0),
            ]),
            0.2,
        )
        .unwrap();
        let x = rec("x", &[2, 1], true);
        let bg = vec![rec("b1", &[1, 1], false), rec("b2", &[2, 3], false), rec("b3", &[1, 2], true)];
        let att = exact_shapley(&model, &x, &bg).unwrap();
        let sum: f64 = att.phi.iter().sum();
        assert!((sum + att.base_value - model.score(&x.bins)).abs() < 1e-12);
    }

    #[test]
    fn enumeration_limits() {
        let wide = Schema::new(
            (0..4)
                .map(|i| FeatureSpec::new(format!("f{i}"), 4, format!("F{i}")))
                .collect(),
        )
        .unwrap();
        let model = ReferenceModel::from_weights(wide, &BTreeMap::new(), 0.0).unwrap();
        let x = rec("x", &[1, 1, 1, 1], true);
        let err = exact_shapley(&model, &x, &[x.clone()]).unwrap_err();
        assert!(matches!(err, StructureError::TooManyDummies { dummies: 16, .. }));
        assert!(err.to_string().contains("reduce"));

        let model = ReferenceModel::from_weights(schema(), &BTreeMap::new(), 0.0).unwrap();
        assert!(matches!(
            exact_shapley(&model, &rec("x", &[1, 1], true), &[]),
            Err(StructureError::EmptyBackground)
        ));
    }

    #[test]
    fn additive_logit_has_no_interactions() {
        let model = ReferenceModel::from_weights(
            schema(),
            &BTreeMap::from([
                (Dummy::new("a", 1), 0.05),
                (Dummy::new("b", 2), -0.08),
                (Dummy::new("b", 3), 0.02),
            ]),
            0.0,
        )
        .unwrap();
        let x = rec("x", &[1, 2], true);
        let bg = vec![rec("b1", &[2, 3], false), rec("b2", &[2, 1], false)];
        let m = shapley_interactions_scaled(&model, &x, &bg, OutputScale::Logit).unwrap();
        for i in 0..m.values.len() {
            for j in 0..m.values.len() {
                if i != j {
                    assert!(m.values[i][j].abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn two_player_multiplicative_interaction() {
        // v(S) = prod of a_i over S; oracle: (1/2)[v(12) - v(1) - v(2) + v(0)]
        let (a1, a2) = (3.0, 5.0);
        let v = |mask: usize| {
            let mut p = 1.0;
            if mask & 1 != 0 {
                p *= a1;
            }
            if mask & 2 != 0 {
                p *= a2;
            }
            p
        };
        let table = CoalitionTable::from_fn(2, v);
        let phi = table.shapley();
        let m = table.interactions(&phi);
        let oracle = 0.5 * (v(3) - v(1) - v(2) + v(0));
        assert_eq!(oracle, 4.0);
        assert!((m[0][1] - oracle).abs() < 1e-12);
        assert_eq!(m[0][1], m[1][0]);
        // phi_1 = 1/2 (v1 - v0) + 1/2 (v12 - v2)
        assert!((phi[0] - (0.5 * (3.0 - 1.0) + 0.5 * (15.0 - 5.0))).abs() < 1e-12);
        assert!((m[0][0] + m[0][1] - phi[0]).abs() < 1e-12);
    }

    fn separable() -> Dataset {
        let s = Schema::new(vec![FeatureSpec::new("a", 2, "A")]).unwrap();
        let records = (0..40)
            .map(|i| rec(&format!("r{i}"), &[if i % 2 == 0 { 1 } else { 2 }], i % 2 == 0))
            .collect();
        Dataset::new(s, records).unwrap()
    }

    #[test]
    fn fits_separable_data_perfectly() {
        let run = fit_reference_model(
            &separable(),
            FitOptions {
                epochs: 500,
                ..Default::default()
            },
        )
        .unwrap();
        let ds = separable();
        let correct = ds
            .records
            .iter()
            .filter(|r| (run.model.score(&r.bins) >= 0.5) == r.label)
            .count();
        assert_eq!(correct, ds.len());
        assert!(run.loss_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn uninformative_features_get_small_weights() {
        let s = Schema::new(vec![FeatureSpec::new("a", 2, "A"), FeatureSpec::new("b", 2, "B")]).unwrap();
        // every bin combination appears with the same 1:3 label mix
        let mut records = Vec::new();
        for a in 1..=2 {
            for b in 1..=2 {
                for k in 0..8 {
                    records.push(rec(&format!("{a}{b}{k}"), &[a, b], k < 2));
                }
            }
        }
        let ds = Dataset::new(s, records).unwrap();
        let run = fit_reference_model(&ds, FitOptions::default()).unwrap();
        let m = &run.model;
        // contrasts within a feature carry no signal
        assert!((m.weights()[0] - m.weights()[1]).abs() < 0.05);
        assert!((m.weights()[2] - m.weights()[3]).abs() < 0.05);
        let accuracy = ds
            .records
            .iter()
            .filter(|r| (m.score(&r.bins) >= 0.5) == r.label)
            .count() as f64
            / ds.len() as f64;
        assert!((accuracy - 0.75).abs() < 1e-12);
    }

    #[test]
    fn fit_is_deterministic_and_rejects_single_class() {
        let a = fit_reference_model(&separable(), FitOptions { seed: 4, ..Default::default() }).unwrap();
        let b = fit_reference_model(&separable(), FitOptions { seed: 4, ..Default::default() }).unwrap();
        assert_eq!(a.model, b.model);
        let mut one = separable();
        one.records.iter_mut().for_each(|r| r.label = true);
        assert!(matches!(
            fit_reference_model(&one, FitOptions::default()),
            Err(StructureError::SingleClass)
        ));
    }

    #[test]
    fn ranking_full_and_tie_break() {
        // Two features that are mirror images: identical weights and data.
        let s = Schema::new(vec![FeatureSpec::new("b", 2, "B"), FeatureSpec::new("a", 2, "A")]).unwrap();
        let model = ReferenceModel::from_weights(
            s.clone(),
            &BTreeMap::from([(Dummy::new("a", 1), 1.0), (Dummy::new("b", 1), 1.0)]),
            0.0,
        )
        .unwrap();
        let records = vec![
            rec("1", &[1, 1], true),
            rec("2", &[2, 2], false),
            rec("3", &[1, 2], true),
            rec("4", &[2, 1], false),
        ];
        let ds = Dataset::new(s, records.clone()).unwrap();
        let ranking = rank_features(&model, &ds, &records, 4).unwrap();
        let order: Vec<String> = ranking.entries.iter().map(|e| e.dummy.to_string()).collect();
        assert_eq!(order, ["a=1", "b=1", "a=2", "b=2"]);
        assert_eq!(
            ranking.entries.iter().map(|e| e.rank).collect::<Vec<_>>(),
            [1, 2, 3, 4]
        );
        assert!(ranking.mean_abs_interactions.is_some());
        assert!(matches!(
            rank_features(&model, &ds, &records, 0),
            Err(StructureError::BadK { .. })
        ));
        assert!(matches!(
            rank_features(&model, &ds, &records, 5),
            Err(StructureError::BadK { .. })
        ));
    }

    #[test]
    fn direction_follows_records_having_the_bin() {
        // Eval set drawn like the background: the overall mean phi of a=1 is
        // zero, but every record with a=1 gains from it.
        let s = schema();
        let model = ReferenceModel::from_weights(
            s.clone(),
            &BTreeMap::from([(Dummy::new("a", 1), 2.0), (Dummy::new("b", 3), -1.5)]),
            0.0,
        )
        .unwrap();
        let records: Vec<PatientRecord> = (0..6)
            .map(|i| rec(&i.to_string(), &[1 + i % 2, 1 + i % 3], false))
            .collect();
        let ds = Dataset::new(s.clone(), records.clone()).unwrap();
        let ranking = rank_features(&model, &ds, &records, 5).unwrap();
        let get = |f: &str, b| ranking.entries.iter().find(|e| e.dummy == Dummy::new(f, b)).unwrap();
        assert!(get("a", 1).mean_signed_phi.abs() < 1e-12);
        assert!(get("a", 1).mean_active_phi.unwrap() > 0.0);
        assert_eq!(get("a", 1).direction(), Direction::Increased);
        assert_eq!(get("b", 3).direction(), Direction::Decreased);
        let t = render_template(&ranking, &s, "AKI").unwrap();
        assert_eq!(t.clauses[0].direction, Direction::Increased);
    }

    fn clause(display: &str, bin: u32, rank: usize, direction: Direction) -> Clause {
        Clause {
            feature: display.to_lowercase(),
            display_name: display.into(),
            bin,
            bin_count: 4,
            rank,
            direction,
        }
    }

    #[test]
    fn renders_clauses() {
        let t = StructureTemplate::new(
            vec![clause("eGFR", 1, 1, Direction::Increased)],
            "AKI",
        )
        .unwrap();
        assert_eq!(
            t.rendered_text,
            "Having the lowest bin (i.e., 1) for eGFR is the most important feature and indicates the highest risk for AKI."
        );
        let c = render_clause(&clause("blood urea nitrogen", 1, 5, Direction::Decreased), "AKI");
        assert!(c.ends_with("is the fifth most important feature and indicates decreased risk for AKI."));
        let c = render_clause(&clause("eGFR", 2, 2, Direction::Increased), "AKI");
        assert!(c.starts_with("Having the second lowest bin (i.e., 2) for eGFR is the second most"));
        assert!(c.contains("increased risk"));
        let c = render_clause(&clause("eGFR", 4, 10, Direction::Decreased), "AKI");
        assert!(c.contains("highest bin (i.e., 4)") && c.contains("tenth most"));
        let c = render_clause(&clause("eGFR", 3, 12, Direction::Decreased), "AKI");
        assert!(c.contains("second highest bin (i.e., 3)") && c.contains("twelfth most"));
        assert!(matches!(
            StructureTemplate::new(vec![], "AKI"),
            Err(StructureError::EmptyRanking)
        ));
    }

    #[test]
    fn model_json_round_trip() {
        let model = ReferenceModel::from_weights(
            schema(),
            &BTreeMap::from([(Dummy::new("b", 2), 0.25)]),
            -1.5,
        )
        .unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: ReferenceModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }
}
