//! Binned tabular datasets with binary outcomes.
//!
//! Features are ordinal bins numbered from 1. A [`Dataset`] carries its
//! [`Schema`], the records in load order, and (after [`stratified_split`]) a
//! train/valid/test tag per record id.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LABEL_COLUMN: &str = "label";
pub const ID_COLUMN: &str = "id";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("missing feature column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: bin out of range for `{feature}`: {value} (expected 1..={bin_count})")]
    BinOutOfRange {
        row: usize,
        feature: String,
        value: String,
        bin_count: u32,
    },
    #[error("row {row}: non-binary label `{value}`")]
    NonBinaryLabel { row: usize, value: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid split ratios: {0}")]
    Ratios(String),
    #[error("class {label} has {count} records but {splits} splits are non-empty")]
    ClassTooSmall {
        label: u8,
        count: usize,
        splits: usize,
    },
    #[error("planted weight references unknown dummy {0}")]
    UnknownDummy(Dummy),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub bin_count: u32,
    pub display_name: String,
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>, bin_count: u32, display_name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            bin_count,
            display_name: display_name.into(),
        }
    }
}

/// An ordered, validated list of features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FeatureSpec>", into = "Vec<FeatureSpec>")]
pub struct Schema(Vec<FeatureSpec>);

impl Schema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self, DatasetError> {
        let mut names = HashSet::new();
        let mut displays = HashSet::new();
        for f in &features {
            if f.name.is_empty() {
                return Err(DatasetError::Schema("empty feature name".into()));
            }
            if f.name == LABEL_COLUMN || f.name == ID_COLUMN {
                return Err(DatasetError::Schema(format!(
                    "feature name `{}` is reserved",
                    f.name
                )));
            }
            if f.bin_count < 2 {
                return Err(DatasetError::Schema(format!(
                    "feature `{}` has bin_count {} (need >= 2)",
                    f.name, f.bin_count
                )));
            }
            if !names.insert(f.name.as_str()) {
                return Err(DatasetError::Schema(format!("duplicate feature `{}`", f.name)));
            }
            if f.display_name.trim().is_empty() {
                return Err(DatasetError::Schema(format!(
                    "feature `{}` has an empty display name",
                    f.name
                )));
            }
            if !displays.insert(f.display_name.as_str()) {
                return Err(DatasetError::Schema(format!(
                    "duplicate display name `{}`",
                    f.display_name
                )));
            }
        }
        Ok(Self(features))
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|f| f.name == name)
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureSpec> {
        self.0.iter().find(|f| f.name == name)
    }

    /// Every (feature, bin) indicator, in schema order then bin order.
    pub fn dummies(&self) -> Vec<Dummy> {
        self.0
            .iter()
            .flat_map(|f| (1..=f.bin_count).map(move |b| Dummy::new(f.name.clone(), b)))
            .collect()
    }

    pub fn dummy_count(&self) -> usize {
        self.0.iter().map(|f| f.bin_count as usize).sum()
    }

    pub fn contains_dummy(&self, dummy: &Dummy) -> bool {
        self.feature(&dummy.feature)
            .is_some_and(|f| (1..=f.bin_count).contains(&dummy.bin))
    }
}

impl TryFrom<Vec<FeatureSpec>> for Schema {
    type Error = DatasetError;

    fn try_from(value: Vec<FeatureSpec>) -> Result<Self, Self::Error> {
        Schema::new(value)
    }
}

impl From<Schema> for Vec<FeatureSpec> {
    fn from(value: Schema) -> Self {
        value.0
    }
}

/// A bin-level indicator variable. Orders by feature name, then bin.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Dummy {
    pub feature: String,
    pub bin: u32,
}

impl Dummy {
    pub fn new(feature: impl Into<String>, bin: u32) -> Self {
        Self {
            feature: feature.into(),
            bin,
        }
    }
}

impl fmt::Display for Dummy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.feature, self.bin)
    }
}

/// One patient: bins aligned with the schema's feature order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub bins: Vec<u32>,
    pub label: bool,
}

impl PatientRecord {
    pub fn bin(&self, schema: &Schema, feature: &str) -> Option<u32> {
        schema.index_of(feature).map(|i| self.bins[i])
    }

    pub fn has(&self, schema: &Schema, dummy: &Dummy) -> bool {
        self.bin(schema, &dummy.feature) == Some(dummy.bin)
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), DatasetError> {
        if self.bins.len() != schema.len() {
            return Err(DatasetError::Invalid(format!(
                "record `{}` has {} bins, schema has {} features",
                self.id,
                self.bins.len(),
                schema.len()
            )));
        }
        for (b, f) in self.bins.iter().zip(schema.features()) {
            if *b < 1 || *b > f.bin_count {
                return Err(DatasetError::Invalid(format!(
                    "record `{}`: bin {} out of range for `{}`",
                    self.id, b, f.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const DEFAULT: SplitRatios = SplitRatios {
        train: 0.70,
        valid: 0.15,
        test: 0.15,
    };

    pub fn validate(&self) -> Result<(), DatasetError> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(DatasetError::Ratios(format!("{self:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Ratios(format!("ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    fn nonzero(&self) -> usize {
        [self.train, self.valid, self.test]
            .iter()
            .filter(|r| **r > 0.0)
            .count()
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub records: Vec<PatientRecord>,
    #[serde(default)]
    pub split_tags: BTreeMap<String, Split>,
}

impl Dataset {
    pub fn new(schema: Schema, records: Vec<PatientRecord>) -> Result<Self, DatasetError> {
        let mut ids = HashSet::new();
        for r in &records {
            r.validate(&schema)?;
            if !ids.insert(r.id.as_str()) {
                return Err(DatasetError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            schema,
            records,
            split_tags: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label).count()
    }

    /// Fraction of positive labels; 0 for an empty dataset.
    pub fn prevalence(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.positives() as f64 / self.records.len() as f64
        }
    }

    /// Records tagged with `split`, in original order, as an untagged dataset.
    pub fn subset(&self, split: Split) -> Dataset {
        let records = self
            .records
            .iter()
            .filter(|r| self.split_tags.get(&r.id) == Some(&split))
            .cloned()
            .collect();
        Dataset {
            schema: self.schema.clone(),
            records,
            split_tags: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&PatientRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset, DatasetError> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let feature_cols = schema
        .features()
        .iter()
        .map(|f| column(&f.name))
        .collect::<Result<Vec<_>, _>>()?;
    let label_col = column(LABEL_COLUMN)?;
    let id_col = column(ID_COLUMN)?;

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let mut bins = Vec::with_capacity(schema.len());
        for (f, &c) in schema.features().iter().zip(&feature_cols) {
            let raw = row.get(c).unwrap_or("").trim();
            let bin = raw
                .parse::<u32>()
                .ok()
                .filter(|b| (1..=f.bin_count).contains(b))
                .ok_or_else(|| DatasetError::BinOutOfRange {
                    row: line,
                    feature: f.name.clone(),
                    value: raw.to_string(),
                    bin_count: f.bin_count,
                })?;
            bins.push(bin);
        }
        let raw_label = row.get(label_col).unwrap_or("").trim();
        let label = match raw_label {
            "0" => false,
            "1" => true,
            other => {
                return Err(DatasetError::NonBinaryLabel {
                    row: line,
                    value: other.to_string(),
                })
            }
        };
        let id = row.get(id_col).unwrap_or("").trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId(id));
        }
        records.push(PatientRecord { id, bins, label });
    }
    Ok(Dataset {
        schema: schema.clone(),
        records,
        split_tags: BTreeMap::new(),
    })
}

/// Writes features, then `label`, then `id`.
pub fn write_csv<W: std::io::Write>(ds: &Dataset, writer: W) -> Result<(), DatasetError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.schema.features().iter().map(|f| f.name.as_str()).collect();
    header.push(LABEL_COLUMN);
    header.push(ID_COLUMN);
    wtr.write_record(&header)?;
    for r in &ds.records {
        let mut row: Vec<String> = r.bins.iter().map(u32::to_string).collect();
        row.push(if r.label { "1" } else { "0" }.to_string());
        row.push(r.id.clone());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Shuffles each class with a seeded RNG, then cuts contiguous slices.
///
/// Valid and test slices are `round(n_class * ratio)`; the train slice takes
/// the remainder, so every per-class split size is within 1 of its exact
/// proportion.
pub fn stratified_split(
    ds: &Dataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tags = BTreeMap::new();
    for label in [false, true] {
        let mut ids: Vec<&str> = ds
            .records
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.id.as_str())
            .collect();
        if ids.is_empty() {
            continue;
        }
        if ids.len() < ratios.nonzero() {
            return Err(DatasetError::ClassTooSmall {
                label: label as u8,
                count: ids.len(),
                splits: ratios.nonzero(),
            });
        }
        ids.shuffle(&mut rng);
        let n = ids.len() as f64;
        let n_valid = (n * ratios.valid).round() as usize;
        let n_test = ((n * ratios.test).round() as usize).min(ids.len() - n_valid);
        let n_train = ids.len() - n_valid - n_test;
        for (i, id) in ids.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
            tags.insert(id.to_string(), split);
        }
    }
    Ok(Dataset {
        schema: ds.schema.clone(),
        records: ds.records.clone(),
        split_tags: tags,
    })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Synthetic records with uniform bins and a logistic outcome over planted
/// (feature, bin) weights.
pub fn synth_generate(
    schema: &Schema,
    n: usize,
    planted: &BTreeMap<Dummy, f64>,
    intercept: f64,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    if n == 0 {
        return Err(DatasetError::Invalid("synth_generate needs n >= 1".into()));
    }
    let mut planted_idx = Vec::with_capacity(planted.len());
    for (dummy, &w) in planted {
        if !schema.contains_dummy(dummy) || !w.is_finite() {
            return Err(DatasetError::UnknownDummy(dummy.clone()));
        }
        planted_idx.push((schema.index_of(&dummy.feature).unwrap(), dummy.bin, w));
    }
    let width = n.to_string().len().max(5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let bins: Vec<u32> = schema
                .features()
                .iter()
                .map(|f| rng.gen_range(1..=f.bin_count))
                .collect();
            let logit = intercept
                + planted_idx
                    .iter()
                    .filter(|(fi, b, _)| bins[*fi] == *b)
                    .map(|(_, _, w)| w)
                    .sum::<f64>();
            let label = rng.gen::<f64>() < sigmoid(logit);
            PatientRecord {
                id: format!("p{:0width$}", i + 1),
                bins,
                label,
            }
        })
        .collect();
    Ok(Dataset {
        schema: schema.clone(),
        records,
        split_tags: BTreeMap::new(),
    })
}

/// Distinct class labels present, used to reject single-class training sets.
pub fn classes(ds: &Dataset) -> BTreeSet<bool> {
    ds.records.iter().map(|r| r.label).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema2() -> Schema {
        Schema::new(vec![
            FeatureSpec::new("egfr", 4, "eGFR"),
            FeatureSpec::new("hgb", 4, "hemoglobin"),
        ])
        .unwrap()
    }

    #[test]
    fn loads_valid_rows_in_order() {
        let csv = "egfr,hgb,label,id\n1,2,1,a\n4,4,0,b\n2,3,0,c\n3,1,1,d\n";
        let ds = read_csv(csv.as_bytes(), &schema2()).unwrap();
        assert_eq!(ds.len(), 4);
        let ids: Vec<_> = ds.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c", "d"]);
        assert_eq!(ds.records[0].bins, vec![1, 2]);
        assert!(ds.records[0].label);
    }

    #[test]
    fn column_order_in_file_is_free() {
        let csv = "id,label,hgb,egfr\nx,1,3,2\n";
        let ds = read_csv(csv.as_bytes(), &schema2()).unwrap();
        assert_eq!(ds.records[0].bins, vec![2, 3]);
    }

    #[test]
    fn bin_out_of_range_is_rejected() {
        let csv = "egfr,hgb,label,id\n5,2,1,a\n";
        let err = read_csv(csv.as_bytes(), &schema2()).unwrap_err();
        assert!(err.to_string().contains("bin out of range"), "{err}");
    }

    #[test]
    fn header_only_gives_empty_dataset() {
        let ds = read_csv("egfr,hgb,label,id\n".as_bytes(), &schema2()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn load_errors() {
        let s = schema2();
        assert!(matches!(
            read_csv("egfr,label,id\n1,0,a\n".as_bytes(), &s),
            Err(DatasetError::MissingColumn(c)) if c == "hgb"
        ));
        assert!(matches!(
            read_csv("egfr,hgb,label,id\n1,1,2,a\n".as_bytes(), &s),
            Err(DatasetError::NonBinaryLabel { .. })
        ));
        assert!(matches!(
            read_csv("egfr,hgb,label,id\n1,1,0,a\n1,1,1,a\n".as_bytes(), &s),
            Err(DatasetError::DuplicateId(_))
        ));
        assert!(matches!(
            read_csv("egfr,hgb,label,id\nx,1,0,a\n".as_bytes(), &s),
            Err(DatasetError::BinOutOfRange { .. })
        ));
    }

    #[test]
    fn schema_rejects_bad_specs() {
        assert!(Schema::new(vec![FeatureSpec::new("a", 1, "A")]).is_err());
        assert!(Schema::new(vec![
            FeatureSpec::new("a", 2, "A"),
            FeatureSpec::new("a", 3, "B")
        ])
        .is_err());
        assert!(Schema::new(vec![FeatureSpec::new("label", 2, "L")]).is_err());
    }

    fn toy(n: usize, positives: usize) -> Dataset {
        let s = schema2();
        let records = (0..n)
            .map(|i| PatientRecord {
                id: format!("r{i:03}"),
                bins: vec![(i % 4) as u32 + 1, 1],
                label: i < positives,
            })
            .collect();
        Dataset::new(s, records).unwrap()
    }

    #[test]
    fn split_exact_proportions() {
        let ds = stratified_split(&toy(100, 20), SplitRatios::DEFAULT, 7).unwrap();
        let count = |s| ds.subset(s).len();
        let pos = |s| ds.subset(s).positives();
        assert_eq!((count(Split::Train), count(Split::Valid), count(Split::Test)), (70, 15, 15));
        assert_eq!((pos(Split::Train), pos(Split::Valid), pos(Split::Test)), (14, 3, 3));
        assert_eq!(ds.split_tags.len(), 100);
    }

    #[test]
    fn split_is_deterministic() {
        let a = stratified_split(&toy(100, 20), SplitRatios::DEFAULT, 7).unwrap();
        let b = stratified_split(&toy(100, 20), SplitRatios::DEFAULT, 7).unwrap();
        let c = stratified_split(&toy(100, 20), SplitRatios::DEFAULT, 8).unwrap();
        assert_eq!(a.split_tags, b.split_tags);
        assert_ne!(a.split_tags, c.split_tags);
    }

    #[test]
    fn split_rejects_bad_ratios_and_tiny_classes() {
        let r = SplitRatios {
            train: 0.5,
            valid: 0.2,
            test: 0.2,
        };
        assert!(matches!(
            stratified_split(&toy(10, 5), r, 1),
            Err(DatasetError::Ratios(_))
        ));
        assert!(matches!(
            stratified_split(&toy(10, 2), SplitRatios::DEFAULT, 1),
            Err(DatasetError::ClassTooSmall { label: 1, .. })
        ));
    }

    #[test]
    fn synth_low_intercept_gives_no_positives() {
        let ds = synth_generate(&schema2(), 50, &BTreeMap::new(), -10.0, 3).unwrap();
        assert_eq!(ds.len(), 50);
        assert_eq!(ds.positives(), 0);
    }

    #[test]
    fn synth_planted_weight_shifts_conditional_prevalence() {
        // sigmoid(4) = 0.982 vs sigmoid(0) = 0.5
        let planted = BTreeMap::from([(Dummy::new("egfr", 1), 4.0)]);
        let ds = synth_generate(&schema2(), 2000, &planted, 0.0, 11).unwrap();
        let rate = |active: bool| {
            let sel: Vec<_> = ds
                .records
                .iter()
                .filter(|r| (r.bins[0] == 1) == active)
                .collect();
            sel.iter().filter(|r| r.label).count() as f64 / sel.len() as f64
        };
        let gap = rate(true) - rate(false);
        assert!(gap > 0.3, "gap {gap}");
        assert!((rate(true) - 0.982).abs() < 0.03);
        assert!((rate(false) - 0.5).abs() < 0.05);
    }

    #[test]
    fn synth_is_deterministic_and_validates_planted() {
        let planted = BTreeMap::from([(Dummy::new("egfr", 2), 1.0)]);
        let a = synth_generate(&schema2(), 30, &planted, 0.0, 9).unwrap();
        let b = synth_generate(&schema2(), 30, &planted, 0.0, 9).unwrap();
        assert_eq!(a, b);
        let bad = BTreeMap::from([(Dummy::new("egfr", 9), 1.0)]);
        assert!(matches!(
            synth_generate(&schema2(), 30, &bad, 0.0, 9),
            Err(DatasetError::UnknownDummy(_))
        ));
        let unknown = BTreeMap::from([(Dummy::new("sodium", 1), 1.0)]);
        assert!(synth_generate(&schema2(), 30, &unknown, 0.0, 9).is_err());
    }
}
