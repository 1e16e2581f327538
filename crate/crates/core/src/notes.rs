//! Knowledge-triple notes: each feature becomes "<display name> is <bin>.".

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{PatientRecord, Schema};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NoteError {
    #[error("malformed sentence at byte {offset}: {detail}")]
    Malformed { offset: usize, detail: String },
    #[error("unknown feature name `{0}`")]
    UnknownFeature(String),
    #[error("non-integer bin `{value}` for `{feature}`")]
    NonIntegerBin { feature: String, value: String },
    #[error("bin {bin} out of range for `{feature}`")]
    BinOutOfRange { feature: String, bin: u32 },
    #[error("feature `{0}` appears twice")]
    Duplicate(String),
    #[error("incomplete note: missing {0:?}")]
    Incomplete(Vec<String>),
}

/// Counts documentation tokens.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Maximal runs of non-whitespace.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

pub fn token_count(text: &str) -> usize {
    WhitespaceTokenizer.count(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub record_id: String,
    pub text: String,
    pub token_count: usize,
}

/// Bins recovered from a note; the outcome label is not part of the text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedNote {
    pub record_id: String,
    pub bins: Vec<u32>,
}

pub fn serialize(record: &PatientRecord, schema: &Schema) -> Note {
    serialize_with(record, schema, &WhitespaceTokenizer)
}

pub fn serialize_with(record: &PatientRecord, schema: &Schema, tokenizer: &dyn Tokenizer) -> Note {
    let text = schema
        .features()
        .iter()
        .zip(&record.bins)
        .map(|(f, b)| format!("{} is {}.", f.display_name, b))
        .collect::<Vec<_>>()
        .join(" ");
    Note {
        record_id: record.id.clone(),
        token_count: tokenizer.count(&text),
        text,
    }
}

/// Inverse of [`serialize`]. Display names are matched longest-first, so a
/// name may itself contain spaces or the word "is".
pub fn parse(note: &Note, schema: &Schema) -> Result<ParsedNote, NoteError> {
    let mut by_length: Vec<(usize, &str)> = schema
        .features()
        .iter()
        .enumerate()
        .map(|(i, f)| (i, f.display_name.as_str()))
        .collect();
    by_length.sort_by_key(|(_, name)| std::cmp::Reverse(name.len()));

    let text = note.text.as_str();
    let mut bins: Vec<Option<u32>> = vec![None; schema.len()];
    let mut pos = 0;
    while pos < text.len() {
        let rest = &text[pos..];
        let (idx, name) = by_length
            .iter()
            .find(|(_, name)| {
                rest.starts_with(name) && rest[name.len()..].starts_with(" is ")
            })
            .copied()
            .ok_or_else(|| match rest.find(" is ") {
                Some(end) => NoteError::UnknownFeature(rest[..end].to_string()),
                None => NoteError::Malformed {
                    offset: pos,
                    detail: format!("expected `<feature> is <bin>.` in `{rest}`"),
                },
            })?;
        let value_start = name.len() + " is ".len();
        let value_len = rest[value_start..].find('.').ok_or(NoteError::Malformed {
            offset: pos,
            detail: "sentence is missing its final period".into(),
        })?;
        let raw = &rest[value_start..value_start + value_len];
        let feature = &schema.features()[idx];
        let bin = raw
            .parse::<u32>()
            .map_err(|_| NoteError::NonIntegerBin {
                feature: feature.name.clone(),
                value: raw.to_string(),
            })?;
        if bin < 1 || bin > feature.bin_count {
            return Err(NoteError::BinOutOfRange {
                feature: feature.name.clone(),
                bin,
            });
        }
        if bins[idx].replace(bin).is_some() {
            return Err(NoteError::Duplicate(feature.name.clone()));
        }
        pos += value_start + value_len + 1;
        if pos < text.len() {
            if !text[pos..].starts_with(' ') {
                return Err(NoteError::Malformed {
                    offset: pos,
                    detail: "sentences must be separated by a single space".into(),
                });
            }
            pos += 1;
            if pos == text.len() {
                return Err(NoteError::Malformed {
                    offset: pos,
                    detail: "trailing space".into(),
                });
            }
        }
    }
    let missing: Vec<String> = schema
        .features()
        .iter()
        .zip(&bins)
        .filter(|(_, b)| b.is_none())
        .map(|(f, _)| f.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(NoteError::Incomplete(missing));
    }
    Ok(ParsedNote {
        record_id: note.record_id.clone(),
        bins: bins.into_iter().map(Option::unwrap).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureSpec;
    use proptest::prelude::*;

    fn schema() -> Schema {
        Schema::new(vec![
            FeatureSpec::new("egfr", 4, "eGFR"),
            FeatureSpec::new("hgb", 4, "hemoglobin"),
        ])
        .unwrap()
    }

    fn record(bins: Vec<u32>) -> PatientRecord {
        PatientRecord {
            id: "r1".into(),
            bins,
            label: false,
        }
    }

    #[test]
    fn serializes_triples() {
        let note = serialize(&record(vec![2, 2]), &schema());
        assert_eq!(note.text, "eGFR is 2. hemoglobin is 2.");
        assert_eq!(note.token_count, 6);
    }

    #[test]
    fn empty_schema_gives_empty_note() {
        let s = Schema::new(vec![]).unwrap();
        let note = serialize(&record(vec![]), &s);
        assert_eq!(note.text, "");
        assert_eq!(note.token_count, 0);
        assert_eq!(parse(&note, &s).unwrap().bins, Vec::<u32>::new());
    }

    #[test]
    fn equal_records_give_identical_text() {
        let a = serialize(&record(vec![3, 1]), &schema());
        let b = serialize(&record(vec![3, 1]), &schema());
        assert_eq!(a.text, b.text);
    }

    fn note(text: &str) -> Note {
        Note {
            record_id: "r1".into(),
            text: text.into(),
            token_count: token_count(text),
        }
    }

    #[test]
    fn parse_errors() {
        let s = schema();
        assert!(matches!(
            parse(&note("eGFR is banana."), &s),
            Err(NoteError::NonIntegerBin { .. })
        ));
        assert!(matches!(
            parse(&note("eGFR is 2."), &s),
            Err(NoteError::Incomplete(m)) if m == vec!["hgb".to_string()]
        ));
        assert!(matches!(
            parse(&note("sodium is 2. eGFR is 1."), &s),
            Err(NoteError::UnknownFeature(f)) if f == "sodium"
        ));
        assert!(matches!(
            parse(&note("eGFR is 2 hemoglobin is 1."), &s),
            Err(NoteError::NonIntegerBin { .. })
        ));
        assert!(matches!(
            parse(&note("eGFR is 2. eGFR is 2."), &s),
            Err(NoteError::Duplicate(_))
        ));
        assert!(matches!(
            parse(&note("eGFR is 7. hemoglobin is 1."), &s),
            Err(NoteError::BinOutOfRange { .. })
        ));
        assert!(matches!(parse(&note("garbage"), &s), Err(NoteError::Malformed { .. })));
    }

    #[test]
    fn display_names_with_spaces_and_is() {
        let s = Schema::new(vec![
            FeatureSpec::new("egfr", 4, "estimated glomerular filtration rate (eGFR)"),
            FeatureSpec::new("x", 3, "what is this"),
            FeatureSpec::new("y", 3, "what"),
        ])
        .unwrap();
        let r = record(vec![4, 2, 3]);
        let n = serialize(&r, &s);
        assert_eq!(parse(&n, &s).unwrap().bins, r.bins);
    }

    #[test]
    fn token_counts() {
        assert_eq!(token_count("aki risk high"), 3);
        assert_eq!(token_count(""), 0);
        assert_eq!(token_count("a  b\nc"), 3);
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(bins in proptest::collection::vec(1u32..=4, 2)) {
            let s = schema();
            let r = record(bins);
            let n = serialize(&r, &s);
            prop_assert_eq!(parse(&n, &s).unwrap().bins, r.bins);
        }

        #[test]
        fn serialize_is_injective(a in proptest::collection::vec(1u32..=4, 2),
                                  b in proptest::collection::vec(1u32..=4, 2)) {
            let s = schema();
            let ta = serialize(&record(a.clone()), &s).text;
            let tb = serialize(&record(b.clone()), &s).text;
            prop_assert_eq!(a == b, ta == tb);
        }
    }
}
