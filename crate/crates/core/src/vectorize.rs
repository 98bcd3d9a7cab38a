//! Document-frequency filtered vocabulary and L2-normalized term-frequency
//! vectors.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TokenizedDoc;

/// Default minimum document-frequency fraction.
pub const DEFAULT_MIN_DF: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyIndex {
    /// Retained stems, sorted.
    pub terms: Vec<String>,
    /// Number of documents containing `terms[i]`.
    pub doc_frequency: Vec<usize>,
    pub min_df_fraction: f64,
    pub corpus_size: usize,
    /// Terms dropped by the filter, with their document frequency.
    pub removed: Vec<(String, usize)>,
}

impl VocabularyIndex {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Distinct stems before filtering.
    pub fn distinct_terms(&self) -> usize {
        self.terms.len() + self.removed.len()
    }

    pub fn position(&self, term: &str) -> Option<usize> {
        self.terms.binary_search_by(|t| t.as_str().cmp(term)).ok()
    }

    /// `term,doc_frequency,retained`, every distinct stem, sorted by term.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut rows: Vec<(&str, usize, bool)> = self
            .terms
            .iter()
            .zip(&self.doc_frequency)
            .map(|(t, &df)| (t.as_str(), df, true))
            .chain(self.removed.iter().map(|(t, df)| (t.as_str(), *df, false)))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["term", "doc_frequency", "retained"])?;
        for (term, df, kept) in rows {
            w.write_record([term, &df.to_string(), &kept.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Keeps terms whose document frequency is at least `min_df_fraction` of the
/// corpus, compared exactly (so 0.1 of 30 documents is 3, not 3.0000000000000004).
pub fn build_vocabulary(docs: &[TokenizedDoc], min_df_fraction: f64) -> Result<VocabularyIndex> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("no documents to build a vocabulary from"));
    }
    if !(0.0..=1.0).contains(&min_df_fraction) {
        return Err(Error::InvalidConfig(format!(
            "min_df_fraction {min_df_fraction} outside [0, 1]"
        )));
    }
    let fraction = Ratio::<i128>::approximate_float(min_df_fraction)
        .ok_or_else(|| Error::InvalidConfig(format!("min_df_fraction {min_df_fraction}")))?;
    let threshold = fraction * Ratio::from_integer(docs.len() as i128);

    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let distinct: BTreeSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for term in distinct {
            *df.entry(term).or_default() += 1;
        }
    }

    let mut terms = Vec::new();
    let mut doc_frequency = Vec::new();
    let mut removed = Vec::new();
    for (term, count) in df {
        if Ratio::from_integer(count as i128) >= threshold {
            terms.push(term.to_string());
            doc_frequency.push(count);
        } else {
            removed.push((term.to_string(), count));
        }
    }
    if terms.is_empty() {
        return Err(Error::EmptyVocabulary {
            docs: docs.len(),
            min_df: min_df_fraction,
        });
    }
    Ok(VocabularyIndex {
        terms,
        doc_frequency,
        min_df_fraction,
        corpus_size: docs.len(),
        removed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub source_id: String,
    pub values: Vec<f64>,
    /// Set when every entry is zero (nothing in the vocabulary).
    #[serde(default)]
    pub zero: bool,
}

impl FeatureVector {
    pub fn new(source_id: impl Into<String>, values: Vec<f64>) -> Self {
        let zero = values.iter().all(|v| *v == 0.0);
        Self {
            source_id: source_id.into(),
            values,
            zero,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Raw term counts of `doc` over `vocab`; unknown tokens are ignored.
pub fn vectorize_tf(doc: &TokenizedDoc, vocab: &VocabularyIndex) -> FeatureVector {
    let mut values = vec![0.0; vocab.len()];
    for token in &doc.tokens {
        if let Some(i) = vocab.position(token) {
            values[i] += 1.0;
        }
    }
    FeatureVector::new(doc.source_id.clone(), values)
}

/// Divides by the Euclidean length; a zero vector is returned as is, flagged.
pub fn l2_normalize(v: &FeatureVector) -> FeatureVector {
    let norm = v.norm();
    if norm == 0.0 {
        return FeatureVector {
            zero: true,
            ..v.clone()
        };
    }
    FeatureVector {
        source_id: v.source_id.clone(),
        values: v.values.iter().map(|x| x / norm).collect(),
        zero: false,
    }
}

pub fn euclidean_distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(squared_distance(&a.values, &b.values).sqrt())
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, tokens: &[&str]) -> TokenizedDoc {
        TokenizedDoc {
            source_id: id.into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// 29 docs; "two" appears in 2 of them, "three" in 3, "common" in all.
    fn corpus() -> Vec<TokenizedDoc> {
        (0..29)
            .map(|i| {
                let mut t = vec!["common"];
                if i < 2 {
                    t.push("two");
                }
                if i < 3 {
                    t.extend(["three", "three"]);
                }
                doc(&format!("d{i}"), &t)
            })
            .collect()
    }

    #[test]
    fn ten_percent_of_twenty_nine() {
        let vocab = build_vocabulary(&corpus(), 0.10).unwrap();
        assert_eq!(vocab.terms, ["common", "three"]);
        assert_eq!(vocab.doc_frequency, [29, 3]);
        assert_eq!(vocab.removed, [("two".to_string(), 2)]);
    }

    #[test]
    fn filter_disabled() {
        let vocab = build_vocabulary(&corpus(), 0.0).unwrap();
        assert_eq!(vocab.terms, ["common", "three", "two"]);
    }

    #[test]
    fn exact_threshold_at_integer_product() {
        // 0.1 * 30 is 3.0000000000000004 in floating point.
        let docs: Vec<_> = (0..30)
            .map(|i| doc(&i.to_string(), if i < 3 { &["x", "y"] } else { &["y"] }))
            .collect();
        let vocab = build_vocabulary(&docs, 0.1).unwrap();
        assert_eq!(vocab.terms, ["x", "y"]);
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        let docs = vec![doc("a", &["x"]), doc("b", &["y"])];
        assert!(matches!(
            build_vocabulary(&docs, 1.0),
            Err(Error::EmptyVocabulary { .. })
        ));
        assert!(build_vocabulary(&[], 0.1).is_err());
    }

    #[test]
    fn term_counts() {
        let vocab = build_vocabulary(&[doc("v", &["a", "b", "c"])], 0.0).unwrap();
        let v = vectorize_tf(&doc("x", &["a", "a", "b"]), &vocab);
        assert_eq!(v.values, [2.0, 1.0, 0.0]);
        assert!(!v.zero);
        let z = vectorize_tf(&doc("y", &["q"]), &vocab);
        assert!(z.zero);
    }

    #[test]
    fn three_four_five() {
        let v = l2_normalize(&FeatureVector::new("v", vec![3.0, 4.0]));
        assert_eq!(v.values, [0.6, 0.8]);
        let z = l2_normalize(&FeatureVector::new("z", vec![0.0; 3]));
        assert_eq!(z.values, [0.0; 3]);
        assert!(z.zero);
    }

    #[test]
    fn distances() {
        let a = FeatureVector::new("a", vec![1.0, 0.0]);
        let b = FeatureVector::new("b", vec![0.0, 1.0]);
        assert_eq!(euclidean_distance(&a, &b).unwrap(), 2f64.sqrt());
        assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
        let c = FeatureVector::new("c", vec![1.0]);
        assert!(matches!(
            euclidean_distance(&a, &c),
            Err(Error::DimensionMismatch { left: 2, right: 1 })
        ));
    }

    #[test]
    fn vocabulary_csv() {
        let vocab = build_vocabulary(&corpus(), 0.10).unwrap();
        let mut out = Vec::new();
        vocab.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "term,doc_frequency,retained\ncommon,29,true\nthree,3,true\ntwo,2,false\n"
        );
    }
}
