//! Word-frequency tables and plot-ready series, written as CSV with JSON
//! mirrors. Everything here reads stored stage outputs; nothing is refitted.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::StudentAnswer;
use crate::error::Result;
use crate::grade::{write_fits_csv, write_similarity_csv, DistanceErrors, MarkModel, SimilarityScore};
use crate::store::{write_atomic, RunArtifact};
use crate::text::TokenizedDoc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Clustering tokens (question words removed).
    Corpus,
    /// Scoring tokens (question words kept).
    CorpusWithQuestionWords,
    Cluster(usize),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Corpus => f.write_str("corpus"),
            Self::CorpusWithQuestionWords => f.write_str("corpus_with_question_words"),
            Self::Cluster(c) => write!(f, "cluster_{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub scope: Scope,
    /// Descending count, then term.
    pub rows: Vec<(String, usize)>,
}

impl FrequencyTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["term", "count"])?;
        for (term, count) in &self.rows {
            w.write_record([term.as_str(), &count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Token counts over `docs`.
///
/// ```
/// use sagrade::report::{word_frequencies, Scope};
/// use sagrade::text::TokenizedDoc;
/// let doc = TokenizedDoc { source_id: "a".into(), tokens: vec!["b".into(), "a".into(), "b".into(), "c".into()] };
/// let t = word_frequencies(&[doc], Scope::Corpus);
/// assert_eq!(t.rows, [("b".to_string(), 2), ("a".to_string(), 1), ("c".to_string(), 1)]);
/// ```
pub fn word_frequencies<'a>(
    docs: impl IntoIterator<Item = &'a TokenizedDoc>,
    scope: Scope,
) -> FrequencyTable {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        for t in &doc.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut rows: Vec<(String, usize)> = counts.into_iter().map(|(t, c)| (t.to_string(), c)).collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    FrequencyTable { scope, rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Scatter,
    Curve,
    Bar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub name: String,
    pub kind: SeriesKind,
    pub points: Vec<(f64, f64)>,
}

fn write_series_csv<W: Write>(series: &[PlotSeries], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["series", "kind", "x", "y"])?;
    for s in series {
        let kind = serde_json::to_value(s.kind)?;
        let kind = kind.as_str().unwrap_or_default();
        for (x, y) in &s.points {
            w.write_record([s.name.as_str(), kind, &x.to_string(), &y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Curve samples per unit of distance.
const CURVE_STEPS: u32 = 10;

/// Teacher marks and the model curve against distance: `grade1`, `grade2`
/// and `tm` scatters (one point per answer, in score order) and an `mm`
/// curve sampled at every observed distance and every tenth up to the
/// largest possible distance. The curve is clamped to the marking scale.
pub fn mark_vs_distance_series(
    scores: &[SimilarityScore],
    answers: &[StudentAnswer],
    model: &MarkModel,
    max_distance: u32,
) -> Vec<PlotSeries> {
    let by_id: BTreeMap<&str, &StudentAnswer> = answers.iter().map(|a| (a.answer_id.as_str(), a)).collect();
    let mut g1 = Vec::new();
    let mut g2 = Vec::new();
    let mut tm = Vec::new();
    for s in scores {
        if let Some(a) = by_id.get(s.answer_id.as_str()) {
            let h = f64::from(s.hamming);
            g1.push((h, a.grade1.value()));
            g2.push((h, a.grade2.value()));
            tm.push((h, a.tm()));
        }
    }
    // Tenths as integers, so observed distances and grid points merge exactly.
    let mut xs: Vec<u32> = (0..=max_distance * CURVE_STEPS).collect();
    xs.extend(scores.iter().map(|s| s.hamming * CURVE_STEPS));
    xs.sort_unstable();
    xs.dedup();
    let mm = xs
        .into_iter()
        .map(|t| {
            let h = f64::from(t) / f64::from(CURVE_STEPS);
            (h, model.predict_clamped(h))
        })
        .collect();
    vec![
        PlotSeries { name: "grade1".into(), kind: SeriesKind::Scatter, points: g1 },
        PlotSeries { name: "grade2".into(), kind: SeriesKind::Scatter, points: g2 },
        PlotSeries { name: "tm".into(), kind: SeriesKind::Scatter, points: tm },
        PlotSeries { name: "mm".into(), kind: SeriesKind::Curve, points: mm },
    ]
}

/// `(mse_mm, mse_tm)` bars keyed by distance.
pub fn error_vs_distance_series(errors: &BTreeMap<u32, DistanceErrors>) -> (PlotSeries, PlotSeries) {
    let pick = |name: &str, f: fn(&DistanceErrors) -> f64| PlotSeries {
        name: name.into(),
        kind: SeriesKind::Bar,
        points: errors.iter().map(|(h, e)| (f64::from(*h), f(e))).collect(),
    };
    (pick("mse_mm", |e| e.mse_mm), pick("mse_tm", |e| e.mse_tm))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes the report bundle for `run` into `out`:
///
/// ```text
/// fits.csv / fits.json                  one row per fitted question
/// <question>/freq_<scope>.csv / .json   corpus, corpus_with_question_words, cluster_<i>
/// <question>/clusters.csv / .json
/// <question>/similarity.csv / .json
/// <question>/mark_vs_distance.csv / .json
/// <question>/error_vs_distance.csv / .json
/// ```
///
/// Output depends only on `run`, so regenerating it is byte-identical.
/// Returns the written paths relative to `out`, sorted.
pub fn write_report(run: &RunArtifact, out: &Path) -> Result<Vec<String>> {
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();

    let fits: Vec<_> = run.questions.values().filter_map(|s| s.fit()).collect();
    files.insert("fits.csv".into(), csv_bytes(|b| write_fits_csv(fits.iter().copied(), b))?);
    files.insert("fits.json".into(), json_bytes(&fits)?);

    for (qid, stages) in &run.questions {
        let dir = crate::store::question_dir(qid);
        let mut put = |name: String, bytes: Vec<u8>| {
            files.insert(format!("{dir}/{name}"), bytes);
        };
        if let Some(tokens) = &stages.tokens {
            let mut tables = vec![
                word_frequencies(&tokens.clustering, Scope::Corpus),
                word_frequencies(&tokens.scoring, Scope::CorpusWithQuestionWords),
            ];
            if let Some(clusters) = stages.clusters() {
                for c in 0..clusters.k {
                    let members = clusters.members(c);
                    let docs = tokens.clustering.iter().filter(|d| members.contains(&d.source_id.as_str()));
                    tables.push(word_frequencies(docs, Scope::Cluster(c)));
                }
            }
            for t in tables {
                put(format!("freq_{}.csv", t.scope), csv_bytes(|b| t.write_csv(b))?);
                put(format!("freq_{}.json", t.scope), json_bytes(&t)?);
            }
        }
        if let Some(clusters) = stages.clusters() {
            put("clusters.csv".into(), csv_bytes(|b| clusters.write_csv(b))?);
            put("clusters.json".into(), json_bytes(clusters)?);
        }
        let answers: Vec<StudentAnswer> = run.dataset.answers_for(qid).cloned().collect();
        if let Some(scores) = &stages.scores {
            let model = stages.fit().map(|f| f.model());
            put(
                "similarity.csv".into(),
                csv_bytes(|b| write_similarity_csv(scores, &answers, model.as_ref(), b))?,
            );
            put("similarity.json".into(), json_bytes(scores)?);
        }
        if let (Some(scores), Some(fit)) = (&stages.scores, stages.fit()) {
            let max_distance = stages
                .model_vocabulary
                .as_ref()
                .and_then(|v| v.ok())
                .map(|v| v.size())
                .unwrap_or_else(|| scores.iter().map(|s| s.hamming).max().unwrap_or(0));
            let series = mark_vs_distance_series(scores, &answers, &fit.model(), max_distance);
            put("mark_vs_distance.csv".into(), csv_bytes(|b| write_series_csv(&series, b))?);
            put("mark_vs_distance.json".into(), json_bytes(&series)?);
            let (mm, tm) = error_vs_distance_series(&fit.per_distance_errors);
            let series = [mm, tm];
            put("error_vs_distance.csv".into(), csv_bytes(|b| write_series_csv(&series, b))?);
            put("error_vs_distance.json".into(), json_bytes(&series)?);
        }
    }

    for (rel, bytes) in &files {
        write_atomic(&out.join(rel), bytes)?;
    }
    Ok(files.into_keys().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Grade;

    fn doc(tokens: &[&str]) -> TokenizedDoc {
        TokenizedDoc {
            source_id: "d".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn frequency_order() {
        let t = word_frequencies(&[doc(&["zeta", "alpha", "program", "program"])], Scope::Corpus);
        assert_eq!(t.rows[0], ("program".into(), 2));
        assert_eq!(t.rows[1].0, "alpha");
        assert_eq!(t.rows[2].0, "zeta");
        assert!(word_frequencies(&[], Scope::Cluster(0)).rows.is_empty());
    }

    #[test]
    fn mark_series() {
        let scores = [SimilarityScore {
            answer_id: "1".into(),
            matched: 1,
            hamming: 5,
            matched_terms: vec![],
        }];
        let answers = [StudentAnswer {
            answer_id: "1".into(),
            question_id: "1".into(),
            text: String::new(),
            grade1: Grade::new(4.0).unwrap(),
            grade2: Grade::new(3.0).unwrap(),
        }];
        let model = MarkModel::new(4.91085, -0.0058, 3.42359).unwrap();
        let s = mark_vs_distance_series(&scores, &answers, &model, 6);
        assert_eq!(s[0].points, [(5.0, 4.0)]);
        assert_eq!(s[1].points, [(5.0, 3.0)]);
        assert_eq!(s[2].points, [(5.0, 3.5)]);
        assert_eq!(s[3].points[0], (0.0, 4.91085));
        assert_eq!(s[3].points.len(), 61);
        assert!(s[3].points.iter().all(|(x, y)| x.is_finite() && y.is_finite()));
    }

    #[test]
    fn error_series() {
        let one: BTreeMap<u32, DistanceErrors> =
            [(0, DistanceErrors { count: 1, mse_mm: 0.0, mse_tm: 0.0 })].into();
        let (mm, tm) = error_vs_distance_series(&one);
        assert_eq!((mm.points.clone(), tm.points.clone()), (vec![(0.0, 0.0)], vec![(0.0, 0.0)]));
        let two: BTreeMap<u32, DistanceErrors> =
            [(2, DistanceErrors { count: 1, mse_mm: 0.0, mse_tm: 0.25 })].into();
        let (mm, tm) = error_vs_distance_series(&two);
        assert_eq!((mm.points[0], tm.points[0]), ((2.0, 0.0), (2.0, 0.25)));
    }
}
