//! Keyword scoring against the model answer, the fitted mark model and the
//! statistics that compare it with the teachers.

mod model;
pub(crate) mod nelder_mead;
mod similarity;
mod stats;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use model::{
    fit_mm, fit_points, mm_evaluate, model_mse, FitDiagnostics, MarkModel, ModelFit, StartSummary,
    BETA2_GRID,
};
pub use similarity::{extract_model_vocabulary, hamming_distance, ModelVocabulary, SimilarityScore};
pub use stats::{
    agreement_matrix, classify_reliability, correlate, grade_stats, line_fit, mean_tm_by_distance,
    pearson, per_distance_errors, tm_baseline, AgreementCell, AgreementMatrix, Correlation,
    DistanceErrors, GradeStats, LineFit, Reliability,
};

use crate::corpus::StudentAnswer;
use crate::error::Result;

/// Everything learned from fitting one question's marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkModelFit {
    pub question_id: String,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub mse_mm: f64,
    pub mse_tm: f64,
    pub per_distance_errors: BTreeMap<u32, DistanceErrors>,
    pub mean_tm_by_distance: BTreeMap<u32, f64>,
    pub reliable: bool,
    pub reliability: Reliability,
    pub fit_diagnostics: FitDiagnostics,
}

impl MarkModelFit {
    pub fn model(&self) -> MarkModel {
        MarkModel {
            beta0: self.beta0,
            beta1: self.beta1,
            beta2: self.beta2,
        }
    }
}

/// Fits the mark model to the teachers' average and gathers the baseline,
/// per-distance errors and reliability verdict.
pub fn fit_question(
    question_id: &str,
    scores: &[SimilarityScore],
    answers: &[StudentAnswer],
) -> Result<MarkModelFit> {
    let pairs = stats::pair(scores, answers)?;
    let hs: Vec<f64> = pairs.iter().map(|(s, _)| f64::from(s.hamming)).collect();
    let tm: Vec<f64> = pairs.iter().map(|(_, a)| a.tm()).collect();
    let used: Vec<StudentAnswer> = pairs.iter().map(|(_, a)| (*a).clone()).collect();

    let fit = fit_points(&hs, &tm)?;
    let model = fit.model;
    let mean_tm = mean_tm_by_distance(scores, answers)?;
    let reliability = classify_reliability(&model, Some(&mean_tm));
    Ok(MarkModelFit {
        question_id: question_id.to_string(),
        beta0: model.beta0,
        beta1: model.beta1,
        beta2: model.beta2,
        mse_mm: fit.mse,
        mse_tm: tm_baseline(&used),
        per_distance_errors: per_distance_errors(scores, answers, &model)?,
        mean_tm_by_distance: mean_tm,
        reliable: reliability.reliable,
        reliability,
        fit_diagnostics: fit.diagnostics,
    })
}

/// `question_id,beta0,beta1,beta2,mse_mm,mse_tm,reliable`
pub fn write_fits_csv<'a, W: Write>(
    fits: impl IntoIterator<Item = &'a MarkModelFit>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["question_id", "beta0", "beta1", "beta2", "mse_mm", "mse_tm", "reliable"])?;
    for f in fits {
        w.write_record([
            f.question_id.clone(),
            f.beta0.to_string(),
            f.beta1.to_string(),
            f.beta2.to_string(),
            f.mse_mm.to_string(),
            f.mse_tm.to_string(),
            f.reliable.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `answer_id,n,h,tm,grade1,grade2,mm_prediction`; the prediction is clamped
/// to the marking scale and blank without a model.
pub fn write_similarity_csv<W: Write>(
    scores: &[SimilarityScore],
    answers: &[StudentAnswer],
    model: Option<&MarkModel>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["answer_id", "n", "h", "tm", "grade1", "grade2", "mm_prediction"])?;
    for (s, a) in stats::pair(scores, answers)? {
        w.write_record([
            s.answer_id.clone(),
            s.matched.to_string(),
            s.hamming.to_string(),
            a.tm().to_string(),
            a.grade1.to_string(),
            a.grade2.to_string(),
            model
                .map(|m| m.predict_clamped(f64::from(s.hamming)).to_string())
                .unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
