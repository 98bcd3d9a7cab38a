//! Teacher-agreement and distance statistics, the human baseline, and
//! reliability classification.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::MarkModel;
use super::similarity::SimilarityScore;
use crate::corpus::StudentAnswer;
use crate::error::{Error, Result};

/// Mean squared deviation of each teacher's mark from the per-answer
/// average, over all (answer, teacher) pairs. Zero for no answers.
///
/// ```
/// use sagrade::corpus::{Grade, StudentAnswer};
/// let a = |g1, g2| StudentAnswer {
///     answer_id: String::new(),
///     question_id: String::new(),
///     text: String::new(),
///     grade1: Grade::new(g1).unwrap(),
///     grade2: Grade::new(g2).unwrap(),
/// };
/// assert_eq!(sagrade::grade::tm_baseline(&[a(4.0, 3.0), a(5.0, 5.0)]), 0.125);
/// ```
pub fn tm_baseline(answers: &[StudentAnswer]) -> f64 {
    if answers.is_empty() {
        return 0.0;
    }
    let sum: f64 = answers.iter().map(teacher_sq_dev).sum();
    sum / (2 * answers.len()) as f64
}

/// `(g1 - TM)^2 + (g2 - TM)^2`.
fn teacher_sq_dev(a: &StudentAnswer) -> f64 {
    let tm = a.tm();
    (a.grade1.value() - tm).powi(2) + (a.grade2.value() - tm).powi(2)
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let (sxx, syy, sxy) = moments(x, y)?;
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Centered sums of squares and cross-products.
fn moments(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    Ok((sxx, syy, sxy))
}

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    /// Mean squared residual.
    pub mse: f64,
}

pub fn line_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let (sxx, _, sxy) = moments(x, y)?;
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance in x"));
    }
    let n = x.len() as f64;
    let slope = sxy / sxx;
    let intercept = y.iter().sum::<f64>() / n - slope * x.iter().sum::<f64>() / n;
    let mse = x
        .iter()
        .zip(y)
        .map(|(a, b)| (intercept + slope * a - b).powi(2))
        .sum::<f64>()
        / n;
    Ok(LineFit {
        intercept,
        slope,
        mse,
    })
}

/// A correlation together with the residual error of the matching
/// regression line. The error figure is a best guess at what a bare
/// "error" next to a correlation means: the MSE of the one-variable
/// least-squares line of `y` on `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub line: LineFit,
}

pub fn correlate(x: &[f64], y: &[f64]) -> Result<Correlation> {
    Ok(Correlation {
        r: pearson(x, y)?,
        line: line_fit(x, y)?,
    })
}

/// Errors of the model and of the teachers at one distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceErrors {
    pub count: usize,
    /// Mean of `(MM(h) - TM)^2` over answers at this distance.
    pub mse_mm: f64,
    /// Mean of `(g - TM)^2` over (answer, teacher) pairs at this distance.
    pub mse_tm: f64,
}

/// Matches scores to answers by id, in score order.
pub(crate) fn pair<'a>(
    scores: &'a [SimilarityScore],
    answers: &'a [StudentAnswer],
) -> Result<Vec<(&'a SimilarityScore, &'a StudentAnswer)>> {
    let by_id: BTreeMap<&str, &StudentAnswer> =
        answers.iter().map(|a| (a.answer_id.as_str(), a)).collect();
    scores
        .iter()
        .map(|s| {
            by_id
                .get(s.answer_id.as_str())
                .map(|a| (s, *a))
                .ok_or_else(|| Error::MissingGrades(s.answer_id.clone()))
        })
        .collect()
}

pub fn per_distance_errors(
    scores: &[SimilarityScore],
    answers: &[StudentAnswer],
    model: &MarkModel,
) -> Result<BTreeMap<u32, DistanceErrors>> {
    let mut acc: BTreeMap<u32, (usize, f64, f64)> = BTreeMap::new();
    for (s, a) in pair(scores, answers)? {
        let e = acc.entry(s.hamming).or_default();
        e.0 += 1;
        e.1 += (model.predict(f64::from(s.hamming)) - a.tm()).powi(2);
        e.2 += teacher_sq_dev(a);
    }
    Ok(acc
        .into_iter()
        .map(|(h, (count, mm, tm))| {
            (
                h,
                DistanceErrors {
                    count,
                    mse_mm: mm / count as f64,
                    mse_tm: tm / (2 * count) as f64,
                },
            )
        })
        .collect())
}

/// Average teacher mark at each observed distance.
pub fn mean_tm_by_distance(
    scores: &[SimilarityScore],
    answers: &[StudentAnswer],
) -> Result<BTreeMap<u32, f64>> {
    let mut acc: BTreeMap<u32, (usize, f64)> = BTreeMap::new();
    for (s, a) in pair(scores, answers)? {
        let e = acc.entry(s.hamming).or_default();
        e.0 += 1;
        e.1 += a.tm();
    }
    Ok(acc
        .into_iter()
        .map(|(h, (n, sum))| (h, sum / n as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reliability {
    /// `beta2 > 1`.
    pub reliable: bool,
    /// Whether the mean teacher mark never rises with distance; `None` with
    /// fewer than two observed distances. Informational only.
    pub tm_non_increasing: Option<bool>,
    pub reasons: Vec<String>,
}

/// A fit is reliable iff its exponent exceeds 1, i.e. the curve bends down
/// rather than flattening out.
pub fn classify_reliability(
    model: &MarkModel,
    mean_tm_by_h: Option<&BTreeMap<u32, f64>>,
) -> Reliability {
    let reliable = model.beta2 > 1.0;
    let mut reasons = vec![if reliable {
        format!("beta2 = {} > 1", model.beta2)
    } else {
        format!("beta2 = {} <= 1", model.beta2)
    }];
    let tm_non_increasing = mean_tm_by_h.filter(|m| m.len() >= 2).map(|m| {
        let means: Vec<(&u32, &f64)> = m.iter().collect();
        let rises: Vec<String> = means
            .windows(2)
            .filter(|w| w[1].1 > w[0].1)
            .map(|w| format!("h={}: {} -> h={}: {}", w[0].0, w[0].1, w[1].0, w[1].1))
            .collect();
        if rises.is_empty() {
            reasons.push("mean teacher mark is non-increasing in distance".into());
        } else {
            reasons.push(format!(
                "mean teacher mark rises with distance ({})",
                rises.join("; ")
            ));
        }
        rises.is_empty()
    });
    Reliability {
        reliable,
        tm_non_increasing,
        reasons,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementCell {
    pub grade1: f64,
    pub grade2: f64,
    pub count: usize,
    pub proportion: f64,
}

/// Joint distribution of the two teachers' marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    /// Non-empty cells ordered by (grade1, grade2).
    pub cells: Vec<AgreementCell>,
    pub total: usize,
    /// Answers where both teachers gave the same mark.
    pub diagonal: usize,
}

pub fn agreement_matrix(answers: &[StudentAnswer]) -> AgreementMatrix {
    // Grades are validated finite, so their bit patterns order like the values.
    let mut counts: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    for a in answers {
        *counts
            .entry((a.grade1.value().to_bits(), a.grade2.value().to_bits()))
            .or_default() += 1;
    }
    let total = answers.len();
    let cells = counts
        .into_iter()
        .map(|((g1, g2), count)| AgreementCell {
            grade1: f64::from_bits(g1),
            grade2: f64::from_bits(g2),
            count,
            proportion: count as f64 / total as f64,
        })
        .collect();
    AgreementMatrix {
        cells,
        total,
        diagonal: answers.iter().filter(|a| a.grade1 == a.grade2).count(),
    }
}

/// Per-question descriptive statistics. Correlations are `None` where they
/// are undefined (too few answers or a constant series).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeStats {
    pub pearson_teacher: Option<Correlation>,
    pub pearson_distance_grade1: Option<Correlation>,
    pub pearson_distance_grade2: Option<Correlation>,
    pub agreement: AgreementMatrix,
}

pub fn grade_stats(scores: &[SimilarityScore], answers: &[StudentAnswer]) -> Result<GradeStats> {
    let pairs = pair(scores, answers)?;
    let h: Vec<f64> = pairs.iter().map(|(s, _)| f64::from(s.hamming)).collect();
    let g1: Vec<f64> = pairs.iter().map(|(_, a)| a.grade1.value()).collect();
    let g2: Vec<f64> = pairs.iter().map(|(_, a)| a.grade2.value()).collect();
    let used: Vec<StudentAnswer> = pairs.iter().map(|(_, a)| (*a).clone()).collect();
    Ok(GradeStats {
        pearson_teacher: correlate(&g1, &g2).ok(),
        pearson_distance_grade1: correlate(&h, &g1).ok(),
        pearson_distance_grade2: correlate(&h, &g2).ok(),
        agreement: agreement_matrix(&used),
    })
}
