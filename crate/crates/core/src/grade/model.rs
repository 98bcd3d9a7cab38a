//! The mark model `y = beta0 + beta1 * h^beta2` and its least-squares fit
//! against the teachers' average mark.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::nelder_mead::{self, Options};
use super::similarity::SimilarityScore;
use crate::corpus::MAX_MARK;
use crate::error::{Error, Result};

/// Fixed exponents tried as starting points, each paired with the linear
/// least-squares intercept and slope for that exponent.
pub const BETA2_GRID: [f64; 7] = [0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0];

/// Polishing restarts from the incumbent after the first simplex converges.
const POLISH_ROUNDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkModel {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl MarkModel {
    pub fn new(beta0: f64, beta1: f64, beta2: f64) -> Result<Self> {
        // NaN fails too.
        if beta2.is_nan() || beta2 <= 0.0 {
            return Err(Error::InvalidExponent(beta2));
        }
        Ok(Self { beta0, beta1, beta2 })
    }

    /// Unclamped prediction; `0^beta2` is 0.
    pub fn predict(&self, h: f64) -> f64 {
        self.beta0 + self.beta1 * power(h, self.beta2)
    }

    /// Prediction clamped to the marking scale, for reports and exports.
    pub fn predict_clamped(&self, h: f64) -> f64 {
        self.predict(h).clamp(0.0, MAX_MARK)
    }

    /// True when the prediction falls as the distance grows.
    pub fn is_decreasing(&self) -> bool {
        self.beta1 < 0.0 && self.beta2 > 0.0
    }
}

fn power(h: f64, beta2: f64) -> f64 {
    if h == 0.0 {
        0.0
    } else {
        h.powf(beta2)
    }
}

/// `beta0 + beta1 * h^beta2`, rejecting non-positive exponents.
///
/// ```
/// let y = sagrade::grade::mm_evaluate(4.91085, -0.0058, 3.42359, 0.0).unwrap();
/// assert_eq!(y, 4.91085);
/// ```
pub fn mm_evaluate(beta0: f64, beta1: f64, beta2: f64, h: f64) -> Result<f64> {
    Ok(MarkModel::new(beta0, beta1, beta2)?.predict(h))
}

/// One multi-start seed and where the simplex took it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub beta2_init: f64,
    pub init_mse: f64,
    pub final_mse: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub starts: Vec<StartSummary>,
    pub best_start: usize,
    pub evaluations: usize,
    /// False when the best start ran out of evaluation budget.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub model: MarkModel,
    pub mse: f64,
    pub diagnostics: FitDiagnostics,
}

/// Mean squared deviation of the model from `targets`.
pub fn model_mse(model: &MarkModel, hs: &[f64], targets: &[f64]) -> f64 {
    hs.iter()
        .zip(targets)
        .map(|(&h, &t)| (model.predict(h) - t).powi(2))
        .sum::<f64>()
        / hs.len() as f64
}

/// Fits `(beta0, beta1, beta2)` to the teachers' average marks `tm`
/// (parallel to `scores`) by minimizing the mean squared error.
///
/// Each exponent in [`BETA2_GRID`] seeds a simplex search over
/// `(beta0, beta1, ln beta2)` (keeping `beta2 > 0`) from the linear
/// least-squares intercept and slope at that exponent. The lowest final MSE
/// wins; ties keep the earlier start.
pub fn fit_mm(scores: &[SimilarityScore], tm: &[f64]) -> Result<ModelFit> {
    if scores.len() != tm.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: tm.len(),
        });
    }
    let hs: Vec<f64> = scores.iter().map(|s| f64::from(s.hamming)).collect();
    fit_points(&hs, tm)
}

/// [`fit_mm`] over raw `(h, target)` pairs.
pub fn fit_points(hs: &[f64], targets: &[f64]) -> Result<ModelFit> {
    let distinct: BTreeSet<u64> = hs.iter().map(|h| h.to_bits()).collect();
    if distinct.len() < 3 {
        return Err(Error::Underdetermined {
            distinct: distinct.len(),
        });
    }

    let objective = |p: &[f64]| {
        let model = MarkModel {
            beta0: p[0],
            beta1: p[1],
            beta2: p[2].exp(),
        };
        model_mse(&model, hs, targets)
    };
    let opts = Options::default();

    let mut starts = Vec::with_capacity(BETA2_GRID.len());
    let mut best: Option<(usize, Vec<f64>, f64)> = None;
    let mut total_evaluations = 0;
    let mut best_converged = false;
    for (i, &beta2) in BETA2_GRID.iter().enumerate() {
        let (beta0, beta1) = linear_at_exponent(hs, targets, beta2);
        let x0 = vec![beta0, beta1, beta2.ln()];
        let init_mse = objective(&x0);

        let mut m = nelder_mead::minimize(objective, &x0, &opts);
        let mut evaluations = m.evaluations;
        for _ in 0..POLISH_ROUNDS {
            let again = nelder_mead::minimize(objective, &m.x, &opts);
            evaluations += again.evaluations;
            if again.f < m.f {
                m = again;
            } else {
                break;
            }
        }
        total_evaluations += evaluations;
        starts.push(StartSummary {
            beta2_init: beta2,
            init_mse,
            final_mse: m.f,
            evaluations,
            converged: m.converged,
        });
        if best.as_ref().is_none_or(|(_, _, f)| m.f < *f) {
            best_converged = m.converged;
            best = Some((i, m.x, m.f));
        }
    }
    let (best_start, x, mse) = best.expect("grid is non-empty");
    let model = MarkModel::new(x[0], x[1], x[2].exp())?;
    if !best_converged {
        log::warn!("mark model fit hit its evaluation budget; keeping best-so-far (mse {mse})");
    }
    Ok(ModelFit {
        model,
        mse,
        diagnostics: FitDiagnostics {
            starts,
            best_start,
            evaluations: total_evaluations,
            converged: best_converged,
        },
    })
}

/// Least-squares intercept and slope of `targets` on `h^beta2`.
fn linear_at_exponent(hs: &[f64], targets: &[f64], beta2: f64) -> (f64, f64) {
    let xs: Vec<f64> = hs.iter().map(|&h| power(h, beta2)).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = targets.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(targets).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_three_row_one() {
        let m = MarkModel::new(4.91085, -0.0058, 3.42359).unwrap();
        assert_eq!(m.predict(0.0), 4.91085);
        let by_hand = 4.91085 - 0.0058 * 6f64.powf(3.42359);
        assert!((m.predict(6.0) - by_hand).abs() < 1e-12);
        assert!((m.predict(6.0) - 2.235).abs() < 0.01);
    }

    #[test]
    fn constant_model() {
        for h in [0.0, 1.0, 7.0] {
            assert_eq!(mm_evaluate(3.0, 0.0, 2.0, h).unwrap(), 3.0);
        }
    }

    #[test]
    fn exponent_must_be_positive() {
        assert!(matches!(mm_evaluate(1.0, 1.0, 0.0, 1.0), Err(Error::InvalidExponent(_))));
        assert!(mm_evaluate(1.0, 1.0, -1.0, 1.0).is_err());
        assert!(mm_evaluate(1.0, 1.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn underdetermined() {
        let hs = [0.0, 0.0, 5.0, 5.0];
        let y = [5.0, 5.0, 2.0, 2.0];
        assert!(matches!(
            fit_points(&hs, &y),
            Err(Error::Underdetermined { distinct: 2 })
        ));
    }

    #[test]
    fn constant_targets() {
        let hs = [0.0, 2.0, 4.0, 5.0, 6.0];
        let y = [3.5; 5];
        let fit = fit_points(&hs, &y).unwrap();
        assert!(fit.mse < 1e-12, "{}", fit.mse);
        assert!((fit.model.beta0 - 3.5).abs() < 1e-5);
        for h in hs {
            assert!((fit.model.predict(h) - 3.5).abs() < 1e-5);
        }
    }

    #[test]
    fn never_worse_than_its_seeds() {
        let hs = [0.0, 1.0, 2.0, 3.0, 6.0, 6.0];
        let y = [5.0, 4.0, 4.5, 2.0, 2.5, 1.0];
        let fit = fit_points(&hs, &y).unwrap();
        for s in &fit.diagnostics.starts {
            assert!(s.final_mse <= s.init_mse);
            assert!(fit.mse <= s.init_mse);
        }
    }
}
