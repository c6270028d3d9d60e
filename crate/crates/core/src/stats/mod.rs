//! System-versus-therapist score comparison: paired t-test, variance-ratio
//! F-test, Pearson correlation with a least-squares fit, and per-patient
//! percentage deviation.

mod fixtures;
mod special;

pub use fixtures::{ScoreTable, TableError, PT_SCORES_CSV, SYSTEM_SCORES_CSV};
pub use special::{f_upper_tail, inc_beta, ln_gamma, student_t_two_tailed};

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, sqrt};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("degenerate case: {0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("maximum score must be positive, got {0}")]
    BadMaximum(f64),
    #[error("samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// One patient's totals from both raters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub patient_id: String,
    pub system_total: f64,
    pub pt_total: f64,
    pub max_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_two_tailed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FTest {
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    /// Upper-tail probability of the ratio.
    pub p_one_tailed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub r: f64,
    pub r_squared: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Sample variance with n − 1 in the denominator.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = math::mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Paired t-test on `a − b`. Differences that are all zero give t = 0, p = 1;
/// constant nonzero differences are degenerate.
pub fn paired_t_test(pairs: &[(f64, f64)]) -> Result<TTest, StatsError> {
    let n = pairs.len();
    if n < 2 {
        return Err(StatsError::TooFew { need: 2, got: n });
    }
    let d: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let df = (n - 1) as f64;
    let var = sample_variance(&d);
    if var == 0.0 {
        if d.iter().all(|x| *x == 0.0) {
            return Ok(TTest { t: 0.0, df, p_two_tailed: 1.0 });
        }
        return Err(StatsError::ZeroVariance("paired differences"));
    }
    let t = math::mean(&d) / sqrt(var / n as f64);
    Ok(TTest { t, df, p_two_tailed: student_t_two_tailed(t, df) })
}

/// `F = var(a) / var(b)` with one-tailed upper p on (n_a − 1, n_b − 1) df.
pub fn variance_f_test(a: &[f64], b: &[f64]) -> Result<FTest, StatsError> {
    for xs in [a, b] {
        if xs.len() < 2 {
            return Err(StatsError::TooFew { need: 2, got: xs.len() });
        }
    }
    let vb = sample_variance(b);
    if vb == 0.0 {
        return Err(StatsError::ZeroVariance("denominator sample"));
    }
    let f = sample_variance(a) / vb;
    let (df1, df2) = ((a.len() - 1) as f64, (b.len() - 1) as f64);
    Ok(FTest { f, df1, df2, p_one_tailed: f_upper_tail(f, df1, df2) })
}

/// Product-moment r and the least-squares line `y = slope·x + intercept`.
pub fn pearson_regression(pairs: &[(f64, f64)]) -> Result<Regression, StatsError> {
    let n = pairs.len();
    if n < 3 {
        return Err(StatsError::TooFew { need: 3, got: n });
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (mx, my) = (math::mean(&xs), math::mean(&ys));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroVariance("y"));
    }
    let r = (sxy / sqrt(sxx * syy)).clamp(-1.0, 1.0);
    let slope = sxy / sxx;
    Ok(Regression { r, r_squared: r * r, slope, intercept: my - slope * mx })
}

/// `100·(system − pt) / max`.
pub fn percent_deviation(pair: &ScorePair) -> Result<f64, StatsError> {
    if !(pair.max_total > 0.0) {
        return Err(StatsError::BadMaximum(pair.max_total));
    }
    Ok(100.0 * (pair.system_total - pair.pt_total) / pair.max_total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n: usize,
    pub mean_system: f64,
    pub mean_pt: f64,
    pub t_test: TTest,
    pub f_test: FTest,
    /// System totals regressed on therapist totals.
    pub regression: Regression,
    pub deviations_percent: Vec<(String, f64)>,
    pub deviation_min: f64,
    pub deviation_max: f64,
}

impl ComparisonReport {
    pub fn compare(pairs: &[ScorePair]) -> Result<Self, StatsError> {
        let sys: Vec<f64> = pairs.iter().map(|p| p.system_total).collect();
        let pt: Vec<f64> = pairs.iter().map(|p| p.pt_total).collect();
        let zipped: Vec<(f64, f64)> = sys.iter().copied().zip(pt.iter().copied()).collect();
        let t_test = paired_t_test(&zipped)?;
        let f_test = variance_f_test(&sys, &pt)?;
        let swapped: Vec<(f64, f64)> = zipped.iter().map(|(s, p)| (*p, *s)).collect();
        let regression = pearson_regression(&swapped)?;
        let deviations_percent = pairs
            .iter()
            .map(|p| Ok((p.patient_id.clone(), percent_deviation(p)?)))
            .collect::<Result<Vec<_>, StatsError>>()?;
        let devs = deviations_percent.iter().map(|d| d.1);
        Ok(ComparisonReport {
            n: pairs.len(),
            mean_system: math::mean(&sys),
            mean_pt: math::mean(&pt),
            t_test,
            f_test,
            regression,
            deviation_min: devs.clone().fold(f64::INFINITY, f64::min),
            deviation_max: devs.fold(f64::NEG_INFINITY, f64::max),
            deviations_percent,
        })
    }

    /// Runs the comparison on the embedded score tables.
    pub fn reproduce() -> Result<Self, StatsError> {
        Self::compare(&fixture_pairs()?)
    }
}

/// Per-patient totals from the embedded tables.
pub fn fixture_pairs() -> Result<Vec<ScorePair>, StatsError> {
    let sys = ScoreTable::parse(SYSTEM_SCORES_CSV)?;
    let pt = ScoreTable::parse(PT_SCORES_CSV)?;
    if sys.patients.len() != pt.patients.len() {
        return Err(StatsError::LengthMismatch(sys.patients.len(), pt.patients.len()));
    }
    Ok(sys
        .patients
        .iter()
        .enumerate()
        .map(|(i, id)| ScorePair {
            patient_id: id.clone(),
            system_total: sys.score[i],
            pt_total: pt.score[i],
            max_total: sys.max_score[i],
        })
        .collect())
}
