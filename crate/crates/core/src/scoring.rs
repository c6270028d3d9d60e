//! Reference vectors, session distances, the progress outcome matrix and
//! expected-value scores.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::metrics::Pmv;
use crate::therapy::TherapyCode;

/// |Δ| at or below this counts as a neutral outcome.
pub const TIE_TOLERANCE: f64 = 1e-9;
/// Highest score a single intervention can reach.
pub const MAX_INTERVENTION_SCORE: f64 = 2.0;
/// Subjects and sessions per subject in the reference design.
pub const DESIGN_SUBJECTS: usize = 5;
pub const DESIGN_SESSIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("cannot normalize the zero vector")]
    ZeroVector,
    #[error("vector has a non-finite component")]
    NonFinite,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no subjects supplied")]
    NoSubjects,
    #[error("subject `{0}` has no sessions")]
    EmptySubject(String),
    #[error("insufficient sessions: need at least 2, got {0}")]
    InsufficientSessions(usize),
    #[error("score {score} for {therapy} outside [0, 2]")]
    ScoreOutOfRange { therapy: TherapyCode, score: f64 },
}

/// `v / ‖v‖₂`.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>, ScoringError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ScoringError::NonFinite);
    }
    let norm = math::sqrt(v.iter().map(|x| x * x).sum());
    if norm == 0.0 {
        return Err(ScoringError::ZeroVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub fn normalize_pmv(pmv: &Pmv) -> Result<[f64; 8], ScoringError> {
    let v = normalize(&pmv.to_array())?;
    let mut out = [0.0; 8];
    out.copy_from_slice(&v);
    Ok(out)
}

/// Euclidean distance between two (normalized) vectors.
pub fn distance(a: &[f64], b: &[f64]) -> Result<f64, ScoringError> {
    if a.len() != b.len() {
        return Err(ScoringError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()))
}

/// Healthy-subject reference vector for one therapy, unit length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rpmv {
    pub therapy: TherapyCode,
    pub components: [f64; 8],
    /// `subject/session` identifiers that went into the vector.
    pub provenance: Vec<String>,
}

impl Rpmv {
    /// δ of one session's PMV against this reference.
    pub fn delta(&self, pmv: &Pmv) -> Result<f64, ScoringError> {
        distance(&normalize_pmv(pmv)?, &self.components)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPmvs {
    pub subject: String,
    pub sessions: Vec<(String, Pmv)>,
}

impl SubjectPmvs {
    /// Component-wise mean of this subject's sessions.
    pub fn mean_pmv(&self) -> Result<[f64; 8], ScoringError> {
        if self.sessions.is_empty() {
            return Err(ScoringError::EmptySubject(self.subject.clone()));
        }
        let mut acc = [0.0; 8];
        for (_, p) in &self.sessions {
            for (a, x) in acc.iter_mut().zip(p.to_array()) {
                *a += x;
            }
        }
        Ok(acc.map(|a| a / self.sessions.len() as f64))
    }
}

/// Per-subject mean, component-wise median across subjects, then normalization.
pub fn build_rpmv(therapy: TherapyCode, subjects: &[SubjectPmvs]) -> Result<Rpmv, ScoringError> {
    if subjects.is_empty() {
        return Err(ScoringError::NoSubjects);
    }
    let means = subjects.iter().map(SubjectPmvs::mean_pmv).collect::<Result<Vec<_>, _>>()?;
    let mut median = [0.0; 8];
    for (k, m) in median.iter_mut().enumerate() {
        let column: Vec<f64> = means.iter().map(|v| v[k]).collect();
        *m = math::median(&column);
    }
    let v = normalize(&median)?;
    let mut components = [0.0; 8];
    components.copy_from_slice(&v);
    let provenance = subjects
        .iter()
        .flat_map(|s| s.sessions.iter().map(move |(id, _)| format!("{}/{}", s.subject, id)))
        .collect();
    Ok(Rpmv { therapy, components, provenance })
}

/// True when the input is smaller than the 5 subjects × 5 sessions design.
pub fn below_design(subjects: &[SubjectPmvs]) -> bool {
    subjects.len() < DESIGN_SUBJECTS || subjects.iter().any(|s| s.sessions.len() < DESIGN_SESSIONS)
}

/// Progress outcome matrix: `entry(i, j) = δ_i − δ_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pom {
    pub deltas: Vec<f64>,
}

pub fn build_pom(deltas: &[f64]) -> Result<Pom, ScoringError> {
    if deltas.len() < 2 {
        return Err(ScoringError::InsufficientSessions(deltas.len()));
    }
    Ok(Pom { deltas: deltas.to_vec() })
}

impl Pom {
    pub fn size(&self) -> usize {
        self.deltas.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.deltas[i] - self.deltas[j]
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.size()).map(|i| (0..self.size()).map(|j| self.entry(i, j)).collect()).collect()
    }

    /// Strictly lower-triangular entries (later session minus earlier), row by row.
    pub fn considered(&self) -> impl Iterator<Item = f64> + '_ {
        (1..self.size()).flat_map(move |i| (0..i).map(move |j| self.entry(i, j)))
    }

    /// `(|S|² − |S|) / 2`.
    pub fn n_considered(&self) -> usize {
        let s = self.size();
        (s * s - s) / 2
    }
}

/// Positive (improved), neutral and negative outcome counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub n_p: usize,
    pub n_n: usize,
    pub n_g: usize,
}

impl OutcomeCounts {
    pub fn total(&self) -> usize {
        self.n_p + self.n_n + self.n_g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OutcomeProbabilities {
    pub positive: f64,
    pub neutral: f64,
    pub negative: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionScore {
    pub counts: OutcomeCounts,
    pub probabilities: OutcomeProbabilities,
    pub score: f64,
}

/// Outcome value of one POM entry: 2 improved, 1 unchanged, 0 worse.
pub fn outcome_value(delta_diff: f64) -> u8 {
    if math::abs(delta_diff) <= TIE_TOLERANCE {
        1
    } else if delta_diff < 0.0 {
        2
    } else {
        0
    }
}

pub fn score_intervention(pom: &Pom) -> InterventionScore {
    let mut c = OutcomeCounts::default();
    for d in pom.considered() {
        match outcome_value(d) {
            2 => c.n_p += 1,
            1 => c.n_n += 1,
            _ => c.n_g += 1,
        }
    }
    let n = pom.n_considered() as f64;
    InterventionScore {
        counts: c,
        probabilities: OutcomeProbabilities {
            positive: c.n_p as f64 / n,
            neutral: c.n_n as f64 / n,
            negative: c.n_g as f64 / n,
        },
        score: (c.n_n + 2 * c.n_p) as f64 / n,
    }
}

/// `(Σ scores, 2·|T|)`; every score must lie in `[0, 2]`.
pub fn total_score(scores: &[(TherapyCode, f64)]) -> Result<(f64, f64), ScoringError> {
    let mut total = 0.0;
    for &(therapy, score) in scores {
        if !(0.0..=MAX_INTERVENTION_SCORE).contains(&score) {
            return Err(ScoringError::ScoreOutOfRange { therapy, score });
        }
        total += score;
    }
    Ok((total, MAX_INTERVENTION_SCORE * scores.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TherapyScore {
    pub therapy: TherapyCode,
    pub deltas: Vec<f64>,
    pub counts: OutcomeCounts,
    pub probabilities: OutcomeProbabilities,
    pub score: f64,
}

impl TherapyScore {
    pub fn from_deltas(therapy: TherapyCode, deltas: &[f64]) -> Result<Self, ScoringError> {
        let s = score_intervention(&build_pom(deltas)?);
        Ok(TherapyScore {
            therapy,
            deltas: deltas.to_vec(),
            counts: s.counts,
            probabilities: s.probabilities,
            score: s.score,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub patient_id: String,
    pub therapies: Vec<TherapyScore>,
    pub score: f64,
    pub score_max: f64,
}

impl ScoreReport {
    pub fn new(patient_id: impl Into<String>, therapies: Vec<TherapyScore>) -> Result<Self, ScoringError> {
        let pairs: Vec<(TherapyCode, f64)> = therapies.iter().map(|t| (t.therapy, t.score)).collect();
        let (score, score_max) = total_score(&pairs)?;
        Ok(ScoreReport { patient_id: patient_id.into(), therapies, score, score_max })
    }

    pub fn get(&self, therapy: TherapyCode) -> Option<&TherapyScore> {
        self.therapies.iter().find(|t| t.therapy == therapy)
    }

    pub fn csv_header() -> String {
        let mut s = String::from("patient");
        for code in TherapyCode::ALL {
            s.push(',');
            s.push_str(code.abbrev());
        }
        s.push_str(",Score,Max Score");
        s
    }

    /// One line in the score-table layout: `-` for therapies not administered.
    pub fn csv_row(&self) -> String {
        let mut s = self.patient_id.clone();
        for code in TherapyCode::ALL {
            s.push(',');
            match self.get(code) {
                Some(t) => s.push_str(&format_score(t.score)),
                None => s.push('-'),
            }
        }
        let _ = write!(s, ",{},{}", format_score(self.score), format_score(self.score_max));
        s
    }

    /// The report as one patient column of the score table (`therapy,<id>` lines).
    pub fn table_column(&self) -> String {
        let mut s = format!("therapy,{}\n", self.patient_id);
        for code in TherapyCode::ALL {
            let cell = self.get(code).map(|t| format_score(t.score)).unwrap_or_else(|| String::from("-"));
            let _ = writeln!(s, "{},{}", code.abbrev(), cell);
        }
        let _ = writeln!(s, "Score,{}", format_score(self.score));
        let _ = writeln!(s, "Max Score,{}", format_score(self.score_max));
        s
    }
}

/// Two decimals with trailing zeros trimmed to one: `1.67`, `1.0`.
pub fn format_score(x: f64) -> String {
    let mut s = format!("{:.2}", x);
    if s.ends_with('0') {
        s.pop();
    }
    s
}
