//! Offline analysis: metrics from saved rows, reference-vector building from
//! healthy-subject sessions, and patient scoring.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use armkit_core::metrics::{analyze_series, Analysis, AngleSeries, MetricConfig, MetricsError};
use armkit_core::scoring::{below_design, build_rpmv, ScoringError, SubjectPmvs, TherapyScore};
use armkit_core::{Catalog, ScoreReport, TherapyCode, TherapyDefinition, SAMPLE_RATE_HZ};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use thiserror::Error;

use crate::registry::{PatientRegistry, RegistryError};
use crate::session_csv::{read_file, CsvError, SessionRow};
use crate::store::{io_err, DataDir, StoreError, StoredRpmv};

/// Metrics over the `theta_deg` column of saved rows.
pub fn analyze_rows(rows: &[SessionRow], def: &TherapyDefinition) -> Result<Analysis, MetricsError> {
    let theta = rows.iter().map(|r| r.theta_deg).collect();
    let series = AngleSeries::uniform(def.code, 0.0, 1.0 / SAMPLE_RATE_HZ, theta)?;
    analyze_series(&series, &MetricConfig::for_therapy(def))
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("{0}: no subject directories with session files")]
    Empty(PathBuf),
    #[error("{0}: therapy unknown; add a .meta.json sidecar or pass --therapy")]
    NoTherapy(PathBuf),
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: CsvError },
    #[error("{path}: {source}")]
    Metrics { path: PathBuf, source: MetricsError },
    #[error("{therapy}: {source}")]
    Scoring { therapy: TherapyCode, source: ScoringError },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Deserialize)]
struct TherapyOnly {
    therapy: TherapyCode,
}

/// Builds one reference vector per therapy found under `dir`, laid out as
/// `<dir>/<subject>/<session>.csv`. Each file's therapy comes from its
/// `<session>.meta.json` sidecar, else from `therapy`; with `therapy` set,
/// sidecars naming another therapy are skipped.
pub fn build_rpmvs(
    dir: &Path,
    catalog: &Catalog,
    therapy: Option<TherapyCode>,
    now: DateTime<Utc>,
) -> Result<Vec<StoredRpmv>, BuildError> {
    let mut by_therapy: BTreeMap<TherapyCode, BTreeMap<String, SubjectPmvs>> = BTreeMap::new();
    for subject_dir in sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()) {
        let subject = file_name(&subject_dir);
        for csv in sorted_entries(&subject_dir)?.into_iter().filter(|p| p.extension().is_some_and(|e| e == "csv")) {
            let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let code = match (sidecar_therapy(&csv)?, therapy) {
                (Some(m), Some(t)) if m != t => continue,
                (Some(m), _) => m,
                (None, Some(t)) => t,
                (None, None) => return Err(BuildError::NoTherapy(csv)),
            };
            let rows = read_file(&csv).map_err(|source| BuildError::Csv { path: csv.clone(), source })?;
            let analysis = analyze_rows(&rows, catalog.lookup(code))
                .map_err(|source| BuildError::Metrics { path: csv.clone(), source })?;
            by_therapy
                .entry(code)
                .or_default()
                .entry(subject.clone())
                .or_insert_with(|| SubjectPmvs { subject: subject.clone(), sessions: Vec::new() })
                .sessions
                .push((stem, analysis.pmv));
        }
    }
    if by_therapy.is_empty() {
        return Err(BuildError::Empty(dir.to_path_buf()));
    }
    by_therapy
        .into_iter()
        .map(|(code, subjects)| {
            let subjects: Vec<SubjectPmvs> = subjects.into_values().collect();
            let rpmv = build_rpmv(code, &subjects).map_err(|source| BuildError::Scoring { therapy: code, source })?;
            Ok(StoredRpmv {
                rpmv,
                created_at: now,
                subjects: subjects.len(),
                sessions: subjects.iter().map(|s| s.sessions.len()).sum(),
                below_design: below_design(&subjects),
            })
        })
        .collect()
}

/// The therapy named by the `.meta.json` sidecar next to a session CSV.
pub fn sidecar_therapy(csv: &Path) -> Result<Option<TherapyCode>, StoreError> {
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let sidecar = csv.with_file_name(format!("{stem}.meta.json"));
    match fs::read(&sidecar) {
        Ok(bytes) => Ok(Some(
            serde_json::from_slice::<TherapyOnly>(&bytes)
                .map_err(|source| StoreError::Json { path: sidecar.clone(), source })?
                .therapy,
        )),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(&sidecar)(e)),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut v = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?;
    v.sort();
    Ok(v)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("no therapies requested")]
    NoTherapies,
    #[error("insufficient sessions (need at least 2): {}", list_counts(.0))]
    InsufficientSessions(Vec<(TherapyCode, usize)>),
    #[error("no reference vector stored for {}; run `rpmv build` first", list_codes(.0))]
    MissingRpmv(Vec<TherapyCode>),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn list_counts(v: &[(TherapyCode, usize)]) -> String {
    v.iter().map(|(c, n)| format!("{c} has {n}")).collect::<Vec<_>>().join(", ")
}

fn list_codes(v: &[TherapyCode]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
}

/// Scores a patient's saved active sessions against the stored reference
/// vectors and persists the report. Returns the report and its path.
pub fn generate_score(
    data: &DataDir,
    patient_id: &str,
    therapies: &[TherapyCode],
    now: DateTime<Utc>,
) -> Result<(ScoreReport, PathBuf), ScoreError> {
    let patient = PatientRegistry::new(data).get(patient_id)?;
    let mut codes = therapies.to_vec();
    codes.sort();
    codes.dedup();
    if codes.is_empty() {
        return Err(ScoreError::NoTherapies);
    }
    let sessions = data.sessions();
    let mut histories = Vec::new();
    let mut short = Vec::new();
    for &code in &codes {
        let h = sessions.history(&patient.patient_id, Some(code))?;
        if h.len() < 2 {
            short.push((code, h.len()));
        }
        histories.push((code, h));
    }
    if !short.is_empty() {
        return Err(ScoreError::InsufficientSessions(short));
    }
    let store = data.rpmvs();
    let mut refs = Vec::new();
    let mut missing = Vec::new();
    for &code in &codes {
        match store.load(code) {
            Ok(r) => refs.push(r.rpmv),
            Err(StoreError::MissingRpmv(c)) => missing.push(c),
            Err(e) => return Err(e.into()),
        }
    }
    if !missing.is_empty() {
        return Err(ScoreError::MissingRpmv(missing));
    }
    let mut scores = Vec::new();
    for ((code, history), rpmv) in histories.iter().zip(&refs) {
        let deltas = history.iter().map(|m| rpmv.delta(&m.pmv)).collect::<Result<Vec<f64>, _>>()?;
        scores.push(TherapyScore::from_deltas(*code, &deltas)?);
    }
    let report = ScoreReport::new(patient.patient_id.0.clone(), scores)?;
    let path = data.save_score(&report, now)?;
    Ok((report, path))
}
