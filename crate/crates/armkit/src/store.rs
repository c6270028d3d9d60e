//! On-disk layout under the data directory and the session/RPMV stores.
//!
//! ```text
//! <root>/catalog.json            optional override of the builtin catalog
//! <root>/patients/<id>.json
//! <root>/sessions/<id>.csv       + <id>.meta.json
//! <root>/rpmv/<THERAPY>.json
//! <root>/scores/<patient>-<stamp>.json
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use armkit_core::metrics::Baseline;
use armkit_core::session::{Mode, SessionState};
use armkit_core::therapy::{CatalogError, Limb, PatientId};
use armkit_core::{Catalog, Pmv, Rpmv, ScoreReport, TherapyCode};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session_csv::{self, CsvError, SessionRow};

pub const META_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Catalog { path: PathBuf, source: CatalogError },
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error("record `{0}` not found")]
    NotFound(String),
    #[error("no reference vector stored for {0}")]
    MissingRpmv(TherapyCode),
    #[error("invalid record id `{0}`")]
    BadId(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to a temporary file beside `path`, syncs it, then renames
/// it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = tmp_path(path);
    let write = || -> io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        StoreError::Io { path: path.to_path_buf(), source: e }
    })
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// A fresh session id: start time, therapy and a random suffix.
pub fn new_session_id(therapy: TherapyCode, at: DateTime<Utc>) -> String {
    let suffix = uuid::Uuid::new_v4().simple().to_string();
    format!("{}-{}-{}", at.format("%Y%m%d-%H%M%S"), therapy.abbrev(), &suffix[..8])
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("store types serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => StoreError::NotFound(path.display().to_string()),
        _ => StoreError::Io { path: path.to_path_buf(), source: e },
    })?;
    serde_json::from_slice(&text).map_err(|source| StoreError::Json { path: path.to_path_buf(), source })
}

/// Record ids double as file names.
fn check_id(id: &str) -> Result<(), StoreError> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(StoreError::BadId(id.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
}

impl DataDir {
    /// Opens (creating if needed) a data directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = DataDir { root: root.into() };
        for sub in [dir.patients_dir(), dir.sessions_dir(), dir.rpmv_dir(), dir.scores_dir()] {
            fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        }
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn patients_dir(&self) -> PathBuf {
        self.root.join("patients")
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.root.join("sessions")
    }

    pub fn rpmv_dir(&self) -> PathBuf {
        self.root.join("rpmv")
    }

    pub fn scores_dir(&self) -> PathBuf {
        self.root.join("scores")
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.root.join("catalog.json")
    }

    /// `catalog.json` when present, the builtin catalog otherwise.
    pub fn load_catalog(&self) -> Result<Catalog, StoreError> {
        let path = self.catalog_path();
        if !path.exists() {
            return Ok(Catalog::builtin());
        }
        let text = fs::read(&path).map_err(io_err(&path))?;
        let file: armkit_core::therapy::CatalogFile =
            serde_json::from_slice(&text).map_err(|source| StoreError::Json { path: path.clone(), source })?;
        Catalog::try_from(file).map_err(|source| StoreError::Catalog { path, source })
    }

    pub fn sessions(&self) -> SessionStore {
        SessionStore { dir: self.sessions_dir() }
    }

    pub fn rpmvs(&self) -> RpmvStore {
        RpmvStore { dir: self.rpmv_dir() }
    }

    /// Persists a score report as `<patient>-<stamp>.json`; returns the path.
    pub fn save_score(&self, report: &ScoreReport, at: DateTime<Utc>) -> Result<PathBuf, StoreError> {
        #[derive(Serialize)]
        struct Stored<'a> {
            created_at: DateTime<Utc>,
            csv_header: String,
            csv_row: String,
            #[serde(flatten)]
            report: &'a ScoreReport,
        }
        check_id(&report.patient_id)?;
        let path = self.scores_dir().join(format!("{}-{}.json", report.patient_id, at.format("%Y%m%dT%H%M%S%.3fZ")));
        let doc = Stored { created_at: at, csv_header: ScoreReport::csv_header(), csv_row: report.csv_row(), report };
        write_json(&path, &doc)?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TimerExpired,
    UserStop,
    /// No data for longer than the dropout limit.
    Dropout,
    /// The wearable said BYE or closed the link before the timer ran out.
    StreamEnded,
}

/// Sidecar written next to each saved session CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub schema_version: u32,
    pub session_id: String,
    pub patient_id: PatientId,
    pub therapy: TherapyCode,
    pub mode: Mode,
    pub arm: Limb,
    pub status: SessionState,
    pub started_at: DateTime<Utc>,
    /// Timer setting.
    pub duration_s: f64,
    /// Length actually recorded.
    pub recorded_s: f64,
    pub rows: usize,
    /// Stream clock of the first CSV row.
    pub run_start_ms: u64,
    pub stop_reason: StopReason,
    pub dropout: bool,
    pub baseline: Baseline,
    pub posture_warning: bool,
    pub pmv: Pmv,
    pub cycles: usize,
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn csv_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.csv"))
    }

    pub fn meta_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.meta.json"))
    }

    /// Both files are staged first; the sidecar is renamed into place before
    /// the CSV so a CSV never exists without its metadata.
    pub fn save(&self, meta: &SessionMeta, rows: &[SessionRow]) -> Result<(), StoreError> {
        check_id(&meta.session_id)?;
        let (csv, json) = (self.csv_path(&meta.session_id), self.meta_path(&meta.session_id));
        let (csv_tmp, json_tmp) = (tmp_path(&csv), tmp_path(&json));
        let stage = || -> Result<(), StoreError> {
            let mut f = fs::File::create(&csv_tmp).map_err(io_err(&csv_tmp))?;
            session_csv::write_rows(&mut f, rows).map_err(io_err(&csv_tmp))?;
            f.sync_all().map_err(io_err(&csv_tmp))?;
            let mut bytes = serde_json::to_vec_pretty(meta).expect("meta serializes");
            bytes.push(b'\n');
            let mut f = fs::File::create(&json_tmp).map_err(io_err(&json_tmp))?;
            f.write_all(&bytes).and_then(|_| f.sync_all()).map_err(io_err(&json_tmp))?;
            fs::rename(&json_tmp, &json).map_err(io_err(&json))?;
            fs::rename(&csv_tmp, &csv).map_err(io_err(&csv))?;
            Ok(())
        };
        stage().inspect_err(|_| {
            let _ = fs::remove_file(&csv_tmp);
            let _ = fs::remove_file(&json_tmp);
        })
    }

    pub fn load_meta(&self, id: &str) -> Result<SessionMeta, StoreError> {
        check_id(id)?;
        if !self.csv_path(id).exists() {
            return Err(StoreError::NotFound(id.to_string()));
        }
        read_json(&self.meta_path(id))
    }

    pub fn load_rows(&self, id: &str) -> Result<Vec<SessionRow>, StoreError> {
        check_id(id)?;
        let path = self.csv_path(id);
        if !path.exists() {
            return Err(StoreError::NotFound(id.to_string()));
        }
        Ok(session_csv::read_file(&path)?)
    }

    /// Every complete record (sidecar plus CSV), oldest first. Sidecars left
    /// without a CSV by an interrupted save are skipped.
    pub fn list(&self) -> Result<Vec<SessionMeta>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(io_err(&self.dir))? {
            let path = entry.map_err(io_err(&self.dir))?.path();
            let Some(id) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".meta.json")) else {
                continue;
            };
            if !self.csv_path(id).exists() {
                continue;
            }
            out.push(read_json::<SessionMeta>(&path)?);
        }
        out.sort_by(|a, b| a.started_at.cmp(&b.started_at).then_with(|| a.session_id.cmp(&b.session_id)));
        Ok(out)
    }

    /// Saved active-mode sessions of one patient, optionally one therapy, oldest first.
    pub fn history(&self, patient: &PatientId, therapy: Option<TherapyCode>) -> Result<Vec<SessionMeta>, StoreError> {
        Ok(self
            .list()?
            .into_iter()
            .filter(|m| &m.patient_id == patient && m.mode == Mode::Active && m.status == SessionState::Saved)
            .filter(|m| therapy.is_none_or(|t| m.therapy == t))
            .collect())
    }

    /// Removes the CSV and then its sidecar.
    pub fn delete(&self, id: &str) -> Result<(), StoreError> {
        check_id(id)?;
        let csv = self.csv_path(id);
        match fs::remove_file(&csv) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_string())),
            Err(e) => return Err(StoreError::Io { path: csv, source: e }),
        }
        let meta = self.meta_path(id);
        fs::remove_file(&meta).map_err(io_err(&meta))
    }
}

/// Reference vector as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRpmv {
    #[serde(flatten)]
    pub rpmv: Rpmv,
    pub created_at: DateTime<Utc>,
    pub subjects: usize,
    pub sessions: usize,
    /// Fewer than 5 subjects or fewer than 5 sessions for some subject.
    pub below_design: bool,
}

#[derive(Debug, Clone)]
pub struct RpmvStore {
    dir: PathBuf,
}

impl RpmvStore {
    pub fn path(&self, therapy: TherapyCode) -> PathBuf {
        self.dir.join(format!("{}.json", therapy.abbrev()))
    }

    pub fn save(&self, stored: &StoredRpmv) -> Result<PathBuf, StoreError> {
        let path = self.path(stored.rpmv.therapy);
        write_json(&path, stored)?;
        Ok(path)
    }

    pub fn load(&self, therapy: TherapyCode) -> Result<StoredRpmv, StoreError> {
        read_json(&self.path(therapy)).map_err(|e| match e {
            StoreError::NotFound(_) => StoreError::MissingRpmv(therapy),
            e => e,
        })
    }
}
