//! Patient registry, one JSON document per patient.

use std::fs;
use std::path::PathBuf;

use armkit_core::therapy::{Demographics, PatientError, PatientId, PatientRecord};
use thiserror::Error;

use crate::store::{io_err, read_json, write_json, DataDir, StoreError};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error(transparent)]
    Invalid(#[from] PatientError),
    #[error("patient already registered as {0}")]
    Conflict(PatientId),
    #[error("unknown patient `{0}`")]
    NotFound(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Ids are `p1`, `p2`, … in registration order. Writers must be serialized
/// by the caller; reads may run concurrently.
#[derive(Debug, Clone)]
pub struct PatientRegistry {
    dir: PathBuf,
}

impl PatientRegistry {
    pub fn new(data: &DataDir) -> Self {
        PatientRegistry { dir: data.patients_dir() }
    }

    pub fn register(&self, demographics: Demographics) -> Result<PatientRecord, RegistryError> {
        demographics.validate()?;
        let existing = self.list()?;
        let key = demographics.natural_key();
        if let Some(dup) = existing.iter().find(|r| r.demographics.natural_key() == key) {
            return Err(RegistryError::Conflict(dup.patient_id.clone()));
        }
        let next = existing.iter().filter_map(|r| id_number(&r.patient_id)).max().unwrap_or(0) + 1;
        let record = PatientRecord { patient_id: PatientId(format!("p{next}")), demographics };
        write_json(&self.path(&record.patient_id), &record)?;
        Ok(record)
    }

    pub fn get(&self, id: &str) -> Result<PatientRecord, RegistryError> {
        let id = PatientId::parse(id).map_err(|_| RegistryError::NotFound(id.to_string()))?;
        read_json(&self.path(&id)).map_err(|e| match e {
            StoreError::NotFound(_) => RegistryError::NotFound(id.0.clone()),
            e => e.into(),
        })
    }

    pub fn contains(&self, id: &str) -> bool {
        PatientId::parse(id).is_ok_and(|id| self.path(&id).exists())
    }

    /// All records ordered by id number.
    pub fn list(&self) -> Result<Vec<PatientRecord>, RegistryError> {
        let mut out: Vec<PatientRecord> = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(io_err(&self.dir))? {
            let path = entry.map_err(io_err(&self.dir))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                out.push(read_json(&path)?);
            }
        }
        out.sort_by(|a, b| {
            (id_number(&a.patient_id), &a.patient_id.0).cmp(&(id_number(&b.patient_id), &b.patient_id.0))
        });
        Ok(out)
    }

    fn path(&self, id: &PatientId) -> PathBuf {
        self.dir.join(format!("{}.json", id.0))
    }
}

fn id_number(id: &PatientId) -> Option<u64> {
    id.0.strip_prefix('p')?.parse().ok()
}
