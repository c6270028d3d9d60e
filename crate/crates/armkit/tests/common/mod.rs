#![allow(dead_code)]

use armkit::driver::{SessionConfig, SessionDriver};
use armkit::ingest::LineIngest;
use armkit::registry::PatientRegistry;
use armkit::sim::{synthesize_session, MotionProfile};
use armkit::store::{DataDir, SessionMeta};
use armkit_core::protocol::encode_record;
use armkit_core::session::{Mode, SessionEvent};
use armkit_core::therapy::{Demographics, Limb, PatientId, Sex};
use armkit_core::{Catalog, TherapyCode};

pub fn data_dir() -> (tempfile::TempDir, DataDir) {
    let dir = tempfile::tempdir().unwrap();
    let data = DataDir::open(dir.path().join("data")).unwrap();
    (dir, data)
}

pub fn demographics(name: &str) -> Demographics {
    Demographics {
        full_name: name.to_string(),
        birth_year: 1958,
        age_years: 66,
        sex: Sex::Female,
        uld_duration_months: 14,
        affected_limb: Limb::Right,
    }
}

pub fn register(data: &DataDir, name: &str) -> PatientId {
    PatientRegistry::new(data).register(demographics(name)).unwrap().patient_id
}

/// Simulated frames with 20 s of stillness ahead of the motion.
pub fn profile(therapy: TherapyCode, amplitude_fraction: f64, duration_s: f64) -> MotionProfile {
    MotionProfile { therapy, amplitude_fraction, duration_s, hold_s: 20.0, ..MotionProfile::default() }
}

/// Drives a whole session through the wire format and returns the driver
/// in its final state.
pub fn drive(patient: &PatientId, profile: MotionProfile, seed: u64, mode: Mode) -> SessionDriver {
    let cat = Catalog::builtin();
    let config = SessionConfig {
        patient_id: patient.clone(),
        therapy: profile.therapy,
        mode,
        arm: Limb::Right,
        duration_s: profile.duration_s,
    };
    let id = format!("s{seed}-{}-{}", profile.therapy.abbrev(), (profile.amplitude_fraction * 1000.0) as u32);
    let mut d = SessionDriver::new(id, config, &cat).unwrap();
    d.handle(SessionEvent::Connect).unwrap();
    let mut ingest = LineIngest::default();
    for r in synthesize_session(profile, &cat, seed).unwrap().records() {
        ingest.feed(&mut d, &encode_record(&r)).unwrap();
    }
    d
}

pub fn record(data: &DataDir, patient: &PatientId, profile: MotionProfile, seed: u64) -> SessionMeta {
    drive(patient, profile, seed, Mode::Active).save(&data.sessions()).unwrap()
}

pub fn files_in(dir: &std::path::Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}
