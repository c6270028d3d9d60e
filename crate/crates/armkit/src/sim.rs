//! Synthetic two-sensor motion: the therapy's primary angle follows
//! `A·sin(2πft) + drift·t + noise`, embedded in the sensor orientations so
//! that the normal extraction path recovers it.

use armkit_core::orientation::{quaternion_to_euler, EulerAxis, Quaternion, Vec3};
use armkit_core::protocol::{Device, ImuFrame, Record, PROTOCOL_VERSION};
use armkit_core::therapy::AngleSource;
use armkit_core::{Catalog, TherapyCode, TherapyDefinition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid motion profile: {0}")]
pub struct SimError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionProfile {
    pub therapy: TherapyCode,
    /// Fraction of the approved RoM lower bound, in (0, 1].
    pub amplitude_fraction: f64,
    pub frequency_hz: f64,
    pub duration_s: f64,
    pub noise_std_deg: f64,
    pub drift_deg_per_min: f64,
    pub sample_rate_hz: f64,
    /// Still time before the motion, for calibration and countdown.
    pub hold_s: f64,
}

impl Default for MotionProfile {
    fn default() -> Self {
        MotionProfile {
            therapy: TherapyCode::WristFlexion,
            amplitude_fraction: 0.5,
            frequency_hz: 0.5,
            duration_s: 60.0,
            noise_std_deg: 0.0,
            drift_deg_per_min: 0.0,
            sample_rate_hz: 50.0,
            hold_s: 0.0,
        }
    }
}

impl MotionProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: &str| Err(SimError(m.to_string()));
        if !(self.amplitude_fraction > 0.0 && self.amplitude_fraction <= 1.0) {
            return fail("amplitude fraction must lie in (0, 1]");
        }
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return fail("frequency must be positive");
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz >= 2.0 * self.frequency_hz) {
            return fail("sample rate must be at least twice the motion frequency");
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return fail("duration must be zero or positive");
        }
        if !(self.hold_s >= 0.0 && self.hold_s.is_finite()) {
            return fail("hold time must be zero or positive");
        }
        if !(self.noise_std_deg >= 0.0 && self.noise_std_deg.is_finite()) {
            return fail("noise standard deviation must be zero or positive");
        }
        if !self.drift_deg_per_min.is_finite() {
            return fail("drift must be finite");
        }
        Ok(())
    }
}

/// Deterministic frame-pair generator; see [`synthesize_session`].
#[derive(Debug, Clone)]
pub struct Simulator {
    profile: MotionProfile,
    def: TherapyDefinition,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    heading: Quaternion,
    next: usize,
    hold_ticks: usize,
    total_ticks: usize,
}

/// Frame pairs (IMU1, IMU2) at `sample_rate_hz` for `hold_s + duration_s`.
/// Each sensor faces a seed-dependent compass heading.
pub fn synthesize_session(profile: MotionProfile, catalog: &Catalog, seed: u64) -> Result<Simulator, SimError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heading_deg: f64 = rng.gen_range(-180.0..180.0);
    let noise = (profile.noise_std_deg > 0.0).then(|| Normal::new(0.0, profile.noise_std_deg).expect("checked"));
    let hold_ticks = (profile.hold_s * profile.sample_rate_hz).round() as usize;
    Ok(Simulator {
        def: catalog.lookup(profile.therapy).clone(),
        rng,
        noise,
        heading: Quaternion::from_axis_angle(Vec3::Z, heading_deg.to_radians()),
        next: 0,
        hold_ticks,
        total_ticks: hold_ticks + (profile.duration_s * profile.sample_rate_hz).round() as usize,
        profile,
    })
}

impl Simulator {
    pub fn amplitude_deg(&self) -> f64 {
        self.profile.amplitude_fraction * self.def.approved_rom_min_deg
    }

    pub fn profile(&self) -> &MotionProfile {
        &self.profile
    }

    pub fn len(&self) -> usize {
        self.total_ticks
    }

    pub fn is_empty(&self) -> bool {
        self.total_ticks == 0
    }

    /// Noiseless primary angle `t` seconds into the motion.
    pub fn clean_theta(&self, t: f64) -> f64 {
        let p = &self.profile;
        self.amplitude_deg() * (2.0 * std::f64::consts::PI * p.frequency_hz * t).sin() + p.drift_deg_per_min * t / 60.0
    }

    fn orientations(&self, theta: f64) -> (Quaternion, Quaternion) {
        let ex = self.def.primary_angle;
        let axis = match ex.axis {
            EulerAxis::Yaw => Vec3::Z,
            EulerAxis::Pitch => Vec3::Y,
            EulerAxis::Roll => Vec3::X,
        };
        let moved = self.heading * Quaternion::from_axis_angle(axis, (ex.sign * theta).to_radians());
        match ex.source {
            AngleSource::Imu1 => (moved, moved),
            AngleSource::Imu2RelativeToImu1 => (self.heading, moved),
        }
    }

    /// The wire record stream: `HELLO`, samples, `BYE`.
    pub fn records(self) -> impl Iterator<Item = Record> {
        std::iter::once(Record::Hello { version: PROTOCOL_VERSION })
            .chain(self.flat_map(|pair| pair.map(Record::Sample)))
            .chain(std::iter::once(Record::Bye))
    }
}

impl Iterator for Simulator {
    type Item = [ImuFrame; 2];

    fn next(&mut self) -> Option<[ImuFrame; 2]> {
        if self.next >= self.total_ticks {
            return None;
        }
        let i = self.next;
        self.next += 1;
        let rate = self.profile.sample_rate_hz;
        let t_ms = (i as f64 * 1000.0 / rate).round() as u64;
        let mut theta = match i.checked_sub(self.hold_ticks) {
            Some(k) => self.clean_theta(k as f64 / rate),
            None => 0.0,
        };
        if let Some(n) = &self.noise {
            theta += n.sample(&mut self.rng);
        }
        let (q1, q2) = self.orientations(theta);
        let euler = |q| quaternion_to_euler(q).expect("unit quaternion").angles;
        Some([ImuFrame::new(t_ms, Device::Imu1, euler(q1)), ImuFrame::new(t_ms, Device::Imu2, euler(q2))])
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.total_ticks - self.next;
        (left, Some(left))
    }
}
