//! Quaternion orientation, Z-Y-X Euler angles and the Madgwick gradient-descent
//! fusion filter for accelerometer/gyroscope(/magnetometer) samples.
//!
//! Quaternions describe the sensor frame relative to the reference frame, so
//! `q.rotate(v)` takes a sensor-frame vector into the reference frame.

use core::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, to_deg, to_rad};
use crate::protocol::{Device, ImuFrame, RawFrame};

/// Pitch magnitude above which yaw and roll become ill-defined.
pub const GIMBAL_LIMIT_DEG: f64 = 89.9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrientationError {
    #[error("quaternion norm {0} is not 1")]
    NotUnit(f64),
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("filter gain must be positive, got {0}")]
    BadGain(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        math::sqrt(self.dot(self))
    }

    pub fn scale(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self.scale(1.0 / n))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

/// Hamilton quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Quaternion::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    /// Rotation by `angle_rad` about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vec3, angle_rad: f64) -> Self {
        let a = axis.normalized().unwrap_or(Vec3::Z);
        let (s, c) = (math::sin(angle_rad / 2.0), math::cos(angle_rad / 2.0));
        Quaternion::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn norm(self) -> f64 {
        math::sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
    }

    /// Returns `None` for the zero (or non-finite) quaternion.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self.scale(1.0 / n))
    }

    pub fn scale(self, k: f64) -> Self {
        Quaternion::new(self.w * k, self.x * k, self.y * k, self.z * k)
    }

    pub fn conjugate(self) -> Self {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(self, o: Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Rotates `v` by this (unit) quaternion.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + 2u×(u×v + w v), u = vector part
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v).scale(2.0);
        v + t.scale(self.w) + u.cross(t)
    }

    /// Rotation matrix, row-major.
    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        let Quaternion { w, x, y, z } = self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Rotation taking `self` to `other`, expressed in `self`'s frame: `self⁻¹·other`.
    pub fn relative_to(self, other: Quaternion) -> Quaternion {
        self.conjugate() * other
    }

    /// Angle of the rotation between two orientations, in degrees.
    pub fn angle_to_deg(self, other: Quaternion) -> f64 {
        let r = self.relative_to(other);
        to_deg(2.0 * math::atan2(math::sqrt(r.x * r.x + r.y * r.y + r.z * r.z), math::abs(r.w)))
    }

    /// Spherical interpolation along the shorter arc, `w` in [0, 1].
    pub fn slerp(self, other: Quaternion, w: f64) -> Quaternion {
        let mut r = self.conjugate() * other;
        if r.w < 0.0 {
            r = r.scale(-1.0);
        }
        let v = math::sqrt(r.x * r.x + r.y * r.y + r.z * r.z);
        if v < 1e-15 {
            return self;
        }
        let half = math::atan2(v, r.w) * w;
        let k = math::sin(half) / v;
        self * Quaternion::new(math::cos(half), r.x * k, r.y * k, r.z * k)
    }

    /// Signed angle of the twist about a body axis (swing-twist split), in
    /// degrees within [-180, 180). Equals the Euler component for rotations
    /// about that axis alone, and keeps working past ±90° of pitch.
    pub fn twist_deg(self, axis: EulerAxis) -> f64 {
        let c = match axis {
            EulerAxis::Yaw => self.z,
            EulerAxis::Pitch => self.y,
            EulerAxis::Roll => self.x,
        };
        if c == 0.0 && self.w == 0.0 {
            return 0.0;
        }
        math::wrap_deg(to_deg(2.0 * math::atan2(c, self.w)))
    }

    fn check_unit(self, tol: f64) -> Result<(), OrientationError> {
        let n = self.norm();
        if math::abs(n - 1.0) > tol || !n.is_finite() {
            return Err(OrientationError::NotUnit(n));
        }
        Ok(())
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, o: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EulerAxis {
    Yaw,
    Pitch,
    Roll,
}

/// Aerospace Z-Y-X intrinsic angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Euler {
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
}

impl Euler {
    pub const fn new(yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Self {
        Euler { yaw_deg, pitch_deg, roll_deg }
    }

    pub fn get(&self, axis: EulerAxis) -> f64 {
        match axis {
            EulerAxis::Yaw => self.yaw_deg,
            EulerAxis::Pitch => self.pitch_deg,
            EulerAxis::Roll => self.roll_deg,
        }
    }

    pub fn set(&mut self, axis: EulerAxis, value: f64) {
        match axis {
            EulerAxis::Yaw => self.yaw_deg = value,
            EulerAxis::Pitch => self.pitch_deg = value,
            EulerAxis::Roll => self.roll_deg = value,
        }
    }

    /// `Rz(yaw)·Ry(pitch)·Rx(roll)`.
    pub fn to_quaternion(self) -> Quaternion {
        let qz = Quaternion::from_axis_angle(Vec3::Z, to_rad(self.yaw_deg));
        let qy = Quaternion::from_axis_angle(Vec3::Y, to_rad(self.pitch_deg));
        let qx = Quaternion::from_axis_angle(Vec3::X, to_rad(self.roll_deg));
        qz * qy * qx
    }

    /// Per-axis wrapped difference `self - base`.
    pub fn minus(self, base: Euler) -> Euler {
        Euler::new(
            math::angle_diff_deg(self.yaw_deg, base.yaw_deg),
            math::angle_diff_deg(self.pitch_deg, base.pitch_deg),
            math::angle_diff_deg(self.roll_deg, base.roll_deg),
        )
    }
}

/// Result of [`quaternion_to_euler`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerReading {
    pub angles: Euler,
    /// Set when `|pitch| > 89.9°`.
    pub near_gimbal_lock: bool,
}

/// Z-Y-X decomposition; yaw and roll in `[-180, 180)`, pitch in `[-90, 90]`.
pub fn quaternion_to_euler(q: Quaternion) -> Result<EulerReading, OrientationError> {
    q.check_unit(1e-3)?;
    let q = q.scale(1.0 / q.norm());
    let Quaternion { w, x, y, z } = q;
    let sr_cp = 2.0 * (w * x + y * z);
    let cr_cp = 1.0 - 2.0 * (x * x + y * y);
    let sp = 2.0 * (w * y - z * x);
    // atan2 against cos(pitch) stays accurate near ±90°, unlike asin.
    let cp = math::sqrt(sr_cp * sr_cp + cr_cp * cr_cp);
    let pitch = to_deg(math::atan2(sp, cp));
    let roll = to_deg(math::atan2(sr_cp, cr_cp));
    let yaw = to_deg(math::atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z)));
    Ok(EulerReading {
        angles: Euler::new(math::wrap_deg(yaw), pitch, math::wrap_deg(roll)),
        near_gimbal_lock: math::abs(pitch) > GIMBAL_LIMIT_DEG,
    })
}

/// One raw 9-DOF measurement. Accelerometer in g, gyroscope in deg/s,
/// magnetometer normalized and optional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub accel_g: Vec3,
    pub gyro_dps: Vec3,
    pub mag: Option<Vec3>,
}

/// Default steady-state filter gain.
pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationState {
    pub q: Quaternion,
    pub beta: f64,
    pub last_t_ms: u64,
}

impl Default for OrientationState {
    fn default() -> Self {
        OrientationState { q: Quaternion::IDENTITY, beta: DEFAULT_BETA, last_t_ms: 0 }
    }
}

/// Whether the accelerometer/magnetometer correction was applied in a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measurement {
    /// Full 9-DOF correction.
    Marg,
    /// Gravity-only correction (no magnetometer).
    Imu,
    /// Zero-norm accelerometer or magnetometer; gyro-only propagation.
    Rejected,
}

/// Advances `state` by one filter step of `dt_s` seconds using `state.beta`.
pub fn madgwick_update(
    state: &OrientationState,
    sample: &RawSample,
    dt_s: f64,
) -> Result<(OrientationState, Measurement), OrientationError> {
    if !(dt_s > 0.0) || !dt_s.is_finite() {
        return Err(OrientationError::BadTimeStep(dt_s));
    }
    if !(state.beta > 0.0) {
        return Err(OrientationError::BadGain(state.beta));
    }
    let (q, used) = step(state.q, sample, dt_s, state.beta);
    let advanced_ms = math::round(dt_s * 1000.0) as u64;
    Ok((
        OrientationState { q, beta: state.beta, last_t_ms: state.last_t_ms + advanced_ms },
        used,
    ))
}

fn step(q: Quaternion, sample: &RawSample, dt_s: f64, beta: f64) -> (Quaternion, Measurement) {
    let g = sample.gyro_dps.scale(core::f64::consts::PI / 180.0);
    let q_dot_gyro = (q * Quaternion::new(0.0, g.x, g.y, g.z)).scale(0.5);

    let accel = sample.accel_g.normalized();
    let mag = sample.mag.map(|m| m.normalized());
    let (gradient, used) = match (accel, mag) {
        (None, _) | (Some(_), Some(None)) => (None, Measurement::Rejected),
        (Some(a), None) => (Some(gravity_gradient(q, a)), Measurement::Imu),
        (Some(a), Some(Some(m))) => (Some(marg_gradient(q, a, m)), Measurement::Marg),
    };

    let mut q_dot = q_dot_gyro;
    if let Some(s) = gradient.and_then(|s| s.normalized()) {
        q_dot = Quaternion::new(
            q_dot.w - beta * s.w,
            q_dot.x - beta * s.x,
            q_dot.y - beta * s.y,
            q_dot.z - beta * s.z,
        );
    }
    let next = Quaternion::new(
        q.w + q_dot.w * dt_s,
        q.x + q_dot.x * dt_s,
        q.y + q_dot.y * dt_s,
        q.z + q_dot.z * dt_s,
    );
    (next.normalized().unwrap_or(q), used)
}

/// `Jᵀf` for the gravity objective, with `a` the normalized accelerometer reading.
fn gravity_gradient(q: Quaternion, a: Vec3) -> Quaternion {
    let Quaternion { w: q0, x: q1, y: q2, z: q3 } = q;
    let f = [
        2.0 * (q1 * q3 - q0 * q2) - a.x,
        2.0 * (q0 * q1 + q2 * q3) - a.y,
        2.0 * (0.5 - q1 * q1 - q2 * q2) - a.z,
    ];
    let j = [
        [-2.0 * q2, 2.0 * q3, -2.0 * q0, 2.0 * q1],
        [2.0 * q1, 2.0 * q0, 2.0 * q3, 2.0 * q2],
        [0.0, -4.0 * q1, -4.0 * q2, 0.0],
    ];
    jt_f(&j, &f)
}

/// `Jᵀf` for the stacked gravity and magnetic-field objectives.
fn marg_gradient(q: Quaternion, a: Vec3, m: Vec3) -> Quaternion {
    let Quaternion { w: q0, x: q1, y: q2, z: q3 } = q;
    // Earth-frame field direction, with its horizontal part folded onto x.
    let h = q.rotate(m);
    let bx = math::sqrt(h.x * h.x + h.y * h.y);
    let bz = h.z;
    let f = [
        2.0 * bx * (0.5 - q2 * q2 - q3 * q3) + 2.0 * bz * (q1 * q3 - q0 * q2) - m.x,
        2.0 * bx * (q1 * q2 - q0 * q3) + 2.0 * bz * (q0 * q1 + q2 * q3) - m.y,
        2.0 * bx * (q0 * q2 + q1 * q3) + 2.0 * bz * (0.5 - q1 * q1 - q2 * q2) - m.z,
    ];
    let j = [
        [-2.0 * bz * q2, 2.0 * bz * q3, -4.0 * bx * q2 - 2.0 * bz * q0, -4.0 * bx * q3 + 2.0 * bz * q1],
        [
            -2.0 * bx * q3 + 2.0 * bz * q1,
            2.0 * bx * q2 + 2.0 * bz * q0,
            2.0 * bx * q1 + 2.0 * bz * q3,
            -2.0 * bx * q0 + 2.0 * bz * q2,
        ],
        [2.0 * bx * q2, 2.0 * bx * q3 - 4.0 * bz * q1, 2.0 * bx * q0 - 4.0 * bz * q2, 2.0 * bx * q1],
    ];
    let g = gravity_gradient(q, a);
    let b = jt_f(&j, &f);
    Quaternion::new(g.w + b.w, g.x + b.x, g.y + b.y, g.z + b.z)
}

fn jt_f(j: &[[f64; 4]; 3], f: &[f64; 3]) -> Quaternion {
    let mut out = [0.0; 4];
    for (row, fi) in j.iter().zip(f) {
        for (o, jij) in out.iter_mut().zip(row) {
            *o += jij * fi;
        }
    }
    Quaternion::new(out[0], out[1], out[2], out[3])
}

/// Gain schedule for [`MadgwickFilter`]: starts at `startup_gain` and falls
/// linearly to `beta` over `startup_period_s`, so arbitrary initial attitudes
/// converge within the calibration hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub beta: f64,
    pub startup_gain: f64,
    pub startup_period_s: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { beta: DEFAULT_BETA, startup_gain: 10.0, startup_period_s: 3.0 }
    }
}

impl FilterConfig {
    /// Fixed gain, no startup ramp.
    pub fn constant(beta: f64) -> Self {
        FilterConfig { beta, startup_gain: beta, startup_period_s: 0.0 }
    }

    pub fn gain_at(&self, elapsed_s: f64) -> f64 {
        if self.startup_period_s <= 0.0 || elapsed_s >= self.startup_period_s {
            return self.beta;
        }
        let frac = 1.0 - elapsed_s / self.startup_period_s;
        self.beta + (self.startup_gain - self.beta) * frac
    }
}

/// Stateful filter wrapping [`madgwick_update`] with the startup gain schedule.
#[derive(Debug, Clone)]
pub struct MadgwickFilter {
    state: OrientationState,
    config: FilterConfig,
    elapsed_s: f64,
}

impl MadgwickFilter {
    pub fn new(config: FilterConfig) -> Self {
        Self::with_state(config, Quaternion::IDENTITY)
    }

    pub fn with_state(config: FilterConfig, q: Quaternion) -> Self {
        MadgwickFilter {
            state: OrientationState { q, beta: config.beta, last_t_ms: 0 },
            config,
            elapsed_s: 0.0,
        }
    }

    pub fn update(&mut self, sample: &RawSample, dt_s: f64) -> Result<Measurement, OrientationError> {
        let mut s = self.state;
        s.beta = self.config.gain_at(self.elapsed_s);
        let (next, used) = madgwick_update(&s, sample, dt_s)?;
        self.state = OrientationState { beta: self.config.beta, ..next };
        self.elapsed_s += dt_s;
        Ok(used)
    }

    pub fn quaternion(&self) -> Quaternion {
        self.state.q
    }

    pub fn state(&self) -> &OrientationState {
        &self.state
    }

    pub fn euler(&self) -> Euler {
        quaternion_to_euler(self.state.q).map(|r| r.angles).unwrap_or_default()
    }
}

/// Turns raw-mode frames into fused frames, one filter per device.
#[derive(Debug, Clone)]
pub struct RawFusion {
    filters: [MadgwickFilter; 2],
    last_t_ms: [Option<u64>; 2],
    nominal_dt_s: f64,
}

impl RawFusion {
    pub fn new(config: FilterConfig, sample_rate_hz: f64) -> Self {
        RawFusion {
            filters: [MadgwickFilter::new(config), MadgwickFilter::new(config)],
            last_t_ms: [None, None],
            nominal_dt_s: 1.0 / sample_rate_hz,
        }
    }

    pub fn push(&mut self, frame: &RawFrame) -> Result<ImuFrame, OrientationError> {
        let i = frame.device.index();
        let dt_s = match self.last_t_ms[i] {
            Some(prev) if frame.t_ms > prev => (frame.t_ms - prev) as f64 / 1000.0,
            _ => self.nominal_dt_s,
        };
        self.last_t_ms[i] = Some(frame.t_ms);
        self.filters[i].update(&frame.sample, dt_s)?;
        Ok(ImuFrame::new(frame.t_ms, frame.device, self.filters[i].euler()))
    }

    pub fn filter(&self, device: Device) -> &MadgwickFilter {
        &self.filters[device.index()]
    }
}
