use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{sampled_span, MetricsError, MIN_CALIBRATION_S};
use crate::math::{self, to_deg, to_rad};
use crate::orientation::{Euler, EulerAxis, Quaternion};
use crate::protocol::{Device, ImuFrame};

/// Circular spread above which the held posture is reported as unsteady.
pub const POSTURE_WARNING_DEG: f64 = 5.0;

/// Per-device resting orientation captured while the patient holds the base posture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub imu1: Euler,
    pub imu2: Euler,
    /// Largest per-axis circular standard deviation seen during the hold.
    pub spread_deg: [f64; 2],
    pub window_s: f64,
}

impl Baseline {
    pub fn identity() -> Self {
        Baseline { imu1: Euler::default(), imu2: Euler::default(), spread_deg: [0.0; 2], window_s: 0.0 }
    }

    pub fn offset(&self, device: Device) -> Euler {
        match device {
            Device::Imu1 => self.imu1,
            Device::Imu2 => self.imu2,
        }
    }

    /// Angles relative to the calibrated offsets, each axis wrapped.
    pub fn relative(&self, frame: &ImuFrame) -> Euler {
        frame.angles.minus(self.offset(frame.device))
    }

    /// Baseline-relative orientation as a quaternion, as fed to kinematics.
    pub fn relative_quaternion(&self, frame: &ImuFrame) -> Quaternion {
        self.relative(frame).to_quaternion()
    }

    pub fn posture_warning(&self) -> bool {
        self.spread_deg.iter().any(|s| *s > POSTURE_WARNING_DEG)
    }
}

/// Circular mean of each axis per device over the hold window.
pub fn calibrate_baseline(frames: &[ImuFrame]) -> Result<Baseline, MetricsError> {
    let mut out = Baseline::identity();
    let mut window = f64::INFINITY;
    for device in [Device::Imu1, Device::Imu2] {
        let own: Vec<&ImuFrame> = frames.iter().filter(|f| f.device == device).collect();
        if own.is_empty() {
            return Err(MetricsError::DeviceSilent(device));
        }
        let times: Vec<f64> = own.iter().map(|f| f.t_ms as f64 / 1000.0).collect();
        let span = sampled_span(&times);
        if span < MIN_CALIBRATION_S - 1e-9 {
            return Err(MetricsError::CalibrationTooShort { device, seconds: span });
        }
        window = window.min(span);
        let mut mean = Euler::default();
        let mut spread: f64 = 0.0;
        for axis in [EulerAxis::Yaw, EulerAxis::Pitch, EulerAxis::Roll] {
            let (m, s) = circular_stats(own.iter().map(|f| f.angles.get(axis)));
            mean.set(axis, m);
            spread = spread.max(s);
        }
        match device {
            Device::Imu1 => out.imu1 = mean,
            Device::Imu2 => out.imu2 = mean,
        }
        out.spread_deg[device.index()] = spread;
    }
    out.window_s = window;
    Ok(out)
}

/// (mean, circular standard deviation) in degrees.
fn circular_stats(angles: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut s, mut c, mut n) = (0.0, 0.0, 0usize);
    for a in angles {
        s += math::sin(to_rad(a));
        c += math::cos(to_rad(a));
        n += 1;
    }
    let (s, c) = (s / n as f64, c / n as f64);
    let r = math::sqrt(s * s + c * c).min(1.0);
    let mean = math::wrap_deg(to_deg(math::atan2(s, c)));
    let sd = if r > 0.0 { to_deg(math::sqrt(-2.0 * math::ln(r))) } else { 180.0 };
    (mean, sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn hold(seconds: f64, f: impl Fn(Device, usize) -> Euler) -> Vec<ImuFrame> {
        let n = (seconds * 50.0).round() as usize;
        let mut v = Vec::new();
        for i in 0..n {
            for d in [Device::Imu1, Device::Imu2] {
                v.push(ImuFrame::new(i as u64 * 20, d, f(d, i)));
            }
        }
        v
    }

    #[test]
    fn constant_input() {
        let frames = hold(10.0, |_, _| Euler::new(12.0, 0.0, 0.0));
        let b = calibrate_baseline(&frames).unwrap();
        assert!((b.imu1.yaw_deg - 12.0).abs() < 1e-9);
        assert!(b.relative(&frames[7]).yaw_deg.abs() < 1e-9);
        assert!(!b.posture_warning());
        assert!((b.window_s - 10.0).abs() < 1e-9);
    }

    #[test]
    fn short_window() {
        let frames = hold(7.0, |_, _| Euler::default());
        let err = calibrate_baseline(&frames).unwrap_err();
        assert!(matches!(err, MetricsError::CalibrationTooShort { .. }));
        assert!(alloc::format!("{err}").contains("calibration window too short"));
        assert!(calibrate_baseline(&hold(8.0, |_, _| Euler::default())).is_ok());
    }

    #[test]
    fn silent_device() {
        let frames: Vec<ImuFrame> =
            hold(10.0, |_, _| Euler::default()).into_iter().filter(|f| f.device == Device::Imu1).collect();
        assert_eq!(calibrate_baseline(&frames), Err(MetricsError::DeviceSilent(Device::Imu2)));
        assert_eq!(calibrate_baseline(&[]), Err(MetricsError::DeviceSilent(Device::Imu1)));
    }

    #[test]
    fn wraps_across_180() {
        let frames = hold(10.0, |_, i| Euler::new(if i % 2 == 0 { 179.0 } else { -179.0 }, 0.0, 0.0));
        let b = calibrate_baseline(&frames).unwrap();
        assert!(math::angle_diff_deg(b.imu1.yaw_deg, 180.0).abs() < 1e-9);
        assert!(b.spread_deg[0] < 1.5);
    }

    #[test]
    fn noisy_static_input() {
        let mut rng = StdRng::seed_from_u64(7);
        let normal = |rng: &mut StdRng| {
            // Box-Muller
            let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
            math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * core::f64::consts::PI * u2)
        };
        let noise: Vec<f64> = (0..2000).map(|_| normal(&mut rng)).collect();
        let frames = hold(8.0, |d, i| Euler::new(30.0 + noise[2 * i + d.index()], -5.0, 2.0));
        let b = calibrate_baseline(&frames).unwrap();
        assert!((b.imu1.yaw_deg - 30.0).abs() < 0.2);
        assert!((b.imu2.yaw_deg - 30.0).abs() < 0.2);
        assert!(!b.posture_warning());
    }

    #[test]
    fn unsteady_posture_warns() {
        let frames = hold(10.0, |_, i| Euler::new(0.0, (i % 50) as f64 * 0.5 - 12.0, 0.0));
        assert!(calibrate_baseline(&frames).unwrap().posture_warning());
    }
}
