use alloc::vec::Vec;

use super::{AngleSeries, Baseline, MetricsError};
use crate::math;
use crate::orientation::Quaternion;
use crate::protocol::{Device, ImuFrame};
use crate::therapy::{AngleExtractor, AngleSource, TherapyDefinition};
use crate::SAMPLE_RATE_HZ;

/// Primary angle from baseline-relative sensor orientations: the twist of
/// the selected rotation about the extractor's axis.
pub fn primary_angle(
    extractor: &AngleExtractor,
    imu1: Quaternion,
    imu2: Option<Quaternion>,
) -> Result<f64, MetricsError> {
    let q = match extractor.source {
        AngleSource::Imu1 => imu1,
        AngleSource::Imu2RelativeToImu1 => {
            imu1.relative_to(imu2.ok_or(MetricsError::MissingDevice(Device::Imu2))?)
        }
    };
    Ok(extractor.sign * q.twist_deg(extractor.axis))
}

/// Baseline-relative orientations of one device.
struct Track {
    t_s: Vec<f64>,
    q: Vec<Quaternion>,
    cursor: usize,
}

impl Track {
    fn build(frames: &[ImuFrame], device: Device, baseline: &Baseline) -> Result<Option<Track>, MetricsError> {
        let mut t_s = Vec::new();
        let mut q = Vec::new();
        for (i, f) in frames.iter().enumerate().filter(|(_, f)| f.device == device) {
            let t = f.t_ms as f64 / 1000.0;
            if t_s.last().is_some_and(|last| t < *last) {
                return Err(MetricsError::NotIncreasing(i));
            }
            q.push(baseline.relative_quaternion(f));
            t_s.push(t);
        }
        Ok(if t_s.is_empty() { None } else { Some(Track { t_s, q, cursor: 0 }) })
    }

    /// Slerp at `t`; queries must be nondecreasing.
    fn at(&mut self, t: f64) -> Quaternion {
        let n = self.t_s.len();
        while self.cursor + 1 < n && self.t_s[self.cursor + 1] <= t {
            self.cursor += 1;
        }
        let i = self.cursor;
        if i + 1 < n && self.t_s[i + 1] > self.t_s[i] {
            let w = ((t - self.t_s[i]) / (self.t_s[i + 1] - self.t_s[i])).clamp(0.0, 1.0);
            if w > 0.0 {
                return self.q[i].slerp(self.q[i + 1], w);
            }
        }
        self.q[i]
    }
}

/// Resamples the session onto a uniform 50 Hz grid and evaluates the
/// therapy's primary angle at each grid point.
pub fn extract_angle_series(
    frames: &[ImuFrame],
    baseline: &Baseline,
    therapy: &TherapyDefinition,
) -> Result<AngleSeries, MetricsError> {
    let extractor = therapy.primary_angle;
    let mut imu1 = Track::build(frames, Device::Imu1, baseline)?.ok_or(MetricsError::MissingDevice(Device::Imu1))?;
    let mut imu2 = match Track::build(frames, Device::Imu2, baseline)? {
        Some(t) => Some(t),
        None if extractor.needs_imu2() => return Err(MetricsError::MissingDevice(Device::Imu2)),
        None => None,
    };

    let mut start = imu1.t_s[0];
    let mut end = *imu1.t_s.last().unwrap();
    if let (true, Some(t2)) = (extractor.needs_imu2(), &imu2) {
        start = start.max(t2.t_s[0]);
        end = end.min(*t2.t_s.last().unwrap());
    }
    let dt = 1.0 / SAMPLE_RATE_HZ;
    let n = if end >= start { math::floor((end - start) / dt + 1e-9) as usize + 1 } else { 0 };
    if n < 2 {
        return Err(MetricsError::SeriesTooShort(n));
    }

    let mut t_s = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    for k in 0..n {
        let t = start + k as f64 * dt;
        let q1 = imu1.at(t);
        let q2 = imu2.as_mut().map(|tr| tr.at(t));
        theta.push(primary_angle(&extractor, q1, q2)?);
        t_s.push(t);
    }
    let offset = match extractor.source {
        AngleSource::Imu1 => baseline.imu1.get(extractor.axis),
        AngleSource::Imu2RelativeToImu1 => {
            math::angle_diff_deg(baseline.imu2.get(extractor.axis), baseline.imu1.get(extractor.axis))
        }
    };
    AngleSeries::new(therapy.code, t_s, theta, offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::therapy::{Catalog, TherapyCode};
    use crate::orientation::Euler;
    use core::f64::consts::PI;

    fn stream(seconds: f64, f: impl Fn(f64) -> (Euler, Euler)) -> Vec<ImuFrame> {
        let n = (seconds * 50.0).round() as usize;
        let mut v = Vec::new();
        for i in 0..n {
            let t = i as f64 * 0.02;
            let (a, b) = f(t);
            v.push(ImuFrame::new(i as u64 * 20, Device::Imu1, a));
            v.push(ImuFrame::new(i as u64 * 20, Device::Imu2, b));
        }
        v
    }

    #[test]
    fn elbow_flexion_ninety() {
        let cat = Catalog::builtin();
        let ef = cat.lookup(TherapyCode::ElbowFlexion);
        let frames = stream(2.0, |_| (Euler::new(20.0, 0.0, 0.0), Euler::new(20.0, ef.primary_angle.sign * 90.0, 0.0)));
        let s = extract_angle_series(&frames, &Baseline::identity(), ef).unwrap();
        assert!(s.theta_deg.iter().all(|t| (t - 90.0).abs() < 1e-9), "{:?}", &s.theta_deg[..3]);
    }

    #[test]
    fn baseline_only_is_zero() {
        let cat = Catalog::builtin();
        let pose = (Euler::new(35.0, -10.0, 4.0), Euler::new(-60.0, 20.0, 170.0));
        let frames = stream(10.0, |_| pose);
        let b = super::super::calibrate_baseline(&frames).unwrap();
        for def in cat.iter() {
            let s = extract_angle_series(&frames, &b, def).unwrap();
            assert_eq!(s.len(), 500);
            assert!(s.theta_deg.iter().all(|t| t.abs() < 1e-9), "{:?}", def.code);
        }
    }

    #[test]
    fn sinusoid_peaks_at_amplitude() {
        let cat = Catalog::builtin();
        let wf = cat.lookup(TherapyCode::WristFlexion);
        let sign = wf.primary_angle.sign;
        let frames = stream(4.0, |t| {
            (Euler::default(), Euler::new(0.0, sign * 40.0 * libm::sin(PI * t), 0.0))
        });
        let s = extract_angle_series(&frames, &Baseline::identity(), wf).unwrap();
        let max = s.theta_deg.iter().cloned().fold(f64::MIN, f64::max);
        assert!((max - 40.0).abs() < 1e-6);
    }

    #[test]
    fn resamples_irregular_timestamps() {
        let cat = Catalog::builtin();
        let sf = cat.lookup(TherapyCode::ShoulderFlexion);
        let sign = sf.primary_angle.sign;
        // 30 ms spacing, linear ramp of 10 deg/s.
        let frames: Vec<ImuFrame> = (0..100)
            .map(|i| ImuFrame::new(i * 30, Device::Imu1, Euler::new(0.0, sign * i as f64 * 0.3, 0.0)))
            .collect();
        let s = extract_angle_series(&frames, &Baseline::identity(), sf).unwrap();
        assert_eq!(s.t_s[1] - s.t_s[0], 0.02);
        for (t, th) in s.t_s.iter().zip(&s.theta_deg) {
            assert!((th - 10.0 * t).abs() < 1e-9);
        }
    }

    #[test]
    fn unwraps_across_180() {
        let cat = Catalog::builtin();
        let sa = cat.lookup(TherapyCode::ShoulderAbduction);
        // Baseline yaw near the wrap point; motion crosses it.
        let frames: Vec<ImuFrame> = (0..50)
            .map(|i| ImuFrame::new(i * 40, Device::Imu1, Euler::new(math::wrap_deg(170.0 + i as f64), 0.0, 0.0)))
            .collect();
        let b = Baseline { imu1: Euler::new(170.0, 0.0, 0.0), ..Baseline::identity() };
        let s = extract_angle_series(&frames, &b, sa).unwrap();
        for (t, th) in s.t_s.iter().zip(&s.theta_deg) {
            assert!((th - sa.primary_angle.sign * 25.0 * t).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_imu2() {
        let cat = Catalog::builtin();
        let frames: Vec<ImuFrame> = (0..10).map(|i| ImuFrame::new(i * 20, Device::Imu1, Euler::default())).collect();
        let ef = cat.lookup(TherapyCode::ElbowFlexion);
        assert_eq!(
            extract_angle_series(&frames, &Baseline::identity(), ef),
            Err(MetricsError::MissingDevice(Device::Imu2))
        );
        assert!(extract_angle_series(&frames, &Baseline::identity(), cat.lookup(TherapyCode::ShoulderFlexion)).is_ok());
    }

    #[test]
    fn elbow_flexion_past_ninety() {
        let cat = Catalog::builtin();
        let ef = cat.lookup(TherapyCode::ElbowFlexion);
        let sign = ef.primary_angle.sign;
        // Ramp to 140 deg; the wire form flips yaw and roll past 90 deg of pitch.
        let frames = stream(2.0, |t| {
            let q2 = Euler::new(30.0, 0.0, 0.0).to_quaternion()
                * Quaternion::from_axis_angle(crate::orientation::Vec3::Y, math::to_rad(sign * 70.0 * t));
            let e2 = crate::orientation::quaternion_to_euler(q2).unwrap().angles;
            (Euler::new(30.0, 0.0, 0.0), e2)
        });
        let s = extract_angle_series(&frames, &Baseline::identity(), ef).unwrap();
        for (t, th) in s.t_s.iter().zip(&s.theta_deg) {
            assert!((th - 70.0 * t).abs() < 1e-6, "{t} {th}");
        }
    }
}
