//! Calibration, primary-angle extraction, cycle detection and the
//! performance metrics vector.

mod calibration;
mod cycles;
mod extract;
mod live;
mod pmv;

pub use calibration::{calibrate_baseline, Baseline, POSTURE_WARNING_DEG};
pub use cycles::{detect_cycles, CycleParams, CycleSet};
pub use extract::{extract_angle_series, primary_angle};
pub use live::{LiveSnapshot, LiveTracker};
pub use pmv::{analyze_series, compute_pmv, Analysis, Med80Reference, MetricConfig, Pmv};

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::Device;
use crate::therapy::TherapyCode;

pub const MIN_CALIBRATION_S: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("calibration window too short: {device} spans {seconds:.2} s, need {MIN_CALIBRATION_S} s")]
    CalibrationTooShort { device: Device, seconds: f64 },
    #[error("{0} sent no frames during calibration")]
    DeviceSilent(Device),
    #[error("therapy needs {0} data but none was recorded")]
    MissingDevice(Device),
    #[error("angle series needs at least 2 samples, got {0}")]
    SeriesTooShort(usize),
    #[error("angle series timestamps must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("t_s and theta_deg differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("angle series is empty")]
    EmptySeries,
    #[error("session duration must be positive, got {0}")]
    BadDuration(f64),
    #[error("orientation error: {0}")]
    Orientation(#[from] crate::orientation::OrientationError),
}

/// Baseline-relative primary angle of one therapy over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSeries {
    pub therapy: TherapyCode,
    pub t_s: Vec<f64>,
    pub theta_deg: Vec<f64>,
    pub baseline_offset_deg: f64,
}

impl AngleSeries {
    pub fn new(
        therapy: TherapyCode,
        t_s: Vec<f64>,
        theta_deg: Vec<f64>,
        baseline_offset_deg: f64,
    ) -> Result<Self, MetricsError> {
        if t_s.len() != theta_deg.len() {
            return Err(MetricsError::LengthMismatch(t_s.len(), theta_deg.len()));
        }
        if t_s.len() < 2 {
            return Err(MetricsError::SeriesTooShort(t_s.len()));
        }
        if let Some(i) = t_s.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(MetricsError::NotIncreasing(i + 1));
        }
        Ok(AngleSeries { therapy, t_s, theta_deg, baseline_offset_deg })
    }

    /// Series sampled every `dt_s` from `t0_s`.
    pub fn uniform(
        therapy: TherapyCode,
        t0_s: f64,
        dt_s: f64,
        theta_deg: Vec<f64>,
    ) -> Result<Self, MetricsError> {
        let t_s = (0..theta_deg.len()).map(|i| t0_s + i as f64 * dt_s).collect();
        Self::new(therapy, t_s, theta_deg, 0.0)
    }

    pub fn len(&self) -> usize {
        self.t_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_s.is_empty()
    }

    /// Span covered by the samples, counting one sample interval per sample.
    pub fn duration_s(&self) -> f64 {
        sampled_span(&self.t_s)
    }

    /// Same timestamps, θ replaced by a centered moving average of `window` samples.
    pub fn smoothed(&self, window: usize) -> AngleSeries {
        AngleSeries { theta_deg: moving_average(&self.theta_deg, window), ..self.clone() }
    }
}

/// `(last - first)·n/(n-1)`: 400 samples at 50 Hz span 8 s.
pub(crate) fn sampled_span(t_s: &[f64]) -> f64 {
    match t_s {
        [] | [_] => 0.0,
        [first, .., last] => {
            let n = t_s.len() as f64;
            (last - first) * n / (n - 1.0)
        }
    }
}

/// Centered moving average; the window shrinks symmetrically at the ends.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let slice = &x[i - h..=i + h];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}
