use serde::{Deserialize, Serialize};

use super::{detect_cycles, AngleSeries, CycleParams, CycleSet, MetricsError};
use crate::math;
use crate::therapy::TherapyDefinition;

/// The eight performance metrics, in fixed order
/// `[SD, M, RR, Med-80, RMS, WP, WV, WA]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pmv {
    pub sd_deg: f64,
    pub m_deg: f64,
    pub rr_per_min: f64,
    pub med80_deg: f64,
    pub rms_deg: f64,
    pub wp_s: f64,
    pub wv_deg_per_s: f64,
    pub wa_deg: f64,
}

impl Pmv {
    pub const LEN: usize = 8;
    pub const NAMES: [&'static str; 8] = ["SD", "M", "RR", "Med-80", "RMS", "WP", "WV", "WA"];
    /// Reading of each component as progress when it grows. Informational only.
    pub const HIGHER_IS_BETTER: [bool; 8] = [true; 8];

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.sd_deg,
            self.m_deg,
            self.rr_per_min,
            self.med80_deg,
            self.rms_deg,
            self.wp_s,
            self.wv_deg_per_s,
            self.wa_deg,
        ]
    }

    pub fn from_array(v: [f64; 8]) -> Self {
        Pmv {
            sd_deg: v[0],
            m_deg: v[1],
            rr_per_min: v[2],
            med80_deg: v[3],
            rms_deg: v[4],
            wp_s: v[5],
            wv_deg_per_s: v[6],
            wa_deg: v[7],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

/// What "max RoM" means for Med-80.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "deg")]
pub enum Med80Reference {
    #[default]
    SessionMax,
    Approved(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub cycles: CycleParams,
    /// Moving-average width applied before cycle detection and WV; 1 disables it.
    pub smoothing_window: usize,
    pub med80: Med80Reference,
}

impl MetricConfig {
    pub const DEFAULT_SMOOTHING: usize = 5;

    pub fn for_therapy(def: &TherapyDefinition) -> Self {
        MetricConfig {
            cycles: CycleParams::for_therapy(def),
            smoothing_window: Self::DEFAULT_SMOOTHING,
            med80: Med80Reference::SessionMax,
        }
    }
}

/// Literal metric formulas on one series and its cycles.
pub fn compute_pmv(series: &AngleSeries, cycles: &CycleSet, session_duration_s: f64) -> Result<Pmv, MetricsError> {
    pmv_parts(series, series, cycles, session_duration_s, Med80Reference::SessionMax)
}

fn pmv_parts(
    raw: &AngleSeries,
    smooth: &AngleSeries,
    cycles: &CycleSet,
    duration_s: f64,
    med80: Med80Reference,
) -> Result<Pmv, MetricsError> {
    if raw.is_empty() || smooth.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    if !(duration_s > 0.0) {
        return Err(MetricsError::BadDuration(duration_s));
    }
    let theta = &raw.theta_deg;
    let n = theta.len() as f64;
    let m = math::mean(theta);
    let var = theta.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    let rms = math::sqrt(theta.iter().map(|x| x * x).sum::<f64>() / n);

    let st = &smooth.theta_deg;
    let reference = match med80 {
        Med80Reference::SessionMax => st.iter().cloned().fold(f64::MIN, f64::max),
        Med80Reference::Approved(deg) => deg,
    };
    let high_peaks: alloc::vec::Vec<f64> =
        cycles.peaks.iter().map(|&i| st[i]).filter(|v| *v >= 0.8 * reference).collect();
    let med80 = if high_peaks.is_empty() { 0.0 } else { math::median(&high_peaks) };

    let wv = if st.len() < 2 {
        0.0
    } else {
        let speeds: alloc::vec::Vec<f64> = st
            .windows(2)
            .zip(smooth.t_s.windows(2))
            .map(|(x, t)| math::abs(x[1] - x[0]) / (t[1] - t[0]))
            .collect();
        math::mean(&speeds)
    };

    Ok(Pmv {
        sd_deg: math::sqrt(var),
        m_deg: m,
        rr_per_min: cycles.count() as f64 / duration_s * 60.0,
        med80_deg: med80,
        rms_deg: rms,
        wp_s: math::mean(&cycles.period_s),
        wv_deg_per_s: wv,
        wa_deg: math::mean(&cycles.amplitude_deg),
    })
}

/// Cycles and PMV of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub cycles: CycleSet,
    pub pmv: Pmv,
    pub duration_s: f64,
}

/// Smooths, detects cycles and computes the PMV. SD, M and RMS use the raw
/// series; cycle statistics, Med-80 and WV use the smoothed one.
pub fn analyze_series(series: &AngleSeries, config: &MetricConfig) -> Result<Analysis, MetricsError> {
    if series.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let smooth = series.smoothed(config.smoothing_window);
    let cycles = detect_cycles(&smooth, config.cycles.min_prominence_deg, config.cycles.min_period_s);
    let duration_s = series.duration_s();
    let pmv = pmv_parts(series, &smooth, &cycles, duration_s, config.med80)?;
    Ok(Analysis { cycles, pmv, duration_s })
}
