use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::AngleSeries;
use crate::therapy::TherapyDefinition;

/// Alternating peaks and troughs of a series, with per-cycle statistics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CycleSet {
    pub peaks: Vec<usize>,
    pub troughs: Vec<usize>,
    /// Half the excursion from each peak to its adjacent trough.
    pub amplitude_deg: Vec<f64>,
    /// Spacing of successive peaks.
    pub period_s: Vec<f64>,
}

impl CycleSet {
    pub fn count(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleParams {
    pub min_prominence_deg: f64,
    pub min_period_s: f64,
}

impl CycleParams {
    pub const DEFAULT_MIN_PERIOD_S: f64 = 0.4;

    /// 10% of the approved minimum RoM, 0.4 s.
    pub fn for_therapy(def: &TherapyDefinition) -> Self {
        CycleParams {
            min_prominence_deg: 0.1 * def.approved_rom_min_deg,
            min_period_s: Self::DEFAULT_MIN_PERIOD_S,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Peak,
    Trough,
}

/// Hysteresis extremum tracker. An extremum is confirmed once the signal has
/// moved `threshold` away from it; the series ends are never extrema unless
/// the signal already fell (or rose) by `threshold` into them.
#[derive(Debug, Clone)]
pub(crate) struct ZigZag {
    threshold: f64,
    dir: Option<Kind>,
    hi: (usize, f64),
    lo: (usize, f64),
    first: f64,
    n: usize,
}

impl ZigZag {
    pub(crate) fn new(threshold: f64) -> Self {
        ZigZag { threshold, dir: None, hi: (0, f64::MIN), lo: (0, f64::MAX), first: 0.0, n: 0 }
    }

    /// Feeds the next sample; returns an extremum confirmed by it.
    fn push(&mut self, x: f64) -> Option<(usize, f64, Kind)> {
        let i = self.n;
        self.n += 1;
        if i == 0 {
            self.first = x;
            self.hi = (0, x);
            self.lo = (0, x);
            return None;
        }
        let thr = self.threshold;
        match self.dir {
            None => {
                if x > self.hi.1 {
                    self.hi = (i, x);
                }
                if x < self.lo.1 {
                    self.lo = (i, x);
                }
                if x - self.lo.1 >= thr {
                    self.dir = Some(Kind::Peak);
                    let lo = self.lo;
                    self.hi = (i, x);
                    if lo.0 > 0 && self.first - lo.1 >= thr {
                        return Some((lo.0, lo.1, Kind::Trough));
                    }
                } else if self.hi.1 - x >= thr {
                    self.dir = Some(Kind::Trough);
                    let hi = self.hi;
                    self.lo = (i, x);
                    if hi.0 > 0 && hi.1 - self.first >= thr {
                        return Some((hi.0, hi.1, Kind::Peak));
                    }
                }
                None
            }
            Some(Kind::Peak) => {
                if x > self.hi.1 {
                    self.hi = (i, x);
                } else if self.hi.1 - x >= thr {
                    self.dir = Some(Kind::Trough);
                    self.lo = (i, x);
                    return Some((self.hi.0, self.hi.1, Kind::Peak));
                }
                None
            }
            Some(Kind::Trough) => {
                if x < self.lo.1 {
                    self.lo = (i, x);
                } else if x - self.lo.1 >= thr {
                    self.dir = Some(Kind::Peak);
                    self.hi = (i, x);
                    return Some((self.lo.0, self.lo.1, Kind::Trough));
                }
                None
            }
        }
    }

    /// Whether this sample confirmed a new peak.
    pub(crate) fn push_is_peak(&mut self, x: f64) -> bool {
        matches!(self.push(x), Some((_, _, Kind::Peak)))
    }
}

/// Peaks and troughs with at least `min_prominence_deg` of rise and fall
/// around them and at least `min_period_s` between extrema of the same kind.
pub fn detect_cycles(series: &AngleSeries, min_prominence_deg: f64, min_period_s: f64) -> CycleSet {
    let theta = &series.theta_deg;
    let t = &series.t_s;
    let threshold = if min_prominence_deg > 0.0 { min_prominence_deg } else { f64::MIN_POSITIVE };
    let mut zz = ZigZag::new(threshold);
    let mut ext: Vec<(usize, Kind)> = theta.iter().filter_map(|x| zz.push(*x)).map(|(i, _, k)| (i, k)).collect();

    // Merge same-kind extrema that are too close: keep the extremer one and
    // drop the opposite extremum between them.
    let mut k = 0;
    while k + 2 < ext.len() {
        let (a, kind) = ext[k];
        let b = ext[k + 2].0;
        if t[b] - t[a] < min_period_s {
            let keep_b = match kind {
                Kind::Peak => theta[b] > theta[a],
                Kind::Trough => theta[b] < theta[a],
            };
            let keep = if keep_b { ext[k + 2] } else { ext[k] };
            ext.splice(k..k + 3, [keep]);
            k = k.saturating_sub(1);
        } else {
            k += 1;
        }
    }

    let mut out = CycleSet::default();
    for (j, &(i, kind)) in ext.iter().enumerate() {
        match kind {
            Kind::Trough => out.troughs.push(i),
            Kind::Peak => {
                out.peaks.push(i);
                let neighbour = ext.get(j + 1).or(j.checked_sub(1).and_then(|p| ext.get(p)));
                if let Some(&(m, _)) = neighbour {
                    out.amplitude_deg.push((theta[i] - theta[m]) / 2.0);
                }
            }
        }
    }
    out.period_s = out.peaks.windows(2).map(|w| t[w[1]] - t[w[0]]).collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use crate::therapy::TherapyCode;
    use alloc::vec;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    fn series(theta: Vec<f64>) -> AngleSeries {
        AngleSeries::uniform(TherapyCode::WristFlexion, 0.0, 0.02, theta).unwrap()
    }

    fn sine(amp: f64, f: f64, seconds: f64) -> Vec<f64> {
        (0..(seconds * 50.0) as usize).map(|i| amp * math::sin(2.0 * PI * f * i as f64 * 0.02)).collect()
    }

    #[test]
    fn sine_cycles() {
        let c = detect_cycles(&series(sine(40.0, 0.5, 60.0)), 8.0, 0.4);
        assert_eq!(c.count(), 30);
        assert_eq!(c.troughs.len(), 30);
        assert!(c.period_s.iter().all(|p| (p - 2.0).abs() < 1e-9));
        assert!(c.amplitude_deg.iter().all(|a| (a - 40.0).abs() < 1e-9));
    }

    #[test]
    fn constant_has_no_cycles() {
        let c = detect_cycles(&series(vec![3.0; 500]), 8.0, 0.4);
        assert!(c.is_empty());
        assert!(c.troughs.is_empty() && c.amplitude_deg.is_empty() && c.period_s.is_empty());
    }

    #[test]
    fn ripple_ignored() {
        let mut theta = sine(40.0, 0.5, 60.0);
        // 1° ripple on the falling flank of the third cycle.
        for (k, v) in theta[260..270].iter_mut().enumerate() {
            *v += if k < 5 { k as f64 * 0.2 } else { (10 - k) as f64 * 0.2 };
        }
        let c = detect_cycles(&series(theta), 8.0, 0.4);
        assert_eq!(c.count(), 30);
    }

    #[test]
    fn close_peaks_merge() {
        // Two peaks 0.2 s apart separated by a dip deep enough for the hysteresis.
        let mut theta = vec![0.0; 200];
        for (i, v) in theta.iter_mut().enumerate() {
            *v = match i {
                40..=49 => 20.0,
                50..=54 => 5.0,
                55..=59 => 25.0,
                _ => 0.0,
            };
        }
        let c = detect_cycles(&series(theta), 8.0, 0.4);
        assert_eq!(c.peaks, vec![55]);
        assert!(c.troughs.is_empty());
        assert_eq!(c.amplitude_deg, Vec::<f64>::new());
    }

    #[test]
    fn ends_are_not_extrema() {
        // Starts at its maximum and ends at its minimum.
        let theta: Vec<f64> = (0..100).map(|i| 50.0 - i as f64).collect();
        assert!(detect_cycles(&series(theta), 8.0, 0.4).is_empty());
    }

    proptest! {
        #[test]
        fn extrema_alternate(xs in proptest::collection::vec(-90.0f64..90.0, 2..400), prom in 0.0f64..30.0) {
            let s = series(xs);
            let c = detect_cycles(&s, prom, 0.1);
            let mut all: Vec<(usize, bool)> = c.peaks.iter().map(|i| (*i, true)).chain(c.troughs.iter().map(|i| (*i, false))).collect();
            all.sort();
            for w in all.windows(2) {
                prop_assert!(w[0].1 != w[1].1);
                prop_assert!(w[0].0 < w[1].0);
            }
            for w in all.windows(2) {
                let (a, b) = (s.theta_deg[w[0].0], s.theta_deg[w[1].0]);
                if w[0].1 { prop_assert!(a >= b) } else { prop_assert!(b >= a) }
            }
            prop_assert!(c.amplitude_deg.iter().all(|a| *a >= 0.0));
            prop_assert!(c.period_s.iter().all(|p| *p > 0.0));
        }
    }
}
