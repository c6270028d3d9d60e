use serde::{Deserialize, Serialize};

use super::cycles::ZigZag;
use super::{CycleParams, MetricConfig};
use crate::therapy::TherapyDefinition;

/// Dashboard figures while a session runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiveSnapshot {
    pub current_rom_deg: f64,
    pub reps_so_far: u32,
    pub mmad_min_deg: f64,
    pub mmad_max_deg: f64,
    pub approved_rom_deg: [f64; 2],
    pub elapsed_s: f64,
    pub theta_deg: f64,
}

/// Incremental counterpart of the offline metrics; every reported figure is monotone.
#[derive(Debug, Clone)]
pub struct LiveTracker {
    approved: [f64; 2],
    zigzag: ZigZag,
    smoothing: usize,
    window: alloc::collections::VecDeque<f64>,
    reps: u32,
    min: f64,
    max: f64,
    t0: Option<f64>,
    last: LiveSnapshot,
}

impl LiveTracker {
    pub fn new(def: &TherapyDefinition) -> Self {
        Self::with_params(def.approved_rom(), MetricConfig::for_therapy(def).cycles, MetricConfig::DEFAULT_SMOOTHING)
    }

    pub fn with_params(approved: [f64; 2], params: CycleParams, smoothing: usize) -> Self {
        LiveTracker {
            approved,
            zigzag: ZigZag::new(params.min_prominence_deg.max(f64::MIN_POSITIVE)),
            smoothing: smoothing.max(1),
            window: alloc::collections::VecDeque::new(),
            reps: 0,
            min: 0.0,
            max: 0.0,
            t0: None,
            last: LiveSnapshot {
                current_rom_deg: 0.0,
                reps_so_far: 0,
                mmad_min_deg: 0.0,
                mmad_max_deg: 0.0,
                approved_rom_deg: approved,
                elapsed_s: 0.0,
                theta_deg: 0.0,
            },
        }
    }

    pub fn push(&mut self, t_s: f64, theta_deg: f64) -> LiveSnapshot {
        let t0 = *self.t0.get_or_insert(t_s);
        if self.window.is_empty() {
            self.min = theta_deg;
            self.max = theta_deg;
        }
        self.min = self.min.min(theta_deg);
        self.max = self.max.max(theta_deg);

        // Trailing average: reps lag by half a window but never flicker.
        self.window.push_back(theta_deg);
        if self.window.len() > self.smoothing {
            self.window.pop_front();
        }
        let smooth = self.window.iter().sum::<f64>() / self.window.len() as f64;
        if self.zigzag.push_is_peak(smooth) {
            self.reps += 1;
        }

        self.last = LiveSnapshot {
            current_rom_deg: self.max - self.min,
            reps_so_far: self.reps,
            mmad_min_deg: self.min,
            mmad_max_deg: self.max,
            approved_rom_deg: self.approved,
            elapsed_s: (t_s - t0).max(self.last.elapsed_s),
            theta_deg,
        };
        self.last
    }

    pub fn snapshot(&self) -> LiveSnapshot {
        self.last
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use crate::therapy::{Catalog, TherapyCode};
    use core::f64::consts::PI;
    use proptest::prelude::*;

    #[test]
    fn starts_at_zero() {
        let cat = Catalog::builtin();
        let tr = LiveTracker::new(cat.lookup(TherapyCode::WristFlexion));
        let s = tr.snapshot();
        assert_eq!((s.reps_so_far, s.current_rom_deg, s.elapsed_s), (0, 0.0, 0.0));
        assert_eq!(s.approved_rom_deg, [80.0, 80.0]);
    }

    #[test]
    fn one_cycle() {
        let cat = Catalog::builtin();
        let mut tr = LiveTracker::new(cat.lookup(TherapyCode::WristFlexion));
        let mut s = tr.snapshot();
        // One full cycle plus the quarter needed to confirm the trough.
        for i in 0..=125 {
            let t = i as f64 * 0.02;
            s = tr.push(t, 40.0 * math::sin(PI * t));
        }
        assert_eq!(s.reps_so_far, 1);
        assert!((s.mmad_min_deg + 40.0).abs() < 1e-9);
        assert!((s.mmad_max_deg - 40.0).abs() < 1e-9);
        assert!((s.current_rom_deg - 80.0).abs() < 1e-9);
        assert!((s.elapsed_s - 2.5).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn monotone(xs in proptest::collection::vec(-90.0f64..90.0, 1..500)) {
            let mut tr = LiveTracker::with_params([80.0, 80.0], CycleParams { min_prominence_deg: 8.0, min_period_s: 0.4 }, 5);
            let mut prev = tr.snapshot();
            for (i, x) in xs.iter().enumerate() {
                let s = tr.push(i as f64 * 0.02, *x);
                if i > 0 {
                    prop_assert!(s.reps_so_far >= prev.reps_so_far);
                    prop_assert!(s.mmad_min_deg <= prev.mmad_min_deg);
                    prop_assert!(s.mmad_max_deg >= prev.mmad_max_deg);
                    prop_assert!(s.elapsed_s >= prev.elapsed_s);
                }
                prop_assert!((s.current_rom_deg - (s.mmad_max_deg - s.mmad_min_deg)).abs() < 1e-12);
                prev = s;
            }
        }
    }
}
