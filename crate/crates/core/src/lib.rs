//! Motion-analytics core for two-IMU upper-limb rehabilitation.
//!
//! Everything in this crate is pure computation: the therapy catalog, the
//! line-oriented wire codec, Madgwick orientation fusion, Denavit–Hartenberg
//! forward kinematics of the arm, per-session performance metrics, progress
//! scoring and the statistics used to compare system scores with therapist
//! scores. File formats, networking and the CLI live in the `armkit` crate.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]
// NaN must fail these checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub(crate) mod math;

pub mod kinematics;
pub mod metrics;
pub mod orientation;
pub mod protocol;
pub mod scoring;
pub mod session;
pub mod stats;
pub mod therapy;

pub use kinematics::{JointPose, LimbChain};
pub use metrics::{AngleSeries, CycleSet, Pmv};
pub use orientation::{Euler, Quaternion};
pub use protocol::{Device, ImuFrame};
pub use scoring::{Rpmv, ScoreReport};
pub use therapy::{Catalog, TherapyCode, TherapyDefinition};

/// Nominal sample rate of every resampled series, in Hz.
pub const SAMPLE_RATE_HZ: f64 = 50.0;
