//! Denavit–Hartenberg forward kinematics of the arm.
//!
//! Coordinates are in the limb frame of the calibrated base posture: `+x`
//! points distally along the hanging arm, `+y` laterally and `+z = x × y`.
//! With every joint at zero the arm hangs straight down from the shoulder.
//!
//! The chain has seven revolute joints. Rows 0–2 form a spherical shoulder
//! whose product equals `Rz(yaw)·Ry(pitch)·Rx(roll)` of the upper-arm sensor.
//! Row 3 is elbow flexion, row 4 forearm roll, rows 5–6 wrist flexion and
//! deviation. The distal joints are fed from the second sensor's orientation
//! relative to the first, routed by where that sensor is worn.

use core::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, to_rad};
use crate::orientation::{quaternion_to_euler, Quaternion, Vec3};
use crate::therapy::Imu2Placement;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("segment length `{name}` must be positive, got {value}")]
    BadLength { name: &'static str, value: f64 },
    #[error("orientation of {0} is not a unit quaternion")]
    BadOrientation(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimbLengths {
    pub upper_arm_m: f64,
    pub forearm_m: f64,
    pub hand_m: f64,
}

impl Default for LimbLengths {
    fn default() -> Self {
        LimbLengths { upper_arm_m: 0.30, forearm_m: 0.25, hand_m: 0.18 }
    }
}

impl LimbLengths {
    pub fn reach(&self) -> f64 {
        self.upper_arm_m + self.forearm_m + self.hand_m
    }
}

/// Standard DH row: `Rz(θ + theta_offset)·Tz(d)·Tx(a)·Rx(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub alpha_rad: f64,
    pub d: f64,
    pub theta_offset_rad: f64,
}

impl DhRow {
    const fn new(a: f64, alpha_rad: f64, d: f64, theta_offset_rad: f64) -> Self {
        DhRow { a, alpha_rad, d, theta_offset_rad }
    }

    fn transform(&self, theta: f64) -> Transform {
        let t = theta + self.theta_offset_rad;
        let (st, ct) = (math::sin(t), math::cos(t));
        let (sa, ca) = (math::sin(self.alpha_rad), math::cos(self.alpha_rad));
        Transform {
            r: [[ct, -st * ca, st * sa], [st, ct * ca, -ct * sa], [0.0, sa, ca]],
            p: Vec3::new(self.a * ct, self.a * st, self.d),
        }
    }
}

pub const JOINT_COUNT: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimbChain {
    pub lengths: LimbLengths,
    pub shoulder_origin: Vec3,
    pub rows: [DhRow; JOINT_COUNT],
    /// Routes the relative orientation of the second sensor to elbow or wrist joints.
    pub imu2_mount: Imu2Placement,
}

/// Builds the DH table for the given segment lengths; the second sensor is
/// assumed on the forearm until [`LimbChain::with_imu2_mount`] says otherwise.
pub fn build_dh_chain(lengths: LimbLengths, origin: Vec3) -> Result<LimbChain, KinematicsError> {
    for (name, value) in [
        ("upper_arm_m", lengths.upper_arm_m),
        ("forearm_m", lengths.forearm_m),
        ("hand_m", lengths.hand_m),
    ] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(KinematicsError::BadLength { name, value });
        }
    }
    let rows = [
        DhRow::new(0.0, -FRAC_PI_2, 0.0, 0.0),
        DhRow::new(0.0, FRAC_PI_2, 0.0, FRAC_PI_2),
        DhRow::new(0.0, -FRAC_PI_2, lengths.upper_arm_m, 0.0),
        DhRow::new(0.0, -FRAC_PI_2, 0.0, PI),
        DhRow::new(0.0, FRAC_PI_2, lengths.forearm_m, 0.0),
        DhRow::new(0.0, FRAC_PI_2, 0.0, FRAC_PI_2),
        DhRow::new(lengths.hand_m, 0.0, 0.0, 0.0),
    ];
    Ok(LimbChain { lengths, shoulder_origin: origin, rows, imu2_mount: Imu2Placement::Forearm })
}

impl LimbChain {
    pub fn with_imu2_mount(mut self, mount: Imu2Placement) -> Self {
        self.imu2_mount = mount;
        self
    }
}

impl Default for LimbChain {
    fn default() -> Self {
        build_dh_chain(LimbLengths::default(), Vec3::ZERO).expect("default lengths are positive")
    }
}

/// Joint variables in degrees, in DH row order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointAngles {
    pub shoulder_yaw: f64,
    pub shoulder_pitch: f64,
    pub shoulder_roll: f64,
    pub elbow_flexion: f64,
    pub forearm_roll: f64,
    pub wrist_flexion: f64,
    pub wrist_deviation: f64,
}

impl JointAngles {
    fn as_radians(&self) -> [f64; JOINT_COUNT] {
        [
            self.shoulder_yaw,
            self.shoulder_pitch,
            self.shoulder_roll,
            self.elbow_flexion,
            self.forearm_roll,
            self.wrist_flexion,
            self.wrist_deviation,
        ]
        .map(to_rad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointPose {
    pub t_ms: u64,
    pub shoulder: Vec3,
    pub elbow: Vec3,
    pub wrist: Vec3,
    pub hand_tip: Vec3,
}

impl JointPose {
    /// Angle between the upper-arm and forearm directions, in degrees.
    pub fn elbow_angle_deg(&self) -> f64 {
        let (Some(u), Some(f)) =
            ((self.elbow - self.shoulder).normalized(), (self.wrist - self.elbow).normalized())
        else {
            return 0.0;
        };
        math::to_deg(libm::acos(u.dot(f).clamp(-1.0, 1.0)))
    }

    pub fn points(&self) -> [Vec3; 4] {
        [self.shoulder, self.elbow, self.wrist, self.hand_tip]
    }
}

/// Maps the two (calibrated) sensor orientations onto joint variables.
pub fn joint_angles(
    chain: &LimbChain,
    imu1: Quaternion,
    imu2: Quaternion,
) -> Result<JointAngles, KinematicsError> {
    let shoulder = quaternion_to_euler(imu1).map_err(|_| KinematicsError::BadOrientation("IMU1"))?;
    let relative = quaternion_to_euler(imu1.relative_to(imu2))
        .map_err(|_| KinematicsError::BadOrientation("IMU2"))?;
    if quaternion_to_euler(imu2).is_err() {
        return Err(KinematicsError::BadOrientation("IMU2"));
    }
    let (s, r) = (shoulder.angles, relative.angles);
    let mut j = JointAngles {
        shoulder_yaw: s.yaw_deg,
        shoulder_pitch: s.pitch_deg,
        shoulder_roll: s.roll_deg,
        ..JointAngles::default()
    };
    match chain.imu2_mount {
        Imu2Placement::Forearm => {
            j.elbow_flexion = r.pitch_deg;
            j.forearm_roll = r.roll_deg;
        }
        Imu2Placement::HandDorsum => {
            j.forearm_roll = r.roll_deg;
            j.wrist_flexion = r.pitch_deg;
            j.wrist_deviation = r.yaw_deg;
        }
        Imu2Placement::UpperArmOnly => {}
    }
    Ok(j)
}

/// Joint positions for explicit joint variables.
pub fn pose_from_joints(chain: &LimbChain, joints: &JointAngles) -> JointPose {
    let theta = joints.as_radians();
    let mut frame = Transform::translation(chain.shoulder_origin);
    let mut origins = [chain.shoulder_origin; JOINT_COUNT + 1];
    for (i, (row, th)) in chain.rows.iter().zip(theta).enumerate() {
        frame = frame.then(&row.transform(th));
        origins[i + 1] = frame.p;
    }
    JointPose {
        t_ms: 0,
        shoulder: origins[0],
        elbow: origins[3],
        wrist: origins[5],
        hand_tip: origins[7],
    }
}

/// Joint coordinates from the two sensors' calibrated orientations.
pub fn forward_kinematics(
    chain: &LimbChain,
    imu1: Quaternion,
    imu2: Quaternion,
) -> Result<JointPose, KinematicsError> {
    let joints = joint_angles(chain, imu1, imu2)?;
    Ok(pose_from_joints(chain, &joints))
}

#[derive(Debug, Clone, Copy)]
struct Transform {
    r: [[f64; 3]; 3],
    p: Vec3,
}

impl Transform {
    fn translation(p: Vec3) -> Self {
        Transform { r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], p }
    }

    fn apply_rot(&self, v: Vec3) -> Vec3 {
        let r = &self.r;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    /// `self · other`
    fn then(&self, other: &Transform) -> Transform {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.r[i][k] * other.r[k][j]).sum();
            }
        }
        Transform { r, p: self.p + self.apply_rot(other.p) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orientation::Euler;
    use proptest::prelude::*;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        a.distance(b) < tol
    }

    /// Independent construction by composing rotations directly.
    fn oracle(chain: &LimbChain, j: &JointAngles) -> JointPose {
        let l = chain.lengths;
        let q_sh = Euler::new(j.shoulder_yaw, j.shoulder_pitch, j.shoulder_roll).to_quaternion();
        let q_el = q_sh * Quaternion::from_axis_angle(Vec3::Y, to_rad(j.elbow_flexion));
        let q_fr = q_el * Quaternion::from_axis_angle(Vec3::X, to_rad(j.forearm_roll));
        let q_hand = q_fr
            * Quaternion::from_axis_angle(Vec3::Y, to_rad(j.wrist_flexion))
            * Quaternion::from_axis_angle(Vec3::Z, to_rad(j.wrist_deviation));
        let shoulder = chain.shoulder_origin;
        let elbow = shoulder + q_sh.rotate(Vec3::X.scale(l.upper_arm_m));
        let wrist = elbow + q_fr.rotate(Vec3::X.scale(l.forearm_m));
        let hand_tip = wrist + q_hand.rotate(Vec3::X.scale(l.hand_m));
        JointPose { t_ms: 0, shoulder, elbow, wrist, hand_tip }
    }

    #[test]
    fn reach_is_sum_of_lengths() {
        let chain = build_dh_chain(LimbLengths::default(), Vec3::ZERO).unwrap();
        let pose = forward_kinematics(&chain, Quaternion::IDENTITY, Quaternion::IDENTITY).unwrap();
        assert!((pose.hand_tip.distance(pose.shoulder) - 0.73).abs() < 1e-12);
        assert!((chain.lengths.reach() - 0.73).abs() < 1e-12);
    }

    #[test]
    fn zero_pose_hangs_below_shoulder() {
        let origin = Vec3::new(0.1, -0.2, 1.4);
        let chain = build_dh_chain(LimbLengths::default(), origin).unwrap();
        let pose = forward_kinematics(&chain, Quaternion::IDENTITY, Quaternion::IDENTITY).unwrap();
        assert!(close(pose.shoulder, origin, 1e-15));
        assert!(close(pose.elbow, origin + Vec3::new(0.30, 0.0, 0.0), 1e-12));
        assert!(close(pose.wrist, origin + Vec3::new(0.55, 0.0, 0.0), 1e-12));
        assert!(close(pose.hand_tip, origin + Vec3::new(0.73, 0.0, 0.0), 1e-12));
    }

    #[test]
    fn nonpositive_length_rejected() {
        let bad = LimbLengths { upper_arm_m: 0.0, ..LimbLengths::default() };
        assert!(matches!(
            build_dh_chain(bad, Vec3::ZERO),
            Err(KinematicsError::BadLength { name: "upper_arm_m", .. })
        ));
        let bad = LimbLengths { hand_m: -0.1, ..LimbLengths::default() };
        assert!(build_dh_chain(bad, Vec3::ZERO).is_err());
    }

    #[test]
    fn elbow_flexion_ninety() {
        let chain = LimbChain::default();
        let q2 = Euler::new(0.0, 90.0, 0.0).to_quaternion();
        let pose = forward_kinematics(&chain, Quaternion::IDENTITY, q2).unwrap();
        assert!((pose.elbow_angle_deg() - 90.0).abs() < 1e-9);
        let upper = pose.elbow - pose.shoulder;
        let fore = pose.wrist - pose.elbow;
        assert!(upper.dot(fore).abs() < 1e-12);
        // Flexion carries the forearm anteriorly (-z).
        assert!(close(fore, Vec3::new(0.0, 0.0, -0.25), 1e-12));
    }

    #[test]
    fn imu1_yaw_rotates_whole_arm() {
        let chain = LimbChain::default().with_imu2_mount(Imu2Placement::HandDorsum);
        let base = forward_kinematics(&chain, Quaternion::IDENTITY, Quaternion::IDENTITY).unwrap();
        let bend = Euler::new(10.0, 35.0, 0.0).to_quaternion();
        let bent = forward_kinematics(&chain, Quaternion::IDENTITY, bend).unwrap();
        let yaw = Quaternion::from_axis_angle(Vec3::Z, to_rad(30.0));
        for (before, q1, q2) in [(base, yaw, yaw), (bent, yaw, yaw * bend)] {
            let after = forward_kinematics(&chain, q1, q2).unwrap();
            for (p0, p1) in before.points().iter().zip(after.points()) {
                assert!(close(yaw.rotate(*p0), p1, 1e-12));
            }
        }
    }

    #[test]
    fn upper_arm_only_keeps_distal_segments_straight() {
        let chain = LimbChain::default().with_imu2_mount(Imu2Placement::UpperArmOnly);
        let q1 = Euler::new(0.0, 40.0, 0.0).to_quaternion();
        let q2 = Euler::new(50.0, -20.0, 10.0).to_quaternion();
        let pose = forward_kinematics(&chain, q1, q2).unwrap();
        assert!(pose.elbow_angle_deg().abs() < 1e-6);
    }

    #[test]
    fn invalid_orientation() {
        let chain = LimbChain::default();
        let bad = Quaternion::new(0.0, 0.0, 0.0, 0.0);
        assert_eq!(
            forward_kinematics(&chain, bad, Quaternion::IDENTITY),
            Err(KinematicsError::BadOrientation("IMU1"))
        );
        assert!(forward_kinematics(&chain, Quaternion::IDENTITY, bad).is_err());
    }

    proptest! {
        #[test]
        fn dh_chain_matches_rotation_oracle(
            sy in -179.0f64..179.0, sp in -85.0f64..85.0, sr in -179.0f64..179.0,
            el in -150.0f64..150.0, fr in -90.0f64..90.0, wf in -80.0f64..80.0, wd in -40.0f64..40.0,
        ) {
            let chain = LimbChain::default();
            let j = JointAngles {
                shoulder_yaw: sy, shoulder_pitch: sp, shoulder_roll: sr,
                elbow_flexion: el, forearm_roll: fr, wrist_flexion: wf, wrist_deviation: wd,
            };
            let dh = pose_from_joints(&chain, &j);
            let direct = oracle(&chain, &j);
            for (a, b) in dh.points().iter().zip(direct.points()) {
                prop_assert!(close(*a, b, 1e-12), "{:?} vs {:?}", a, b);
            }
        }
    }
}
