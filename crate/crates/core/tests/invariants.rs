use armkit_core::kinematics::forward_kinematics;
use armkit_core::protocol::{decode_record, encode_record, Device, Record};
use armkit_core::scoring::{build_pom, score_intervention, TherapyScore, MAX_INTERVENTION_SCORE};
use armkit_core::session::{allowed_events, transition, Mode, SessionEvent, SessionState};
use armkit_core::{Catalog, Euler, ImuFrame, LimbChain, TherapyCode};
use proptest::prelude::*;

fn device() -> impl Strategy<Value = Device> {
    prop_oneof![Just(Device::Imu1), Just(Device::Imu2)]
}

proptest! {
    #[test]
    fn sample_records_survive_the_wire(
        t in 0u64..10_000_000, dev in device(),
        yaw in -180.0f64..180.0, pitch in -90.0f64..=90.0, roll in -180.0f64..180.0,
    ) {
        let frame = ImuFrame::new(t, dev, Euler::new(yaw, pitch, roll));
        let line = encode_record(&Record::Sample(frame));
        let Record::Sample(back) = decode_record(&line).unwrap() else { panic!("{line}") };
        prop_assert_eq!(back.t_ms, t);
        prop_assert_eq!(back.device, dev);
        // Re-encoding a decoded frame is a fixed point.
        prop_assert_eq!(encode_record(&Record::Sample(back)), line);
    }

    #[test]
    fn intervention_scores_stay_in_range(deltas in proptest::collection::vec(0.0f64..3.0, 2..12)) {
        let s = score_intervention(&build_pom(&deltas).unwrap());
        prop_assert!((0.0..=MAX_INTERVENTION_SCORE).contains(&s.score));
        let p = s.probabilities;
        prop_assert!((p.positive + p.neutral + p.negative - 1.0).abs() < 1e-12);
        let t = TherapyScore::from_deltas(TherapyCode::ElbowFlexion, &deltas).unwrap();
        prop_assert_eq!(t.score, s.score);
    }

    #[test]
    fn reversing_the_sessions_mirrors_the_score(deltas in proptest::collection::vec(0.0f64..3.0, 2..10)) {
        let fwd = score_intervention(&build_pom(&deltas).unwrap()).score;
        let rev: Vec<f64> = deltas.iter().rev().copied().collect();
        let back = score_intervention(&build_pom(&rev).unwrap()).score;
        prop_assert!((fwd + back - MAX_INTERVENTION_SCORE).abs() < 1e-12);
    }

    #[test]
    fn pose_keeps_segment_lengths(
        y1 in -179.0f64..179.0, p1 in -85.0f64..85.0, r1 in -179.0f64..179.0,
        y2 in -179.0f64..179.0, p2 in -85.0f64..85.0, r2 in -179.0f64..179.0,
    ) {
        let chain = LimbChain::default();
        let pose = forward_kinematics(&chain, Euler::new(y1, p1, r1).to_quaternion(), Euler::new(y2, p2, r2).to_quaternion()).unwrap();
        let l = chain.lengths;
        prop_assert!((pose.shoulder.distance(pose.elbow) - l.upper_arm_m).abs() < 1e-9);
        prop_assert!((pose.elbow.distance(pose.wrist) - l.forearm_m).abs() < 1e-9);
        prop_assert!((pose.wrist.distance(pose.hand_tip) - l.hand_m).abs() < 1e-9);
    }
}

#[test]
fn every_state_is_reachable_and_abort_always_resets() {
    for mode in [Mode::Active, Mode::Passive] {
        let mut seen = vec![SessionState::Idle];
        let mut frontier = vec![SessionState::Idle];
        while let Some(s) = frontier.pop() {
            assert_eq!(transition(s, SessionEvent::Abort, mode), Ok(SessionState::Idle));
            for e in allowed_events(s, mode) {
                let next = transition(s, e, mode).unwrap();
                if !seen.contains(&next) {
                    seen.push(next);
                    frontier.push(next);
                }
            }
        }
        let expect = if mode == Mode::Active { 8 } else { 6 };
        assert_eq!(seen.len(), expect, "{mode:?}: {seen:?}");
    }
}

#[test]
fn builtin_catalog_covers_every_code() {
    let cat = Catalog::builtin();
    for code in TherapyCode::ALL {
        let def = cat.lookup(code);
        assert_eq!(def.code, code);
        assert!(def.approved_rom_min_deg > 0.0 && def.approved_rom_min_deg <= def.approved_rom_max_deg);
    }
}
