//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the test
//! harness so the lines always show; exits non-zero if any criterion fails.

use std::collections::HashSet;
use std::time::Instant;

use armkit::cli::reproduction_checks;
use armkit::driver::{SessionConfig, SessionDriver};
use armkit::ingest::LineIngest;
use armkit::sim::{synthesize_session, MotionProfile};
use armkit::store::DataDir;
use armkit_core::kinematics::forward_kinematics;
use armkit_core::metrics::{analyze_series, AngleSeries, MetricConfig};
use armkit_core::orientation::{FilterConfig, MadgwickFilter, Quaternion, RawSample, Vec3};
use armkit_core::protocol::{decode_frame, encode_frame, encode_record, Device, ImuFrame};
use armkit_core::scoring::{build_pom, outcome_value, score_intervention};
use armkit_core::session::{transition, Mode, SessionEvent, SessionState};
use armkit_core::stats::ScoreTable;
use armkit_core::stats::ComparisonReport;
use armkit_core::therapy::{Limb, PatientId};
use armkit_core::{Catalog, Euler, LimbChain, Pmv, TherapyCode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("statistics", statistics),
        ("score grid", score_grid),
        ("scoring oracle", scoring_oracle),
        ("metric recovery", metric_recovery),
        ("orientation convergence", orientation),
        ("kinematics invariants", kinematics),
        ("state machine and session files", state_machine_and_session),
        ("protocol round trip", protocol),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn statistics() -> Outcome {
    let start = Instant::now();
    let report = ComparisonReport::reproduce().expect("fixtures parse");
    let checks = reproduction_checks(&report);
    let elapsed = start.elapsed().as_secs_f64();
    let bad: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| format!("{}={:.4}", c.name, c.value)).collect();
    outcome(
        bad.is_empty() && elapsed < 1.0,
        format!(
            "means {:.3}/{:.3}, r {:.4}, R² {:.4}, t {:.3} (df {}), p {:.3}, F {:.3}, deviation {:.2}..{:.2}, {:.1} ms{}",
            report.mean_system,
            report.mean_pt,
            report.regression.r,
            report.regression.r_squared,
            report.t_test.t,
            report.t_test.df,
            report.t_test.p_two_tailed,
            report.f_test.f,
            report.deviation_min,
            report.deviation_max,
            elapsed * 1e3,
            if bad.is_empty() { String::new() } else { format!("; off: {}", bad.join(", ")) }
        ),
    )
}

/// Every 3-session delta over a small grid, keyed by the outcome counts it
/// produces under an independent sign rule.
fn three_session_witnesses() -> Vec<((usize, usize, usize), [f64; 3])> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                let d = [a as f64 * 0.25, b as f64 * 0.25, c as f64 * 0.25];
                let mut counts = (0, 0, 0);
                for i in 1..3 {
                    for j in 0..i {
                        match (d[i] - d[j]).partial_cmp(&0.0).unwrap() {
                            std::cmp::Ordering::Less => counts.0 += 1,
                            std::cmp::Ordering::Equal => counts.1 += 1,
                            std::cmp::Ordering::Greater => counts.2 += 1,
                        }
                    }
                }
                if seen.insert(counts) {
                    out.push((counts, d));
                }
            }
        }
    }
    out
}

fn score_grid() -> Outcome {
    let table = ScoreTable::system();
    let witnesses = three_session_witnesses();
    let mut cells = 0;
    let mut problems = Vec::new();
    for (code, row) in &table.cells {
        for (p, cell) in row.iter().enumerate() {
            let Some(v) = cell else { continue };
            cells += 1;
            // The table prints two decimals, so 5/3 appears as 1.67.
            let Some(k) = (0..=6).find(|k| round2(*k as f64 / 3.0) == *v) else {
                problems.push(format!("{code}/{} = {v} is not k/3", table.patients[p]));
                continue;
            };
            let found = witnesses.iter().find(|((np, nn, _), _)| 2 * np + nn == k);
            let Some(((np, nn, ng), d)) = found else {
                problems.push(format!("{code}/{}: no 3-session delta scores {v}", table.patients[p]));
                continue;
            };
            let s = score_intervention(&build_pom(d).unwrap());
            if round2(s.score) != *v || (s.score - k as f64 / 3.0).abs() > 1e-12 || (s.counts.n_p, s.counts.n_n, s.counts.n_g) != (*np, *nn, *ng) {
                problems.push(format!("{code}/{}: got {} from {:?}", table.patients[p], s.score, d));
            }
        }
    }
    outcome(problems.is_empty() && cells > 0, format!("{cells} cells reproduced{}", tail(&problems)))
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn tail(problems: &[String]) -> String {
    match problems.first() {
        Some(p) => format!("; {} problems, first: {p}", problems.len()),
        None => String::new(),
    }
}

fn scoring_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut problems = Vec::new();
    for trial in 0..1000 {
        let s: usize = rng.gen_range(2..=8);
        // Draws from a small pool so ties occur.
        let pool: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0)).collect();
        let deltas: Vec<f64> =
            (0..s).map(|_| if rng.gen_bool(0.3) { pool[rng.gen_range(0..4)] } else { rng.gen_range(0.0..2.0) }).collect();
        let pom = build_pom(&deltas).unwrap();
        let got = score_intervention(&pom);
        // Brute force: G·P summed over outcome values 0, 1, 2.
        let mut count = [0usize; 3];
        let mut n = 0;
        for i in 0..s {
            for j in 0..i {
                count[outcome_value(deltas[i] - deltas[j]) as usize] += 1;
                n += 1;
            }
        }
        let want: f64 = (0..3).map(|g| g as f64 * count[g] as f64 / n as f64).sum();
        worst = worst.max((got.score - want).abs());
        if n != (s * s - s) / 2 || pom.n_considered() != n || got.counts.total() != n {
            problems.push(format!("trial {trial}: N mismatch for |S|={s}"));
        }
    }
    outcome(worst <= 1e-12 && problems.is_empty(), format!("1000 deltas, max |error| {worst:.1e}{}", tail(&problems)))
}

/// Runs a simulated session through the wire format and the driver and
/// returns the PMV of the recorded rows.
fn recorded_pmv(noise_deg: f64, seed: u64) -> Pmv {
    let cat = Catalog::builtin();
    let profile = MotionProfile {
        therapy: TherapyCode::WristFlexion,
        amplitude_fraction: 0.5,
        frequency_hz: 0.5,
        duration_s: 60.0,
        noise_std_deg: noise_deg,
        hold_s: 20.0,
        ..MotionProfile::default()
    };
    let config = SessionConfig {
        patient_id: PatientId("p1".into()),
        therapy: TherapyCode::WristFlexion,
        mode: Mode::Active,
        arm: Limb::Right,
        duration_s: 60.0,
    };
    let mut d = SessionDriver::new("metric-recovery", config, &cat).unwrap();
    d.handle(SessionEvent::Connect).unwrap();
    let mut ingest = LineIngest::default();
    for r in synthesize_session(profile, &cat, seed).unwrap().records() {
        ingest.feed(&mut d, &encode_record(&r)).unwrap();
    }
    armkit::analysis::analyze_rows(d.rows(), cat.lookup(TherapyCode::WristFlexion)).unwrap().pmv
}

fn metric_recovery() -> Outcome {
    let targets = |p: &Pmv| {
        [
            ("RR", p.rr_per_min, 30.0, 0.5),
            ("WP", p.wp_s, 2.0, 0.05),
            ("WA", p.wa_deg, 40.0, 0.5),
            ("RMS", p.rms_deg, 28.28, 0.3),
            ("WV", p.wv_deg_per_s, 80.0, 2.0),
        ]
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, noise, scale) in [("clean", 0.0, 1.0), ("σ=1°", 1.0, 3.0)] {
        let pmv = recorded_pmv(noise, 11);
        let mut line = Vec::new();
        for (name, got, want, tol) in targets(&pmv) {
            let ok = (got - want).abs() <= tol * scale;
            pass &= ok;
            line.push(format!("{name} {got:.3}{}", if ok { "" } else { "!" }));
        }
        parts.push(format!("{label}: {}", line.join(" ")));
    }
    // The same figures straight from an ideal sampled sine.
    let theta: Vec<f64> = (0..3000).map(|i| 40.0 * (std::f64::consts::PI * i as f64 / 50.0).sin()).collect();
    let series = AngleSeries::uniform(TherapyCode::WristFlexion, 0.0, 0.02, theta).unwrap();
    let def = Catalog::builtin().lookup(TherapyCode::WristFlexion).clone();
    let ideal = analyze_series(&series, &MetricConfig::for_therapy(&def)).unwrap().pmv;
    let mut line = Vec::new();
    for (name, got, want, tol) in targets(&ideal) {
        let ok = (got - want).abs() <= tol;
        pass &= ok;
        line.push(format!("{name} {got:.3}{}", if ok { "" } else { "!" }));
    }
    parts.push(format!("ideal sine: {}", line.join(" ")));
    outcome(pass, parts.join("; "))
}

fn random_unit(rng: &mut impl Rng) -> Quaternion {
    loop {
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 0.1 && n <= 1.0 {
            return q.scale(1.0 / n);
        }
    }
}

fn orientation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        // Device lying level at a random heading; filter starts anywhere.
        let heading: f64 = rng.gen_range(-180.0..180.0);
        let truth = Euler::new(heading, 0.0, 0.0).to_quaternion();
        let field = Vec3::new(0.6, 0.0, -0.8);
        let sample = RawSample {
            accel_g: truth.conjugate().rotate(Vec3::Z),
            gyro_dps: Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)),
            mag: Some(truth.conjugate().rotate(field)),
        };
        let mut f = MadgwickFilter::with_state(FilterConfig::default(), random_unit(&mut rng));
        for _ in 0..500 {
            f.update(&sample, 0.02).unwrap();
        }
        let e = f.euler();
        worst = worst.max(e.pitch_deg.abs()).max(e.roll_deg.abs());
    }
    outcome(worst < 5.0, format!("20 starts, worst pitch/roll after 10 s {worst:.3}°"))
}

fn kinematics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let chain = LimbChain::default();
    let l = chain.lengths;
    let (mut len_err, mut equi_err): (f64, f64) = (0.0, 0.0);
    let mut pairs = 0;
    while pairs < 1000 {
        let q1 = random_unit(&mut rng);
        let q2 = random_unit(&mut rng);
        let r = random_unit(&mut rng);
        let (Ok(a), Ok(b)) = (forward_kinematics(&chain, q1, q2), forward_kinematics(&chain, r * q1, r * q2)) else {
            continue;
        };
        // Keep the shoulder sensor away from the ±90° pitch singularity.
        if pitch_of(q1).abs() > 85.0 || pitch_of(r * q1).abs() > 85.0 {
            continue;
        }
        pairs += 1;
        for pose in [&a, &b] {
            let segs = [(pose.shoulder, pose.elbow, l.upper_arm_m), (pose.elbow, pose.wrist, l.forearm_m), (pose.wrist, pose.hand_tip, l.hand_m)];
            for (p, q, want) in segs {
                len_err = len_err.max((p.distance(q) - want).abs());
            }
        }
        for (pa, pb) in a.points().iter().zip(b.points()) {
            let rotated = r.rotate(*pa - a.shoulder) + a.shoulder;
            equi_err = equi_err.max(rotated.distance(pb));
        }
    }
    outcome(
        len_err <= 1e-9 && equi_err <= 1e-9,
        format!("{pairs} pairs, max length error {len_err:.1e} m, max equivariance error {equi_err:.1e} m"),
    )
}

fn pitch_of(q: Quaternion) -> f64 {
    let s = (2.0 * (q.w * q.y - q.z * q.x)).clamp(-1.0, 1.0);
    s.asin().to_degrees()
}

/// The legal transitions, written out by hand.
fn legal(state: SessionState, event: SessionEvent, mode: Mode) -> Option<SessionState> {
    use SessionEvent as E;
    use SessionState as S;
    let table: &[(S, E, Option<Mode>, S)] = &[
        (S::Idle, E::Connect, None, S::Connecting),
        (S::Connecting, E::LinkUp, None, S::Calibrating),
        (S::Calibrating, E::Calibrated, None, S::Countdown),
        (S::Countdown, E::Start, None, S::Running),
        (S::Running, E::Stop, None, S::Stopped),
        (S::Running, E::TimerExpired, None, S::Stopped),
        (S::Stopped, E::Save, Some(Mode::Active), S::Saved),
        (S::Stopped, E::Discard, Some(Mode::Active), S::Discarded),
    ];
    if event == E::Abort {
        return Some(S::Idle);
    }
    table.iter().find(|(s, e, m, _)| *s == state && *e == event && m.is_none_or(|m| m == mode)).map(|t| t.3)
}

fn state_machine_and_session() -> Outcome {
    let mut mismatches = 0;
    let mut pairs = 0;
    for mode in [Mode::Active, Mode::Passive] {
        for s in SessionState::ALL {
            for e in SessionEvent::ALL {
                pairs += 1;
                if transition(s, e, mode).ok() != legal(s, e, mode) {
                    mismatches += 1;
                }
            }
        }
    }

    let tmp = tempfile::tempdir().unwrap();
    let data = DataDir::open(tmp.path()).unwrap();
    let cat = Catalog::builtin();
    let run = |seed| {
        let config = SessionConfig {
            patient_id: PatientId("p1".into()),
            therapy: TherapyCode::ShoulderFlexion,
            mode: Mode::Active,
            arm: Limb::Right,
            duration_s: 180.0,
        };
        let mut d = SessionDriver::new(format!("accept-{seed}"), config, &cat).unwrap();
        d.handle(SessionEvent::Connect).unwrap();
        let p = MotionProfile { therapy: TherapyCode::ShoulderFlexion, duration_s: 180.0, hold_s: 20.0, ..MotionProfile::default() };
        let mut ingest = LineIngest::default();
        for r in synthesize_session(p, &cat, seed).unwrap().records() {
            ingest.feed(&mut d, &encode_record(&r)).unwrap();
        }
        d
    };
    let mut saved = run(1);
    let meta = saved.save(&data.sessions()).unwrap();
    let csv = std::fs::read_to_string(data.sessions().csv_path(&meta.session_id)).unwrap();
    let rows = csv.lines().count() - 1;
    let sidecar = data.sessions().meta_path(&meta.session_id).exists();
    let rows_ok = rows.abs_diff(9000) <= 1 && meta.rows == rows;

    let before = std::fs::read_dir(data.sessions_dir()).unwrap().count();
    let mut discarded = run(2);
    discarded.discard().unwrap();
    let after = std::fs::read_dir(data.sessions_dir()).unwrap().count();
    let fresh = tempfile::tempdir().unwrap();
    let _fresh_data = DataDir::open(fresh.path()).unwrap();
    let mut alone = run(3);
    alone.discard().unwrap();
    let leftover = walk(fresh.path());

    outcome(
        mismatches == 0 && rows_ok && sidecar && before == after && leftover == 0,
        format!(
            "{pairs} (state, event, mode) cells, {mismatches} mismatches; 180 s session saved {rows} rows, sidecar {}; discard left {leftover} files",
            if sidecar { "present" } else { "missing" }
        ),
    )
}

fn walk(dir: &std::path::Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p)
            } else {
                1
            }
        })
        .sum()
}

fn protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..10_000 {
        let device = if rng.gen_bool(0.5) { Device::Imu1 } else { Device::Imu2 };
        let f = ImuFrame::new(
            rng.gen_range(0..u32::MAX as u64),
            device,
            Euler::new(rng.gen_range(-180.0..180.0), rng.gen_range(-90.0..=90.0), rng.gen_range(-180.0..180.0)),
        );
        match decode_frame(&encode_frame(&f)) {
            Ok(g) if g.t_ms == f.t_ms && g.device == f.device => {
                for (a, b) in [
                    (f.angles.yaw_deg, g.angles.yaw_deg),
                    (f.angles.pitch_deg, g.angles.pitch_deg),
                    (f.angles.roll_deg, g.angles.roll_deg),
                ] {
                    let d = (a - b).rem_euclid(360.0);
                    worst = worst.max(d.min(360.0 - d));
                }
            }
            _ => failures += 1,
        }
    }
    outcome(
        failures == 0 && worst <= 0.005 + 1e-9,
        format!("10000 frames, {failures} failures, max angle error {worst:.5}°"),
    )
}
