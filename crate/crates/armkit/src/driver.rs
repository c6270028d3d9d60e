//! One session from connect to save: drives the state machine from frame
//! timestamps, calibrates, records 50 Hz rows and publishes telemetry.

use armkit_core::kinematics::{forward_kinematics, LimbChain};
use armkit_core::metrics::{
    analyze_series, calibrate_baseline, primary_angle, AngleSeries, Baseline, LiveSnapshot, LiveTracker, MetricConfig,
    MetricsError,
};
use armkit_core::orientation::Vec3;
use armkit_core::protocol::{Device, ImuFrame, Record, PROTOCOL_VERSION};
use armkit_core::session::{
    allowed_events, transition, valid_duration, Mode, SessionEvent, SessionState, TransitionError, COUNTDOWN_S,
    DROPOUT_S, MAX_DURATION_S,
};
use armkit_core::therapy::{Limb, PatientId};
use armkit_core::{Catalog, JointPose, TherapyCode, TherapyDefinition, SAMPLE_RATE_HZ};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session_csv::SessionRow;
use crate::store::{SessionMeta, SessionStore, StopReason, StoreError, META_SCHEMA_VERSION};

/// Length of the still hold used for calibration.
pub const CALIBRATION_S: f64 = 10.0;
/// A live update goes out every this many 50 Hz ticks (10 Hz).
pub const LIVE_EVERY_TICKS: usize = 5;
const TICK_MS: u64 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub patient_id: PatientId,
    pub therapy: TherapyCode,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_arm")]
    pub arm: Limb,
    pub duration_s: f64,
}

fn default_arm() -> Limb {
    Limb::Right
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("session duration must lie in (0, {MAX_DURATION_S}] s, got {0}")]
    InvalidDuration(f64),
    #[error("{0:?} is raised by the session itself, not by the operator")]
    InternalEvent(SessionEvent),
    #[error("unsupported protocol version {0}")]
    ProtocolVersion(u32),
    #[error("calibration failed: {0}")]
    Calibration(MetricsError),
    #[error("cannot compute metrics: {0}")]
    Metrics(MetricsError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TelemetryKind {
    State {
        from: SessionState,
        to: SessionState,
        event: SessionEvent,
        allowed_events: Vec<SessionEvent>,
        #[serde(skip_serializing_if = "Option::is_none")]
        stop_reason: Option<StopReason>,
    },
    Live {
        state: SessionState,
        elapsed_s: f64,
        remaining_s: f64,
        pose: JointPose,
        metrics: LiveSnapshot,
    },
    Warning {
        message: String,
    },
}

/// One message on the live channel. `seq` increases by one per message and
/// `t_ms` (stream clock) never decreases.
#[derive(Debug, Clone, Serialize)]
pub struct Telemetry {
    pub seq: u64,
    pub t_ms: u64,
    #[serde(flatten)]
    pub kind: TelemetryKind,
}

/// Snapshot of a session for status queries.
#[derive(Debug, Clone, Serialize)]
pub struct SessionStatus {
    pub session_id: String,
    #[serde(flatten)]
    pub config: SessionConfig,
    pub state: SessionState,
    pub allowed_events: Vec<SessionEvent>,
    pub rows: usize,
    pub stop_reason: Option<StopReason>,
    pub posture_warning: bool,
    pub last_error: Option<String>,
}

#[derive(Debug)]
pub struct SessionDriver {
    id: String,
    config: SessionConfig,
    def: TherapyDefinition,
    chain: LimbChain,
    state: SessionState,
    /// Latest stream time seen.
    clock_ms: Option<u64>,
    phase_start_ms: u64,
    calibration: Vec<ImuFrame>,
    baseline: Option<Baseline>,
    held: [Option<ImuFrame>; 2],
    run_start_ms: u64,
    next_row_ms: u64,
    target_rows: usize,
    row_count: usize,
    rows: Vec<SessionRow>,
    tracker: LiveTracker,
    stop_reason: Option<StopReason>,
    started_at: Option<DateTime<Utc>>,
    last_error: Option<String>,
    seq: u64,
    last_t_ms: u64,
    out: Vec<Telemetry>,
}

impl SessionDriver {
    pub fn new(id: impl Into<String>, config: SessionConfig, catalog: &Catalog) -> Result<Self, DriverError> {
        if !valid_duration(config.duration_s) {
            return Err(DriverError::InvalidDuration(config.duration_s));
        }
        let def = catalog.lookup(config.therapy).clone();
        Ok(SessionDriver {
            id: id.into(),
            chain: LimbChain::default().with_imu2_mount(def.imu2_placement),
            tracker: LiveTracker::new(&def),
            target_rows: (config.duration_s * SAMPLE_RATE_HZ).round() as usize,
            def,
            config,
            state: SessionState::Idle,
            clock_ms: None,
            phase_start_ms: 0,
            calibration: Vec::new(),
            baseline: None,
            held: [None, None],
            run_start_ms: 0,
            next_row_ms: 0,
            row_count: 0,
            rows: Vec::new(),
            stop_reason: None,
            started_at: None,
            last_error: None,
            seq: 0,
            last_t_ms: 0,
            out: Vec::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn allowed_events(&self) -> Vec<SessionEvent> {
        allowed_events(self.state, self.config.mode).collect()
    }

    pub fn baseline(&self) -> Option<&Baseline> {
        self.baseline.as_ref()
    }

    pub fn rows(&self) -> &[SessionRow] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop_reason
    }

    /// True while frames are wanted: between connect and stop.
    pub fn is_streaming(&self) -> bool {
        matches!(
            self.state,
            SessionState::Connecting | SessionState::Calibrating | SessionState::Countdown | SessionState::Running
        )
    }

    pub fn status(&self) -> SessionStatus {
        SessionStatus {
            session_id: self.id.clone(),
            config: self.config.clone(),
            state: self.state,
            allowed_events: self.allowed_events(),
            rows: self.row_count,
            stop_reason: self.stop_reason,
            posture_warning: self.baseline.is_some_and(|b| b.posture_warning()),
            last_error: self.last_error.clone(),
        }
    }

    /// Telemetry produced since the last call.
    pub fn drain(&mut self) -> Vec<Telemetry> {
        std::mem::take(&mut self.out)
    }

    fn now(&self) -> u64 {
        self.clock_ms.unwrap_or(0)
    }

    fn emit(&mut self, t_ms: u64, kind: TelemetryKind) {
        self.seq += 1;
        self.last_t_ms = self.last_t_ms.max(t_ms);
        self.out.push(Telemetry { seq: self.seq, t_ms: self.last_t_ms, kind });
    }

    /// Adds a warning to the live channel.
    pub fn warn(&mut self, message: String) {
        self.last_error = Some(message.clone());
        let t = self.now();
        self.emit(t, TelemetryKind::Warning { message });
    }

    fn fire(&mut self, event: SessionEvent, t_ms: u64) -> Result<SessionState, TransitionError> {
        let from = self.state;
        let to = transition(from, event, self.config.mode)?;
        self.state = to;
        if to == SessionState::Idle {
            self.reset();
        }
        let allowed = self.allowed_events();
        let stop_reason = (to == SessionState::Stopped).then_some(self.stop_reason).flatten();
        self.emit(t_ms, TelemetryKind::State { from, to, event, allowed_events: allowed, stop_reason });
        Ok(to)
    }

    fn reset(&mut self) {
        self.clock_ms = None;
        self.calibration.clear();
        self.rows.clear();
        self.row_count = 0;
        self.baseline = None;
        self.held = [None, None];
        self.stop_reason = None;
        self.tracker = LiveTracker::new(&self.def);
    }

    /// Operator events: connect, stop and abort. Save and discard go through
    /// [`Self::save`] and [`Self::discard`].
    pub fn handle(&mut self, event: SessionEvent) -> Result<SessionState, DriverError> {
        match event {
            SessionEvent::Connect | SessionEvent::Abort => Ok(self.fire(event, self.now())?),
            SessionEvent::Stop => self.stop(StopReason::UserStop),
            SessionEvent::Discard => self.discard(),
            SessionEvent::Save => Err(DriverError::InternalEvent(event)),
            SessionEvent::LinkUp | SessionEvent::Calibrated | SessionEvent::Start | SessionEvent::TimerExpired => {
                Err(DriverError::InternalEvent(event))
            }
        }
    }

    fn stop(&mut self, reason: StopReason) -> Result<SessionState, DriverError> {
        transition(self.state, SessionEvent::Stop, self.config.mode)?;
        self.stop_reason = Some(reason);
        let event = if reason == StopReason::TimerExpired { SessionEvent::TimerExpired } else { SessionEvent::Stop };
        Ok(self.fire(event, self.now())?)
    }

    pub fn push_record(&mut self, record: &Record) -> Result<(), DriverError> {
        match record {
            Record::Hello { version } if *version != PROTOCOL_VERSION => {
                let err = DriverError::ProtocolVersion(*version);
                self.abort_with(err.to_string());
                Err(err)
            }
            Record::Hello { .. } => Ok(()),
            Record::Sample(f) => {
                self.push_frame(*f);
                Ok(())
            }
            Record::Raw(_) => {
                self.warn("raw frame reached the session without fusion; dropped".into());
                Ok(())
            }
            Record::Bye => {
                self.end_of_stream();
                Ok(())
            }
        }
    }

    fn abort_with(&mut self, message: String) {
        self.warn(message);
        if self.state != SessionState::Idle {
            let _ = self.fire(SessionEvent::Abort, self.now());
        }
    }

    pub fn push_frame(&mut self, frame: ImuFrame) {
        if !self.is_streaming() {
            return;
        }
        let t = frame.t_ms;
        if let Some(last) = self.clock_ms {
            if t as f64 > last as f64 + DROPOUT_S * 1000.0 {
                self.dropout();
                return;
            }
        }
        self.clock_ms = Some(self.clock_ms.map_or(t, |c| c.max(t)));

        if self.state == SessionState::Connecting {
            self.phase_start_ms = t;
            let _ = self.fire(SessionEvent::LinkUp, t);
        }
        if self.state == SessionState::Calibrating {
            let end = self.phase_start_ms + (CALIBRATION_S * 1000.0) as u64;
            if t < end {
                self.calibration.push(frame);
            } else {
                match calibrate_baseline(&self.calibration) {
                    Ok(b) => {
                        self.baseline = Some(b);
                        self.calibration = Vec::new();
                        self.phase_start_ms = end;
                        let _ = self.fire(SessionEvent::Calibrated, end);
                        if b.posture_warning() {
                            self.warn(format!(
                                "posture unsteady during calibration (spread {:.1}°/{:.1}°)",
                                b.spread_deg[0], b.spread_deg[1]
                            ));
                        }
                    }
                    Err(e) => {
                        self.abort_with(DriverError::Calibration(e).to_string());
                        return;
                    }
                }
            }
        }
        if self.state == SessionState::Countdown {
            let start = self.phase_start_ms + (COUNTDOWN_S * 1000.0) as u64;
            if t >= start {
                self.run_start_ms = start;
                self.next_row_ms = start;
                self.started_at = Some(Utc::now());
                let _ = self.fire(SessionEvent::Start, start);
            }
        }
        if self.state == SessionState::Running {
            self.emit_rows_before(t);
        }
        if self.is_streaming() {
            self.held[frame.device.index()] = Some(frame);
        }
    }

    /// Rows for grid times strictly before `t`, from the frames held so far.
    fn emit_rows_before(&mut self, t: u64) {
        while self.state == SessionState::Running && self.next_row_ms < t {
            self.emit_row();
        }
    }

    fn emit_row(&mut self) {
        let r = self.next_row_ms;
        self.next_row_ms += TICK_MS;
        let baseline = self.baseline.unwrap_or_else(Baseline::identity);
        let angles = |d: Device, held: &[Option<ImuFrame>; 2]| held[d.index()].map_or(baseline.offset(d), |f| f.angles);
        let (e1, e2) = (angles(Device::Imu1, &self.held), angles(Device::Imu2, &self.held));
        let q1 = baseline.relative_quaternion(&ImuFrame::new(r, Device::Imu1, e1));
        let q2 = baseline.relative_quaternion(&ImuFrame::new(r, Device::Imu2, e2));
        let theta = primary_angle(&self.def.primary_angle, q1, Some(q2)).unwrap_or(f64::NAN);
        let snapshot = self.tracker.push((r - self.run_start_ms) as f64 / 1000.0, theta);
        if self.config.mode == Mode::Active {
            self.rows.push(SessionRow { t_ms: r, imu1: e1, imu2: e2, theta_deg: theta });
        }
        self.row_count += 1;
        if (self.row_count - 1).is_multiple_of(LIVE_EVERY_TICKS) {
            let pose = self.pose(q1, q2, r);
            let elapsed_s = self.row_count as f64 / SAMPLE_RATE_HZ;
            self.emit(
                r,
                TelemetryKind::Live {
                    state: self.state,
                    elapsed_s,
                    remaining_s: (self.config.duration_s - elapsed_s).max(0.0),
                    pose,
                    metrics: snapshot,
                },
            );
        }
        if self.row_count >= self.target_rows {
            self.stop_reason = Some(StopReason::TimerExpired);
            let _ = self.fire(SessionEvent::TimerExpired, r);
        }
    }

    fn pose(&self, q1: armkit_core::Quaternion, q2: armkit_core::Quaternion, t_ms: u64) -> JointPose {
        let mut pose = forward_kinematics(&self.chain, q1, q2).unwrap_or_else(|_| {
            forward_kinematics(&self.chain, armkit_core::Quaternion::IDENTITY, armkit_core::Quaternion::IDENTITY)
                .expect("identity pose")
        });
        pose.t_ms = t_ms;
        if self.config.arm == Limb::Left {
            let m = |v: Vec3| Vec3::new(v.x, -v.y, v.z);
            pose.shoulder = m(pose.shoulder);
            pose.elbow = m(pose.elbow);
            pose.wrist = m(pose.wrist);
            pose.hand_tip = m(pose.hand_tip);
        }
        pose
    }

    /// The link closed or said BYE.
    pub fn end_of_stream(&mut self) {
        match self.state {
            SessionState::Running => {
                let last = self.now();
                while self.state == SessionState::Running && self.next_row_ms <= last {
                    self.emit_row();
                }
                if self.state == SessionState::Running {
                    self.stop_reason = Some(StopReason::StreamEnded);
                    let _ = self.fire(SessionEvent::Stop, last);
                }
            }
            SessionState::Calibrating | SessionState::Countdown => {
                self.abort_with("stream ended before recording started".into());
            }
            _ => {}
        }
    }

    /// No data for longer than the dropout limit: a running session stops
    /// with the dropout flag, an earlier one is aborted.
    pub fn dropout(&mut self) {
        match self.state {
            SessionState::Running => {
                let last = self.now();
                while self.state == SessionState::Running && self.next_row_ms <= last {
                    self.emit_row();
                }
                if self.state == SessionState::Running {
                    self.warn(format!("no data for more than {DROPOUT_S} s; session stopped"));
                    self.stop_reason = Some(StopReason::Dropout);
                    let _ = self.fire(SessionEvent::Stop, last);
                }
            }
            SessionState::Calibrating | SessionState::Countdown => {
                self.abort_with(format!("no data for more than {DROPOUT_S} s before recording started"));
            }
            _ => {}
        }
    }

    /// Computes the PMV, writes CSV and sidecar, then moves to `Saved`.
    pub fn save(&mut self, store: &SessionStore) -> Result<SessionMeta, DriverError> {
        transition(self.state, SessionEvent::Save, self.config.mode)?;
        let meta = self.build_meta()?;
        store.save(&meta, &self.rows)?;
        self.fire(SessionEvent::Save, self.now())?;
        Ok(meta)
    }

    /// Metadata and PMV for the recorded rows, without touching disk.
    pub fn build_meta(&self) -> Result<SessionMeta, DriverError> {
        let theta: Vec<f64> = self.rows.iter().map(|r| r.theta_deg).collect();
        let series = AngleSeries::uniform(self.config.therapy, 0.0, 1.0 / SAMPLE_RATE_HZ, theta)
            .map_err(DriverError::Metrics)?;
        let analysis = analyze_series(&series, &MetricConfig::for_therapy(&self.def)).map_err(DriverError::Metrics)?;
        let baseline = self.baseline.unwrap_or_else(Baseline::identity);
        let stop_reason = self.stop_reason.unwrap_or(StopReason::UserStop);
        Ok(SessionMeta {
            schema_version: META_SCHEMA_VERSION,
            session_id: self.id.clone(),
            patient_id: self.config.patient_id.clone(),
            therapy: self.config.therapy,
            mode: self.config.mode,
            arm: self.config.arm,
            status: SessionState::Saved,
            started_at: self.started_at.unwrap_or_else(Utc::now),
            duration_s: self.config.duration_s,
            recorded_s: self.rows.len() as f64 / SAMPLE_RATE_HZ,
            rows: self.rows.len(),
            run_start_ms: self.run_start_ms,
            stop_reason,
            dropout: stop_reason == StopReason::Dropout,
            baseline,
            posture_warning: baseline.posture_warning(),
            pmv: analysis.pmv,
            cycles: analysis.cycles.count(),
        })
    }

    pub fn discard(&mut self) -> Result<SessionState, DriverError> {
        let s = self.fire(SessionEvent::Discard, self.now())?;
        self.rows = Vec::new();
        Ok(s)
    }
}
