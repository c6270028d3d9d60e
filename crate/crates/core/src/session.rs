//! Session lifecycle as a pure transition function.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Countdown between calibration and the start of recording.
pub const COUNTDOWN_S: f64 = 10.0;
/// Longest session the timer accepts.
pub const MAX_DURATION_S: f64 = 1800.0;
/// Silence on the link after which a running session stops itself.
pub const DROPOUT_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Idle,
    Connecting,
    Calibrating,
    Countdown,
    Running,
    Stopped,
    Saved,
    Discarded,
}

impl SessionState {
    pub const ALL: [SessionState; 8] = [
        SessionState::Idle,
        SessionState::Connecting,
        SessionState::Calibrating,
        SessionState::Countdown,
        SessionState::Running,
        SessionState::Stopped,
        SessionState::Saved,
        SessionState::Discarded,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Saved | SessionState::Discarded)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionEvent {
    Connect,
    /// First data from the wearable.
    LinkUp,
    Calibrated,
    /// Countdown elapsed.
    Start,
    TimerExpired,
    Stop,
    Save,
    Discard,
    Abort,
}

impl SessionEvent {
    pub const ALL: [SessionEvent; 9] = [
        SessionEvent::Connect,
        SessionEvent::LinkUp,
        SessionEvent::Calibrated,
        SessionEvent::Start,
        SessionEvent::TimerExpired,
        SessionEvent::Stop,
        SessionEvent::Save,
        SessionEvent::Discard,
        SessionEvent::Abort,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Patient performs the motion; data may be saved and scored.
    #[default]
    Active,
    /// Therapist demonstrates; nothing is kept.
    Passive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal transition: {event:?} in state {state:?} ({mode:?} mode)")]
pub struct TransitionError {
    pub state: SessionState,
    pub event: SessionEvent,
    pub mode: Mode,
}

/// Next state, or an error that leaves the caller's state untouched.
pub fn transition(state: SessionState, event: SessionEvent, mode: Mode) -> Result<SessionState, TransitionError> {
    use SessionEvent as E;
    use SessionState as S;
    let next = match (state, event) {
        (_, E::Abort) => Some(S::Idle),
        (S::Idle, E::Connect) => Some(S::Connecting),
        (S::Connecting, E::LinkUp) => Some(S::Calibrating),
        (S::Calibrating, E::Calibrated) => Some(S::Countdown),
        (S::Countdown, E::Start) => Some(S::Running),
        (S::Running, E::Stop | E::TimerExpired) => Some(S::Stopped),
        (S::Stopped, E::Save) if mode == Mode::Active => Some(S::Saved),
        (S::Stopped, E::Discard) if mode == Mode::Active => Some(S::Discarded),
        _ => None,
    };
    next.ok_or(TransitionError { state, event, mode })
}

/// Events accepted in a state, in [`SessionEvent::ALL`] order.
pub fn allowed_events(state: SessionState, mode: Mode) -> impl Iterator<Item = SessionEvent> {
    SessionEvent::ALL.into_iter().filter(move |e| transition(state, *e, mode).is_ok())
}

/// Timer setting must lie in (0, 30 min].
pub fn valid_duration(duration_s: f64) -> bool {
    duration_s > 0.0 && duration_s <= MAX_DURATION_S
}
