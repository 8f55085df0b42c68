//! Device lifecycle state machine.

use cyton_core::codec::DeviceCommand;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaemonState {
    #[default]
    Idle,
    Streaming,
    Paused,
    DeviceLost,
}

impl DaemonState {
    /// Whether a stream anchor may exist in this state.
    pub fn is_acquiring(self) -> bool {
        matches!(self, DaemonState::Streaming | DaemonState::Paused)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Start,
    Stop,
    Pause,
    Resume,
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Command(Command),
    TransportClosed,
    Reconnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Send(DeviceCommand),
    /// Capture the anchor when the next frame is decoded.
    ArmAnchor,
    DropAnchor,
    BeginBackoff,
    /// Soft-reset the board and wait for its banner before anything else.
    Handshake,
    /// Issue a start once the handshake is over.
    AutoRestart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{event:?} is not valid while {state:?}")]
pub struct StateError {
    pub state: DaemonState,
    pub event: Event,
}

#[derive(Debug, Clone, Default)]
pub struct Lifecycle {
    state: DaemonState,
    resume_after_reconnect: bool,
}

impl Lifecycle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> DaemonState {
        self.state
    }

    /// Apply `event`. On error the machine is unchanged.
    pub fn apply(&mut self, event: Event) -> Result<Vec<Action>, StateError> {
        let (next, actions) = transition(self.state, event)?;
        match event {
            Event::TransportClosed => {
                if self.state != DaemonState::DeviceLost {
                    self.resume_after_reconnect = self.state.is_acquiring();
                }
            }
            Event::Reconnected => {}
            Event::Command(_) => self.resume_after_reconnect = false,
        }
        let mut actions = actions;
        if event == Event::Reconnected && std::mem::take(&mut self.resume_after_reconnect) {
            actions.push(Action::AutoRestart);
        }
        self.state = next;
        Ok(actions)
    }
}

/// The bare transition table. `AutoRestart` depends on history and is
/// added by [`Lifecycle`].
pub fn transition(state: DaemonState, event: Event) -> Result<(DaemonState, Vec<Action>), StateError> {
    use Command::*;
    use DaemonState::*;
    let ok = |s, a: &[Action]| Ok((s, a.to_vec()));
    match (state, event) {
        (_, Event::TransportClosed) => ok(DeviceLost, &[Action::DropAnchor, Action::BeginBackoff]),
        (DeviceLost, Event::Reconnected) => ok(Idle, &[Action::Handshake]),
        (Idle, Event::Command(Start)) => ok(Streaming, &[Action::Send(DeviceCommand::StartStream), Action::ArmAnchor]),
        (Streaming, Event::Command(Pause)) => ok(Paused, &[]),
        (Paused, Event::Command(Resume)) => ok(Streaming, &[]),
        (Streaming | Paused, Event::Command(Stop)) => ok(Idle, &[Action::Send(DeviceCommand::StopStream), Action::DropAnchor]),
        (Idle | Streaming | Paused, Event::Command(Reset)) => ok(Idle, &[Action::DropAnchor, Action::Handshake]),
        _ => Err(StateError { state, event }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STATES: [DaemonState; 4] = [
        DaemonState::Idle,
        DaemonState::Streaming,
        DaemonState::Paused,
        DaemonState::DeviceLost,
    ];

    #[test]
    fn table_rows() {
        let cmd = |c| Event::Command(c);
        let cases = [
            (DaemonState::Idle, cmd(Command::Start), Some(DaemonState::Streaming)),
            (DaemonState::Idle, cmd(Command::Pause), None),
            (DaemonState::Idle, cmd(Command::Stop), None),
            (DaemonState::Idle, cmd(Command::Resume), None),
            (DaemonState::Idle, cmd(Command::Reset), Some(DaemonState::Idle)),
            (DaemonState::Streaming, cmd(Command::Start), None),
            (DaemonState::Streaming, cmd(Command::Pause), Some(DaemonState::Paused)),
            (DaemonState::Streaming, cmd(Command::Resume), None),
            (DaemonState::Streaming, cmd(Command::Stop), Some(DaemonState::Idle)),
            (DaemonState::Paused, cmd(Command::Resume), Some(DaemonState::Streaming)),
            (DaemonState::Paused, cmd(Command::Pause), None),
            (DaemonState::Paused, cmd(Command::Stop), Some(DaemonState::Idle)),
            (DaemonState::DeviceLost, cmd(Command::Start), None),
            (DaemonState::DeviceLost, cmd(Command::Reset), None),
            (DaemonState::DeviceLost, Event::Reconnected, Some(DaemonState::Idle)),
            (DaemonState::Idle, Event::Reconnected, None),
        ];
        for (state, event, want) in cases {
            assert_eq!(transition(state, event).ok().map(|r| r.0), want, "{state:?} + {event:?}");
        }
        for s in STATES {
            assert_eq!(transition(s, Event::TransportClosed).unwrap().0, DaemonState::DeviceLost);
        }
    }

    #[test]
    fn start_sends_b_and_stop_sends_s() {
        let (_, a) = transition(DaemonState::Idle, Event::Command(Command::Start)).unwrap();
        assert_eq!(a, vec![Action::Send(DeviceCommand::StartStream), Action::ArmAnchor]);
        let (_, a) = transition(DaemonState::Paused, Event::Command(Command::Stop)).unwrap();
        assert!(a.contains(&Action::Send(DeviceCommand::StopStream)));
        let (_, a) = transition(DaemonState::Streaming, Event::Command(Command::Pause)).unwrap();
        assert!(a.is_empty(), "pause never touches the device");
    }

    #[test]
    fn rejected_event_leaves_machine_untouched() {
        let mut m = Lifecycle::new();
        let err = m.apply(Event::Command(Command::Pause)).unwrap_err();
        assert_eq!(err.state, DaemonState::Idle);
        assert_eq!(m.state(), DaemonState::Idle);
    }

    #[test]
    fn restarts_after_reconnect_only_if_it_was_acquiring() {
        let mut m = Lifecycle::new();
        m.apply(Event::Command(Command::Start)).unwrap();
        m.apply(Event::Command(Command::Pause)).unwrap();
        m.apply(Event::TransportClosed).unwrap();
        // a second closure report while lost must not forget the history
        m.apply(Event::TransportClosed).unwrap();
        let a = m.apply(Event::Reconnected).unwrap();
        assert_eq!(m.state(), DaemonState::Idle);
        assert_eq!(a, vec![Action::Handshake, Action::AutoRestart]);

        let mut m = Lifecycle::new();
        m.apply(Event::TransportClosed).unwrap();
        assert_eq!(m.apply(Event::Reconnected).unwrap(), vec![Action::Handshake]);
    }
}
