//! Live administration of a [`SessionPlan`].
//!
//! The schedule is fixed by the plan: responses are logged but never move
//! stimulus onsets. One session task owns the state and the log; client
//! messages arrive through a [`ParticipantPort`].

pub mod clock;
pub mod log;
pub mod wire;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::protocol::{validate_plan, HandCondition, SessionPlan};
pub use clock::{Clock, SystemClock, VirtualClock};
pub use log::{
    check_conformance, conformance_violations, Conformance, ConformanceError, ConformanceViolation,
    Event, EventLog, EventRecord, LogHeader, LogIoError, LOG_FORMAT,
};
pub use wire::{ClientMessage, ServerMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PortError {
    #[error("participant disconnected")]
    Disconnected,
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("plan is invalid: {0}")]
    InvalidPlan(String),
}

/// Transport to the participant-facing UI.
pub trait ParticipantPort {
    /// Deliver `msg`, issued at session time `t_us`.
    fn send(&mut self, msg: &ServerMessage, t_us: i64) -> Result<(), PortError>;

    /// Next client message, or `None` once `deadline_us` is reached. With no
    /// deadline, waits indefinitely. Advances `clock` as it waits.
    fn recv_until(
        &mut self,
        clock: &mut dyn Clock,
        deadline_us: Option<i64>,
    ) -> Result<Option<ClientMessage>, PortError>;
}

/// A scripted participant: sees every server message and answers with
/// client messages stamped at absolute session times.
pub trait Responder {
    fn on_message(&mut self, msg: &ServerMessage, t_us: i64) -> Vec<(i64, ClientMessage)>;
}

/// Presses nothing and confirms each cue after a fixed delay.
#[derive(Debug, Clone)]
pub struct SilentResponder {
    pub ack_delay_ms: u32,
}

impl Responder for SilentResponder {
    fn on_message(&mut self, msg: &ServerMessage, t_us: i64) -> Vec<(i64, ClientMessage)> {
        match msg {
            ServerMessage::Cue { .. } => {
                vec![(t_us + i64::from(self.ack_delay_ms) * 1000, ClientMessage::Ready)]
            }
            _ => Vec::new(),
        }
    }
}

/// In-process port for a [`Responder`] on a virtual clock. Client time and
/// session time coincide.
pub struct ScriptedPort<R> {
    responder: R,
    queue: BTreeMap<(i64, u64), ClientMessage>,
    next_id: u64,
    disconnect_at_us: Option<i64>,
}

impl<R: Responder> ScriptedPort<R> {
    pub fn new(responder: R) -> Self {
        Self {
            responder,
            queue: BTreeMap::new(),
            next_id: 0,
            disconnect_at_us: None,
        }
    }

    /// Simulate the link dropping at session time `t_us`.
    pub fn disconnect_at(mut self, t_us: i64) -> Self {
        self.disconnect_at_us = Some(t_us);
        self
    }

    pub fn responder(&self) -> &R {
        &self.responder
    }

    fn push(&mut self, t_us: i64, msg: ClientMessage) {
        self.queue.insert((t_us, self.next_id), msg);
        self.next_id += 1;
    }
}

impl<R: Responder> ParticipantPort for ScriptedPort<R> {
    fn send(&mut self, msg: &ServerMessage, t_us: i64) -> Result<(), PortError> {
        if self.disconnect_at_us.is_some_and(|d| t_us >= d) {
            return Err(PortError::Disconnected);
        }
        for (t, m) in self.responder.on_message(msg, t_us) {
            self.push(t.max(t_us), m);
        }
        Ok(())
    }

    fn recv_until(
        &mut self,
        clock: &mut dyn Clock,
        deadline_us: Option<i64>,
    ) -> Result<Option<ClientMessage>, PortError> {
        let next_t = self.queue.keys().next().map(|k| k.0);
        let cut = self.disconnect_at_us;
        if let Some(t) = next_t {
            if deadline_us.is_none_or(|d| t <= d) && cut.is_none_or(|x| t < x) {
                clock.sleep_until(t);
                let (_, msg) = self.queue.pop_first().expect("queue not empty");
                return Ok(Some(msg));
            }
        }
        if let Some(x) = cut {
            if deadline_us.is_none_or(|d| d >= x) {
                clock.sleep_until(x);
                return Err(PortError::Disconnected);
            }
        }
        match deadline_us {
            Some(d) => {
                clock.sleep_until(d);
                Ok(None)
            }
            // Nobody will ever answer.
            None => Err(PortError::Disconnected),
        }
    }
}

/// Four-timestamp clock-offset estimate: session time = client time + offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClockSync {
    pub offset_us: i64,
    pub round_trip_us: i64,
    pub last_sync_us: Option<i64>,
}

impl ClockSync {
    /// `t0`/`t3` are client send/receive times, `t1`/`t2` server
    /// receive/send times.
    pub fn from_exchange(t0: i64, t1: i64, t2: i64, t3: i64) -> Self {
        Self {
            offset_us: ((t1 - t0) + (t2 - t3)).div_euclid(2),
            round_trip_us: (t3 - t0) - (t2 - t1),
            last_sync_us: Some(t2),
        }
    }

    pub fn to_session(&self, client_t_us: i64) -> i64 {
        client_t_us + self.offset_us
    }
}

/// A button press as reported by the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawResponse {
    pub client_t_us: i64,
    pub hand: HandCondition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CueMode {
    /// Cue stays up until the participant sends `ready`.
    Confirm,
    /// Cue is shown for a fixed time.
    Fixed { duration_ms: u32 },
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub participant: String,
    pub start_unix_us: i64,
    pub cue_mode: CueMode,
    /// Stop cleanly after this many blocks.
    pub block_limit: Option<usize>,
}

impl SessionOptions {
    pub fn new(participant: impl Into<String>) -> Self {
        Self {
            participant: participant.into(),
            start_unix_us: 0,
            cue_mode: CueMode::Confirm,
            block_limit: None,
        }
    }
}

/// Mutable state of a running session.
#[derive(Debug)]
pub struct SessionState {
    log: EventLog,
    sync: ClockSync,
    /// Scheduled first onset of the running block, once the cue is gone.
    block_first_onset_us: Option<i64>,
}

impl SessionState {
    pub fn new(header: LogHeader) -> Self {
        Self {
            log: EventLog::new(header),
            sync: ClockSync::default(),
            block_first_onset_us: None,
        }
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn sync(&self) -> ClockSync {
        self.sync
    }

    pub fn set_sync(&mut self, sync: ClockSync) {
        self.sync = sync;
    }

    pub fn begin_stimuli(&mut self, first_onset_us: i64) {
        self.block_first_onset_us = Some(first_onset_us);
    }

    pub fn end_block(&mut self) {
        self.block_first_onset_us = None;
    }

    fn record(&mut self, t_us: i64, event: Event) {
        self.log.append(t_us, event);
    }

    /// Log a press received at session time `now_us`. The press time is the
    /// client timestamp mapped through the current offset estimate.
    pub fn ingest_response(&mut self, now_us: i64, raw: RawResponse) -> EventRecord {
        let press_t_us = self.sync.to_session(raw.client_t_us);
        let pre_stimulus = self.block_first_onset_us.is_none_or(|first| press_t_us < first);
        self.log
            .append(
                now_us,
                Event::Response {
                    client_t_us: raw.client_t_us,
                    press_t_us,
                    hand: raw.hand,
                    pre_stimulus,
                },
            )
            .clone()
    }
}

struct Session<'a> {
    state: SessionState,
    port: &'a mut dyn ParticipantPort,
    clock: &'a mut dyn Clock,
}

enum Wait {
    Until(i64),
    Ready,
}

impl Session<'_> {
    fn send(&mut self, msg: ServerMessage) -> Result<(), PortError> {
        let now = self.clock.now_us();
        self.port.send(&msg, now)
    }

    fn log(&mut self, event: Event) {
        let now = self.clock.now_us();
        self.state.record(now, event);
    }

    /// Handle client traffic until the wait condition is met.
    fn pump(&mut self, wait: Wait) -> Result<(), PortError> {
        loop {
            let deadline = match wait {
                Wait::Until(t) => Some(t),
                Wait::Ready => None,
            };
            let Some(msg) = self.port.recv_until(self.clock, deadline)? else {
                return Ok(());
            };
            let now = self.clock.now_us();
            match msg {
                ClientMessage::Ready => {
                    if matches!(wait, Wait::Ready) {
                        return Ok(());
                    }
                }
                ClientMessage::Response { client_t_us, hand } => {
                    self.state.ingest_response(now, RawResponse { client_t_us, hand });
                }
                ClientMessage::Sync {
                    t0,
                    t1: Some(t1),
                    t2: Some(t2),
                    t3: Some(t3),
                } => self.state.set_sync(ClockSync::from_exchange(t0, t1, t2, t3)),
                ClientMessage::Sync { t0, .. } => {
                    let t2 = self.clock.now_us();
                    self.port.send(&ServerMessage::Sync { t0, t1: now, t2 }, t2)?;
                }
            }
        }
    }

    fn run(&mut self, plan: &SessionPlan, opts: &SessionOptions) -> Result<(), PortError> {
        let timing = &plan.timing;
        let display_us = i64::from(timing.display_duration_ms) * 1000;
        let tail_us = i64::from(timing.soa_max_ms) * 1000;
        let total_blocks = plan.block_count();
        let run_blocks = opts.block_limit.map_or(total_blocks, |n| n.min(total_blocks));

        self.log(Event::SessionStart);
        for (n, (si, bi, block)) in plan.blocks().take(run_blocks).enumerate() {
            let set = &plan.sets[si];
            if bi == 0 {
                self.log(Event::SetStart {
                    set: si,
                    label: set.label(),
                    condition: set.condition,
                    hand: set.hand,
                    repetition: set.repetition,
                });
            }
            self.log(Event::BlockStart { set: si, block: bi });

            self.send(ServerMessage::Cue {
                direction: block.cued_direction,
                hand: set.hand,
                condition: set.condition,
            })?;
            self.log(Event::CueOn {
                set: si,
                block: bi,
                cued: block.cued_direction,
            });
            match opts.cue_mode {
                CueMode::Confirm => self.pump(Wait::Ready)?,
                CueMode::Fixed { duration_ms } => {
                    let until = self.clock.now_us() + i64::from(duration_ms) * 1000;
                    self.pump(Wait::Until(until))?;
                }
            }
            self.send(ServerMessage::Clear)?;
            self.log(Event::CueOff { set: si, block: bi });

            let base = self.clock.now_us() + i64::from(timing.cue_lead_ms) * 1000;
            self.state.begin_stimuli(base);
            let mut last_onset = base;
            for d in &block.displays {
                let onset = base + i64::from(d.onset_offset_ms) * 1000;
                last_onset = onset;
                self.pump(Wait::Until(onset))?;
                self.clock.sleep_until(onset);
                self.send(ServerMessage::Show {
                    directions: d.directions.clone(),
                })?;
                self.log(Event::StimOn {
                    set: si,
                    block: bi,
                    display: d.index_in_block,
                    scheduled_us: onset,
                    is_target: d.is_target,
                    target_position: d.target_position,
                    directions: d.directions.clone(),
                });
                self.pump(Wait::Until(onset + display_us))?;
                self.clock.sleep_until(onset + display_us);
                self.send(ServerMessage::Clear)?;
                self.log(Event::StimOff {
                    set: si,
                    block: bi,
                    display: d.index_in_block,
                });
            }
            self.pump(Wait::Until(last_onset + tail_us))?;
            self.log(Event::BlockEnd { set: si, block: bi });
            self.state.end_block();

            if n + 1 < run_blocks {
                self.send(ServerMessage::Rest {
                    duration_s: timing.inter_block_rest_s,
                })?;
                self.log(Event::RestStart {
                    duration_s: timing.inter_block_rest_s,
                });
                let until = self.clock.now_us() + i64::from(timing.inter_block_rest_s) * 1_000_000;
                self.pump(Wait::Until(until))?;
                self.log(Event::RestEnd);
            }
        }
        self.send(ServerMessage::End { aborted: false })?;
        self.log(Event::SessionEnd { aborted: false });
        Ok(())
    }
}

/// Administer `plan` through `port`. A disconnect ends the session early
/// with a log whose final record is `SessionEnd { aborted: true }`.
pub fn run_session(
    plan: &SessionPlan,
    port: &mut dyn ParticipantPort,
    clock: &mut dyn Clock,
    opts: &SessionOptions,
) -> Result<EventLog, RuntimeError> {
    let report = validate_plan(plan);
    if !report.is_valid() {
        return Err(RuntimeError::InvalidPlan(report.to_string()));
    }
    let header = LogHeader::new(plan, &opts.participant, opts.start_unix_us);
    let mut session = Session {
        state: SessionState::new(header),
        port,
        clock,
    };
    if session.run(plan, opts).is_err() {
        let _ = session.send(ServerMessage::End { aborted: true });
        session.log(Event::SessionEnd { aborted: true });
    }
    Ok(session.state.into_log())
}
