//! Session event log: record types, the JSON-lines file form, and the
//! plan-conformance verifier.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{DisplayRef, GapDirection, HandCondition, SessionPlan, StimulusCondition};

pub const LOG_FORMAT: &str = "osvs-log/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub format: String,
    pub plan_sha256: String,
    pub participant: String,
    pub start_unix_us: i64,
    pub software: String,
}

impl LogHeader {
    pub fn new(plan: &SessionPlan, participant: &str, start_unix_us: i64) -> Self {
        Self {
            format: LOG_FORMAT.to_string(),
            plan_sha256: plan.hash(),
            participant: participant.to_string(),
            start_unix_us,
            software: concat!("osvs ", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Event {
    SessionStart,
    SetStart {
        set: usize,
        label: String,
        condition: StimulusCondition,
        hand: HandCondition,
        repetition: u8,
    },
    BlockStart {
        set: usize,
        block: usize,
    },
    CueOn {
        set: usize,
        block: usize,
        cued: GapDirection,
    },
    CueOff {
        set: usize,
        block: usize,
    },
    StimOn {
        set: usize,
        block: usize,
        display: usize,
        scheduled_us: i64,
        is_target: bool,
        target_position: Option<usize>,
        directions: Vec<GapDirection>,
    },
    StimOff {
        set: usize,
        block: usize,
        display: usize,
    },
    Response {
        client_t_us: i64,
        press_t_us: i64,
        hand: HandCondition,
        pre_stimulus: bool,
    },
    BlockEnd {
        set: usize,
        block: usize,
    },
    RestStart {
        duration_s: u32,
    },
    RestEnd,
    SessionEnd {
        aborted: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub t_us: i64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Error)]
pub enum LogIoError {
    #[error("log line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("log is empty")]
    Empty,
    #[error("unsupported log format {0:?}")]
    Format(String),
}

/// Append-only session record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventLog {
    header: LogHeader,
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new(header: LogHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
        }
    }

    pub fn header(&self) -> &LogHeader {
        &self.header
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn append(&mut self, t_us: i64, event: Event) -> &EventRecord {
        let seq = self.records.len() as u64;
        self.records.push(EventRecord { seq, t_us, event });
        self.records.last().expect("just pushed")
    }

    /// True when the session never reached a clean `SessionEnd`.
    pub fn aborted(&self) -> bool {
        !matches!(
            self.records.last().map(|r| &r.event),
            Some(Event::SessionEnd { aborted: false })
        )
    }

    pub fn count(&self, pred: impl Fn(&Event) -> bool) -> usize {
        self.records.iter().filter(|r| pred(&r.event)).count()
    }

    /// Drop every `Response` record and renumber; used for what-if scoring.
    pub fn without_responses(&self) -> EventLog {
        let mut out = EventLog::new(self.header.clone());
        for r in &self.records {
            if !matches!(r.event, Event::Response { .. }) {
                out.append(r.t_us, r.event.clone());
            }
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = serde_json::to_string(&self.header).expect("header serializes");
        s.push('\n');
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LogIoError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(LogIoError::Empty)?;
        let header: LogHeader =
            serde_json::from_str(first).map_err(|source| LogIoError::Json { line: 1, source })?;
        if header.format != LOG_FORMAT {
            return Err(LogIoError::Format(header.format));
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let rec: EventRecord = serde_json::from_str(line)
                .map_err(|source| LogIoError::Json { line: i + 1, source })?;
            records.push(rec);
        }
        Ok(Self { header, records })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConformanceViolation {
    PlanHash { log: String, plan: String },
    SeqGap { index: usize, seq: u64 },
    TimeReversal { seq: u64 },
    MissingSessionStart,
    UnexpectedStimOn { seq: u64, expected: Option<DisplayRef>, found: DisplayRef },
    PayloadMismatch { seq: u64, at: DisplayRef },
    UnpairedStimOff { seq: u64 },
    UnclosedStimOn { seq: u64 },
    EventAfterEnd { seq: u64 },
}

impl fmt::Display for ConformanceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PlanHash { log, plan } => {
                write!(f, "log plan hash {log} does not match plan hash {plan}")
            }
            Self::SeqGap { index, seq } => write!(f, "record {index} has seq {seq}"),
            Self::TimeReversal { seq } => write!(f, "record {seq} goes back in time"),
            Self::MissingSessionStart => write!(f, "first record is not SessionStart"),
            Self::UnexpectedStimOn { seq, expected, found } => write!(
                f,
                "record {seq}: StimOn for {found:?}, expected {expected:?}"
            ),
            Self::PayloadMismatch { seq, at } => {
                write!(f, "record {seq}: StimOn payload differs from plan display {at:?}")
            }
            Self::UnpairedStimOff { seq } => write!(f, "record {seq}: StimOff without StimOn"),
            Self::UnclosedStimOn { seq } => write!(f, "record {seq}: StimOn not closed"),
            Self::EventAfterEnd { seq } => write!(f, "record {seq} follows SessionEnd"),
        }
    }
}

#[derive(Debug, Error)]
#[error("log does not conform to plan: {}", .violations.first().map(|v| v.to_string()).unwrap_or_default())]
pub struct ConformanceError {
    pub violations: Vec<ConformanceViolation>,
}

/// Outcome of a successful conformance check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conformance {
    pub displays_presented: usize,
    pub complete: bool,
}

/// List every way `log` disagrees with `plan`.
pub fn conformance_violations(plan: &SessionPlan, log: &EventLog) -> Vec<ConformanceViolation> {
    let mut out = Vec::new();
    let plan_hash = plan.hash();
    if log.header.plan_sha256 != plan_hash {
        out.push(ConformanceViolation::PlanHash {
            log: log.header.plan_sha256.clone(),
            plan: plan_hash,
        });
    }
    if !matches!(log.records.first().map(|r| &r.event), Some(Event::SessionStart)) {
        out.push(ConformanceViolation::MissingSessionStart);
    }

    let expected: Vec<DisplayRef> = plan
        .blocks()
        .flat_map(|(set, block, b)| {
            (0..b.displays.len()).map(move |display| DisplayRef { set, block, display })
        })
        .collect();
    let mut next = 0usize;
    let mut open: Option<(u64, DisplayRef)> = None;
    let mut last_t = i64::MIN;
    let mut ended = false;

    for (i, r) in log.records.iter().enumerate() {
        if r.seq != i as u64 {
            out.push(ConformanceViolation::SeqGap { index: i, seq: r.seq });
        }
        if r.t_us < last_t {
            out.push(ConformanceViolation::TimeReversal { seq: r.seq });
        }
        last_t = last_t.max(r.t_us);
        if ended {
            out.push(ConformanceViolation::EventAfterEnd { seq: r.seq });
        }
        match &r.event {
            Event::StimOn {
                set,
                block,
                display,
                is_target,
                target_position,
                directions,
                ..
            } => {
                if let Some((seq, _)) = open.take() {
                    out.push(ConformanceViolation::UnclosedStimOn { seq });
                }
                let found = DisplayRef {
                    set: *set,
                    block: *block,
                    display: *display,
                };
                if expected.get(next) != Some(&found) {
                    out.push(ConformanceViolation::UnexpectedStimOn {
                        seq: r.seq,
                        expected: expected.get(next).copied(),
                        found,
                    });
                } else {
                    let spec = plan.display(found).expect("expected refs come from the plan");
                    if spec.is_target != *is_target
                        || spec.target_position != *target_position
                        || &spec.directions != directions
                    {
                        out.push(ConformanceViolation::PayloadMismatch { seq: r.seq, at: found });
                    }
                    next += 1;
                }
                open = Some((r.seq, found));
            }
            Event::StimOff { set, block, display } => {
                let at = DisplayRef {
                    set: *set,
                    block: *block,
                    display: *display,
                };
                match open.take() {
                    Some((_, on)) if on == at => {}
                    _ => out.push(ConformanceViolation::UnpairedStimOff { seq: r.seq }),
                }
            }
            Event::SessionEnd { .. } => ended = true,
            _ => {}
        }
    }
    // An aborted session may stop with a display still on screen.
    if let Some((seq, _)) = open {
        if !log.aborted() {
            out.push(ConformanceViolation::UnclosedStimOn { seq });
        }
    }
    out
}

pub fn check_conformance(plan: &SessionPlan, log: &EventLog) -> Result<Conformance, ConformanceError> {
    let violations = conformance_violations(plan, log);
    if !violations.is_empty() {
        return Err(ConformanceError { violations });
    }
    let displays_presented = log.count(|e| matches!(e, Event::StimOn { .. }));
    Ok(Conformance {
        displays_presented,
        complete: !log.aborted() && displays_presented == plan.blocks().map(|(_, _, b)| b.displays.len()).sum::<usize>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_line_has_fixed_field_order() {
        let rec = EventRecord {
            seq: 3,
            t_us: 1_500,
            event: Event::Response {
                client_t_us: 1_400,
                press_t_us: 1_450,
                hand: HandCondition::Left,
                pre_stimulus: false,
            },
        };
        assert_eq!(
            serde_json::to_string(&rec).unwrap(),
            r#"{"seq":3,"t_us":1500,"kind":"Response","client_t_us":1400,"press_t_us":1450,"hand":"L","pre_stimulus":false}"#
        );
        let unit = EventRecord {
            seq: 0,
            t_us: 0,
            event: Event::SessionStart,
        };
        assert_eq!(
            serde_json::to_string(&unit).unwrap(),
            r#"{"seq":0,"t_us":0,"kind":"SessionStart"}"#
        );
    }

    #[test]
    fn empty_log_is_error() {
        assert!(matches!(EventLog::from_jsonl(""), Err(LogIoError::Empty)));
    }

    #[test]
    fn log_without_end_counts_as_aborted() {
        let header = LogHeader {
            format: LOG_FORMAT.into(),
            plan_sha256: "x".into(),
            participant: "p".into(),
            start_unix_us: 0,
            software: "t".into(),
        };
        let mut log = EventLog::new(header);
        log.append(0, Event::SessionStart);
        assert!(log.aborted());
        log.append(5, Event::SessionEnd { aborted: false });
        assert!(!log.aborted());
        let back = EventLog::from_jsonl(&log.to_jsonl()).unwrap();
        assert_eq!(back, log);
    }
}
