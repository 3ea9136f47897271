//! Helpers shared by the integration tests: a chaotic scripted participant
//! and a brute-force response attribution oracle.

#![allow(dead_code)]

use std::collections::BTreeMap;

use osvs_core::protocol::{DisplayRef, HandCondition, SessionPlan, StimulusCondition};
use osvs_core::runtime::{ClientMessage, Event, EventLog, Responder, ServerMessage};
use osvs_core::scoring::{ConfusionCounts, Outcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Presses zero to three times after each display at arbitrary delays
/// (including exactly at onset and well past the next onset) and sometimes
/// during the cue.
pub struct ChaoticResponder {
    rng: ChaCha8Rng,
    hand: HandCondition,
}

impl ChaoticResponder {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            hand: HandCondition::Right,
        }
    }
}

impl Responder for ChaoticResponder {
    fn on_message(&mut self, msg: &ServerMessage, t: i64) -> Vec<(i64, ClientMessage)> {
        let press = |at: i64, hand| (at, ClientMessage::Response { client_t_us: at, hand });
        match msg {
            ServerMessage::Cue { hand, .. } => {
                self.hand = *hand;
                let mut out = vec![(t + 700_000, ClientMessage::Ready)];
                if self.rng.random_bool(0.2) {
                    out.push(press(t + self.rng.random_range(0..700_000), self.hand));
                }
                out
            }
            ServerMessage::Show { .. } => {
                let n = self.rng.random_range(0..4u32);
                (0..n)
                    .map(|_| {
                        let d = match self.rng.random_range(0..10) {
                            0 => 0,
                            1 => 1_000_000,
                            2 => 1_800_000,
                            _ => self.rng.random_range(0..2_400_000),
                        };
                        press(t + d, self.hand)
                    })
                    .collect()
            }
            _ => Vec::new(),
        }
    }
}

/// Per-display outcome computed by direct scanning, independent of the
/// library's binary search.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDisplay {
    pub at: DisplayRef,
    pub condition: StimulusCondition,
    pub outcome: Outcome,
    pub rt_s: Option<f64>,
    pub presses: u32,
}

pub fn oracle(plan: &SessionPlan, log: &EventLog) -> Vec<OracleDisplay> {
    let stims: Vec<(i64, DisplayRef, bool)> = log
        .records()
        .iter()
        .filter_map(|r| match r.event {
            Event::StimOn {
                set,
                block,
                display,
                is_target,
                ..
            } => Some((r.t_us, DisplayRef { set, block, display }, is_target)),
            _ => None,
        })
        .collect();
    let presses: Vec<i64> = log
        .records()
        .iter()
        .filter_map(|r| match r.event {
            Event::Response {
                press_t_us,
                pre_stimulus: false,
                ..
            } => Some(press_t_us),
            _ => None,
        })
        .collect();
    let tail = i64::from(plan.timing.soa_max_ms) * 1000;
    let mut out = Vec::new();
    for (k, &(onset, at, is_target)) in stims.iter().enumerate() {
        let end = match stims.get(k + 1) {
            Some(&(t, next, _)) if next.set == at.set && next.block == at.block => t,
            _ => onset + tail,
        };
        let inside: Vec<i64> = presses.iter().copied().filter(|&p| onset <= p && p < end).collect();
        let first = inside.iter().min().copied();
        let outcome = match (is_target, first.is_some()) {
            (true, true) => Outcome::TP,
            (true, false) => Outcome::FN,
            (false, true) => Outcome::FP,
            (false, false) => Outcome::TN,
        };
        out.push(OracleDisplay {
            at,
            condition: plan.sets[at.set].condition,
            outcome,
            rt_s: first.map(|p| (p - onset) as f64 / 1e6),
            presses: inside.len() as u32,
        });
    }
    out
}

pub fn oracle_counts(displays: &[OracleDisplay]) -> BTreeMap<StimulusCondition, ConfusionCounts> {
    let mut m: BTreeMap<StimulusCondition, ConfusionCounts> = BTreeMap::new();
    for d in displays {
        let c = m.entry(d.condition).or_default();
        match d.outcome {
            Outcome::TP => c.tp += 1,
            Outcome::TN => c.tn += 1,
            Outcome::FP => c.fp += 1,
            Outcome::FN => c.fn_ += 1,
        }
    }
    m
}
