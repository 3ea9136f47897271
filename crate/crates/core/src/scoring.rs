//! Response attribution and behavioural metrics.
//!
//! Each display owns the half-open window `[onset, next onset)`; the last
//! display of a block keeps `[onset, onset + soa_max)`. A press belongs to
//! the window containing its (session-clock) press time. The first press
//! in a window decides the outcome and later ones are counted as extras.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    DisplayRef, Group, HandCondition, SessionPlan, StimulusCondition, TARGETS_PER_CONDITION,
};
use crate::runtime::{check_conformance, ConformanceError, Event, EventLog};
use crate::stats::median;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error(transparent)]
    Conformance(#[from] ConformanceError),
    #[error("group {0} has no participants")]
    EmptyGroup(Group),
    #[error("cohort table: {0}")]
    Csv(#[from] csv::Error),
    #[error("cohort table: {0}")]
    Io(#[from] io::Error),
    #[error("cohort table: bad value {0:?}")]
    BadValue(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    TP,
    TN,
    FP,
    FN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub at: DisplayRef,
    pub condition: StimulusCondition,
    pub hand: HandCondition,
    pub is_target: bool,
    pub outcome: Outcome,
    /// Press time minus onset, seconds; present for TP and FP.
    pub rt_s: Option<f64>,
    pub extra_presses: u32,
}

/// Attributions plus the presses that did not count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributionReport {
    pub attributions: Vec<Attribution>,
    /// Press times flagged as arriving before the block's first display.
    pub pre_stimulus_us: Vec<i64>,
    /// Press times that fall outside every display window.
    pub unattributed_us: Vec<i64>,
}

struct Window {
    at: DisplayRef,
    condition: StimulusCondition,
    hand: HandCondition,
    is_target: bool,
    onset: i64,
    end: i64,
}

/// Display windows in presentation order, taken from the log's StimOn records.
fn windows(log: &EventLog, plan: &SessionPlan) -> Vec<Window> {
    let tail_us = i64::from(plan.timing.soa_max_ms) * 1000;
    let mut out: Vec<Window> = Vec::new();
    for r in log.records() {
        if let Event::StimOn {
            set,
            block,
            display,
            is_target,
            ..
        } = r.event
        {
            let at = DisplayRef { set, block, display };
            if let Some(prev) = out.last_mut() {
                if prev.at.set == set && prev.at.block == block {
                    prev.end = r.t_us;
                }
            }
            let s = &plan.sets[set];
            out.push(Window {
                at,
                condition: s.condition,
                hand: s.hand,
                is_target,
                onset: r.t_us,
                end: r.t_us + tail_us,
            });
        }
    }
    out
}

/// Attribute every press in `log` to a display of `plan`.
pub fn attribute_responses(log: &EventLog, plan: &SessionPlan) -> Result<AttributionReport, ScoringError> {
    check_conformance(plan, log)?;
    let wins = windows(log, plan);
    let mut report = AttributionReport::default();

    let mut presses: Vec<i64> = Vec::new();
    for r in log.records() {
        if let Event::Response {
            press_t_us,
            pre_stimulus,
            ..
        } = r.event
        {
            if pre_stimulus {
                report.pre_stimulus_us.push(press_t_us);
            } else {
                presses.push(press_t_us);
            }
        }
    }
    presses.sort_unstable();

    // first press and count per window
    let mut first: Vec<Option<i64>> = vec![None; wins.len()];
    let mut count: Vec<u32> = vec![0; wins.len()];
    for p in presses {
        // latest onset <= p
        let idx = wins.partition_point(|w| w.onset <= p);
        match idx.checked_sub(1).filter(|&i| p < wins[i].end) {
            Some(i) => {
                if first[i].is_none() {
                    first[i] = Some(p);
                }
                count[i] += 1;
            }
            None => report.unattributed_us.push(p),
        }
    }

    report.attributions = wins
        .iter()
        .zip(first.iter().zip(&count))
        .map(|(w, (first, n))| {
            let outcome = match (w.is_target, first.is_some()) {
                (true, true) => Outcome::TP,
                (true, false) => Outcome::FN,
                (false, true) => Outcome::FP,
                (false, false) => Outcome::TN,
            };
            Attribution {
                at: w.at,
                condition: w.condition,
                hand: w.hand,
                is_target: w.is_target,
                outcome,
                rt_s: first.map(|p| (p - w.onset) as f64 / 1e6),
                extra_presses: n.saturating_sub(1),
            }
        })
        .collect();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u32,
    pub tn: u32,
    pub fp: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
}

impl ConfusionCounts {
    pub fn total(&self) -> u32 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn targets(&self) -> u32 {
        self.tp + self.fn_
    }

    pub fn nontargets(&self) -> u32 {
        self.fp + self.tn
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| f64::from(self.tp + self.tn) / f64::from(n))
    }

    /// Undefined (not zero) when there were no presses.
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| f64::from(self.tp) / f64::from(d))
    }

    pub fn sensitivity(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| f64::from(self.tp) / f64::from(d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_rt_s: Option<f64>,
}

/// Which attributions to pool.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Filter {
    pub condition: Option<StimulusCondition>,
    pub hand: Option<HandCondition>,
}

impl Filter {
    pub fn condition(c: StimulusCondition) -> Self {
        Self {
            condition: Some(c),
            hand: None,
        }
    }

    fn keeps(&self, a: &Attribution) -> bool {
        self.condition.is_none_or(|c| c == a.condition) && self.hand.is_none_or(|h| h == a.hand)
    }
}

pub fn confusion_counts(attributions: &[Attribution], filter: Filter) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for a in attributions.iter().filter(|a| filter.keeps(a)) {
        match a.outcome {
            Outcome::TP => c.tp += 1,
            Outcome::TN => c.tn += 1,
            Outcome::FP => c.fp += 1,
            Outcome::FN => c.fn_ += 1,
        }
    }
    c
}

/// Reaction times of hits, in presentation order.
pub fn hit_rts(attributions: &[Attribution], filter: Filter) -> Vec<f64> {
    attributions
        .iter()
        .filter(|a| filter.keeps(a) && a.outcome == Outcome::TP)
        .filter_map(|a| a.rt_s)
        .collect()
}

pub fn metrics(counts: &ConfusionCounts, hit_rts: &[f64]) -> MetricSet {
    MetricSet {
        accuracy: counts.accuracy(),
        precision: counts.precision(),
        sensitivity: counts.sensitivity(),
        median_rt_s: median(hit_rts),
    }
}

pub fn confusion_and_metrics(attributions: &[Attribution], filter: Filter) -> (ConfusionCounts, MetricSet) {
    let counts = confusion_counts(attributions, filter);
    let rts = hit_rts(attributions, filter);
    let m = metrics(&counts, &rts);
    (counts, m)
}

/// Counts, metrics and hit RTs for one condition (optionally one hand).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionScore {
    pub condition: StimulusCondition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hand: Option<HandCondition>,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: MetricSet,
    pub extra_presses: u32,
    pub rt_s: Vec<f64>,
}

/// Per-participant scored document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredParticipant {
    pub participant: String,
    pub plan_sha256: String,
    pub aborted: bool,
    pub excluded_pre_stimulus: usize,
    pub excluded_unattributed: usize,
    /// Hands pooled, one entry per condition.
    pub conditions: Vec<ConditionScore>,
    /// Per condition and hand.
    pub by_hand: Vec<ConditionScore>,
}

impl ScoredParticipant {
    pub fn condition(&self, c: StimulusCondition) -> Option<&ConditionScore> {
        self.conditions.iter().find(|s| s.condition == c)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("scored document serializes")
    }

    pub fn from_text(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }
}

fn condition_score(attributions: &[Attribution], filter: Filter, condition: StimulusCondition) -> ConditionScore {
    let (counts, metrics) = confusion_and_metrics(attributions, filter);
    ConditionScore {
        condition,
        hand: filter.hand,
        counts,
        metrics,
        extra_presses: attributions
            .iter()
            .filter(|a| filter.keeps(a))
            .map(|a| a.extra_presses)
            .sum(),
        rt_s: hit_rts(attributions, filter),
    }
}

/// Full scoring of one participant's log.
pub fn score_participant(log: &EventLog, plan: &SessionPlan) -> Result<ScoredParticipant, ScoringError> {
    let report = attribute_responses(log, plan)?;
    let a = &report.attributions;
    let conditions = StimulusCondition::ALL
        .into_iter()
        .map(|c| condition_score(a, Filter::condition(c), c))
        .collect();
    let by_hand = StimulusCondition::ALL
        .into_iter()
        .flat_map(|c| HandCondition::ALL.into_iter().map(move |h| (c, h)))
        .map(|(c, h)| {
            condition_score(
                a,
                Filter {
                    condition: Some(c),
                    hand: Some(h),
                },
                c,
            )
        })
        .collect();
    Ok(ScoredParticipant {
        participant: log.header().participant.clone(),
        plan_sha256: log.header().plan_sha256.clone(),
        aborted: log.aborted(),
        excluded_pre_stimulus: report.pre_stimulus_us.len(),
        excluded_unattributed: report.unattributed_us.len(),
        conditions,
        by_hand,
    })
}

/// Per-participant measures that end up in the cohort table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    TP,
    TN,
    FP,
    FN,
    Accuracy,
    Precision,
    Sensitivity,
    ReactionTime,
    ErpAmplitude,
    ErpLatency,
}

impl Metric {
    pub const ALL: [Metric; 10] = [
        Metric::TP,
        Metric::TN,
        Metric::FP,
        Metric::FN,
        Metric::Accuracy,
        Metric::Precision,
        Metric::Sensitivity,
        Metric::ReactionTime,
        Metric::ErpAmplitude,
        Metric::ErpLatency,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Metric::TP => "TP",
            Metric::TN => "TN",
            Metric::FP => "FP",
            Metric::FN => "FN",
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Sensitivity => "sensitivity",
            Metric::ReactionTime => "rt_s",
            Metric::ErpAmplitude => "erp_amplitude_uv",
            Metric::ErpLatency => "erp_latency_s",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::TP => "TP",
            Metric::TN => "TN",
            Metric::FP => "FP",
            Metric::FN => "FN",
            Metric::Accuracy => "Accuracy",
            Metric::Precision => "Precision",
            Metric::Sensitivity => "Sensitivity",
            Metric::ReactionTime => "Reaction time",
            Metric::ErpAmplitude => "ERP amplitude",
            Metric::ErpLatency => "ERP latency",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        Self::ALL.into_iter().find(|m| m.key() == s)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// One row of the long-format cohort table.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortRow {
    pub participant: String,
    pub group: Group,
    pub condition: StimulusCondition,
    pub metric: Metric,
    /// `None` where the metric is undefined (e.g. precision with no presses).
    pub value: Option<f64>,
}

/// Long-format rows for one scored participant, in metric order.
pub fn cohort_rows(scored: &ScoredParticipant, group: Group) -> Vec<CohortRow> {
    let mut rows = Vec::new();
    for s in &scored.conditions {
        let values = [
            (Metric::TP, Some(f64::from(s.counts.tp))),
            (Metric::TN, Some(f64::from(s.counts.tn))),
            (Metric::FP, Some(f64::from(s.counts.fp))),
            (Metric::FN, Some(f64::from(s.counts.fn_))),
            (Metric::Accuracy, s.metrics.accuracy),
            (Metric::Precision, s.metrics.precision),
            (Metric::Sensitivity, s.metrics.sensitivity),
            (Metric::ReactionTime, s.metrics.median_rt_s),
        ];
        for (metric, value) in values {
            rows.push(CohortRow {
                participant: scored.participant.clone(),
                group,
                condition: s.condition,
                metric,
                value,
            });
        }
    }
    rows
}

const NA: &str = "NA";

pub fn write_cohort_csv<W: io::Write>(rows: &[CohortRow], w: W) -> Result<(), ScoringError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["participant", "group", "condition", "metric", "value"])?;
    for r in rows {
        let value = r.value.map_or_else(|| NA.to_string(), |v| v.to_string());
        out.write_record([
            r.participant.as_str(),
            r.group.key(),
            r.condition.label(),
            r.metric.key(),
            value.as_str(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cohort_csv<R: io::Read>(r: R) -> Result<Vec<CohortRow>, ScoringError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default().to_string();
        let group = Group::parse(&field(1)).ok_or_else(|| ScoringError::BadValue(field(1)))?;
        let condition =
            StimulusCondition::parse(&field(2)).ok_or_else(|| ScoringError::BadValue(field(2)))?;
        let metric = Metric::parse(&field(3)).ok_or_else(|| ScoringError::BadValue(field(3)))?;
        let raw = field(4);
        let value = if raw == NA {
            None
        } else {
            Some(raw.parse::<f64>().map_err(|_| ScoringError::BadValue(raw.clone()))?)
        };
        rows.push(CohortRow {
            participant: field(0),
            group,
            condition,
            metric,
            value,
        });
    }
    Ok(rows)
}

/// Group medians per (group, condition, metric).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortSummary {
    pub medians: BTreeMap<(Group, StimulusCondition, Metric), Option<f64>>,
    pub participants: BTreeMap<Group, usize>,
}

impl CohortSummary {
    pub fn median(&self, g: Group, c: StimulusCondition, m: Metric) -> Option<f64> {
        self.medians.get(&(g, c, m)).copied().flatten()
    }
}

/// Medians over participants. Undefined values are left out of the median.
/// Every group in `require` must have at least one participant.
pub fn cohort_summary(rows: &[CohortRow], require: &[Group]) -> Result<CohortSummary, ScoringError> {
    let mut values: BTreeMap<(Group, StimulusCondition, Metric), Vec<f64>> = BTreeMap::new();
    let mut members: BTreeMap<Group, std::collections::BTreeSet<&str>> = BTreeMap::new();
    for r in rows {
        members.entry(r.group).or_default().insert(&r.participant);
        let e = values.entry((r.group, r.condition, r.metric)).or_default();
        if let Some(v) = r.value {
            e.push(v);
        }
    }
    for g in require {
        if !members.contains_key(g) {
            return Err(ScoringError::EmptyGroup(*g));
        }
    }
    Ok(CohortSummary {
        medians: values.into_iter().map(|(k, v)| (k, median(&v))).collect(),
        participants: members.into_iter().map(|(g, s)| (g, s.len())).collect(),
    })
}

/// TP count of a fully administered condition is at most this.
pub const MAX_TP: u32 = TARGETS_PER_CONDITION as u32;
