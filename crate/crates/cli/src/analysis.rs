//! The `stats` stage: Friedman tests per group and metric, and the pooled
//! correlation tables, collected into one document.

use std::collections::{BTreeMap, BTreeSet};

use osvs_core::protocol::{Group, ParticipantProfile, StimulusCondition};
use osvs_core::scoring::{CohortRow, Metric};
use osvs_core::stats::{
    correlate_variables, friedman_with, metric_variable, repeated_measures, CorrelationFlag, CorrelationResult,
    FriedmanResult, PosthocMethod, StatsError, Variable, ALPHA,
};
use serde::{Deserialize, Serialize};

/// Metrics compared across conditions, in table row order.
pub const FRIEDMAN_METRICS: [Metric; 10] = [
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

/// A correlation row: participant age or a metric in one condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowVar {
    Age,
    Metric(Metric, StimulusCondition),
}

impl RowVar {
    pub fn name(self) -> String {
        match self {
            RowVar::Age => "Age".to_string(),
            RowVar::Metric(m, c) => format!("{} ({})", m.label(), c.label()),
        }
    }
}

/// Layout of one correlation table. Each panel is a list of column metrics,
/// each metric expanded over P1, P3, P5.
#[derive(Debug, Clone)]
pub struct CorrelationSpec {
    pub number: u8,
    pub caption: &'static str,
    pub rows: Vec<RowVar>,
    pub panels: Vec<Vec<Metric>>,
}

impl CorrelationSpec {
    pub fn column_metrics(&self) -> impl Iterator<Item = Metric> + '_ {
        self.panels.iter().flatten().copied()
    }

    fn needs_erp(&self) -> bool {
        self.column_metrics().any(is_erp)
            || self.rows.iter().any(|r| matches!(r, RowVar::Metric(m, _) if is_erp(*m)))
    }
}

pub fn is_erp(m: Metric) -> bool {
    matches!(m, Metric::ErpAmplitude | Metric::ErpLatency)
}

pub fn correlation_specs() -> Vec<CorrelationSpec> {
    use Metric::*;
    let p1 = StimulusCondition::P1;
    vec![
        CorrelationSpec {
            number: 3,
            caption: "Age against TP, FN, FP and TN",
            rows: vec![RowVar::Age],
            panels: vec![vec![TP, FN], vec![FP, TN]],
        },
        CorrelationSpec {
            number: 4,
            caption: "Age against accuracy, precision and sensitivity",
            rows: vec![RowVar::Age],
            panels: vec![vec![Accuracy, Precision, Sensitivity]],
        },
        CorrelationSpec {
            number: 5,
            caption: "Age against reaction time",
            rows: vec![RowVar::Age],
            panels: vec![vec![ReactionTime]],
        },
        CorrelationSpec {
            number: 6,
            caption: "Age against ERP amplitude and latency",
            rows: vec![RowVar::Age],
            panels: vec![vec![ErpAmplitude, ErpLatency]],
        },
        CorrelationSpec {
            number: 7,
            caption: "P1 behaviour against ERP amplitude and latency",
            rows: vec![
                RowVar::Metric(TN, p1),
                RowVar::Metric(FP, p1),
                RowVar::Metric(Accuracy, p1),
                RowVar::Metric(Precision, p1),
            ],
            panels: vec![vec![ErpAmplitude, ErpLatency]],
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanEntry {
    pub group: Group,
    pub metric: String,
    /// Participants left out for an undefined value in some condition.
    #[serde(default)]
    pub dropped: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<FriedmanResult>,
    /// Why no result could be computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub row: String,
    pub metric: String,
    pub condition: StimulusCondition,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub significant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<CorrelationFlag>,
}

impl CorrelationCell {
    fn result(&self) -> CorrelationResult {
        CorrelationResult {
            n: self.n,
            rho: self.rho,
            p: self.p,
            significant: self.significant,
            flag: self.flag,
        }
    }

    /// Coefficient to two decimals when significant, `n.s.` otherwise.
    pub fn reported_value(&self) -> String {
        self.result().reported_value()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationDoc {
    pub table: u8,
    pub rows: Vec<String>,
    /// Empty when the data needed for the table is absent.
    #[serde(default)]
    pub cells: Vec<CorrelationCell>,
}

impl CorrelationDoc {
    pub fn cell(&self, row: &str, metric: Metric, c: StimulusCondition) -> Option<&CorrelationCell> {
        self.cells
            .iter()
            .find(|x| x.row == row && x.metric == metric.key() && x.condition == c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsDocument {
    pub posthoc: PosthocMethod,
    pub alpha: f64,
    pub participants: usize,
    pub friedman: Vec<FriedmanEntry>,
    pub correlations: Vec<CorrelationDoc>,
}

impl StatsDocument {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("stats document serializes")
    }

    pub fn from_text(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn friedman(&self, group: Group, metric: Metric) -> Option<&FriedmanEntry> {
        self.friedman.iter().find(|e| e.group == group && e.metric == metric.key())
    }

    pub fn table(&self, number: u8) -> Option<&CorrelationDoc> {
        self.correlations.iter().find(|t| t.table == number)
    }
}

fn row_variable(rows: &[CohortRow], ages: &Variable, r: RowVar) -> Variable {
    match r {
        RowVar::Age => ages.clone(),
        RowVar::Metric(m, c) => completed(metric_variable(rows, c, m), ages),
    }
}

/// Give `v` an entry (possibly undefined) for every participant in `ids`.
fn completed(mut v: Variable, ids: &Variable) -> Variable {
    for id in ids.values.keys() {
        v.values.entry(id.clone()).or_insert(None);
    }
    v
}

/// Run every test over the cohort table. `rows` holds behavioural and,
/// when available, ERP rows; `profiles` supplies ages.
pub fn compute_stats(
    rows: &[CohortRow],
    profiles: &[ParticipantProfile],
    method: PosthocMethod,
) -> Result<StatsDocument, StatsError> {
    let ids: BTreeSet<&str> = rows.iter().map(|r| r.participant.as_str()).collect();
    let has_erp = rows.iter().any(|r| is_erp(r.metric));

    let mut friedman = Vec::new();
    for group in Group::ALL {
        for metric in FRIEDMAN_METRICS {
            if is_erp(metric) && !has_erp {
                continue;
            }
            let (result, dropped, note) = match repeated_measures(rows, group, metric) {
                Ok((data, dropped)) => (Some(friedman_with(&data, method)), dropped, None),
                Err(e) => (None, Vec::new(), Some(e.to_string())),
            };
            friedman.push(FriedmanEntry {
                group,
                metric: metric.key().to_string(),
                dropped,
                result,
                note,
            });
        }
    }

    let ages = Variable::new(
        "Age",
        profiles
            .iter()
            .filter(|p| ids.contains(p.id.as_str()))
            .map(|p| (p.id.clone(), Some(p.age))),
    );
    let mut correlations = Vec::new();
    for spec in correlation_specs() {
        let mut cells = Vec::new();
        if has_erp || !spec.needs_erp() {
            for r in &spec.rows {
                let rv = row_variable(rows, &ages, *r);
                for m in spec.column_metrics() {
                    for c in StimulusCondition::ALL {
                        let cv = completed(metric_variable(rows, c, m), &ages);
                        let res = correlate_variables(&rv, &cv)?;
                        cells.push(CorrelationCell {
                            row: r.name(),
                            metric: m.key().to_string(),
                            condition: c,
                            n: res.n,
                            rho: res.rho,
                            p: res.p,
                            significant: res.significant,
                            flag: res.flag,
                        });
                    }
                }
            }
        }
        correlations.push(CorrelationDoc {
            table: spec.number,
            rows: spec.rows.iter().map(|r| r.name()).collect(),
            cells,
        });
    }

    Ok(StatsDocument {
        posthoc: method,
        alpha: ALPHA,
        participants: ids.len(),
        friedman,
        correlations,
    })
}

/// Group of each participant id, for checks that every cohort row has a profile.
pub fn profile_groups(profiles: &[ParticipantProfile]) -> BTreeMap<&str, Group> {
    profiles.iter().map(|p| (p.id.as_str(), p.group)).collect()
}
