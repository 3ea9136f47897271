//! Text and CSV renderings of the stats document and cohort table: a
//! Friedman table, five correlation tables, three per-participant figure
//! tables and a plain-text summary of group medians.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use osvs_core::protocol::{Group, ParticipantProfile, StimulusCondition};
use osvs_core::scoring::{cohort_summary, CohortRow, Metric, ScoringError};
use osvs_core::stats::{median, Stars};

use crate::analysis::{correlation_specs, CorrelationDoc, CorrelationSpec, FriedmanEntry, StatsDocument, FRIEDMAN_METRICS};

pub const PAIRS: [&str; 3] = ["P1-P3", "P1-P5", "P3-P5"];

/// Cell of the Friedman table for one group, metric and pair. Pairs of a
/// metric whose omnibus test is not significant are shown as `n.s.`.
pub fn table2_cell(entry: Option<&FriedmanEntry>, pair: &str, alpha: f64) -> String {
    let Some(result) = entry.and_then(|e| e.result.as_ref()) else {
        return "NA".to_string();
    };
    if !(result.p < alpha) {
        return Stars::NotSignificant.as_str().to_string();
    }
    result
        .posthoc
        .iter()
        .find(|r| r.label() == pair)
        .map_or("NA", |r| r.stars.as_str())
        .to_string()
}

fn table2_metrics(doc: &StatsDocument) -> Vec<Metric> {
    FRIEDMAN_METRICS
        .into_iter()
        .filter(|m| doc.friedman.iter().any(|e| e.metric == m.key()))
        .collect()
}

/// Fixed-width grid with a `|` after the first column and after every
/// `group` further columns. `lines[0]` holds group labels in the first
/// column of each group; a label may span its whole group.
fn grid(lines: &[Vec<String>], group: usize) -> String {
    let ncol = lines.iter().map(Vec::len).max().unwrap_or(0);
    let len = |s: &String| s.chars().count();
    let mut widths: Vec<usize> = (0..ncol)
        .map(|j| {
            lines
                .iter()
                .enumerate()
                .filter(|(i, _)| *i > 0 || j == 0)
                .filter_map(|(_, l)| l.get(j))
                .map(len)
                .max()
                .unwrap_or(0)
        })
        .collect();
    let span = |widths: &[usize], first: usize| -> usize {
        let last = (first + group).min(ncol);
        widths[first..last].iter().sum::<usize>() + 2 * (last - first - 1)
    };
    if let Some(head) = lines.first() {
        for first in (1..ncol).step_by(group) {
            let need = head.get(first).map_or(0, len);
            let have = span(&widths, first);
            if need > have {
                let last = (first + group).min(ncol) - 1;
                widths[last] += need - have;
            }
        }
    }
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        let mut s = String::new();
        let _ = write!(s, "{:<w$}", line.first().map_or("", String::as_str), w = widths[0]);
        for first in (1..ncol).step_by(group) {
            s.push_str(" | ");
            if i == 0 {
                let w = span(&widths, first);
                let _ = write!(s, "{:<w$}", line.get(first).map_or("", String::as_str));
            } else {
                let last = (first + group).min(ncol);
                let cells: Vec<String> = (first..last)
                    .map(|j| format!("{:<w$}", line.get(j).map_or("", String::as_str), w = widths[j]))
                    .collect();
                s.push_str(&cells.join("  "));
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    }
    out
}

fn rule(text: &str) -> String {
    let width = text.lines().map(|l| l.chars().count()).max().unwrap_or(0);
    "-".repeat(width)
}

pub fn render_table2(doc: &StatsDocument) -> String {
    let mut lines = vec![
        std::iter::once("Condition".to_string())
            .chain(Group::ALL.iter().flat_map(|g| [label_of(*g), String::new(), String::new()]))
            .collect::<Vec<_>>(),
        std::iter::once(String::new())
            .chain(Group::ALL.iter().flat_map(|_| PAIRS.map(str::to_string)))
            .collect(),
    ];
    for m in table2_metrics(doc) {
        let mut row = vec![m.label().to_string()];
        for g in Group::ALL {
            for pair in PAIRS {
                row.push(table2_cell(doc.friedman(g, m), pair, doc.alpha));
            }
        }
        lines.push(row);
    }
    let body = grid(&lines, 3);
    let mut out = String::from("Table 2. Friedman test across P1, P3, P5 with pairwise signed-rank comparisons\n");
    let r = rule(&body);
    let _ = writeln!(out, "{r}");
    let mut body_lines = body.lines();
    for _ in 0..2 {
        if let Some(l) = body_lines.next() {
            let _ = writeln!(out, "{l}");
        }
    }
    let _ = writeln!(out, "{r}");
    for l in body_lines {
        let _ = writeln!(out, "{l}");
    }
    let _ = writeln!(out, "{r}");
    out.push_str("*: p<0.05, **: p<0.01, ***: p<0.001 (Bonferroni over three pairs).\n");
    out.push_str("Pairs are n.s. when the Friedman test itself is not significant.\n");
    out
}

pub fn table2_csv(doc: &StatsDocument) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "metric",
        "group",
        "n",
        "chi2",
        "friedman_p",
        "exact",
        "pair",
        "pair_n",
        "w_plus",
        "p_raw",
        "p_bonferroni",
        "cell",
    ])
    .expect("in-memory write");
    for m in table2_metrics(doc) {
        for g in Group::ALL {
            let entry = doc.friedman(g, m);
            for pair in PAIRS {
                let cell = table2_cell(entry, pair, doc.alpha);
                let mut rec = vec![m.key().to_string(), g.key().to_string()];
                match entry.and_then(|e| e.result.as_ref()) {
                    Some(r) => {
                        rec.extend([r.n.to_string(), r.chi2.to_string(), r.p.to_string(), r.exact.to_string()]);
                        rec.push(pair.to_string());
                        match r.posthoc.iter().find(|x| x.label() == pair) {
                            Some(x) => rec.extend([
                                x.n.to_string(),
                                x.w_plus.to_string(),
                                x.p_raw.to_string(),
                                x.p.to_string(),
                            ]),
                            None => rec.extend(["NA".into(), "NA".into(), "NA".into(), "NA".into()]),
                        }
                    }
                    None => {
                        rec.extend(["NA".into(), "NA".into(), "NA".into(), "NA".into(), pair.to_string()]);
                        rec.extend(["NA".into(), "NA".into(), "NA".into(), "NA".into()]);
                    }
                }
                rec.push(cell);
                w.write_record(&rec).expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn label_of(g: Group) -> String {
    match g {
        Group::Young => "Young".to_string(),
        Group::Elderly => "Elderly".to_string(),
    }
}

pub fn render_correlation_table(spec: &CorrelationSpec, doc: &CorrelationDoc) -> String {
    let mut out = format!("Table {}. Spearman correlations: {}\n", spec.number, spec.caption);
    for (i, panel) in spec.panels.iter().enumerate() {
        let mut lines = vec![
            std::iter::once("Condition".to_string())
                .chain(panel.iter().flat_map(|m| [m.label().to_string(), String::new(), String::new()]))
                .collect::<Vec<_>>(),
            std::iter::once(String::new())
                .chain(panel.iter().flat_map(|_| StimulusCondition::ALL.map(|c| c.label().to_string())))
                .collect(),
        ];
        if !doc.cells.is_empty() {
            for row in &doc.rows {
                let mut line = vec![row.clone()];
                for m in panel {
                    for c in StimulusCondition::ALL {
                        line.push(doc.cell(row, *m, c).map_or("NA".to_string(), |x| x.reported_value()));
                    }
                }
                lines.push(line);
            }
        }
        let body = grid(&lines, 3);
        let r = if i == 0 { rule(&body) } else { "=".repeat(rule(&body).len()) };
        let _ = writeln!(out, "{r}");
        let mut it = body.lines();
        for _ in 0..2 {
            if let Some(l) = it.next() {
                let _ = writeln!(out, "{l}");
            }
        }
        let _ = writeln!(out, "{}", rule(&body));
        for l in it {
            let _ = writeln!(out, "{l}");
        }
    }
    let width = out.lines().skip(1).map(|l| l.chars().count()).max().unwrap_or(0);
    let _ = writeln!(out, "{}", "-".repeat(width));
    out.push_str("Coefficient shown when p < 0.05, otherwise n.s.; correlations pool both groups.\n");
    out
}

pub fn correlation_csv(doc: &CorrelationDoc) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "metric", "condition", "n", "rho", "p", "cell"]).expect("in-memory write");
    let na = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
    for c in &doc.cells {
        w.write_record([
            c.row.clone(),
            c.metric.clone(),
            c.condition.label().to_string(),
            c.n.to_string(),
            na(c.rho),
            na(c.p),
            c.reported_value(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Sort key that puts `y2` before `y10`.
fn natural_key(id: &str) -> (String, u64, String) {
    let digits = id.len() - id.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (stem, num) = id.split_at(id.len() - digits);
    (stem.to_string(), num.parse().unwrap_or(0), id.to_string())
}

/// Per-participant wide table: one line per participant and condition.
pub fn figure_csv(rows: &[CohortRow], profiles: &[ParticipantProfile], metrics: &[Metric]) -> String {
    let ages: BTreeMap<&str, f64> = profiles.iter().map(|p| (p.id.as_str(), p.age)).collect();
    let mut table: BTreeMap<(Group, (String, u64, String), StimulusCondition), BTreeMap<Metric, Option<f64>>> =
        BTreeMap::new();
    for r in rows.iter().filter(|r| metrics.contains(&r.metric)) {
        table
            .entry((r.group, natural_key(&r.participant), r.condition))
            .or_default()
            .insert(r.metric, r.value);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["participant".to_string(), "group".into(), "age".into(), "condition".into()];
    header.extend(metrics.iter().map(|m| m.key().to_string()));
    w.write_record(&header).expect("in-memory write");
    for ((g, (_, _, id), c), values) in table {
        let mut rec = vec![
            id.clone(),
            g.key().to_string(),
            ages.get(id.as_str()).map_or("NA".to_string(), |a| a.to_string()),
            c.label().to_string(),
        ];
        for m in metrics {
            rec.push(values.get(m).copied().flatten().map_or("NA".to_string(), |v| v.to_string()));
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Up to four decimals, trailing zeros removed.
pub fn fmt_num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn summary_value(m: Metric, v: Option<f64>) -> String {
    match (m, v) {
        (_, None) => "NA".to_string(),
        (Metric::Accuracy | Metric::Precision | Metric::Sensitivity, Some(x)) => format!("{:.2}", x * 100.0),
        (_, Some(x)) => fmt_num(x),
    }
}

fn summary_unit(m: Metric) -> &'static str {
    match m {
        Metric::Accuracy | Metric::Precision | Metric::Sensitivity => " (%)",
        Metric::ReactionTime | Metric::ErpLatency => " (s)",
        Metric::ErpAmplitude => " (uV)",
        _ => "",
    }
}

/// Group medians per metric over P1, P3, P5, one line per metric and group,
/// e.g. `TP young: 96, 89, 64.5`.
pub fn render_summary(
    rows: &[CohortRow],
    profiles: &[ParticipantProfile],
    doc: &StatsDocument,
) -> Result<String, ScoringError> {
    let summary = cohort_summary(rows, &Group::ALL)?;
    let mut out = String::from("OSVS cohort report\n\n");
    let count = |g| summary.participants.get(&g).copied().unwrap_or(0);
    let _ = writeln!(
        out,
        "participants: {} young, {} elderly",
        count(Group::Young),
        count(Group::Elderly)
    );
    for g in Group::ALL {
        let ages: Vec<f64> = profiles
            .iter()
            .filter(|p| p.group == g && rows.iter().any(|r| r.participant == p.id))
            .map(|p| p.age)
            .collect();
        if let Some(m) = median(&ages) {
            let lo = ages.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(out, "age {}: median {}, range {}-{}", g.key(), fmt_num(m), fmt_num(lo), fmt_num(hi));
        }
    }
    out.push_str("\ngroup medians in P1, P3, P5\n");
    for m in Metric::ALL {
        if !rows.iter().any(|r| r.metric == m) {
            continue;
        }
        for g in Group::ALL {
            let vals: Vec<String> = StimulusCondition::ALL
                .iter()
                .map(|c| summary_value(m, summary.median(g, *c, m)))
                .collect();
            let _ = writeln!(out, "{} {}{}: {}", m.label(), g.key(), summary_unit(m), vals.join(", "));
        }
    }
    let _ = writeln!(
        out,
        "\npost-hoc: {}, alpha {}",
        match doc.posthoc {
            osvs_core::stats::PosthocMethod::NormalApprox => "signed-rank, normal approximation",
            osvs_core::stats::PosthocMethod::Exact => "signed-rank, exact",
        },
        doc.alpha
    );
    out.push_str("tables: table2.txt ... table7.txt (CSV twins alongside); figures: figure5.csv, figure6.csv, figure7.csv\n");
    Ok(out)
}

pub const FIGURE5: [Metric; 4] = [Metric::TP, Metric::TN, Metric::FP, Metric::FN];
pub const FIGURE6: [Metric; 4] = [Metric::Accuracy, Metric::Precision, Metric::Sensitivity, Metric::ReactionTime];
pub const FIGURE7: [Metric; 2] = [Metric::ErpAmplitude, Metric::ErpLatency];

/// Every report file as (file name, contents).
pub fn build_report(
    rows: &[CohortRow],
    profiles: &[ParticipantProfile],
    doc: &StatsDocument,
) -> Result<Vec<(String, String)>, ScoringError> {
    let mut files = vec![
        ("table2.txt".to_string(), render_table2(doc)),
        ("table2.csv".to_string(), table2_csv(doc)),
    ];
    for spec in correlation_specs() {
        let empty = CorrelationDoc {
            table: spec.number,
            rows: spec.rows.iter().map(|r| r.name()).collect(),
            cells: Vec::new(),
        };
        let t = doc.table(spec.number).unwrap_or(&empty);
        files.push((format!("table{}.txt", spec.number), render_correlation_table(&spec, t)));
        files.push((format!("table{}.csv", spec.number), correlation_csv(t)));
    }
    files.push(("figure5.csv".to_string(), figure_csv(rows, profiles, &FIGURE5)));
    files.push(("figure6.csv".to_string(), figure_csv(rows, profiles, &FIGURE6)));
    files.push(("figure7.csv".to_string(), figure_csv(rows, profiles, &FIGURE7)));
    files.push(("summary.txt".to_string(), render_summary(rows, profiles, doc)?));
    Ok(files)
}
