//! Nonparametric statistics: Friedman with pairwise Wilcoxon post-hoc
//! tests, and Spearman correlation tables with a significance gate.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::protocol::{Group, StimulusCondition};
use crate::scoring::{CohortRow, Metric};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} {what}, got {got}")]
    TooSmall {
        what: &'static str,
        need: usize,
        got: usize,
    },
    #[error("row {row} has {got} values, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("participant ids do not match between {left} and {right}: {}", ids.join(", "))]
    JoinMismatch {
        left: String,
        right: String,
        ids: Vec<String>,
    },
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// 1-based ranks with ties given their mean rank.
pub fn rank_average(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j share rank mean of (i+1)..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = r;
        }
        i = j;
    }
    ranks
}

/// Sizes of tie groups (runs of equal values).
fn tie_sizes(values: &[f64]) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i + 1;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        out.push(j - i);
        i = j;
    }
    out
}

fn tie_term(values: &[f64]) -> f64 {
    tie_sizes(values)
        .into_iter()
        .map(|t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum()
}

/// Significance stars at the 0.05 / 0.01 / 0.001 thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stars {
    NotSignificant,
    One,
    Two,
    Three,
}

impl Stars {
    pub fn from_p(p: f64) -> Self {
        if p < 0.001 {
            Stars::Three
        } else if p < 0.01 {
            Stars::Two
        } else if p < 0.05 {
            Stars::One
        } else {
            Stars::NotSignificant
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stars::NotSignificant => "n.s.",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        }
    }

    pub fn is_significant(self) -> bool {
        self != Stars::NotSignificant
    }
}

impl fmt::Display for Stars {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Subjects x conditions matrix with no missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedMeasures {
    labels: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl RepeatedMeasures {
    pub fn new(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        let k = labels.len();
        if k < 2 {
            return Err(StatsError::TooSmall {
                what: "conditions",
                need: 2,
                got: k,
            });
        }
        if rows.len() < 2 {
            return Err(StatsError::TooSmall {
                what: "subjects",
                need: 2,
                got: rows.len(),
            });
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(StatsError::Ragged {
                    row: i,
                    got: r.len(),
                    expected: k,
                });
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(StatsError::NonFinite { row: i, col: j });
            }
        }
        Ok(Self { labels, rows })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

/// How post-hoc signed-rank p values are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosthocMethod {
    /// Normal approximation with tie-corrected variance, no continuity correction.
    #[default]
    NormalApprox,
    /// Exact null distribution for up to 25 nonzero differences, normal beyond.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub a: String,
    pub b: String,
    /// Number of nonzero differences used.
    pub n: usize,
    pub w_plus: f64,
    /// Uncorrected two-sided p.
    pub p_raw: f64,
    /// Bonferroni-corrected p.
    pub p: f64,
    pub stars: Stars,
}

impl PairResult {
    pub fn label(&self) -> String {
        format!("{}-{}", self.a, self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub n: usize,
    pub k: usize,
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
    /// Whether `p` comes from the exact permutation distribution.
    pub exact: bool,
    pub mean_ranks: Vec<f64>,
    pub posthoc: Vec<PairResult>,
}

/// Largest n for which the Friedman p value is computed exactly.
pub const FRIEDMAN_EXACT_MAX_N: usize = 8;
/// Exact Friedman p is limited to k! permutations per row at most this many.
const FRIEDMAN_EXACT_MAX_K: usize = 4;
/// Largest count of nonzero differences given an exact signed-rank p.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

fn friedman_statistic(row_ranks: &[Vec<f64>]) -> (f64, f64) {
    let n = row_ranks.len() as f64;
    let k = row_ranks[0].len();
    let kf = k as f64;
    let sums: Vec<f64> = (0..k).map(|j| row_ranks.iter().map(|r| r[j]).sum()).collect();
    let ss: f64 = sums.iter().map(|r| r * r).sum();
    let raw = 12.0 / (n * kf * (kf + 1.0)) * ss - 3.0 * n * (kf + 1.0);
    let ties: f64 = row_ranks.iter().map(|r| tie_term(r)).sum();
    let c = 1.0 - ties / (n * (kf * kf * kf - kf));
    (raw, c)
}

/// Friedman test with default post-hoc comparisons.
pub fn friedman(data: &RepeatedMeasures) -> FriedmanResult {
    friedman_with(data, PosthocMethod::default())
}

pub fn friedman_with(data: &RepeatedMeasures, method: PosthocMethod) -> FriedmanResult {
    let n = data.n();
    let k = data.k();
    let ranks: Vec<Vec<f64>> = data.rows.iter().map(|r| rank_average(r)).collect();
    let mean_ranks = (0..k)
        .map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let (raw, c) = friedman_statistic(&ranks);
    let posthoc = posthoc_pairs(data, method);
    if c <= 1e-12 {
        return FriedmanResult {
            n,
            k,
            chi2: 0.0,
            df: k - 1,
            p: 1.0,
            exact: false,
            mean_ranks,
            posthoc,
        };
    }
    let chi2 = (raw / c).max(0.0);
    let (p, exact) = if n <= FRIEDMAN_EXACT_MAX_N && k <= FRIEDMAN_EXACT_MAX_K {
        (friedman_exact_p(&ranks), true)
    } else {
        let dist = ChiSquared::new((k - 1) as f64).expect("df > 0");
        (dist.sf(chi2), false)
    };
    FriedmanResult {
        n,
        k,
        chi2,
        df: k - 1,
        p: p.clamp(f64::MIN_POSITIVE, 1.0),
        exact,
        mean_ranks,
        posthoc,
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// P(sum of squared rank sums >= observed) when each subject's ranks are
/// independently and uniformly permuted. Within-row tie structure is kept,
/// so the tie correction is constant and the sum of squares orders the
/// statistic. Ranks are doubled to stay integral.
fn friedman_exact_p(ranks: &[Vec<f64>]) -> f64 {
    let k = ranks[0].len();
    let perms = permutations(k);
    let doubled: Vec<Vec<i64>> = ranks
        .iter()
        .map(|r| r.iter().map(|x| (x * 2.0).round() as i64).collect())
        .collect();
    let observed: i64 = (0..k)
        .map(|j| doubled.iter().map(|r| r[j]).sum::<i64>())
        .map(|s| s * s)
        .sum();

    let weight = 1.0 / perms.len() as f64;
    let permuted = |sums: &[i64; FRIEDMAN_EXACT_MAX_K], row: &[i64], perm: &[usize]| {
        let mut s = *sums;
        for (j, &src) in perm.iter().enumerate() {
            s[j] += row[src];
        }
        s
    };
    let (last, rest) = doubled.split_last().expect("at least one row");
    let mut states: HashMap<[i64; FRIEDMAN_EXACT_MAX_K], f64> = HashMap::from([([0; FRIEDMAN_EXACT_MAX_K], 1.0)]);
    for row in rest {
        let mut next = HashMap::with_capacity(states.len() * perms.len());
        for (sums, prob) in &states {
            for perm in &perms {
                *next.entry(permuted(sums, row, perm)).or_insert(0.0) += prob * weight;
            }
        }
        states = next;
    }
    // the last row only feeds the tail sum
    states
        .iter()
        .flat_map(|(sums, prob)| perms.iter().map(move |perm| (permuted(sums, last, perm), prob * weight)))
        .filter(|(s, _)| s.iter().map(|x| x * x).sum::<i64>() >= observed)
        .map(|(_, p)| p)
        .sum::<f64>()
        .min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    pub n: usize,
    pub w_plus: f64,
    pub p: f64,
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped; if none remain, p = 1.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], method: PosthocMethod) -> Result<WilcoxonResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            n: 0,
            w_plus: 0.0,
            p: 1.0,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = rank_average(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let p = match method {
        PosthocMethod::Exact if n <= WILCOXON_EXACT_MAX_N => signed_rank_exact_p(&ranks, w_plus),
        _ => signed_rank_normal_p(n, tie_term(&abs), w_plus),
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        p: p.min(1.0),
    })
}

fn signed_rank_normal_p(n: usize, ties: f64, w_plus: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w_plus - mean) / var.sqrt();
    let normal = Normal::standard();
    2.0 * normal.sf(z.abs())
}

/// Exact two-sided p by counting sign assignments over doubled ranks.
fn signed_rank_exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(ranks.len() as i32);
    let obs = (w_plus * 2.0).round() as usize;
    let lower: f64 = counts[..=obs].iter().sum::<f64>() / all;
    let upper: f64 = counts[obs..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

/// Signed-rank test for every condition pair, Bonferroni-corrected over
/// the number of pairs.
pub fn posthoc_pairs(data: &RepeatedMeasures, method: PosthocMethod) -> Vec<PairResult> {
    let k = data.k();
    let m = (k * (k - 1) / 2) as f64;
    let mut out = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let w = wilcoxon_signed_rank(&data.column(a), &data.column(b), method)
                .expect("columns have equal length");
            let p = (w.p * m).min(1.0);
            out.push(PairResult {
                a: data.labels[a].clone(),
                b: data.labels[b].clone(),
                n: w.n,
                w_plus: w.w_plus,
                p_raw: w.p,
                p,
                stars: Stars::from_p(p),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationFlag {
    ZeroVariance,
    TooFewPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub n: usize,
    pub rho: Option<f64>,
    pub p: Option<f64>,
    pub significant: bool,
    pub flag: Option<CorrelationFlag>,
}

impl CorrelationResult {
    fn undefined(n: usize, flag: CorrelationFlag) -> Self {
        Self {
            n,
            rho: None,
            p: None,
            significant: false,
            flag: Some(flag),
        }
    }

    /// The coefficient to two decimals when significant, otherwise "n.s.".
    pub fn reported_value(&self) -> String {
        match self.rho {
            Some(r) if self.significant => format!("{r:.2}"),
            _ => "n.s.".to_string(),
        }
    }
}

/// Below this n the Spearman p value is computed by full enumeration.
pub const SPEARMAN_EXACT_BELOW: usize = 10;
pub const ALPHA: f64 = 0.05;

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with a two-sided p value.
pub fn correlate(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooSmall {
            what: "pairs",
            need: 3,
            got: n,
        });
    }
    let rx = rank_average(x);
    let ry = rank_average(y);
    let Some(rho) = pearson(&rx, &ry) else {
        return Ok(CorrelationResult::undefined(n, CorrelationFlag::ZeroVariance));
    };
    let p = if n < SPEARMAN_EXACT_BELOW {
        spearman_exact_p(&rx, &ry, rho)
    } else if rho.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        2.0 * dist.sf(t.abs())
    };
    Ok(CorrelationResult {
        n,
        rho: Some(rho),
        p: Some(p),
        significant: p < ALPHA,
        flag: None,
    })
}

/// Fraction of all orderings of `ry` whose |rho| reaches the observed one.
fn spearman_exact_p(rx: &[f64], ry: &[f64], rho: f64) -> f64 {
    let mut y = ry.to_vec();
    let n = y.len();
    let target = rho.abs() - 1e-12;
    let mut hits = 0u64;
    let mut total = 0u64;
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut visit = |y: &[f64]| {
        total += 1;
        if pearson(rx, y).is_some_and(|r| r.abs() >= target) {
            hits += 1;
        }
    };
    visit(&y);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                y.swap(0, i);
            } else {
                y.swap(c[i], i);
            }
            visit(&y);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

/// A per-participant variable; `None` marks an undefined value.
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub values: BTreeMap<String, Option<f64>>,
}

impl Variable {
    pub fn new(name: impl Into<String>, values: impl IntoIterator<Item = (String, Option<f64>)>) -> Self {
        Self {
            name: name.into(),
            values: values.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// `cells[i][j]` correlates row variable i with column variable j.
    pub cells: Vec<Vec<CorrelationResult>>,
}

/// Correlate two variables over participants present in both with defined
/// values. Both variables must cover the same participant ids.
pub fn correlate_variables(a: &Variable, b: &Variable) -> Result<CorrelationResult, StatsError> {
    let ka: BTreeSet<&String> = a.values.keys().collect();
    let kb: BTreeSet<&String> = b.values.keys().collect();
    if ka != kb {
        return Err(StatsError::JoinMismatch {
            left: a.name.clone(),
            right: b.name.clone(),
            ids: ka.symmetric_difference(&kb).map(|s| s.to_string()).collect(),
        });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = a
        .values
        .iter()
        .filter_map(|(id, va)| Some((*va.as_ref()?, b.values[id]?)))
        .unzip();
    if x.len() < 3 {
        return Ok(CorrelationResult::undefined(x.len(), CorrelationFlag::TooFewPairs));
    }
    correlate(&x, &y)
}

pub fn correlation_table(rows: &[Variable], columns: &[Variable]) -> Result<CorrelationTable, StatsError> {
    let cells = rows
        .iter()
        .map(|r| columns.iter().map(|c| correlate_variables(r, c)).collect())
        .collect::<Result<_, _>>()?;
    Ok(CorrelationTable {
        rows: rows.iter().map(|v| v.name.clone()).collect(),
        columns: columns.iter().map(|v| v.name.clone()).collect(),
        cells,
    })
}

/// One metric per participant of `group` across the three conditions.
/// Participants with an undefined value in any condition are left out and
/// returned separately.
pub fn repeated_measures(
    rows: &[CohortRow],
    group: Group,
    metric: Metric,
) -> Result<(RepeatedMeasures, Vec<String>), StatsError> {
    let mut by_id: BTreeMap<&str, [Option<f64>; 3]> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.group == group && r.metric == metric) {
        let j = StimulusCondition::ALL.iter().position(|c| *c == r.condition).expect("known condition");
        by_id.entry(&r.participant).or_default()[j] = r.value;
    }
    let mut data = Vec::new();
    let mut dropped = Vec::new();
    for (id, vals) in by_id {
        match vals {
            [Some(a), Some(b), Some(c)] => data.push(vec![a, b, c]),
            _ => dropped.push(id.to_string()),
        }
    }
    let labels = StimulusCondition::ALL.iter().map(|c| c.label().to_string()).collect();
    Ok((RepeatedMeasures::new(labels, data)?, dropped))
}

/// A cohort metric in one condition as a correlation variable.
pub fn metric_variable(rows: &[CohortRow], condition: StimulusCondition, metric: Metric) -> Variable {
    Variable::new(
        format!("{} {}", metric.label(), condition.label()),
        rows.iter()
            .filter(|r| r.condition == condition && r.metric == metric)
            .map(|r| (r.participant.clone(), r.value)),
    )
}
