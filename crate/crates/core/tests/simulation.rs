use osvs_core::protocol::{build_session_plan, Group, PlanConfig, StimulusCondition};
use osvs_core::runtime::check_conformance;
use osvs_core::scoring::{cohort_rows, score_participant, Metric};
use osvs_core::simulate::{build_cohort, simulate_participant, BehaviorModel, CohortSpec, ConditionBehavior};
use osvs_core::stats::{correlate_variables, median, metric_variable, Variable};

fn model(hit: f64, fa: f64, rt: f64) -> BehaviorModel {
    BehaviorModel::uniform(
        30.0,
        ConditionBehavior {
            hit_prob: hit,
            false_alarm_prob: fa,
            rt_median_s: rt,
            rt_sigma: 0.25,
            lapse_prob: 0.0,
        },
    )
}

#[test]
fn mean_tp_matches_hit_probability() {
    let plan = build_session_plan(&PlanConfig::default(), 1).unwrap();
    let m = model(89.0 / 96.0, 0.0, 0.5);
    let runs = 10_000u64;
    let mut total = 0u64;
    for seed in 0..runs {
        let log = simulate_participant(&plan, &m, seed, "s").unwrap();
        let scored = score_participant(&log, &plan).unwrap();
        total += u64::from(scored.condition(StimulusCondition::P3).unwrap().counts.tp);
    }
    let mean = total as f64 / runs as f64;
    assert!((mean - 89.0).abs() <= 0.1, "mean TP {mean}");
}

#[test]
fn hit_rate_within_binomial_bounds() {
    let p = 0.7;
    let m = model(p, 0.05, 0.5);
    let (mut hits, mut targets, mut fas, mut nontargets) = (0u32, 0u32, 0u32, 0u32);
    for seed in 0..35 {
        let plan = build_session_plan(&PlanConfig::default(), seed).unwrap();
        let log = simulate_participant(&plan, &m, seed, "s").unwrap();
        check_conformance(&plan, &log).unwrap();
        for c in score_participant(&log, &plan).unwrap().conditions {
            hits += c.counts.tp;
            targets += c.counts.tp + c.counts.fn_;
            fas += c.counts.fp;
            nontargets += c.counts.fp + c.counts.tn;
        }
    }
    assert!(targets >= 10_000);
    let n = f64::from(targets);
    let bound = 3.0 * (p * (1.0 - p) / n).sqrt();
    assert!((f64::from(hits) / n - p).abs() < bound);
    let nf = f64::from(nontargets);
    assert!((f64::from(fas) / nf - 0.05).abs() < 3.0 * (0.05 * 0.95 / nf).sqrt());
}

/// Median of all hit RTs pooled over 96 targets x 100 seeds.
#[test]
fn median_rt_recovered() {
    let plan = build_session_plan(&PlanConfig::default(), 3).unwrap();
    let m = model(1.0, 0.0, 0.66);
    let mut rts = Vec::new();
    for seed in 0..100 {
        let log = simulate_participant(&plan, &m, seed, "s").unwrap();
        let scored = score_participant(&log, &plan).unwrap();
        rts.extend_from_slice(&scored.condition(StimulusCondition::P5).unwrap().rt_s);
    }
    assert_eq!(rts.len(), 9600);
    let rt = median(&rts).unwrap();
    assert!((rt - 0.66).abs() <= 0.02, "pooled median {rt}");
}

fn age_tp_rho(spec: &CohortSpec, seed: u64, c: StimulusCondition) -> Option<(f64, bool)> {
    let cohort = build_cohort(spec, seed).unwrap();
    let plan = build_session_plan(&PlanConfig::default(), seed).unwrap();
    let mut rows = Vec::new();
    for m in &cohort {
        let log = simulate_participant(&plan, &m.behavior, m.seed, &m.profile.id).unwrap();
        rows.extend(cohort_rows(&score_participant(&log, &plan).unwrap(), m.profile.group));
    }
    let age = Variable::new("age", cohort.iter().map(|m| (m.profile.id.clone(), Some(m.profile.age))));
    let r = correlate_variables(&age, &metric_variable(&rows, c, Metric::TP)).unwrap();
    r.rho.map(|rho| (rho, r.significant))
}

#[test]
fn default_coupling_gives_negative_age_effect() {
    let spec = CohortSpec::default();
    for c in [StimulusCondition::P3, StimulusCondition::P5] {
        let negative = (0..10)
            .filter(|&s| age_tp_rho(&spec, s, c).is_some_and(|(rho, _)| rho < 0.0))
            .count();
        assert!(negative >= 9, "{c}: {negative}/10");
    }
}

#[test]
fn default_coupling_magnitude_near_reference() {
    let spec = CohortSpec::default();
    for (c, target) in [(StimulusCondition::P3, -0.43), (StimulusCondition::P5, -0.58)] {
        let rhos: Vec<f64> = (0..10).filter_map(|s| age_tp_rho(&spec, s, c)).map(|r| r.0).collect();
        let within = rhos.iter().filter(|r| (*r - target).abs() <= 0.25).count();
        assert!(within >= 9, "{c}: {rhos:?}");
    }
}

#[test]
fn zero_coupling_gives_no_age_effect() {
    let spec = CohortSpec {
        coupling: 0.0,
        ..CohortSpec::default()
    };
    let significant = (0..10)
        .filter(|&s| age_tp_rho(&spec, s, StimulusCondition::P3).is_some_and(|(_, sig)| sig))
        .count();
    assert!(significant <= 2, "{significant}/10 cohorts significant");
}

#[test]
fn cohort_groups_and_determinism() {
    let spec = CohortSpec::default();
    let a = build_cohort(&spec, 42).unwrap();
    let ages = |g| -> Vec<f64> { a.iter().filter(|m| m.profile.group == g).map(|m| m.profile.age).collect() };
    assert!((median(&ages(Group::Young)).unwrap() - 23.1).abs() < 4.0);
    assert!((median(&ages(Group::Elderly)).unwrap() - 68.7).abs() < 4.0);
    let b = build_cohort(&spec, 42).unwrap();
    assert_eq!(a, b);
    let plan = build_session_plan(&PlanConfig::default(), 42).unwrap();
    let l1 = simulate_participant(&plan, &a[3].behavior, a[3].seed, "x").unwrap();
    let l2 = simulate_participant(&plan, &b[3].behavior, b[3].seed, "x").unwrap();
    assert_eq!(l1.to_jsonl(), l2.to_jsonl());
}
