mod common;

use common::{oracle, oracle_counts, ChaoticResponder};
use osvs_core::protocol::{build_session_plan, PlanConfig, StimulusCondition};
use osvs_core::runtime::{
    check_conformance, run_session, Event, ScriptedPort, SessionOptions, VirtualClock,
};
use osvs_core::scoring::{
    attribute_responses, confusion_counts, score_participant, ConfusionCounts, Filter,
};
use osvs_core::simulate::{simulate_participant, BehaviorModel, ConditionBehavior};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn chaotic_log(seed: u64) -> (osvs_core::protocol::SessionPlan, osvs_core::runtime::EventLog) {
    let plan = build_session_plan(&PlanConfig::default(), seed).unwrap();
    let mut port = ScriptedPort::new(ChaoticResponder::new(seed ^ 0xabc));
    let mut clock = VirtualClock::new(0);
    let log = run_session(&plan, &mut port, &mut clock, &SessionOptions::new("c")).unwrap();
    (plan, log)
}

fn random_model(rng: &mut ChaCha8Rng) -> BehaviorModel {
    let mut cond = || ConditionBehavior {
        hit_prob: rng.random(),
        false_alarm_prob: rng.random_range(0.0..0.3),
        rt_median_s: rng.random_range(0.2..1.6),
        rt_sigma: rng.random_range(0.0..0.6),
        lapse_prob: rng.random_range(0.0..0.2),
    };
    let mut m = BehaviorModel::uniform(40.0, cond());
    m.conditions.p3 = cond();
    m.conditions.p5 = cond();
    m
}

#[test]
fn chaotic_logs_match_brute_force() {
    for seed in 0..40 {
        let (plan, log) = chaotic_log(seed);
        check_conformance(&plan, &log).unwrap();
        let report = attribute_responses(&log, &plan).unwrap();
        let expected = oracle(&plan, &log);
        assert_eq!(report.attributions.len(), expected.len());
        for (a, o) in report.attributions.iter().zip(&expected) {
            assert_eq!(a.at, o.at);
            assert_eq!(a.outcome, o.outcome, "seed {seed} at {:?}", a.at);
            assert_eq!(a.rt_s, o.rt_s);
            assert_eq!(a.extra_presses, o.presses.saturating_sub(1));
        }
        let counted = oracle_counts(&expected);
        for c in StimulusCondition::ALL {
            assert_eq!(confusion_counts(&report.attributions, Filter::condition(c)), counted[&c]);
        }
        let pre = log.count(|e| matches!(e, Event::Response { pre_stimulus: true, .. }));
        assert_eq!(report.pre_stimulus_us.len(), pre);
    }
}

#[test]
fn model_logs_match_brute_force_and_totals() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..60 {
        let plan = build_session_plan(&PlanConfig::default(), seed).unwrap();
        let model = random_model(&mut rng);
        let log = simulate_participant(&plan, &model, seed, "m").unwrap();
        let scored = score_participant(&log, &plan).unwrap();
        let expected = oracle_counts(&oracle(&plan, &log));
        for s in &scored.conditions {
            assert_eq!(s.counts, expected[&s.condition]);
            assert_eq!(s.counts.tp + s.counts.fn_, 96);
            assert_eq!(s.counts.fp + s.counts.tn, 384);
        }
        // a model participant never presses twice or outside a window
        assert_eq!(scored.excluded_unattributed, 0);
        assert!(scored.conditions.iter().all(|c| c.extra_presses == 0));
    }
}

#[test]
fn hand_split_adds_up() {
    let (plan, log) = chaotic_log(5);
    let scored = score_participant(&log, &plan).unwrap();
    for c in &scored.conditions {
        let sum = scored
            .by_hand
            .iter()
            .filter(|h| h.condition == c.condition)
            .fold(ConfusionCounts::default(), |acc, h| ConfusionCounts {
                tp: acc.tp + h.counts.tp,
                tn: acc.tn + h.counts.tn,
                fp: acc.fp + h.counts.fp,
                fn_: acc.fn_ + h.counts.fn_,
            });
        assert_eq!(sum, c.counts);
    }
}

#[test]
fn plan_hash_mismatch_is_conformance_error() {
    let (_, log) = chaotic_log(1);
    let other = build_session_plan(&PlanConfig::default(), 2).unwrap();
    let err = score_participant(&log, &other).unwrap_err();
    assert!(err.to_string().contains("hash"), "{err}");
}

#[test]
fn scored_document_round_trips() {
    let (plan, log) = chaotic_log(9);
    let scored = score_participant(&log, &plan).unwrap();
    let text = scored.to_text();
    assert_eq!(osvs_core::scoring::ScoredParticipant::from_text(&text).unwrap(), scored);
}

proptest! {
    #[test]
    fn metric_identities(tp in 0u32..200, tn in 0u32..500, fp in 0u32..500, fn_ in 0u32..200) {
        let c = ConfusionCounts { tp, tn, fp, fn_ };
        let n = tp + tn + fp + fn_;
        match c.accuracy() {
            Some(a) => prop_assert_eq!(a, f64::from(tp + tn) / f64::from(n)),
            None => prop_assert_eq!(n, 0),
        }
        match c.precision() {
            Some(p) => prop_assert_eq!(p, f64::from(tp) / f64::from(tp + fp)),
            None => prop_assert_eq!(tp + fp, 0),
        }
        match c.sensitivity() {
            Some(s) => prop_assert_eq!(s, f64::from(tp) / f64::from(tp + fn_)),
            None => prop_assert_eq!(tp + fn_, 0),
        }
    }
}
