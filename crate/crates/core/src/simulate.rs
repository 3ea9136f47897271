//! Synthetic participants: behaviour on a virtual clock, EEG forward
//! model and cohort construction from group-level targets.

use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::ContinuousCDF;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::erp::{EegRecording, DEFAULT_CHANNELS};
use crate::protocol::{
    Gender, Group, Handedness, ParticipantProfile, SessionPlan, StimulusCondition, VisionCorrection,
    NONTARGETS_PER_CONDITION, TARGETS_PER_CONDITION,
};
use crate::runtime::{
    run_session, ClientMessage, Event, EventLog, Responder, RuntimeError, ScriptedPort, ServerMessage,
    SessionOptions, VirtualClock,
};
use crate::seed::{self, Stream};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid model: {0}")]
    Model(String),
    #[error("cohort needs at least one {0} participant")]
    EmptyGroup(Group),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

/// One value per stimulus condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerCondition<T> {
    pub p1: T,
    pub p3: T,
    pub p5: T,
}

impl<T> PerCondition<T> {
    pub fn get(&self, c: StimulusCondition) -> &T {
        match c {
            StimulusCondition::P1 => &self.p1,
            StimulusCondition::P3 => &self.p3,
            StimulusCondition::P5 => &self.p5,
        }
    }

    pub fn from_fn(mut f: impl FnMut(StimulusCondition) -> T) -> Self {
        Self {
            p1: f(StimulusCondition::P1),
            p3: f(StimulusCondition::P3),
            p5: f(StimulusCondition::P5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionBehavior {
    pub hit_prob: f64,
    pub false_alarm_prob: f64,
    /// Median of the log-normal reaction time.
    pub rt_median_s: f64,
    /// Log-scale spread of the reaction time.
    pub rt_sigma: f64,
    /// Chance that a hit is a lapse with a uniformly placed press.
    pub lapse_prob: f64,
}

impl ConditionBehavior {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, p) in [
            ("hit_prob", self.hit_prob),
            ("false_alarm_prob", self.false_alarm_prob),
            ("lapse_prob", self.lapse_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::Model(format!("{name} {p} outside [0, 1]")));
            }
        }
        if !(self.rt_median_s > 0.0) {
            return Err(SimError::Model(format!("rt_median_s {} must be positive", self.rt_median_s)));
        }
        if !(self.rt_sigma >= 0.0) {
            return Err(SimError::Model(format!("rt_sigma {} must be non-negative", self.rt_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorModel {
    pub age: f64,
    /// Delay before confirming a cue.
    pub ack_delay_ms: u32,
    pub conditions: PerCondition<ConditionBehavior>,
}

impl BehaviorModel {
    pub fn uniform(age: f64, c: ConditionBehavior) -> Self {
        Self {
            age,
            ack_delay_ms: 1000,
            conditions: PerCondition { p1: c, p3: c, p5: c },
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for c in StimulusCondition::ALL {
            self.conditions.get(c).validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErpComponent {
    pub amplitude_uv: f64,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErpModel {
    pub components: PerCondition<ErpComponent>,
    /// Standard deviation of the Gaussian bump.
    pub width_s: f64,
    pub noise_sigma_uv: f64,
    /// Scale of the bump per channel, in montage order.
    pub channel_gains: Vec<f64>,
}

impl ErpModel {
    pub fn single(amplitude_uv: f64, latency_s: f64, noise_sigma_uv: f64) -> Self {
        let c = ErpComponent {
            amplitude_uv,
            latency_s,
        };
        Self {
            components: PerCondition { p1: c, p3: c, p5: c },
            width_s: 0.05,
            noise_sigma_uv,
            channel_gains: vec![0.2, 0.5, 0.8, 1.0, 0.6],
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.width_s > 0.0) {
            return Err(SimError::Model(format!("width_s {} must be positive", self.width_s)));
        }
        if !(self.noise_sigma_uv >= 0.0) {
            return Err(SimError::Model(format!("noise_sigma_uv {} must be non-negative", self.noise_sigma_uv)));
        }
        if self.channel_gains.len() != DEFAULT_CHANNELS.len() {
            return Err(SimError::Model(format!(
                "{} channel gains for {} channels",
                self.channel_gains.len(),
                DEFAULT_CHANNELS.len()
            )));
        }
        Ok(())
    }
}

/// Answer window of each display in presentation order.
#[derive(Debug, Clone, Copy)]
struct Slot {
    condition: StimulusCondition,
    is_target: bool,
    window_us: i64,
}

fn slots(plan: &SessionPlan) -> Vec<Slot> {
    let tail = i64::from(plan.timing.soa_max_ms) * 1000;
    let mut out = Vec::new();
    for set in &plan.sets {
        for block in &set.blocks {
            let d = &block.displays;
            for (i, disp) in d.iter().enumerate() {
                let window_us = match d.get(i + 1) {
                    Some(next) => i64::from(next.onset_offset_ms - disp.onset_offset_ms) * 1000,
                    None => tail,
                };
                out.push(Slot {
                    condition: set.condition,
                    is_target: disp.is_target,
                    window_us,
                });
            }
        }
    }
    out
}

/// Presses are kept at least this far before the next onset.
const WINDOW_GUARD_US: i64 = 1000;

/// Scripted participant that follows a [`BehaviorModel`]. It knows the plan
/// (as a simulated observer who perceives targets would) but only reacts
/// to what the server sends.
pub struct ModelResponder {
    model: BehaviorModel,
    slots: Vec<Slot>,
    next: usize,
    hand: crate::protocol::HandCondition,
    rng: ChaCha8Rng,
}

impl ModelResponder {
    pub fn new(plan: &SessionPlan, model: BehaviorModel, seed: u64) -> Self {
        Self {
            model,
            slots: slots(plan),
            next: 0,
            hand: crate::protocol::HandCondition::Right,
            rng: seed::rng(seed, Stream::Behavior),
        }
    }

    fn press_delay(&mut self, slot: Slot) -> Option<i64> {
        let b = *self.model.conditions.get(slot.condition);
        let latest = (slot.window_us - WINDOW_GUARD_US).max(0);
        // All draws are always taken so the stream does not depend on outcomes.
        let u: f64 = self.rng.random();
        let lapse: f64 = self.rng.random();
        let uniform_t = self.rng.random_range(0..=latest);
        let z: f64 = self.rng.sample(StandardNormal);
        if slot.is_target {
            if u >= b.hit_prob {
                return None;
            }
            if lapse < b.lapse_prob {
                return Some(uniform_t);
            }
            let rt_us = (b.rt_median_s * (b.rt_sigma * z).exp() * 1e6).round() as i64;
            Some(rt_us.clamp(0, latest))
        } else if u < b.false_alarm_prob {
            Some(uniform_t)
        } else {
            None
        }
    }
}

impl Responder for ModelResponder {
    fn on_message(&mut self, msg: &ServerMessage, t_us: i64) -> Vec<(i64, ClientMessage)> {
        match msg {
            ServerMessage::Cue { hand, .. } => {
                self.hand = *hand;
                vec![(t_us + i64::from(self.model.ack_delay_ms) * 1000, ClientMessage::Ready)]
            }
            ServerMessage::Show { .. } => {
                let Some(&slot) = self.slots.get(self.next) else {
                    return Vec::new();
                };
                self.next += 1;
                self.press_delay(slot)
                    .map(|d| {
                        let at = t_us + d;
                        (
                            at,
                            ClientMessage::Response {
                                client_t_us: at,
                                hand: self.hand,
                            },
                        )
                    })
                    .into_iter()
                    .collect()
            }
            _ => Vec::new(),
        }
    }
}

/// Run a full session for a simulated participant on a virtual clock.
pub fn simulate_participant(
    plan: &SessionPlan,
    model: &BehaviorModel,
    seed: u64,
    participant: &str,
) -> Result<EventLog, SimError> {
    model.validate()?;
    let mut port = ScriptedPort::new(ModelResponder::new(plan, model.clone(), seed));
    let mut clock = VirtualClock::new(0);
    let opts = SessionOptions::new(participant);
    Ok(run_session(plan, &mut port, &mut clock, &opts)?)
}

/// Trailing recording after the last log record.
const EEG_TAIL_US: i64 = 2_000_000;

/// Forward-model an EEG recording for `log`: white noise on every channel
/// plus a Gaussian bump after each target onset, scaled per channel.
pub fn synthesize_eeg(log: &EventLog, model: &ErpModel, seed: u64) -> Result<EegRecording, SimError> {
    model.validate()?;
    let end_us = log.records().last().map_or(0, |r| r.t_us) + EEG_TAIL_US;
    let mut eeg = EegRecording::zeros(0, 1);
    let len = eeg.nearest_index(end_us) as usize + 1;
    let rate = f64::from(eeg.rate_hz);
    let mut rng = seed::rng(seed, Stream::Eeg);

    if model.noise_sigma_uv > 0.0 {
        let noise = Normal::new(0.0, model.noise_sigma_uv).expect("sigma checked");
        eeg.samples = (0..DEFAULT_CHANNELS.len())
            .map(|_| (0..len).map(|_| noise.sample(&mut rng) as f32).collect())
            .collect();
    } else {
        eeg.samples = vec![vec![0.0; len]; DEFAULT_CHANNELS.len()];
    }

    let mut condition = None;
    for r in log.records() {
        match &r.event {
            Event::SetStart { condition: c, .. } => condition = Some(*c),
            Event::StimOn { is_target: true, .. } => {
                let Some(c) = condition else { continue };
                let comp = model.components.get(c);
                let center_s = r.t_us as f64 / 1e6 + comp.latency_s;
                let lo = ((center_s - 5.0 * model.width_s) * rate).floor().max(0.0) as usize;
                let hi = (((center_s + 5.0 * model.width_s) * rate).ceil() as usize).min(len - 1);
                for i in lo..=hi {
                    let t = i as f64 / rate;
                    let shape = (-0.5 * ((t - center_s) / model.width_s).powi(2)).exp();
                    for (ch, gain) in eeg.samples.iter_mut().zip(&model.channel_gains) {
                        ch[i] += (comp.amplitude_uv * gain * shape) as f32;
                    }
                }
            }
            _ => {}
        }
    }
    Ok(eeg)
}

/// Group-level targets, per condition in P1, P3, P5 order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTargets {
    pub age_mean: f64,
    pub age_sd: f64,
    pub male_fraction: f64,
    pub tp: [f64; 3],
    pub fp: [f64; 3],
    pub rt_s: [f64; 3],
    pub erp_amplitude_uv: [f64; 3],
    pub erp_latency_s: [f64; 3],
}

/// Everything needed to generate a cohort. Stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_young: usize,
    pub n_elderly: usize,
    /// Scales the age slope of every performance parameter; 0 removes any age effect.
    pub coupling: f64,
    pub young: GroupTargets,
    pub elderly: GroupTargets,
    /// Spread of individual ability on the hit logit, per condition.
    pub hit_ability_sd: [f64; 3],
    pub false_alarm_sd: f64,
    /// Spread of individual speed on log median RT.
    pub rt_speed_sd: f64,
    pub rt_sigma: f64,
    pub lapse_prob: f64,
    pub max_hit_prob: f64,
    pub ack_delay_ms: u32,
    pub erp_amplitude_sd: f64,
    pub erp_latency_sd: f64,
    pub erp_width_s: f64,
    pub erp_noise_uv: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_young: 10,
            n_elderly: 15,
            coupling: 1.0,
            young: GroupTargets {
                age_mean: 23.1,
                age_sd: 2.9,
                male_fraction: 0.8,
                tp: [96.0, 89.0, 64.5],
                fp: [1.0, 3.5, 6.5],
                rt_s: [0.39, 0.56, 0.63],
                erp_amplitude_uv: [9.8, 8.3, 6.6],
                erp_latency_s: [0.52, 0.63, 0.66],
            },
            elderly: GroupTargets {
                age_mean: 68.7,
                age_sd: 3.0,
                male_fraction: 8.0 / 15.0,
                tp: [96.0, 75.0, 50.0],
                fp: [2.0, 7.0, 6.0],
                rt_s: [0.50, 0.66, 0.68],
                erp_amplitude_uv: [4.8, 2.1, 3.1],
                erp_latency_s: [0.58, 0.65, 0.70],
            },
            hit_ability_sd: [0.0, 1.1, 0.35],
            false_alarm_sd: 0.5,
            rt_speed_sd: 0.08,
            rt_sigma: 0.25,
            lapse_prob: 0.0,
            max_hit_prob: 0.9995,
            ack_delay_ms: 1000,
            erp_amplitude_sd: 1.0,
            erp_latency_sd: 0.02,
            erp_width_s: 0.05,
            erp_noise_uv: 5.0,
        }
    }
}

impl CohortSpec {
    pub fn from_text(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("cohort spec serializes")
    }

    /// Straight line through the two group targets on the scale given by
    /// `to`/`from`, evaluated at `age` with the slope scaled by `coupling`.
    fn age_curve(&self, young: f64, elderly: f64, age: f64, to: fn(f64) -> f64, from: fn(f64) -> f64) -> f64 {
        let (ay, ae) = (self.young.age_mean, self.elderly.age_mean);
        let (fy, fe) = (to(young), to(elderly));
        let mid = (fy + fe) / 2.0;
        let slope = (fe - fy) / (ae - ay);
        from(mid + self.coupling * slope * (age - (ay + ae) / 2.0))
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn identity(x: f64) -> f64 {
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMember {
    pub profile: ParticipantProfile,
    pub behavior: BehaviorModel,
    pub erp: ErpModel,
    /// Seed for this participant's behaviour and EEG streams.
    #[serde(with = "crate::seed::as_string")]
    pub seed: u64,
}

/// Draw a cohort: profiles with ages per group, then per-participant
/// parameters from age curves plus individual offsets.
pub fn build_cohort(spec: &CohortSpec, seed: u64) -> Result<Vec<CohortMember>, SimError> {
    if spec.n_young == 0 {
        return Err(SimError::EmptyGroup(Group::Young));
    }
    if spec.n_elderly == 0 {
        return Err(SimError::EmptyGroup(Group::Elderly));
    }
    let groups = [
        (Group::Young, spec.n_young, &spec.young, "y"),
        (Group::Elderly, spec.n_elderly, &spec.elderly, "e"),
    ];
    let mut members = Vec::new();
    let mut index = 0u64;
    for (gi, (group, n, targets, prefix)) in groups.into_iter().enumerate() {
        let mut group_rng = seed::rng(seed::child(seed, 1000 + gi as u64), Stream::Cohort);
        let [ability, fa_offset, speed, amp_offset, lat_offset] =
            std::array::from_fn(|_| stratified_normal(n, &mut group_rng));
        for k in 1..=n {
            let child = seed::child(seed, index);
            index += 1;
            let mut rng = seed::rng(child, Stream::Cohort);
            let profile = draw_profile(&mut rng, group, targets, format!("{prefix}{k}"));
            let age = profile.age;
            let i = k - 1;
            let (ability, fa_offset, speed, amp_offset, lat_offset) =
                (ability[i], fa_offset[i], speed[i], amp_offset[i], lat_offset[i]);

            let conditions = PerCondition::from_fn(|c| {
                let j = c as usize;
                let cap = |p: f64| p.clamp(1.0 - spec.max_hit_prob, spec.max_hit_prob);
                let hit_y = cap(spec.young.tp[j] / TARGETS_PER_CONDITION as f64);
                let hit_e = cap(spec.elderly.tp[j] / TARGETS_PER_CONDITION as f64);
                let hit = expit(
                    logit(spec.age_curve(hit_y, hit_e, age, logit, expit)) + spec.hit_ability_sd[j] * ability,
                );
                let fa_cap = |p: f64| p.clamp(1e-4, 0.5);
                let fa_y = fa_cap(spec.young.fp[j] / NONTARGETS_PER_CONDITION as f64);
                let fa_e = fa_cap(spec.elderly.fp[j] / NONTARGETS_PER_CONDITION as f64);
                let fa = expit(logit(spec.age_curve(fa_y, fa_e, age, logit, expit)) + spec.false_alarm_sd * fa_offset);
                let rt = spec.age_curve(spec.young.rt_s[j], spec.elderly.rt_s[j], age, f64::ln, f64::exp)
                    * (spec.rt_speed_sd * speed).exp();
                ConditionBehavior {
                    hit_prob: hit.min(spec.max_hit_prob),
                    false_alarm_prob: fa,
                    rt_median_s: rt,
                    rt_sigma: spec.rt_sigma,
                    lapse_prob: spec.lapse_prob,
                }
            });
            let components = PerCondition::from_fn(|c| {
                let j = c as usize;
                let amp = spec.age_curve(
                    spec.young.erp_amplitude_uv[j],
                    spec.elderly.erp_amplitude_uv[j],
                    age,
                    identity,
                    identity,
                ) + spec.erp_amplitude_sd * amp_offset;
                let lat = spec.age_curve(spec.young.erp_latency_s[j], spec.elderly.erp_latency_s[j], age, identity, identity)
                    + spec.erp_latency_sd * lat_offset;
                ErpComponent {
                    amplitude_uv: amp,
                    latency_s: lat.clamp(0.3, 0.85),
                }
            });
            let mut erp = ErpModel::single(0.0, 0.5, spec.erp_noise_uv);
            erp.components = components;
            erp.width_s = spec.erp_width_s;
            let behavior = BehaviorModel {
                age,
                ack_delay_ms: spec.ack_delay_ms,
                conditions,
            };
            behavior.validate()?;
            erp.validate()?;
            members.push(CohortMember {
                profile,
                behavior,
                erp,
                seed: seed::child(child, 1),
            });
        }
    }
    Ok(members)
}

/// `n` standard-normal quantiles at `(i + 0.5) / n`, in random order. Using
/// quantiles instead of free draws gives each group the intended spread
/// and median exactly, so sampling noise comes only from the trials.
fn stratified_normal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let std = statrs::distribution::Normal::standard();
    let mut q: Vec<f64> = (0..n)
        .map(|i| std.inverse_cdf((i as f64 + 0.5) / n as f64))
        .collect();
    q.shuffle(rng);
    q
}

fn draw_profile(rng: &mut ChaCha8Rng, group: Group, t: &GroupTargets, id: String) -> ParticipantProfile {
    let z: f64 = rng.sample(StandardNormal);
    let age = ((t.age_mean + t.age_sd * z).max(18.0) * 10.0).round() / 10.0;
    let gender = if rng.random_bool(t.male_fraction.clamp(0.0, 1.0)) {
        Gender::Male
    } else {
        Gender::Female
    };
    let handedness = if rng.random_bool(0.05) {
        Handedness::Mixed
    } else {
        Handedness::Right
    };
    let vision_correction = match rng.random_range(0..3) {
        0 => VisionCorrection::None,
        1 => VisionCorrection::Glasses,
        _ => VisionCorrection::ContactLenses,
    };
    let first_licence_age = rng.random_range(18.0..(age.min(40.0).max(19.0)));
    let licence_years = (age - first_licence_age).floor().max(1.0) as u32;
    ParticipantProfile {
        id,
        group,
        age,
        gender,
        handedness,
        vision_correction,
        has_licence: true,
        licence_years: Some(licence_years),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{build_session_plan, PlanConfig};
    use crate::runtime::check_conformance;
    use crate::scoring::{score_participant, ConfusionCounts};

    fn plan(seed: u64) -> SessionPlan {
        build_session_plan(&PlanConfig::default(), seed).unwrap()
    }

    fn perfect() -> BehaviorModel {
        BehaviorModel::uniform(
            30.0,
            ConditionBehavior {
                hit_prob: 1.0,
                false_alarm_prob: 0.0,
                rt_median_s: 0.5,
                rt_sigma: 0.2,
                lapse_prob: 0.0,
            },
        )
    }

    #[test]
    fn perfect_participant_scores_full_marks() {
        let p = plan(3);
        let log = simulate_participant(&p, &perfect(), 9, "s1").unwrap();
        check_conformance(&p, &log).unwrap();
        let scored = score_participant(&log, &p).unwrap();
        for c in &scored.conditions {
            assert_eq!(
                c.counts,
                ConfusionCounts {
                    tp: 96,
                    tn: 384,
                    fp: 0,
                    fn_: 0
                }
            );
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let p = plan(4);
        let mut m = perfect();
        m.conditions.p3.hit_prob = 0.8;
        m.conditions.p3.false_alarm_prob = 0.05;
        let a = simulate_participant(&p, &m, 5, "s").unwrap();
        let b = simulate_participant(&p, &m, 5, "s").unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let c = simulate_participant(&p, &m, 6, "s").unwrap();
        assert_ne!(a.to_jsonl(), c.to_jsonl());
    }

    #[test]
    fn invalid_model_rejected() {
        let mut m = perfect();
        m.conditions.p5.hit_prob = 1.5;
        assert!(matches!(simulate_participant(&plan(1), &m, 1, "x"), Err(SimError::Model(_))));
        m.conditions.p5.hit_prob = 0.5;
        m.conditions.p5.rt_median_s = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn noise_free_eeg_recovers_component() {
        use crate::erp::{erp_metrics, extract_epochs, EpochOptions, SearchWindow};
        let p = plan(2);
        let log = simulate_participant(&p, &perfect(), 1, "s").unwrap();
        let eeg = synthesize_eeg(&log, &ErpModel::single(8.0, 0.52, 0.0), 1).unwrap();
        let opts = EpochOptions {
            condition: Some(StimulusCondition::P3),
            ..EpochOptions::default()
        };
        let set = extract_epochs(&eeg, &log, "Pz", opts).unwrap();
        assert_eq!(set.len(), 96);
        let m = erp_metrics(&set, SearchWindow::default()).unwrap();
        assert!((m.latency_s - 0.52).abs() <= 0.002 + 1e-12, "{m:?}");
        assert!((m.amplitude_uv - 8.0).abs() < 0.01, "{m:?}");
    }

    #[test]
    fn cohort_shape_and_ages() {
        let cohort = build_cohort(&CohortSpec::default(), 1).unwrap();
        assert_eq!(cohort.len(), 25);
        let young: Vec<_> = cohort.iter().filter(|m| m.profile.group == Group::Young).collect();
        assert_eq!(young.len(), 10);
        assert!(young.iter().all(|m| (18.0..40.0).contains(&m.profile.age)));
        assert!(cohort
            .iter()
            .filter(|m| m.profile.group == Group::Elderly)
            .all(|m| (55.0..85.0).contains(&m.profile.age)));
        for m in &cohort {
            m.profile.validate().unwrap();
        }
        assert_eq!(cohort, build_cohort(&CohortSpec::default(), 1).unwrap());
    }

    #[test]
    fn empty_group_rejected() {
        let spec = CohortSpec {
            n_elderly: 0,
            ..CohortSpec::default()
        };
        assert!(matches!(build_cohort(&spec, 1), Err(SimError::EmptyGroup(Group::Elderly))));
    }

    #[test]
    fn age_curve_hits_group_targets() {
        let spec = CohortSpec::default();
        let y = spec.age_curve(0.9, 0.7, spec.young.age_mean, logit, expit);
        let e = spec.age_curve(0.9, 0.7, spec.elderly.age_mean, logit, expit);
        assert!((y - 0.9).abs() < 1e-12 && (e - 0.7).abs() < 1e-12);
        let flat = CohortSpec {
            coupling: 0.0,
            ..spec
        };
        assert_eq!(flat.age_curve(0.9, 0.7, 20.0, logit, expit), flat.age_curve(0.9, 0.7, 80.0, logit, expit));
    }

    #[test]
    fn spec_round_trips_as_text() {
        let spec = CohortSpec::default();
        assert_eq!(CohortSpec::from_text(&spec.to_text()).unwrap(), spec);
    }
}
