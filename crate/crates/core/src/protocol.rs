//! Task protocol: stimulus vocabulary, session hierarchy and seeded plan
//! generation.
//!
//! A session is twelve sets (3 stimulus conditions x 2 hands x 2
//! repetitions), each set three blocks, each block 40 displays of which
//! exactly 8 contain the cued gap direction. Generation is a pure function
//! of `(PlanConfig, seed)`.

use std::fmt;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seed::{self, Stream};

pub const DISPLAYS_PER_BLOCK: usize = 40;
pub const TARGETS_PER_BLOCK: usize = 8;
pub const BLOCKS_PER_SET: usize = 3;
pub const REPETITIONS: u8 = 2;
pub const SETS_PER_SESSION: usize = 12;
pub const DISPLAYS_PER_CONDITION: usize = 480;
pub const TARGETS_PER_CONDITION: usize = 96;
pub const NONTARGETS_PER_CONDITION: usize = 384;

pub const PLAN_FORMAT: &str = "osvs-plan/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid timing: {0}")]
    Timing(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
}

#[derive(Debug, Error)]
pub enum PlanIoError {
    #[error("plan parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("plan serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unsupported plan format {0:?}")]
    Format(String),
}

/// Gap direction of a ring stimulus, index 0..8 at 45 degree steps
/// (0 = right, counter-clockwise).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct GapDirection(u8);

impl GapDirection {
    pub const COUNT: u8 = 8;

    pub fn new(index: u8) -> Option<Self> {
        (index < Self::COUNT).then_some(Self(index))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn angle_deg(self) -> f64 {
        f64::from(self.0) * 45.0
    }

    pub fn all() -> impl Iterator<Item = GapDirection> {
        (0..Self::COUNT).map(GapDirection)
    }
}

impl TryFrom<u8> for GapDirection {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        GapDirection::new(v).ok_or_else(|| format!("gap direction {v} out of range 0..8"))
    }
}

impl From<GapDirection> for u8 {
    fn from(d: GapDirection) -> u8 {
        d.0
    }
}

impl fmt::Display for GapDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Number of simultaneous rings on screen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StimulusCondition {
    P1,
    P3,
    P5,
}

impl StimulusCondition {
    pub const ALL: [StimulusCondition; 3] = [Self::P1, Self::P3, Self::P5];

    pub fn display_count(self) -> usize {
        match self {
            Self::P1 => 1,
            Self::P3 => 3,
            Self::P5 => 5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::P1 => "P1",
            Self::P3 => "P3",
            Self::P5 => "P5",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label() == s)
    }
}

impl fmt::Display for StimulusCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HandCondition {
    #[serde(rename = "R")]
    Right,
    #[serde(rename = "L")]
    Left,
}

impl HandCondition {
    pub const ALL: [HandCondition; 2] = [Self::Right, Self::Left];

    pub fn letter(self) -> char {
        match self {
            Self::Right => 'R',
            Self::Left => 'L',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Young,
    Elderly,
}

impl Group {
    pub const ALL: [Group; 2] = [Self::Young, Self::Elderly];

    pub fn key(self) -> &'static str {
        match self {
            Self::Young => "young",
            Self::Elderly => "elderly",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.key() == s)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Right,
    Left,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisionCorrection {
    None,
    Glasses,
    ContactLenses,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("participant {id}: {reason}")]
    Invalid { id: String, reason: &'static str },
    #[error("profile table: {0}")]
    Csv(#[from] csv::Error),
}

/// One row of the participant profile table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    pub id: String,
    pub group: Group,
    pub age: f64,
    pub gender: Gender,
    pub handedness: Handedness,
    pub vision_correction: VisionCorrection,
    pub has_licence: bool,
    pub licence_years: Option<u32>,
}

impl ParticipantProfile {
    pub fn validate(&self) -> Result<(), ProfileError> {
        let bad = |reason| {
            Err(ProfileError::Invalid {
                id: self.id.clone(),
                reason,
            })
        };
        if self.id.is_empty() {
            return bad("empty id");
        }
        if !(self.age > 0.0) {
            return bad("age must be positive");
        }
        if self.licence_years.is_some() && !self.has_licence {
            return bad("licence_years given without a licence");
        }
        Ok(())
    }
}

/// Write profiles as CSV with a header row. Missing licence years are empty cells.
pub fn write_profiles<W: std::io::Write>(profiles: &[ParticipantProfile], w: W) -> Result<(), ProfileError> {
    let mut out = csv::Writer::from_writer(w);
    for p in profiles {
        out.serialize(p)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_profiles<R: std::io::Read>(r: R) -> Result<Vec<ParticipantProfile>, ProfileError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let p: ParticipantProfile = row?;
        p.validate()?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub display_duration_ms: u32,
    pub soa_min_ms: u32,
    pub soa_max_ms: u32,
    pub post_response_delay_min_ms: u32,
    pub post_response_delay_max_ms: u32,
    pub cue_lead_ms: u32,
    pub inter_block_rest_s: u32,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            display_duration_ms: 500,
            soa_min_ms: 1000,
            soa_max_ms: 1800,
            post_response_delay_min_ms: 500,
            post_response_delay_max_ms: 1300,
            cue_lead_ms: 500,
            inter_block_rest_s: 60,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Timing(m));
        if self.display_duration_ms == 0 {
            return err("display_duration_ms must be > 0".into());
        }
        if self.display_duration_ms > self.soa_min_ms {
            return err(format!(
                "display_duration_ms ({}) must be <= soa_min_ms ({})",
                self.display_duration_ms, self.soa_min_ms
            ));
        }
        if self.soa_min_ms > self.soa_max_ms {
            return err(format!(
                "soa_min_ms ({}) must be <= soa_max_ms ({})",
                self.soa_min_ms, self.soa_max_ms
            ));
        }
        if self.post_response_delay_min_ms > self.post_response_delay_max_ms {
            return err(format!(
                "post_response_delay_min_ms ({}) must be <= post_response_delay_max_ms ({})",
                self.post_response_delay_min_ms, self.post_response_delay_max_ms
            ));
        }
        if self.display_duration_ms + self.post_response_delay_min_ms != self.soa_min_ms {
            return err(format!(
                "display_duration_ms + post_response_delay_min_ms ({}) must equal soa_min_ms ({})",
                self.display_duration_ms + self.post_response_delay_min_ms,
                self.soa_min_ms
            ));
        }
        if self.display_duration_ms + self.post_response_delay_max_ms != self.soa_max_ms {
            return err(format!(
                "display_duration_ms + post_response_delay_max_ms ({}) must equal soa_max_ms ({})",
                self.display_duration_ms + self.post_response_delay_max_ms,
                self.soa_max_ms
            ));
        }
        Ok(())
    }
}

/// Stimulus layout in degrees of visual angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub viewing_distance_cm: f64,
    pub stimulus_diameter_deg: f64,
    pub horizontal_spacing_deg: f64,
    pub gap_arc_deg: f64,
    /// Physical screen width; the default is a 17 inch 4:3 panel.
    pub screen_width_cm: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            viewing_distance_cm: 60.0,
            stimulus_diameter_deg: 2.0,
            horizontal_spacing_deg: 3.0,
            gap_arc_deg: 90.0,
            screen_width_cm: 34.5,
        }
    }
}

impl GeometryConfig {
    /// Horizontal visual angle subtended by the whole screen.
    pub fn screen_width_deg(&self) -> f64 {
        2.0 * (self.screen_width_cm / 2.0 / self.viewing_distance_cm)
            .atan()
            .to_degrees()
    }

    /// Horizontal centres (deg, 0 = screen centre) of `count` rings.
    pub fn centers_deg(&self, count: usize) -> Vec<f64> {
        let mid = (count as f64 - 1.0) / 2.0;
        (0..count)
            .map(|i| (i as f64 - mid) * self.horizontal_spacing_deg)
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("viewing_distance_cm", self.viewing_distance_cm),
            ("stimulus_diameter_deg", self.stimulus_diameter_deg),
            ("horizontal_spacing_deg", self.horizontal_spacing_deg),
            ("gap_arc_deg", self.gap_arc_deg),
            ("screen_width_cm", self.screen_width_cm),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Geometry(format!("{name} must be positive, got {v}")));
            }
        }
        if self.gap_arc_deg >= 360.0 {
            return Err(ConfigError::Geometry("gap_arc_deg must be < 360".into()));
        }
        if self.horizontal_spacing_deg < self.stimulus_diameter_deg {
            return Err(ConfigError::Geometry(format!(
                "horizontal_spacing_deg ({}) is smaller than stimulus_diameter_deg ({}); rings overlap",
                self.horizontal_spacing_deg, self.stimulus_diameter_deg
            )));
        }
        let span = 4.0 * self.horizontal_spacing_deg + self.stimulus_diameter_deg;
        let width = self.screen_width_deg();
        if span > width {
            return Err(ConfigError::Geometry(format!(
                "five rings span {span:.2} deg but the screen is only {width:.2} deg wide"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizationConfig {
    /// Forbid two target displays in a row within a block.
    pub forbid_consecutive_targets: bool,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self {
            forbid_consecutive_targets: true,
        }
    }
}

/// Everything that parameterises plan generation apart from the seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default)]
    pub randomization: RandomizationConfig,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default)]
    pub geometry: GeometryConfig,
}

impl PlanConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.timing.validate()?;
        self.geometry.validate()
    }

    pub fn from_text(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("plan config always serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisplaySpec {
    pub index_in_block: usize,
    pub is_target: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_position: Option<usize>,
    pub onset_offset_ms: u32,
    pub directions: Vec<GapDirection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockPlan {
    pub cued_direction: GapDirection,
    pub displays: Vec<DisplaySpec>,
}

impl BlockPlan {
    pub fn target_count(&self) -> usize {
        self.displays.iter().filter(|d| d.is_target).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSpec {
    pub condition: StimulusCondition,
    pub hand: HandCondition,
    pub repetition: u8,
    pub blocks: Vec<BlockPlan>,
}

impl SetSpec {
    /// Label in the `P3(R1)` style.
    pub fn label(&self) -> String {
        format!("{}({}{})", self.condition, self.hand.letter(), self.repetition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionPlan {
    pub format: String,
    #[serde(with = "seed::as_string")]
    pub seed: u64,
    pub randomization: RandomizationConfig,
    pub timing: TimingConfig,
    pub geometry: GeometryConfig,
    pub sets: Vec<SetSpec>,
}

/// Address of one display inside a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DisplayRef {
    pub set: usize,
    pub block: usize,
    pub display: usize,
}

impl SessionPlan {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("session plan always serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, PlanIoError> {
        let plan: SessionPlan = toml::from_str(text)?;
        if plan.format != PLAN_FORMAT {
            return Err(PlanIoError::Format(plan.format));
        }
        Ok(plan)
    }

    /// SHA-256 of the canonical text form, lower-case hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn block_count(&self) -> usize {
        self.sets.iter().map(|s| s.blocks.len()).sum()
    }

    /// Blocks in presentation order as `(set index, block index, block)`.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize, &BlockPlan)> {
        self.sets.iter().enumerate().flat_map(|(si, set)| {
            set.blocks.iter().enumerate().map(move |(bi, b)| (si, bi, b))
        })
    }

    pub fn display(&self, r: DisplayRef) -> Option<&DisplaySpec> {
        self.sets
            .get(r.set)?
            .blocks
            .get(r.block)?
            .displays
            .get(r.display)
    }

    pub fn config(&self) -> PlanConfig {
        PlanConfig {
            randomization: self.randomization.clone(),
            timing: self.timing.clone(),
            geometry: self.geometry.clone(),
        }
    }
}

/// Generate a complete session plan.
pub fn build_session_plan(config: &PlanConfig, seed: u64) -> Result<SessionPlan, ConfigError> {
    config.validate()?;
    let mut rng = seed::rng(seed, Stream::Plan);

    let mut order: Vec<(StimulusCondition, HandCondition, u8)> = Vec::with_capacity(SETS_PER_SESSION);
    for condition in StimulusCondition::ALL {
        for hand in HandCondition::ALL {
            for repetition in 1..=REPETITIONS {
                order.push((condition, hand, repetition));
            }
        }
    }
    order.shuffle(&mut rng);

    let sets = order
        .into_iter()
        .map(|(condition, hand, repetition)| {
            let blocks = (0..BLOCKS_PER_SET)
                .map(|_| {
                    let cued = GapDirection(rng.random_range(0..GapDirection::COUNT));
                    build_block(condition, cued, &config.timing, &config.randomization, &mut rng)
                })
                .collect();
            SetSpec {
                condition,
                hand,
                repetition,
                blocks,
            }
        })
        .collect();

    Ok(SessionPlan {
        format: PLAN_FORMAT.to_string(),
        seed,
        randomization: config.randomization.clone(),
        timing: config.timing.clone(),
        geometry: config.geometry.clone(),
        sets,
    })
}

/// Positions of the 8 target displays among 40.
fn target_slots(randomization: &RandomizationConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if randomization.forbid_consecutive_targets {
        // Uniform over non-adjacent placements: pick 8 of 33 and spread them
        // out by their rank.
        let free = DISPLAYS_PER_BLOCK - (TARGETS_PER_BLOCK - 1);
        let mut picks = index::sample(rng, free, TARGETS_PER_BLOCK).into_vec();
        picks.sort_unstable();
        picks.iter().enumerate().map(|(rank, p)| p + rank).collect()
    } else {
        let mut picks = index::sample(rng, DISPLAYS_PER_BLOCK, TARGETS_PER_BLOCK).into_vec();
        picks.sort_unstable();
        picks
    }
}

/// Generate one 40-display block for `condition` around the cued direction.
pub fn build_block(
    condition: StimulusCondition,
    cued: GapDirection,
    timing: &TimingConfig,
    randomization: &RandomizationConfig,
    rng: &mut ChaCha8Rng,
) -> BlockPlan {
    let slots = target_slots(randomization, rng);
    let distractors: Vec<GapDirection> = GapDirection::all().filter(|d| *d != cued).collect();
    let count = condition.display_count();

    let mut onset = 0u32;
    let mut displays = Vec::with_capacity(DISPLAYS_PER_BLOCK);
    for index_in_block in 0..DISPLAYS_PER_BLOCK {
        if index_in_block > 0 {
            let delay = rng.random_range(
                timing.post_response_delay_min_ms..=timing.post_response_delay_max_ms,
            );
            onset += timing.display_duration_ms + delay;
        }
        let is_target = slots.binary_search(&index_in_block).is_ok();
        let (directions, target_position) = if is_target {
            let position = rng.random_range(0..count);
            let mut dirs: Vec<GapDirection> = distractors
                .choose_multiple(rng, count - 1)
                .copied()
                .collect();
            dirs.shuffle(rng);
            dirs.insert(position, cued);
            (dirs, Some(position))
        } else {
            let mut dirs: Vec<GapDirection> =
                distractors.choose_multiple(rng, count).copied().collect();
            dirs.shuffle(rng);
            (dirs, None)
        };
        displays.push(DisplaySpec {
            index_in_block,
            is_target,
            target_position,
            onset_offset_ms: onset,
            directions,
        });
    }

    BlockPlan {
        cued_direction: cued,
        displays,
    }
}

/// One broken invariant found by [`validate_plan`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Format(String),
    Config(String),
    SetCount(usize),
    SetCoverage {
        condition: StimulusCondition,
        hand: HandCondition,
        repetition: u8,
        found: usize,
    },
    BlocksPerSet { set: usize, found: usize },
    BlockLength { set: usize, block: usize, found: usize },
    TargetCount { set: usize, block: usize, found: usize },
    DisplayIndex { at: DisplayRef, found: usize },
    DirectionCount { at: DisplayRef, expected: usize, found: usize },
    RepeatedDirection { at: DisplayRef },
    TargetPosition { at: DisplayRef },
    CuedInNontarget { at: DisplayRef },
    CuedRepeated { at: DisplayRef },
    ConsecutiveTargets { at: DisplayRef },
    FirstOnset { set: usize, block: usize, found: u32 },
    OnsetGap { at: DisplayRef, gap_ms: i64 },
    ConditionTotals {
        condition: StimulusCondition,
        displays: usize,
        targets: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = |r: &DisplayRef| format!("set {} block {} display {}", r.set, r.block, r.display);
        match self {
            Violation::Format(s) => write!(f, "format {s:?} != {PLAN_FORMAT:?}"),
            Violation::Config(s) => write!(f, "configuration: {s}"),
            Violation::SetCount(n) => write!(f, "set count ≠ {SETS_PER_SESSION} (found {n})"),
            Violation::SetCoverage {
                condition,
                hand,
                repetition,
                found,
            } => write!(
                f,
                "set {}({}{}) appears {found} times, expected once",
                condition,
                hand.letter(),
                repetition
            ),
            Violation::BlocksPerSet { set, found } => {
                write!(f, "set {set}: blocks ≠ {BLOCKS_PER_SET} (found {found})")
            }
            Violation::BlockLength { set, block, found } => write!(
                f,
                "set {set} block {block}: block length ≠ {DISPLAYS_PER_BLOCK} (found {found})"
            ),
            Violation::TargetCount { set, block, found } => write!(
                f,
                "set {set} block {block}: targets ≠ {TARGETS_PER_BLOCK} (found {found})"
            ),
            Violation::DisplayIndex { at: r, found } => {
                write!(f, "{}: index_in_block is {found}", at(r))
            }
            Violation::DirectionCount {
                at: r,
                expected,
                found,
            } => write!(f, "{}: {found} directions, expected {expected}", at(r)),
            Violation::RepeatedDirection { at: r } => {
                write!(f, "{}: directions are not pairwise distinct", at(r))
            }
            Violation::TargetPosition { at: r } => write!(
                f,
                "{}: target flag, target position and cued direction disagree",
                at(r)
            ),
            Violation::CuedInNontarget { at: r } => {
                write!(f, "{}: nontarget display contains the cued direction", at(r))
            }
            Violation::CuedRepeated { at: r } => {
                write!(f, "{}: cued direction appears more than once", at(r))
            }
            Violation::ConsecutiveTargets { at: r } => {
                write!(f, "{}: consecutive target displays", at(r))
            }
            Violation::FirstOnset { set, block, found } => write!(
                f,
                "set {set} block {block}: first onset offset is {found} ms, expected 0"
            ),
            Violation::OnsetGap { at: r, gap_ms } => {
                write!(f, "{}: inter-onset gap {gap_ms} ms outside the SOA window", at(r))
            }
            Violation::ConditionTotals {
                condition,
                displays,
                targets,
            } => write!(
                f,
                "{condition}: {displays} displays / {targets} targets, expected {DISPLAYS_PER_CONDITION} / {TARGETS_PER_CONDITION}"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Check every structural and timing invariant of a plan. Never fails;
/// an empty report means the plan is valid.
pub fn validate_plan(plan: &SessionPlan) -> ValidationReport {
    let mut out = Vec::new();
    if plan.format != PLAN_FORMAT {
        out.push(Violation::Format(plan.format.clone()));
    }
    if let Err(e) = plan.config().validate() {
        out.push(Violation::Config(e.to_string()));
    }
    if plan.sets.len() != SETS_PER_SESSION {
        out.push(Violation::SetCount(plan.sets.len()));
    }
    for condition in StimulusCondition::ALL {
        for hand in HandCondition::ALL {
            for repetition in 1..=REPETITIONS {
                let found = plan
                    .sets
                    .iter()
                    .filter(|s| s.condition == condition && s.hand == hand && s.repetition == repetition)
                    .count();
                if found != 1 {
                    out.push(Violation::SetCoverage {
                        condition,
                        hand,
                        repetition,
                        found,
                    });
                }
            }
        }
    }

    let t = &plan.timing;
    let (gap_min, gap_max) = (
        i64::from(t.display_duration_ms) + i64::from(t.post_response_delay_min_ms),
        i64::from(t.display_duration_ms) + i64::from(t.post_response_delay_max_ms),
    );
    let soa = i64::from(t.soa_min_ms)..=i64::from(t.soa_max_ms);

    for (si, set) in plan.sets.iter().enumerate() {
        if set.blocks.len() != BLOCKS_PER_SET {
            out.push(Violation::BlocksPerSet {
                set: si,
                found: set.blocks.len(),
            });
        }
        let count = set.condition.display_count();
        for (bi, block) in set.blocks.iter().enumerate() {
            if block.displays.len() != DISPLAYS_PER_BLOCK {
                out.push(Violation::BlockLength {
                    set: si,
                    block: bi,
                    found: block.displays.len(),
                });
            }
            let targets = block.target_count();
            if targets != TARGETS_PER_BLOCK {
                out.push(Violation::TargetCount {
                    set: si,
                    block: bi,
                    found: targets,
                });
            }
            if let Some(first) = block.displays.first() {
                if first.onset_offset_ms != 0 {
                    out.push(Violation::FirstOnset {
                        set: si,
                        block: bi,
                        found: first.onset_offset_ms,
                    });
                }
            }
            let mut prev: Option<&DisplaySpec> = None;
            for (di, d) in block.displays.iter().enumerate() {
                let at = DisplayRef {
                    set: si,
                    block: bi,
                    display: di,
                };
                if d.index_in_block != di {
                    out.push(Violation::DisplayIndex {
                        at,
                        found: d.index_in_block,
                    });
                }
                check_display(d, block.cued_direction, count, at, &mut out);
                if let Some(p) = prev {
                    let gap = i64::from(d.onset_offset_ms) - i64::from(p.onset_offset_ms);
                    if !soa.contains(&gap) || gap < gap_min || gap > gap_max {
                        out.push(Violation::OnsetGap { at, gap_ms: gap });
                    }
                    if plan.randomization.forbid_consecutive_targets && p.is_target && d.is_target {
                        out.push(Violation::ConsecutiveTargets { at });
                    }
                }
                prev = Some(d);
            }
        }
    }

    for condition in StimulusCondition::ALL {
        let blocks = plan
            .sets
            .iter()
            .filter(|s| s.condition == condition)
            .flat_map(|s| s.blocks.iter());
        let (mut displays, mut targets) = (0, 0);
        for b in blocks {
            displays += b.displays.len();
            targets += b.target_count();
        }
        if displays != DISPLAYS_PER_CONDITION || targets != TARGETS_PER_CONDITION {
            out.push(Violation::ConditionTotals {
                condition,
                displays,
                targets,
            });
        }
    }

    ValidationReport { violations: out }
}

fn check_display(
    d: &DisplaySpec,
    cued: GapDirection,
    count: usize,
    at: DisplayRef,
    out: &mut Vec<Violation>,
) {
    if d.directions.len() != count {
        out.push(Violation::DirectionCount {
            at,
            expected: count,
            found: d.directions.len(),
        });
    }
    let mut seen = [false; GapDirection::COUNT as usize];
    for dir in &d.directions {
        let slot = &mut seen[dir.index() as usize];
        if *slot {
            out.push(Violation::RepeatedDirection { at });
            break;
        }
        *slot = true;
    }
    let cued_hits = d.directions.iter().filter(|x| **x == cued).count();
    if d.is_target {
        let ok = d
            .target_position
            .and_then(|p| d.directions.get(p))
            .is_some_and(|x| *x == cued);
        if !ok {
            out.push(Violation::TargetPosition { at });
        }
        if cued_hits > 1 {
            out.push(Violation::CuedRepeated { at });
        }
    } else {
        if d.target_position.is_some() {
            out.push(Violation::TargetPosition { at });
        }
        if cued_hits > 0 {
            out.push(Violation::CuedInNontarget { at });
        }
    }
}
