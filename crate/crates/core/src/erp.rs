//! EEG container, stimulus-locked epoching and ERP peak measures.
//!
//! Recordings share the session clock: sample `i` of a recording lies at
//! `t0_us + i * 1e6 / rate_hz`. Epochs are cut around the `StimOn` times
//! of the event log with nearest-sample alignment.

use std::collections::HashMap;
use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{DisplayRef, StimulusCondition};
use crate::runtime::{Event, EventLog};

pub const EEG_MAGIC: &str = "OSVS-EEG 1";
pub const DEFAULT_CHANNELS: [&str; 5] = ["Fpz", "Fz", "Cz", "Pz", "Oz"];
pub const DEFAULT_RATE_HZ: u32 = 500;
pub const DEFAULT_MEASUREMENT_CHANNEL: &str = "Pz";
pub const DEFAULT_ARTIFACT_THRESHOLD_UV: f64 = 100.0;

#[derive(Debug, Error)]
pub enum ErpError {
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("invalid window: {0}")]
    Window(String),
    #[error("no epochs to average")]
    NoEpochs,
    #[error("all {0} epochs rejected")]
    AllRejected(usize),
    #[error("artifact threshold must be positive")]
    Threshold,
    #[error("invalid recording: {0}")]
    Invalid(String),
    #[error("EEG file: {0}")]
    Format(String),
    #[error("EEG file: {0}")]
    Io(#[from] io::Error),
    #[error("EEG csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Hardware filter settings, carried as metadata only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterInfo {
    pub lowpass_hz: f64,
    pub highpass_tc_s: f64,
    pub notch_hz: f64,
}

impl Default for FilterInfo {
    fn default() -> Self {
        Self {
            lowpass_hz: 30.0,
            highpass_tc_s: 1.5,
            notch_hz: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    pub channels: Vec<String>,
    pub reference: String,
    pub ground: String,
    pub rate_hz: u32,
    pub t0_us: i64,
    pub filters: FilterInfo,
    /// One vector per channel, in µV.
    pub samples: Vec<Vec<f32>>,
}

impl EegRecording {
    /// Zero-filled recording with the default montage.
    pub fn zeros(t0_us: i64, len: usize) -> Self {
        Self {
            channels: DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect(),
            reference: "A2".into(),
            ground: "Afz".into(),
            rate_hz: DEFAULT_RATE_HZ,
            t0_us,
            filters: FilterInfo::default(),
            samples: vec![vec![0.0; len]; DEFAULT_CHANNELS.len()],
        }
    }

    pub fn validate(&self) -> Result<(), ErpError> {
        if self.rate_hz == 0 {
            return Err(ErpError::Invalid("rate must be positive".into()));
        }
        if self.channels.len() != self.samples.len() {
            return Err(ErpError::Invalid(format!(
                "{} channel labels but {} sample arrays",
                self.channels.len(),
                self.samples.len()
            )));
        }
        if let Some(first) = self.samples.first() {
            if self.samples.iter().any(|c| c.len() != first.len()) {
                return Err(ErpError::Invalid("channels differ in length".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_index(&self, label: &str) -> Result<usize, ErpError> {
        self.channels
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| ErpError::UnknownChannel(label.to_string()))
    }

    pub fn channel(&self, label: &str) -> Result<&[f32], ErpError> {
        Ok(&self.samples[self.channel_index(label)?])
    }

    /// Index of the sample nearest to session time `t_us` (may be out of range).
    pub fn nearest_index(&self, t_us: i64) -> i64 {
        let num = (t_us - self.t0_us) as i128 * i128::from(self.rate_hz);
        // round half up on an exact integer quotient
        let q = num.div_euclid(1_000_000);
        let r = num.rem_euclid(1_000_000);
        (if r * 2 >= 1_000_000 { q + 1 } else { q }) as i64
    }

    pub fn sample_time_us(&self, index: usize) -> i64 {
        self.t0_us + (index as i128 * 1_000_000 / i128::from(self.rate_hz)) as i64
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ErpError> {
        self.validate()?;
        let f = &self.filters;
        write!(
            w,
            "{EEG_MAGIC}\nchannels={}\nreference={}\nground={}\nrate_hz={}\nt0_us={}\nsamples={}\nlowpass_hz={}\nhighpass_tc_s={}\nnotch_hz={}\nend\n",
            self.channels.join(","),
            self.reference,
            self.ground,
            self.rate_hz,
            self.t0_us,
            self.len(),
            f.lowpass_hz,
            f.highpass_tc_s,
            f.notch_hz,
        )?;
        let mut buf = Vec::with_capacity(self.len() * 4);
        for ch in &self.samples {
            buf.clear();
            for v in ch {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ErpError> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, ErpError> {
        let mut r = io::BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != EEG_MAGIC {
            return Err(ErpError::Format(format!("bad magic {:?}", line.trim_end())));
        }
        let mut fields: HashMap<String, String> = HashMap::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(ErpError::Format("header not terminated".into()));
            }
            let l = line.trim_end();
            if l == "end" {
                break;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| ErpError::Format(format!("bad header line {l:?}")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .cloned()
                .ok_or_else(|| ErpError::Format(format!("missing {k}")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: String) -> Result<T, ErpError> {
            v.parse().map_err(|_| ErpError::Format(format!("bad {k} {v:?}")))
        }
        let channels: Vec<String> = get("channels")?.split(',').map(str::to_string).collect();
        let n: usize = num("samples", get("samples")?)?;
        let mut samples = Vec::with_capacity(channels.len());
        let mut bytes = vec![0u8; n * 4];
        for _ in &channels {
            r.read_exact(&mut bytes)?;
            samples.push(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            );
        }
        let rec = Self {
            channels,
            reference: get("reference")?,
            ground: get("ground")?,
            rate_hz: num("rate_hz", get("rate_hz")?)?,
            t0_us: num("t0_us", get("t0_us")?)?,
            filters: FilterInfo {
                lowpass_hz: num("lowpass_hz", get("lowpass_hz")?)?,
                highpass_tc_s: num("highpass_tc_s", get("highpass_tc_s")?)?,
                notch_hz: num("notch_hz", get("notch_hz")?)?,
            },
            samples,
        };
        rec.validate()?;
        Ok(rec)
    }

    /// Import an external recording from CSV: a header row of channel
    /// labels, then one row of µV values per sample.
    pub fn from_csv<R: Read>(r: R, rate_hz: u32, t0_us: i64) -> Result<Self, ErpError> {
        let mut rdr = csv::Reader::from_reader(r);
        let channels: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut samples = vec![Vec::new(); channels.len()];
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (c, cell) in rec.iter().enumerate() {
                let v: f32 = cell
                    .trim()
                    .parse()
                    .map_err(|_| ErpError::Format(format!("row {}: bad value {cell:?}", i + 1)))?;
                samples[c].push(v);
            }
        }
        let rec = Self {
            channels,
            reference: "A2".into(),
            ground: "Afz".into(),
            rate_hz,
            t0_us,
            filters: FilterInfo::default(),
            samples,
        };
        rec.validate()?;
        Ok(rec)
    }
}

/// Epoch bounds relative to onset, in ms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochWindow {
    pub pre_ms: i32,
    pub post_ms: i32,
}

impl Default for EpochWindow {
    fn default() -> Self {
        Self {
            pre_ms: -200,
            post_ms: 1000,
        }
    }
}

impl EpochWindow {
    fn samples(ms: i32, rate_hz: u32) -> Result<i64, ErpError> {
        let num = i64::from(ms) * i64::from(rate_hz);
        if num % 1000 != 0 {
            return Err(ErpError::Window(format!("{ms} ms is not a whole number of samples at {rate_hz} Hz")));
        }
        Ok(num / 1000)
    }

    /// (offset of the first sample from onset, epoch length) in samples.
    pub fn geometry(&self, rate_hz: u32) -> Result<(i64, usize), ErpError> {
        if self.pre_ms > 0 || self.post_ms <= 0 {
            return Err(ErpError::Window(format!(
                "need pre <= 0 < post, got [{}, {}]",
                self.pre_ms, self.post_ms
            )));
        }
        let pre = Self::samples(self.pre_ms, rate_hz)?;
        let post = Self::samples(self.post_ms, rate_hz)?;
        Ok((pre, (post - pre + 1) as usize))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub source: DisplayRef,
    pub condition: StimulusCondition,
    pub is_target: bool,
    pub onset_us: i64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub channel: String,
    pub window: EpochWindow,
    pub rate_hz: u32,
    pub epochs: Vec<Epoch>,
    /// Displays whose epoch fell outside the recording.
    pub skipped: Vec<DisplayRef>,
    /// Epochs dropped by artifact rejection.
    pub rejected: usize,
}

impl EpochSet {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Time of intra-epoch sample `j` relative to onset, in ms.
    pub fn sample_time_ms(&self, j: usize) -> f64 {
        f64::from(self.window.pre_ms) + j as f64 * 1000.0 / f64::from(self.rate_hz)
    }

    pub fn filter(&self, keep: impl Fn(&Epoch) -> bool) -> EpochSet {
        EpochSet {
            epochs: self.epochs.iter().filter(|e| keep(e)).cloned().collect(),
            ..self.clone()
        }
    }
}

/// Which displays to cut epochs for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochOptions {
    pub window: EpochWindow,
    pub target_only: bool,
    pub condition: Option<StimulusCondition>,
    /// Subtract each epoch's mean over `[pre_ms, 0]`.
    pub baseline: bool,
}

impl Default for EpochOptions {
    fn default() -> Self {
        Self {
            window: EpochWindow::default(),
            target_only: true,
            condition: None,
            baseline: true,
        }
    }
}

pub fn extract_epochs(
    eeg: &EegRecording,
    log: &EventLog,
    channel: &str,
    options: EpochOptions,
) -> Result<EpochSet, ErpError> {
    eeg.validate()?;
    let data = eeg.channel(channel)?;
    let (offset, len) = options.window.geometry(eeg.rate_hz)?;
    let baseline_len = (-offset) as usize + 1;

    let mut conditions: HashMap<usize, StimulusCondition> = HashMap::new();
    let mut set = EpochSet {
        channel: channel.to_string(),
        window: options.window,
        rate_hz: eeg.rate_hz,
        epochs: Vec::new(),
        skipped: Vec::new(),
        rejected: 0,
    };
    for r in log.records() {
        match &r.event {
            Event::SetStart { set: s, condition, .. } => {
                conditions.insert(*s, *condition);
            }
            Event::StimOn {
                set: s,
                block,
                display,
                is_target,
                ..
            } => {
                let Some(&condition) = conditions.get(s) else {
                    continue;
                };
                if (options.target_only && !is_target) || options.condition.is_some_and(|c| c != condition) {
                    continue;
                }
                let source = DisplayRef {
                    set: *s,
                    block: *block,
                    display: *display,
                };
                let start = eeg.nearest_index(r.t_us) + offset;
                if start < 0 || start as usize + len > data.len() {
                    set.skipped.push(source);
                    continue;
                }
                let start = start as usize;
                let mut samples: Vec<f64> = data[start..start + len].iter().map(|&v| f64::from(v)).collect();
                if options.baseline {
                    let mean = samples[..baseline_len].iter().sum::<f64>() / baseline_len as f64;
                    samples.iter_mut().for_each(|v| *v -= mean);
                }
                set.epochs.push(Epoch {
                    source,
                    condition,
                    is_target: *is_target,
                    onset_us: r.t_us,
                    samples,
                });
            }
            _ => {}
        }
    }
    Ok(set)
}

/// Drop epochs whose peak-to-peak range exceeds `threshold_uv`.
pub fn reject_artifacts(epochs: &EpochSet, threshold_uv: f64) -> Result<EpochSet, ErpError> {
    if !(threshold_uv > 0.0) {
        return Err(ErpError::Threshold);
    }
    let kept: Vec<Epoch> = epochs
        .epochs
        .iter()
        .filter(|e| {
            let (lo, hi) = e
                .samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            hi - lo <= threshold_uv
        })
        .cloned()
        .collect();
    if kept.is_empty() && !epochs.epochs.is_empty() {
        return Err(ErpError::AllRejected(epochs.epochs.len()));
    }
    let rejected = epochs.epochs.len() - kept.len();
    Ok(EpochSet {
        epochs: kept,
        rejected: epochs.rejected + rejected,
        ..epochs.clone()
    })
}

/// Latency search range relative to onset, in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchWindow {
    pub start_ms: f64,
    pub end_ms: f64,
}

impl Default for SearchWindow {
    fn default() -> Self {
        Self {
            start_ms: 250.0,
            end_ms: 900.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErpMetrics {
    pub amplitude_uv: f64,
    pub latency_s: f64,
    pub n_epochs_used: usize,
}

pub fn average(epochs: &EpochSet) -> Result<Vec<f64>, ErpError> {
    let first = epochs.epochs.first().ok_or(ErpError::NoEpochs)?;
    let mut avg = vec![0.0; first.samples.len()];
    for e in &epochs.epochs {
        for (a, v) in avg.iter_mut().zip(&e.samples) {
            *a += v;
        }
    }
    let n = epochs.epochs.len() as f64;
    avg.iter_mut().for_each(|a| *a /= n);
    Ok(avg)
}

/// Maximum of the averaged waveform inside `search`; earliest sample wins ties.
pub fn erp_metrics(epochs: &EpochSet, search: SearchWindow) -> Result<ErpMetrics, ErpError> {
    let avg = average(epochs)?;
    let mut best: Option<(usize, f64)> = None;
    for (j, &v) in avg.iter().enumerate() {
        let t = epochs.sample_time_ms(j);
        if t < search.start_ms || t > search.end_ms {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    let (j, amplitude_uv) = best.ok_or_else(|| {
        ErpError::Window(format!(
            "search window [{}, {}] ms lies outside the epoch",
            search.start_ms, search.end_ms
        ))
    })?;
    Ok(ErpMetrics {
        amplitude_uv,
        latency_s: epochs.sample_time_ms(j) / 1000.0,
        n_epochs_used: epochs.epochs.len(),
    })
}

/// Per-condition ERP summary for one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionErp {
    pub condition: StimulusCondition,
    pub amplitude_uv: f64,
    pub latency_s: f64,
    pub n_epochs_used: usize,
    pub n_rejected: usize,
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErpDocument {
    pub participant: String,
    pub plan_sha256: String,
    pub channel: String,
    pub threshold_uv: f64,
    pub conditions: Vec<ConditionErp>,
}

impl ErpDocument {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("ERP document serializes")
    }

    pub fn from_text(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn condition(&self, c: StimulusCondition) -> Option<&ConditionErp> {
        self.conditions.iter().find(|e| e.condition == c)
    }
}

/// Target-locked ERP metrics for every condition of one recording.
pub fn analyze_participant(
    eeg: &EegRecording,
    log: &EventLog,
    channel: &str,
    threshold_uv: f64,
    search: SearchWindow,
) -> Result<ErpDocument, ErpError> {
    let all = extract_epochs(eeg, log, channel, EpochOptions::default())?;
    let mut conditions = Vec::new();
    for c in StimulusCondition::ALL {
        let subset = all.filter(|e| e.condition == c);
        if subset.is_empty() {
            continue;
        }
        let kept = reject_artifacts(&subset, threshold_uv)?;
        let m = erp_metrics(&kept, search)?;
        conditions.push(ConditionErp {
            condition: c,
            amplitude_uv: m.amplitude_uv,
            latency_s: m.latency_s,
            n_epochs_used: m.n_epochs_used,
            n_rejected: kept.rejected,
            n_skipped: all.skipped.iter().filter(|d| log_condition(log, d.set) == Some(c)).count(),
        });
    }
    Ok(ErpDocument {
        participant: log.header().participant.clone(),
        plan_sha256: log.header().plan_sha256.clone(),
        channel: channel.to_string(),
        threshold_uv,
        conditions,
    })
}

fn log_condition(log: &EventLog, set: usize) -> Option<StimulusCondition> {
    log.records().iter().find_map(|r| match &r.event {
        Event::SetStart { set: s, condition, .. } if *s == set => Some(*condition),
        _ => None,
    })
}
