//! Dataset plumbing: JSONL loading with line-numbered validation, seeded
//! train/test splitting, coefficient-to-text annotation prompting, and
//! corpus statistics.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatEndpoint, ChatMessage, EndpointConfig, GatewayError};
use crate::model::{registry, CoeffVector, DatasetKeyframeRecord, Script};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: schema violation: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("line {line}: invalid coefficients: {message}")]
    CoeffInvalid { line: usize, message: String },
    #[error("need at least 2 records to split, got {0}")]
    TooFewRecords(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("record {0} carries no emotion profiles")]
    MissingEmotions(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Per-keyframe intensity of the six basic emotion categories, each in [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionProfile {
    pub sadness: f64,
    pub surprise: f64,
    pub anger: f64,
    pub happiness: f64,
    pub disgust: f64,
    pub fear: f64,
}

/// Fixed category order; doubles as the tie-break order for dominance.
pub const EMOTION_NAMES: [&str; 6] = [
    "sadness",
    "surprise",
    "anger",
    "happiness",
    "disgust",
    "fear",
];

impl EmotionProfile {
    pub fn intensities(&self) -> [f64; 6] {
        [
            self.sadness,
            self.surprise,
            self.anger,
            self.happiness,
            self.disgust,
            self.fear,
        ]
    }

    fn validate(&self) -> Result<(), String> {
        for (name, v) in EMOTION_NAMES.iter().zip(self.intensities()) {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(format!("emotion {name} intensity {v} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Index of the strongest emotion; ties go to the earlier category in
    /// the fixed order.
    pub fn dominant(&self) -> usize {
        let values = self.intensities();
        let mut best = 0;
        for (i, &v) in values.iter().enumerate().skip(1) {
            if v > values[best] {
                best = i;
            }
        }
        best
    }
}

/// One captured clip: identity, its script, the annotated keyframes, and
/// optional per-keyframe emotion profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub clip_id: String,
    pub actor_id: String,
    pub script: Script,
    pub keyframes: Vec<DatasetKeyframeRecord>,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotions: Option<Vec<EmotionProfile>>,
}

impl DatasetRecord {
    fn validate(&self) -> Result<(), String> {
        if self.duration <= 0.0 || !self.duration.is_finite() {
            return Err(format!("duration {} must be positive", self.duration));
        }
        if !self.keyframes.is_empty() && self.keyframes.len() != self.script.keyframe_count() {
            return Err(format!(
                "{} keyframes but the script declares {}",
                self.keyframes.len(),
                self.script.keyframe_count()
            ));
        }
        if let Some(emotions) = &self.emotions {
            if emotions.len() != self.keyframes.len() {
                return Err(format!(
                    "{} emotion profiles for {} keyframes",
                    emotions.len(),
                    self.keyframes.len()
                ));
            }
            for profile in emotions {
                profile.validate()?;
            }
        }
        Ok(())
    }
}

/// Train ratio in (0,1) plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_ratio: f64, seed: u64) -> Result<Self, DatasetError> {
        if !(train_ratio > 0.0 && train_ratio < 1.0) {
            return Err(DatasetError::SchemaViolation {
                line: 0,
                message: format!("train ratio {train_ratio} outside (0, 1)"),
            });
        }
        Ok(SplitSpec { train_ratio, seed })
    }
}

/// Reads a JSONL dataset (one record per line, blank lines skipped) and
/// validates every record; errors carry the 1-based line number.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| classify_line_error(line_no, &e))?;
        record
            .validate()
            .map_err(|message| DatasetError::SchemaViolation {
                line: line_no,
                message,
            })?;
        records.push(record);
    }
    Ok(records)
}

fn classify_line_error(line: usize, e: &serde_json::Error) -> DatasetError {
    let message = e.to_string();
    if message.contains("coefficient") || message.contains("registry") {
        DatasetError::CoeffInvalid { line, message }
    } else {
        DatasetError::SchemaViolation { line, message }
    }
}

/// Serializes records back to JSONL, one record per line.
pub fn save_dataset(path: &Path, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Seeded deterministic split: shuffle clip order, first ⌈ratio·n⌉ records
/// to train, the rest to test.
pub fn split_train_test(
    records: &[DatasetRecord],
    spec: SplitSpec,
) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>), DatasetError> {
    if records.len() < 2 {
        return Err(DatasetError::TooFewRecords(records.len()));
    }
    let n = records.len();
    let train_count = ((spec.train_ratio * n as f64).ceil() as usize).min(n - 1).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let train = order[..train_count]
        .iter()
        .map(|&i| records[i].clone())
        .collect();
    let test = order[train_count..]
        .iter()
        .map(|&i| records[i].clone())
        .collect();
    Ok((train, test))
}

/// Builds the coefficient-to-text annotation prompt: an expert persona, the
/// active channels listed as "Name:value", and a request for a concise
/// English description that does not name the parameters.
pub fn annotation_prompt(k: &CoeffVector) -> Vec<ChatMessage> {
    let reg = registry();
    let active: Vec<String> = reg
        .names()
        .iter()
        .enumerate()
        .filter_map(|(i, name)| {
            let v = k.values()[i];
            if v != 0.0 {
                // {:?} keeps a trailing ".0" on whole values ("JawOpen:1.0").
                Some(format!("{name}:{v:?}"))
            } else {
                None
            }
        })
        .collect();
    let listing = if active.is_empty() {
        "(all parameters are zero: a neutral face)".to_string()
    } else {
        active.join(", ")
    };
    vec![
        ChatMessage::system(
            "You are an expert in facial expression analysis and ARKit blendshape \
             parameters. Given a set of active blendshape values, describe the \
             visible facial expression.",
        ),
        ChatMessage::user(format!(
            "Active facial parameters: {listing}\n\nWrite a concise, English-only \
             description of the visible facial expression, without explicitly \
             mentioning the parameter names.",
        )),
    ]
}

fn strip_fences(text: &str) -> String {
    let trimmed = text.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        let body_start = rest.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &rest[body_start..];
        let inner = body.rfind("```").map(|i| &body[..i]).unwrap_or(body);
        return inner.trim().to_string();
    }
    trimmed.to_string()
}

/// Asks the endpoint for a textual description of a coefficient vector.
pub fn annotate_from_coeffs<E: ChatEndpoint + ?Sized>(
    endpoint: &E,
    k: &CoeffVector,
    cfg: &EndpointConfig,
) -> Result<String, DatasetError> {
    let raw = endpoint.chat_cfg(&annotation_prompt(k), cfg)?;
    Ok(strip_fences(&raw))
}

/// Corpus-level statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsReport {
    pub clip_count: usize,
    /// Keyframe count → fraction of clips.
    pub keyframe_histogram: BTreeMap<usize, f64>,
    /// Actor id → clip count.
    pub clips_per_actor: BTreeMap<String, usize>,
    /// Actor id → summed clip duration in seconds.
    pub duration_per_actor: BTreeMap<String, f64>,
    pub duration_min: f64,
    pub duration_q1: f64,
    pub duration_median: f64,
    pub duration_q3: f64,
    pub duration_max: f64,
}

/// Order-statistic quantile with linear interpolation (same convention as
/// the Wasserstein grid).
fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn dataset_stats(records: &[DatasetRecord]) -> Result<StatsReport, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let n = records.len();
    let mut histogram_counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut clips_per_actor: BTreeMap<String, usize> = BTreeMap::new();
    let mut duration_per_actor: BTreeMap<String, f64> = BTreeMap::new();
    let mut durations = Vec::with_capacity(n);
    for record in records {
        *histogram_counts
            .entry(record.script.keyframe_count())
            .or_insert(0) += 1;
        *clips_per_actor.entry(record.actor_id.clone()).or_insert(0) += 1;
        *duration_per_actor
            .entry(record.actor_id.clone())
            .or_insert(0.0) += record.duration;
        durations.push(record.duration);
    }
    durations.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let keyframe_histogram = histogram_counts
        .into_iter()
        .map(|(k, count)| (k, count as f64 / n as f64))
        .collect();
    Ok(StatsReport {
        clip_count: n,
        keyframe_histogram,
        clips_per_actor,
        duration_per_actor,
        duration_min: durations[0],
        duration_q1: sorted_quantile(&durations, 0.25),
        duration_median: sorted_quantile(&durations, 0.5),
        duration_q3: sorted_quantile(&durations, 0.75),
        duration_max: durations[durations.len() - 1],
    })
}

/// Fraction of keyframes whose dominant emotion is each category; fractions
/// sum to 1. Every record must carry emotion profiles.
pub fn emotion_distribution(
    records: &[DatasetRecord],
) -> Result<BTreeMap<String, f64>, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut counts = [0usize; 6];
    let mut total = 0usize;
    for record in records {
        let emotions = record
            .emotions
            .as_ref()
            .ok_or_else(|| DatasetError::MissingEmotions(record.clip_id.clone()))?;
        if emotions.is_empty() {
            return Err(DatasetError::MissingEmotions(record.clip_id.clone()));
        }
        for profile in emotions {
            counts[profile.dominant()] += 1;
            total += 1;
        }
    }
    Ok(EMOTION_NAMES
        .iter()
        .zip(counts)
        .map(|(name, c)| (name.to_string(), c as f64 / total as f64))
        .collect())
}
