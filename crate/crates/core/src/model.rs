//! Canonical data model for ARKit blendshape coefficients, scripts, and
//! keyframe sequences. All validation lives here; every other module builds
//! on these types.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of channels per frame: 52 expression blendshapes + 9 pose channels.
pub const CHANNEL_COUNT: usize = 61;

/// Version tag stamped on every coefficient vector.
pub const REGISTRY_VERSION: &str = "arkit61-v1";

/// The 52 ARKit expression blendshapes, in the order used by the Live Link
/// Face column layout, followed by the 9 head/eye pose channels.
const CHANNEL_NAMES: [&str; CHANNEL_COUNT] = [
    "EyeBlinkLeft",
    "EyeLookDownLeft",
    "EyeLookInLeft",
    "EyeLookOutLeft",
    "EyeLookUpLeft",
    "EyeSquintLeft",
    "EyeWideLeft",
    "EyeBlinkRight",
    "EyeLookDownRight",
    "EyeLookInRight",
    "EyeLookOutRight",
    "EyeLookUpRight",
    "EyeSquintRight",
    "EyeWideRight",
    "JawForward",
    "JawLeft",
    "JawRight",
    "JawOpen",
    "MouthClose",
    "MouthFunnel",
    "MouthPucker",
    "MouthLeft",
    "MouthRight",
    "MouthSmileLeft",
    "MouthSmileRight",
    "MouthFrownLeft",
    "MouthFrownRight",
    "MouthDimpleLeft",
    "MouthDimpleRight",
    "MouthStretchLeft",
    "MouthStretchRight",
    "MouthRollLower",
    "MouthRollUpper",
    "MouthShrugLower",
    "MouthShrugUpper",
    "MouthPressLeft",
    "MouthPressRight",
    "MouthLowerDownLeft",
    "MouthLowerDownRight",
    "MouthUpperUpLeft",
    "MouthUpperUpRight",
    "BrowDownLeft",
    "BrowDownRight",
    "BrowInnerUp",
    "BrowOuterUpLeft",
    "BrowOuterUpRight",
    "CheekPuff",
    "CheekSquintLeft",
    "CheekSquintRight",
    "NoseSneerLeft",
    "NoseSneerRight",
    "TongueOut",
    "HeadYaw",
    "HeadPitch",
    "HeadRoll",
    "LeftEyeYaw",
    "LeftEyePitch",
    "LeftEyeRoll",
    "RightEyeYaw",
    "RightEyePitch",
    "RightEyeRoll",
];

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("wrong dimension: expected {expected}, got {got}")]
    WrongDimension { expected: usize, got: usize },
    #[error("channel {channel} out of range: {value}")]
    OutOfRange { channel: usize, value: f64 },
    #[error("channel {channel} is not finite")]
    NonFinite { channel: usize },
    #[error("unknown channel name: {0}")]
    UnknownChannel(String),
    #[error("frame count mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("keyframe index must be >= 1")]
    BadKeyframeIndex,
    #[error("keyframe description must be non-empty")]
    EmptyDescription,
    #[error("script must contain at least one keyframe")]
    NoKeyframes,
    #[error("keyframe indices must be contiguous 1..n, found {0} at position {1}")]
    NonContiguousKeyframes(usize, usize),
    #[error("keyframe set must be non-empty")]
    EmptyKeyframeSet,
}

/// The pinned, versioned channel table. Name→index lookup is a bijection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelRegistry {
    names: &'static [&'static str; CHANNEL_COUNT],
    version: &'static str,
}

impl ChannelRegistry {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn version(&self) -> &'static str {
        self.version
    }

    pub fn names(&self) -> &[&'static str] {
        self.names.as_slice()
    }

    pub fn name_at(&self, index: usize) -> Option<&'static str> {
        self.names.get(index).copied()
    }

    /// Case-sensitive exact lookup.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| *n == name)
    }
}

/// Returns the pinned version-1 registry.
pub fn registry() -> ChannelRegistry {
    ChannelRegistry {
        names: &CHANNEL_NAMES,
        version: REGISTRY_VERSION,
    }
}

/// Validation policy for raw coefficient input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidatePolicy {
    /// Error on any out-of-range value.
    Strict,
    /// Clamp out-of-range values into [-1, 1]. NaN/∞ are rejected either way.
    Clamp,
}

/// One validated 61-channel coefficient frame. Every value is finite and
/// lies in [-1, 1]; instances are immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffVector {
    values: Vec<f64>,
    registry_version: &'static str,
}

impl CoeffVector {
    /// The all-zero (neutral) frame.
    pub fn neutral() -> Self {
        CoeffVector {
            values: vec![0.0; CHANNEL_COUNT],
            registry_version: REGISTRY_VERSION,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn registry_version(&self) -> &str {
        self.registry_version
    }

    pub fn get(&self, channel: usize) -> Option<f64> {
        self.values.get(channel).copied()
    }

    pub fn get_named(&self, name: &str) -> Option<f64> {
        registry().index_of(name).map(|i| self.values[i])
    }

    /// Euclidean distance between two frames.
    pub fn distance(&self, other: &CoeffVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Validates a raw value list into a [`CoeffVector`].
pub fn validate_coeffs(raw: &[f64], policy: ValidatePolicy) -> Result<CoeffVector, ModelError> {
    if raw.len() != CHANNEL_COUNT {
        return Err(ModelError::WrongDimension {
            expected: CHANNEL_COUNT,
            got: raw.len(),
        });
    }
    let mut values = Vec::with_capacity(CHANNEL_COUNT);
    for (i, &v) in raw.iter().enumerate() {
        if !v.is_finite() {
            return Err(ModelError::NonFinite { channel: i });
        }
        if !(-1.0..=1.0).contains(&v) {
            match policy {
                ValidatePolicy::Strict => {
                    return Err(ModelError::OutOfRange { channel: i, value: v })
                }
                ValidatePolicy::Clamp => values.push(v.clamp(-1.0, 1.0)),
            }
        } else {
            values.push(v);
        }
    }
    Ok(CoeffVector {
        values,
        registry_version: REGISTRY_VERSION,
    })
}

/// Builds a vector from a name→value map. Unnamed channels default to 0.0.
pub fn from_semantic_map(
    map: &BTreeMap<String, f64>,
    policy: ValidatePolicy,
) -> Result<CoeffVector, ModelError> {
    let reg = registry();
    let mut raw = vec![0.0; CHANNEL_COUNT];
    for (name, &value) in map {
        let idx = reg
            .index_of(name)
            .ok_or_else(|| ModelError::UnknownChannel(name.clone()))?;
        raw[idx] = value;
    }
    validate_coeffs(&raw, policy)
}

/// Emits a name→value map in registry order (BTreeMap sorts keys, so order
/// is recovered on iteration through the registry when rendering).
pub fn to_semantic_map(v: &CoeffVector, omit_zeros: bool) -> BTreeMap<String, f64> {
    let reg = registry();
    let mut map = BTreeMap::new();
    for (i, &value) in v.values.iter().enumerate() {
        if omit_zeros && value == 0.0 {
            continue;
        }
        map.insert(reg.name_at(i).unwrap().to_string(), value);
    }
    map
}

/// Renders a semantic map as JSON with keys in registry order.
pub fn semantic_map_to_json(v: &CoeffVector, omit_zeros: bool) -> String {
    let reg = registry();
    let mut parts = Vec::new();
    for (i, &value) in v.values.iter().enumerate() {
        if omit_zeros && value == 0.0 {
            continue;
        }
        parts.push(format!(
            "{}: {}",
            serde_json::to_string(reg.name_at(i).unwrap()).unwrap(),
            serde_json::Number::from_f64(value).unwrap()
        ));
    }
    format!("{{{}}}", parts.join(", "))
}

impl Serialize for CoeffVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("CoeffVector", 2)?;
        s.serialize_field("registry_version", self.registry_version)?;
        s.serialize_field("values", &self.values)?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for CoeffVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Dense { values: Vec<f64> },
            Array(Vec<f64>),
            Semantic(BTreeMap<String, f64>),
        }
        let repr = Repr::deserialize(deserializer)?;
        let parsed = match repr {
            Repr::Dense { values } | Repr::Array(values) => {
                validate_coeffs(&values, ValidatePolicy::Strict)
            }
            Repr::Semantic(map) => from_semantic_map(&map, ValidatePolicy::Strict),
        };
        parsed.map_err(de::Error::custom)
    }
}

/// One keyframe description within a script, 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeyframeSpec {
    index: usize,
    description: String,
}

impl KeyframeSpec {
    pub fn new(index: usize, description: impl Into<String>) -> Result<Self, ModelError> {
        let description = description.into();
        if index < 1 {
            return Err(ModelError::BadKeyframeIndex);
        }
        if description.trim().is_empty() {
            return Err(ModelError::EmptyDescription);
        }
        Ok(KeyframeSpec { index, description })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

impl<'de> Deserialize<'de> for KeyframeSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            index: usize,
            description: String,
        }
        let raw = Raw::deserialize(deserializer)?;
        KeyframeSpec::new(raw.index, raw.description).map_err(de::Error::custom)
    }
}

/// Background + emotion + ordered keyframe descriptions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Script {
    background: String,
    emotion: String,
    keyframes: Vec<KeyframeSpec>,
}

impl Script {
    pub fn new(
        background: impl Into<String>,
        emotion: impl Into<String>,
        keyframes: Vec<KeyframeSpec>,
    ) -> Result<Self, ModelError> {
        if keyframes.is_empty() {
            return Err(ModelError::NoKeyframes);
        }
        for (pos, kf) in keyframes.iter().enumerate() {
            if kf.index != pos + 1 {
                return Err(ModelError::NonContiguousKeyframes(kf.index, pos));
            }
        }
        Ok(Script {
            background: background.into(),
            emotion: emotion.into(),
            keyframes,
        })
    }

    pub fn background(&self) -> &str {
        &self.background
    }

    pub fn emotion(&self) -> &str {
        &self.emotion
    }

    pub fn keyframes(&self) -> &[KeyframeSpec] {
        &self.keyframes
    }

    pub fn keyframe_count(&self) -> usize {
        self.keyframes.len()
    }
}

impl<'de> Deserialize<'de> for Script {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            background: String,
            #[serde(default)]
            emotion: String,
            keyframes: Vec<KeyframeSpec>,
        }
        let raw = Raw::deserialize(deserializer)?;
        Script::new(raw.background, raw.emotion, raw.keyframes).map_err(de::Error::custom)
    }
}

/// An ordered set of generated or captured keyframe coefficient vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionKeyframeSet {
    frames: Vec<CoeffVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_script_id: Option<String>,
}

impl MotionKeyframeSet {
    pub fn new(
        frames: Vec<CoeffVector>,
        source_script_id: Option<String>,
    ) -> Result<Self, ModelError> {
        if frames.is_empty() {
            return Err(ModelError::EmptyKeyframeSet);
        }
        Ok(MotionKeyframeSet {
            frames,
            source_script_id,
        })
    }

    pub fn frames(&self) -> &[CoeffVector] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn source_script_id(&self) -> Option<&str> {
        self.source_script_id.as_deref()
    }
}

/// A single annotated dataset keyframe: frame index in the source video,
/// its coefficients, and the three annotation layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetKeyframeRecord {
    pub frame_index: u64,
    pub coeffs: CoeffVector,
    #[serde(default)]
    pub description_original: String,
    #[serde(default)]
    pub description_arkit: String,
    #[serde(default)]
    pub description_image: String,
}

/// Element-wise error summary between two equally sized keyframe sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameErrors {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
}

impl fmt::Display for FrameErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mse={:.6} mae={:.6} rmse={:.6}",
            self.mse, self.mae, self.rmse
        )
    }
}

/// Mean element-wise errors over all 61·n entries.
pub fn frame_errors(
    pred: &MotionKeyframeSet,
    gt: &MotionKeyframeSet,
) -> Result<FrameErrors, ModelError> {
    if pred.len() != gt.len() {
        return Err(ModelError::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut count = 0usize;
    for (p, g) in pred.frames().iter().zip(gt.frames()) {
        for (a, b) in p.values().iter().zip(g.values()) {
            let d = a - b;
            se += d * d;
            ae += d.abs();
            count += 1;
        }
    }
    let mse = se / count as f64;
    let mae = ae / count as f64;
    Ok(FrameErrors {
        mse,
        mae,
        rmse: mse.sqrt(),
    })
}
