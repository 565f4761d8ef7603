//! Prompt construction and script parsing: the three-part system prompt,
//! per-keyframe target instructions, the semantic / non-semantic prompt
//! composition, and fine-tune corpus export.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    from_semantic_map, semantic_map_to_json, validate_coeffs, ChannelRegistry, CoeffVector,
    KeyframeSpec, ModelError, Script, ValidatePolicy,
};

/// Version tag for the authored system-prompt asset; bump when the wording
/// changes so exported fine-tune corpora stay reproducible.
pub const SYSTEM_PROMPT_VERSION: &str = "keyface-sysprompt-v1";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("input contains no keyframe sections")]
    NoKeyframes,
    #[error("malformed section: {0}")]
    MalformedSection(String),
    #[error("keyframe index {index} out of range 1..={total}")]
    IndexOutOfRange { index: usize, total: usize },
    #[error("semantic mode requires a system prompt")]
    MissingSystemPrompt,
    #[error("script has {script} keyframes but {coeffs} coefficient vectors")]
    KeyframeCountMismatch { script: usize, coeffs: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Prompt composition mode: with the system prompt and named-map outputs,
/// or script-only with bare 61-number array outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Semantic,
    NonSemantic,
}

impl PromptMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptMode::Semantic => "semantic",
            PromptMode::NonSemantic => "non_semantic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "semantic" => Some(PromptMode::Semantic),
            "non_semantic" | "non-semantic" => Some(PromptMode::NonSemantic),
            _ => None,
        }
    }
}

/// The three-part system prompt: overview, one explanation line per channel,
/// and the output specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemPrompt {
    pub overview: String,
    pub parameter_explanations: Vec<(String, String)>,
    pub output_spec: String,
}

impl SystemPrompt {
    /// Full rendered text: overview, parameter table, output spec.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.overview);
        out.push_str("\n\nParameter Explanation:\n");
        for (name, explanation) in &self.parameter_explanations {
            out.push_str(&format!("- {}: {}\n", name, explanation));
        }
        out.push('\n');
        out.push_str(&self.output_spec);
        out
    }
}

/// The per-keyframe task instruction appended after the script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetInstruction {
    pub keyframe_index: usize,
    pub text: String,
}

/// A composed prompt bundle ready for the gateway.
#[derive(Debug, Clone, PartialEq)]
pub struct FullPrompt {
    pub mode: PromptMode,
    pub system: Option<SystemPrompt>,
    pub script: Script,
    pub instruction: TargetInstruction,
}

impl FullPrompt {
    /// The user-turn text: script followed by the target instruction.
    pub fn user_text(&self) -> String {
        format!("{}\n\n{}", render_script_text(&self.script), self.instruction.text)
    }

    /// Complete rendered text, system section first when semantic.
    pub fn render(&self) -> String {
        match &self.system {
            Some(sys) => format!("{}\n\n{}", sys.render(), self.user_text()),
            None => self.user_text(),
        }
    }
}

/// Renders a script back into the labeled plain-text form.
pub fn render_script_text(s: &Script) -> String {
    let mut out = format!("Background: {}\n", s.background());
    if !s.emotion().is_empty() {
        out.push_str(&format!("Emotion: {}\n", s.emotion()));
    }
    for kf in s.keyframes() {
        out.push_str(&format!(
            "Keyframe {}: {}\n",
            ordinal_word(kf.index()),
            kf.description()
        ));
    }
    out
}

const ORDINALS: [&str; 10] = [
    "One", "Two", "Three", "Four", "Five", "Six", "Seven", "Eight", "Nine", "Ten",
];

/// Ordinal word for 1..=10, decimal digits beyond.
pub fn ordinal_word(i: usize) -> String {
    if (1..=10).contains(&i) {
        ORDINALS[i - 1].to_string()
    } else {
        i.to_string()
    }
}

fn ordinal_value(word: &str) -> Option<usize> {
    if let Some(pos) = ORDINALS.iter().position(|w| w.eq_ignore_ascii_case(word)) {
        return Some(pos + 1);
    }
    word.parse::<usize>().ok().filter(|&n| n >= 1)
}

/// Parses a script from either the labeled plain-text form
/// ("Background: ... / Keyframe One: ...") or its canonical JSON form.
pub fn parse_script(input: &str) -> Result<Script, PromptError> {
    let trimmed = input.trim();
    if trimmed.is_empty() {
        return Err(PromptError::MalformedSection("empty input".to_string()));
    }
    if trimmed.starts_with('{') {
        return serde_json::from_str::<Script>(trimmed)
            .map_err(|e| PromptError::MalformedSection(e.to_string()));
    }
    parse_script_text(trimmed)
}

fn parse_script_text(input: &str) -> Result<Script, PromptError> {
    enum Section {
        Background,
        Emotion,
        Keyframe,
    }
    let mut background = String::new();
    let mut emotion = String::new();
    let mut keyframes: Vec<String> = Vec::new();
    let mut current: Option<Section> = None;

    for line in input.lines() {
        let stripped = line.trim().trim_start_matches(['-', '*']).trim_start();
        let lower = stripped.to_ascii_lowercase();
        if let Some(rest) = lower
            .starts_with("background:")
            .then(|| stripped["background:".len()..].trim_start())
        {
            background = rest.to_string();
            current = Some(Section::Background);
        } else if let Some(rest) = lower
            .starts_with("emotion:")
            .then(|| stripped["emotion:".len()..].trim_start())
        {
            emotion = rest.to_string();
            current = Some(Section::Emotion);
        } else if lower.starts_with("keyframe") {
            let rest = &stripped["keyframe".len()..];
            let Some(colon) = rest.find(':') else {
                return Err(PromptError::MalformedSection(stripped.to_string()));
            };
            let label = rest[..colon].trim();
            if ordinal_value(label).is_none() {
                return Err(PromptError::MalformedSection(stripped.to_string()));
            }
            keyframes.push(rest[colon + 1..].trim_start().to_string());
            current = Some(Section::Keyframe);
        } else if !stripped.is_empty() {
            // Continuation of the current section.
            match current {
                Some(Section::Background) => {
                    if !background.is_empty() {
                        background.push(' ');
                    }
                    background.push_str(stripped);
                }
                Some(Section::Emotion) => {
                    if !emotion.is_empty() {
                        emotion.push(' ');
                    }
                    emotion.push_str(stripped);
                }
                Some(Section::Keyframe) => {
                    let last = keyframes.last_mut().unwrap();
                    if !last.is_empty() {
                        last.push(' ');
                    }
                    last.push_str(stripped);
                }
                None => {
                    return Err(PromptError::MalformedSection(stripped.to_string()));
                }
            }
        }
    }

    if keyframes.is_empty() {
        return Err(PromptError::NoKeyframes);
    }
    let specs = keyframes
        .into_iter()
        .enumerate()
        .map(|(i, desc)| KeyframeSpec::new(i + 1, desc))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Script::new(background, emotion, specs)?)
}

/// Returns the script's keyframes in order (Algorithm step: keyframe extraction).
pub fn extract_keyframes(s: &Script) -> &[KeyframeSpec] {
    s.keyframes()
}

/// Deterministic per-keyframe task instruction.
pub fn build_target_instruction(i: usize, n: usize) -> Result<TargetInstruction, PromptError> {
    if i < 1 || i > n {
        return Err(PromptError::IndexOutOfRange { index: i, total: n });
    }
    Ok(TargetInstruction {
        keyframe_index: i,
        text: format!(
            "Based on the above descriptions, please generate the facial expression parameters for Keyframe {}.",
            ordinal_word(i)
        ),
    })
}

fn explanation_for(name: &str) -> String {
    // Pose channels first, then expression blendshapes by prefix.
    let side = if name.contains("Left") {
        " on the left side"
    } else if name.contains("Right") {
        " on the right side"
    } else {
        ""
    };
    let base: String = match name {
        "HeadYaw" => "rotation of the head left or right around the vertical axis".into(),
        "HeadPitch" => "tilt of the head up or down (nodding axis)".into(),
        "HeadRoll" => "tilt of the head toward either shoulder".into(),
        "LeftEyeYaw" => "horizontal rotation of the left eyeball".into(),
        "LeftEyePitch" => "vertical rotation of the left eyeball".into(),
        "LeftEyeRoll" => "torsional rotation of the left eyeball".into(),
        "RightEyeYaw" => "horizontal rotation of the right eyeball".into(),
        "RightEyePitch" => "vertical rotation of the right eyeball".into(),
        "RightEyeRoll" => "torsional rotation of the right eyeball".into(),
        "JawForward" => "forward thrust of the jaw".into(),
        "JawLeft" => "sideways shift of the jaw to the left".into(),
        "JawRight" => "sideways shift of the jaw to the right".into(),
        "JawOpen" => "opening of the jaw, dropping the mouth open".into(),
        "MouthClose" => "closure of the lips independent of jaw opening".into(),
        "MouthFunnel" => "funnel shape of the lips as in pronouncing 'oo'".into(),
        "MouthPucker" => "puckering of the lips as in a kiss".into(),
        "MouthLeft" => "sideways shift of both lips to the left".into(),
        "MouthRight" => "sideways shift of both lips to the right".into(),
        "BrowInnerUp" => "raise of the inner portion of both eyebrows".into(),
        "CheekPuff" => "puffing of both cheeks with air".into(),
        "TongueOut" => "extension of the tongue out of the mouth".into(),
        _ => {
            if let Some(_) = name.strip_prefix("EyeBlink") {
                format!("closure of the eyelid{}", side)
            } else if name.starts_with("EyeLookDown") {
                format!("downward gaze of the eye{}", side)
            } else if name.starts_with("EyeLookIn") {
                format!("inward (toward the nose) gaze of the eye{}", side)
            } else if name.starts_with("EyeLookOut") {
                format!("outward (toward the temple) gaze of the eye{}", side)
            } else if name.starts_with("EyeLookUp") {
                format!("upward gaze of the eye{}", side)
            } else if name.starts_with("EyeSquint") {
                format!("tightening of the lower eyelid{}", side)
            } else if name.starts_with("EyeWide") {
                format!("widening of the eyelids{}", side)
            } else if name.starts_with("MouthSmile") {
                format!("upward pull of the mouth corner into a smile{}", side)
            } else if name.starts_with("MouthFrown") {
                format!("downward pull of the mouth corner into a frown{}", side)
            } else if name.starts_with("MouthDimple") {
                format!("backward pull of the mouth corner forming a dimple{}", side)
            } else if name.starts_with("MouthStretch") {
                format!("lateral stretch of the mouth corner{}", side)
            } else if name == "MouthRollLower" {
                "inward roll of the lower lip over the teeth".into()
            } else if name == "MouthRollUpper" {
                "inward roll of the upper lip over the teeth".into()
            } else if name == "MouthShrugLower" {
                "upward push of the lower lip as in a shrugging pout".into()
            } else if name == "MouthShrugUpper" {
                "upward push of the upper lip".into()
            } else if name.starts_with("MouthPress") {
                format!("pressing together of the lips{}", side)
            } else if name.starts_with("MouthLowerDown") {
                format!("downward pull of the lower lip exposing lower teeth{}", side)
            } else if name.starts_with("MouthUpperUp") {
                format!("upward pull of the upper lip exposing upper teeth{}", side)
            } else if name.starts_with("BrowDown") {
                format!("lowering and knitting of the eyebrow{}", side)
            } else if name.starts_with("BrowOuterUp") {
                format!("raise of the outer portion of the eyebrow{}", side)
            } else if name.starts_with("CheekSquint") {
                format!("upward squint of the cheek below the eye{}", side)
            } else if name.starts_with("NoseSneer") {
                format!("upward wrinkle of the nose as in a sneer{}", side)
            } else {
                format!("activation of the {} facial muscle group", name)
            }
        }
    };
    base
}

/// Builds the pinned three-part system prompt covering every registry channel.
pub fn build_system_prompt(reg: &ChannelRegistry) -> SystemPrompt {
    let overview = "System Overview: You are a facial animation expert controlling a digital \
                    character through 61 ARKit coefficients: 52 expression blendshapes and 9 \
                    head/eye pose channels. Each coefficient is a number in [-1, 1] describing \
                    the activation of one facial muscle group or pose axis, where 0 is neutral."
        .to_string();
    let parameter_explanations = reg
        .names()
        .iter()
        .map(|name| (name.to_string(), explanation_for(name)))
        .collect();
    let output_spec = "Output Specification: Respond with a single JSON object whose keys are \
                       the coefficient names listed above and whose values are numbers in \
                       [-1, 1]. Channels left at their neutral value 0 may be omitted. Do not \
                       output any prose, explanation, or markdown outside the JSON object."
        .to_string();
    SystemPrompt {
        overview,
        parameter_explanations,
        output_spec,
    }
}

/// Output instruction appended to non-semantic prompts, demanding a bare
/// 61-number array with no channel names.
pub const NON_SEMANTIC_OUTPUT_SPEC: &str =
    "Respond with a single JSON array of exactly 61 numbers in [-1, 1]. \
     Do not output any prose, labels, or markdown outside the array.";

/// Composes the full prompt bundle for one keyframe.
pub fn compose_prompt(
    sys: Option<SystemPrompt>,
    script: &Script,
    instruction: TargetInstruction,
    mode: PromptMode,
) -> Result<FullPrompt, PromptError> {
    let system = match mode {
        PromptMode::Semantic => Some(sys.ok_or(PromptError::MissingSystemPrompt)?),
        PromptMode::NonSemantic => None,
    };
    let instruction = match mode {
        PromptMode::Semantic => instruction,
        PromptMode::NonSemantic => TargetInstruction {
            keyframe_index: instruction.keyframe_index,
            text: format!("{} {}", instruction.text, NON_SEMANTIC_OUTPUT_SPEC),
        },
    };
    Ok(FullPrompt {
        mode,
        system,
        script: script.clone(),
        instruction,
    })
}

/// One prompt/completion pair of the fine-tuning corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneRecord {
    pub mode: PromptMode,
    pub system_text: Option<String>,
    pub user_text: String,
    pub completion_text: String,
}

impl FinetuneRecord {
    /// Chat-style JSONL line: system/user/assistant roles (system only in
    /// semantic mode).
    pub fn to_jsonl_line(&self) -> String {
        let mut messages = Vec::new();
        if let Some(sys) = &self.system_text {
            messages.push(serde_json::json!({"role": "system", "content": sys}));
        }
        messages.push(serde_json::json!({"role": "user", "content": self.user_text}));
        messages.push(serde_json::json!({"role": "assistant", "content": self.completion_text}));
        serde_json::json!({ "messages": messages }).to_string()
    }

    /// Re-parses the completion back into a coefficient vector under the
    /// record's mode.
    pub fn parse_completion(&self) -> Result<CoeffVector, PromptError> {
        match self.mode {
            PromptMode::Semantic => {
                let map: BTreeMap<String, f64> = serde_json::from_str(&self.completion_text)
                    .map_err(|e| PromptError::MalformedSection(e.to_string()))?;
                Ok(from_semantic_map(&map, ValidatePolicy::Strict)?)
            }
            PromptMode::NonSemantic => {
                let raw: Vec<f64> = serde_json::from_str(&self.completion_text)
                    .map_err(|e| PromptError::MalformedSection(e.to_string()))?;
                Ok(validate_coeffs(&raw, ValidatePolicy::Strict)?)
            }
        }
    }
}

fn dense_array_text(v: &CoeffVector) -> String {
    let parts: Vec<String> = v
        .values()
        .iter()
        .map(|x| serde_json::Number::from_f64(*x).unwrap().to_string())
        .collect();
    format!("[{}]", parts.join(", "))
}

/// Exports one fine-tune record per (script, keyframe) pair.
pub fn export_finetune_records(
    data: &[(Script, Vec<CoeffVector>)],
    mode: PromptMode,
) -> Result<Vec<FinetuneRecord>, PromptError> {
    let sys = match mode {
        PromptMode::Semantic => Some(build_system_prompt(&crate::model::registry())),
        PromptMode::NonSemantic => None,
    };
    let mut records = Vec::new();
    for (script, coeffs) in data {
        if script.keyframe_count() != coeffs.len() {
            return Err(PromptError::KeyframeCountMismatch {
                script: script.keyframe_count(),
                coeffs: coeffs.len(),
            });
        }
        let n = script.keyframe_count();
        for (kf, vector) in script.keyframes().iter().zip(coeffs) {
            let instr = build_target_instruction(kf.index(), n)?;
            let prompt = compose_prompt(sys.clone(), script, instr, mode)?;
            let completion_text = match mode {
                PromptMode::Semantic => semantic_map_to_json(vector, true),
                PromptMode::NonSemantic => dense_array_text(vector),
            };
            records.push(FinetuneRecord {
                mode,
                system_text: prompt.system.as_ref().map(|s| s.render()),
                user_text: prompt.user_text(),
                completion_text,
            });
        }
    }
    Ok(records)
}
