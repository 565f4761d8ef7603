//! Two-stage orchestration: free text is standardized into a structured
//! Script (with a user confirmation step), then each keyframe description is
//! turned into a coefficient vector through one independent LLM completion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    extract_json_object, generate_keyframe, ChatEndpoint, ChatMessage, EndpointConfig,
    GatewayError, ParseReport,
};
use crate::model::{ModelError, MotionKeyframeSet, Script};
use crate::prompt::{
    build_system_prompt, build_target_instruction, compose_prompt, extract_keyframes,
    parse_script, FullPrompt, PromptError, PromptMode,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Gateway failure; carries the 1-based keyframe index when the failure
    /// happened while generating a specific keyframe.
    #[error("gateway error{}: {source}", match keyframe { Some(i) => format!(" at keyframe {i}"), None => String::new() })]
    Gateway {
        keyframe: Option<usize>,
        source: GatewayError,
    },
    /// The standardization LLM failed to produce a valid Script even after
    /// one re-ask.
    #[error("draft script invalid: {0}")]
    InvalidDraft(String),
    #[error("edited script invalid: {0}")]
    InvalidEdit(String),
    /// The user rejected the draft; nothing is persisted.
    #[error("run aborted at confirmation")]
    Aborted,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Arbitrary user description of expressions, emotions, or behaviors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeTextInput {
    text: String,
}

impl FreeTextInput {
    pub fn new(text: impl Into<String>) -> Result<Self, PipelineError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PipelineError::InvalidDraft("input text is empty".into()));
        }
        Ok(FreeTextInput { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// One complete generation run: the confirmed script, the prompting mode,
/// the ordered output frames, and per-keyframe parse reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRun {
    pub script: Script,
    pub mode: PromptMode,
    pub model_name: String,
    pub outputs: MotionKeyframeSet,
    pub per_keyframe_reports: Vec<ParseReport>,
}

/// Whether keyframes are generated one after another or all at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecutionMode {
    #[default]
    Sequential,
    Concurrent,
}

const STANDARDIZE_SYSTEM: &str = "You convert free-form descriptions of facial \
expressions into a structured script. Respond with only a JSON object of the \
form {\"background\": string, \"emotion\": string, \"keyframes\": \
[{\"index\": number, \"description\": string}, ...]}. Keyframe indices start \
at 1 and increase by 1; include at least one keyframe. Each description must \
state the visible facial configuration at that moment. Do not add prose or \
markdown around the JSON.";

const STANDARDIZE_REMINDER: &str = "Your previous answer was not a valid \
script. Respond again with only the JSON object in the required shape.";

fn parse_draft(raw: &str) -> Result<Script, String> {
    let json = extract_json_object(raw).ok_or_else(|| "no JSON object found".to_string())?;
    parse_script(&json).map_err(|e| e.to_string())
}

/// Converts free text into a draft Script via one LLM call (plus one re-ask
/// on an invalid draft). Input that already parses as a JSON Script is
/// passed through unchanged with zero LLM calls.
pub fn standardize<E: ChatEndpoint + ?Sized>(
    endpoint: &E,
    input: &FreeTextInput,
    cfg: &EndpointConfig,
) -> Result<Script, PipelineError> {
    let trimmed = input.text().trim();
    if trimmed.starts_with('{') {
        if let Ok(script) = parse_script(trimmed) {
            return Ok(script);
        }
    }

    let mut messages = vec![
        ChatMessage::system(STANDARDIZE_SYSTEM),
        ChatMessage::user(input.text().to_string()),
    ];
    let raw = endpoint
        .chat_cfg(&messages, cfg)
        .map_err(|source| PipelineError::Gateway {
            keyframe: None,
            source,
        })?;
    match parse_draft(&raw) {
        Ok(script) => Ok(script),
        Err(_) => {
            let user = messages.last_mut().unwrap();
            user.content = format!("{}\n\n{}", user.content, STANDARDIZE_REMINDER);
            let raw = endpoint
                .chat_with_budget(&messages, cfg, 0)
                .map_err(|source| PipelineError::Gateway {
                    keyframe: None,
                    source,
                })?;
            parse_draft(&raw).map_err(PipelineError::InvalidDraft)
        }
    }
}

/// User decision on a draft script. Edits carry replacement text (labeled
/// form or JSON) that is validated before being adopted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfirmDecision {
    Accept,
    Edit(String),
    Reject,
}

/// Applies the confirmation decision: accept returns the draft, edit returns
/// the validated replacement, reject aborts the run.
pub fn confirm_script(draft: Script, decision: ConfirmDecision) -> Result<Script, PipelineError> {
    match decision {
        ConfirmDecision::Accept => Ok(draft),
        ConfirmDecision::Edit(replacement) => {
            parse_script(&replacement).map_err(|e| PipelineError::InvalidEdit(e.to_string()))
        }
        ConfirmDecision::Reject => Err(PipelineError::Aborted),
    }
}

/// The prompt for keyframe `i` of `script`; a pure function of its inputs,
/// independent of any earlier keyframe's output.
pub fn keyframe_prompt(
    script: &Script,
    index: usize,
    mode: PromptMode,
) -> Result<FullPrompt, PromptError> {
    let n = script.keyframe_count();
    let instruction = build_target_instruction(index, n)?;
    let system = match mode {
        PromptMode::Semantic => Some(build_system_prompt(&crate::model::registry())),
        PromptMode::NonSemantic => None,
    };
    compose_prompt(system, script, instruction, mode)
}

/// Runs the per-keyframe generation loop: exactly one gateway generation per
/// keyframe, outputs ordered by keyframe index. Any failure discards all
/// partial results and names the failing keyframe.
pub fn generate_sequence<E: ChatEndpoint + ?Sized>(
    endpoint: &E,
    script: &Script,
    prompt_mode: PromptMode,
    execution: ExecutionMode,
    cfg: &EndpointConfig,
) -> Result<GenerationRun, PipelineError> {
    let keyframes = extract_keyframes(script);
    let results = match execution {
        ExecutionMode::Sequential => {
            let mut results = Vec::with_capacity(keyframes.len());
            for kf in keyframes {
                let prompt = keyframe_prompt(script, kf.index(), prompt_mode)?;
                let generated =
                    generate_keyframe(endpoint, &prompt, cfg).map_err(|source| {
                        PipelineError::Gateway {
                            keyframe: Some(kf.index()),
                            source,
                        }
                    })?;
                results.push(generated);
            }
            results
        }
        ExecutionMode::Concurrent => {
            let prompts: Vec<FullPrompt> = keyframes
                .iter()
                .map(|kf| keyframe_prompt(script, kf.index(), prompt_mode))
                .collect::<Result<_, _>>()?;
            let outcomes: Vec<_> = std::thread::scope(|scope| {
                let handles: Vec<_> = prompts
                    .iter()
                    .map(|prompt| scope.spawn(move || generate_keyframe(endpoint, prompt, cfg)))
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            // Assemble by index; report the earliest failing keyframe.
            let mut results = Vec::with_capacity(outcomes.len());
            for (kf, outcome) in keyframes.iter().zip(outcomes) {
                results.push(outcome.map_err(|source| PipelineError::Gateway {
                    keyframe: Some(kf.index()),
                    source,
                })?);
            }
            results
        }
    };

    let (frames, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(GenerationRun {
        script: script.clone(),
        mode: prompt_mode,
        model_name: cfg.model_name.clone(),
        outputs: MotionKeyframeSet::new(frames, None)?,
        per_keyframe_reports: reports,
    })
}
