//! `keyface`: command-line front end for the text-to-facial-animation
//! toolkit. Subcommands cover the full flow: standardize free text into a
//! script, generate keyframes through an LLM endpoint, render animation
//! curves, evaluate motion sets, train the retrieval encoder, and manage
//! the dataset.

use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use keyface_core::animation::{
    assign_timing, export_livelink_csv, import_livelink_csv, interpolate_linear,
    smooth_moving_average, FrameSequence, TimingPolicy, DEFAULT_FPS,
};
use keyface_core::dataset::{
    annotate_from_coeffs, dataset_stats, emotion_distribution, load_dataset, save_dataset,
    split_train_test, SplitSpec,
};
use keyface_core::eval::{
    diversity, encode_motion, encode_text, fit_gaussian, frechet_distance, mmd, r_precision,
    similarity_matrix, train_encoder, wasserstein_dist, DiversityReport, EmbeddingBatch,
    MetricReport, RPrecisionReport, RetrievalModel, TrainConfig,
};
use keyface_core::gateway::{EndpointConfig, LlmClient};
use keyface_core::model::{frame_errors, CoeffVector, MotionKeyframeSet, Script};
use keyface_core::pipeline::{
    confirm_script, generate_sequence, standardize, ConfirmDecision, ExecutionMode, FreeTextInput,
    GenerationRun,
};
use keyface_core::prompt::{export_finetune_records, parse_script, PromptMode};

#[derive(Parser)]
#[command(name = "keyface", version, about = "Text-to-facial-animation toolkit")]
struct Cli {
    /// Config file (defaults to ./keyface.toml when present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Semantic,
    NonSemantic,
}

impl From<ModeArg> for PromptMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Semantic => PromptMode::Semantic,
            ModeArg::NonSemantic => PromptMode::NonSemantic,
        }
    }
}

/// Endpoint connection flags shared by network subcommands.
#[derive(Args, Default)]
struct EndpointArgs {
    /// Chat-completions base URL (overrides KEYFACE_API_BASE).
    #[arg(long)]
    api_base: Option<String>,
    /// API key (overrides KEYFACE_API_KEY).
    #[arg(long)]
    api_key: Option<String>,
    /// Model name (overrides KEYFACE_MODEL).
    #[arg(long)]
    model: Option<String>,
    /// Request timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Retry budget for transient failures.
    #[arg(long)]
    max_retries: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert free text into a structured script (with confirmation).
    Standardize {
        /// Free text on the command line; read from stdin when omitted.
        #[arg(long)]
        input: Option<String>,
        /// Read the free text from a file instead.
        #[arg(long, conflicts_with = "input")]
        input_file: Option<PathBuf>,
        /// Accept the draft without asking.
        #[arg(long)]
        yes: bool,
        /// Where to write the confirmed script JSON (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Generate coefficient keyframes for every keyframe of a script.
    Generate {
        /// Script file (JSON or labeled text).
        #[arg(long)]
        script: PathBuf,
        #[arg(long, value_enum, default_value = "semantic")]
        mode: ModeArg,
        /// Issue keyframe requests concurrently.
        #[arg(long)]
        concurrent: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Interpolate keyframes into a fixed-rate animation curve.
    Render {
        /// Keyframes: a generation run, a keyframe set, or dense rows.
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        fps: Option<f64>,
        /// Seconds between keyframes (uniform timing).
        #[arg(long, default_value_t = 1.0)]
        interval: f64,
        /// Explicit comma-separated keyframe times (overrides --interval).
        #[arg(long)]
        times: Option<String>,
        /// Odd moving-average window; 1 disables smoothing.
        #[arg(long, default_value_t = 1)]
        smooth: usize,
        #[arg(long, value_enum, default_value = "csv")]
        format: RenderFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute metrics between generated and reference motion sets.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Comma-separated metric list: fid,wdist,div,err (default all).
        #[arg(long)]
        metrics: Option<String>,
        /// Trained retrieval model for R-Precision and multimodal distance.
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Texts paired with the predicted motions, one per line.
        #[arg(long, requires = "encoder")]
        texts: Option<PathBuf>,
        /// Random pairs for the diversity estimate.
        #[arg(long, default_value_t = 300)]
        pairs: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Where to write the JSON report (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the dual text–motion retrieval encoder on a dataset.
    TrainEncoder {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        epochs: usize,
        #[arg(long, default_value_t = 10)]
        patience: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
        /// Optional training-history JSON.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Export prompt/completion pairs for LLM fine-tuning.
    ExportFinetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "semantic")]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print corpus statistics.
    Stats {
        #[arg(long)]
        data: PathBuf,
        /// Also compute the dominant-emotion distribution.
        #[arg(long)]
        emotions: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fill in coefficient-derived text descriptions via the endpoint.
    Annotate {
        #[arg(long)]
        data: PathBuf,
        /// Output JSONL; when omitted the input file is rewritten in place.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Split a dataset into train and test JSONL files.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RenderFormat {
    Csv,
    Json,
}

/// keyface.toml layout.
#[derive(Deserialize, Default)]
struct FileConfig {
    #[serde(default)]
    endpoint: EndpointSection,
    #[serde(default)]
    defaults: DefaultsSection,
}

#[derive(Deserialize, Default)]
struct EndpointSection {
    base_url: Option<String>,
    api_key: Option<String>,
    model: Option<String>,
    timeout: Option<f64>,
    max_retries: Option<u32>,
    temperature: Option<f64>,
}

#[derive(Deserialize, Default)]
struct DefaultsSection {
    fps: Option<f64>,
}

fn load_file_config(explicit: Option<&Path>) -> Result<FileConfig, String> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let default = PathBuf::from("keyface.toml");
            if !default.exists() {
                return Ok(FileConfig::default());
            }
            default
        }
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
}

/// Precedence: flags > environment > config file > built-in defaults.
fn resolve_endpoint(file: &FileConfig, args: &EndpointArgs) -> EndpointConfig {
    let mut cfg = EndpointConfig::default();
    let section = &file.endpoint;
    if let Some(v) = &section.base_url {
        cfg.base_url = v.clone();
    }
    if let Some(v) = &section.api_key {
        cfg.api_key = v.clone();
    }
    if let Some(v) = &section.model {
        cfg.model_name = v.clone();
    }
    if let Some(v) = section.timeout {
        cfg.timeout = v;
    }
    if let Some(v) = section.max_retries {
        cfg.max_retries = v;
    }
    if let Some(v) = section.temperature {
        cfg.temperature = v;
    }
    cfg = cfg.with_env_overrides();
    if let Some(v) = &args.api_base {
        cfg.base_url = v.clone();
    }
    if let Some(v) = &args.api_key {
        cfg.api_key = v.clone();
    }
    if let Some(v) = &args.model {
        cfg.model_name = v.clone();
    }
    if let Some(v) = args.timeout {
        cfg.timeout = v;
    }
    if let Some(v) = args.max_retries {
        cfg.max_retries = v;
    }
    cfg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("keyface: {message}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    let file_config = load_file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Standardize {
            input,
            input_file,
            yes,
            out,
            endpoint,
        } => cmd_standardize(&file_config, input, input_file, yes, out, &endpoint),
        Command::Generate {
            script,
            mode,
            concurrent,
            out,
            endpoint,
        } => cmd_generate(&file_config, &script, mode.into(), concurrent, &out, &endpoint),
        Command::Render {
            frames,
            fps,
            interval,
            times,
            smooth,
            format,
            out,
        } => cmd_render(&file_config, &frames, fps, interval, times, smooth, format, &out),
        Command::Eval {
            pred,
            gt,
            metrics,
            encoder,
            texts,
            pairs,
            seed,
            out,
        } => cmd_eval(&pred, &gt, metrics, encoder, texts, pairs, seed, out),
        Command::TrainEncoder {
            data,
            ratio,
            seed,
            epochs,
            patience,
            batch,
            lr,
            out,
            history,
        } => cmd_train_encoder(&data, ratio, seed, epochs, patience, batch, lr, &out, history),
        Command::ExportFinetune { data, mode, out } => {
            cmd_export_finetune(&data, mode.into(), &out)
        }
        Command::Stats { data, emotions, out } => cmd_stats(&data, emotions, out),
        Command::Annotate { data, out, endpoint } => {
            cmd_annotate(&file_config, &data, out, &endpoint)
        }
        Command::Split {
            data,
            ratio,
            seed,
            train_out,
            test_out,
        } => cmd_split(&data, ratio, seed, &train_out, &test_out),
    }
}

fn write_output(out: Option<&Path>, content: &str) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn cmd_standardize(
    file_config: &FileConfig,
    input: Option<String>,
    input_file: Option<PathBuf>,
    yes: bool,
    out: Option<PathBuf>,
    endpoint: &EndpointArgs,
) -> Result<(), String> {
    let text = match (input, input_file) {
        (Some(t), _) => t,
        (None, Some(path)) => std::fs::read_to_string(&path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?,
        (None, None) => {
            let mut buffer = String::new();
            std::io::stdin()
                .read_to_string(&mut buffer)
                .map_err(|e| format!("cannot read stdin: {e}"))?;
            buffer
        }
    };
    let cfg = resolve_endpoint(file_config, endpoint);
    let input = FreeTextInput::new(text).map_err(|e| e.to_string())?;
    let client = LlmClient::new();
    let draft = standardize(&client, &input, &cfg).map_err(|e| e.to_string())?;

    let draft_json = serde_json::to_string_pretty(&draft).expect("script serializes");
    let confirmed = if yes {
        confirm_script(draft, ConfirmDecision::Accept).map_err(|e| e.to_string())?
    } else {
        println!("Draft script:\n{draft_json}");
        println!("Confirm? [accept/edit/reject]");
        std::io::stdout().flush().ok();
        let stdin = std::io::stdin();
        let mut decision_line = String::new();
        stdin
            .lock()
            .read_line(&mut decision_line)
            .map_err(|e| format!("cannot read decision: {e}"))?;
        let decision = match decision_line.trim().to_lowercase().as_str() {
            "accept" | "a" | "" => ConfirmDecision::Accept,
            "reject" | "r" => ConfirmDecision::Reject,
            "edit" | "e" => {
                let mut replacement = String::new();
                stdin
                    .lock()
                    .read_to_string(&mut replacement)
                    .map_err(|e| format!("cannot read edit: {e}"))?;
                ConfirmDecision::Edit(replacement)
            }
            other => return Err(format!("unknown decision '{other}'")),
        };
        confirm_script(draft, decision).map_err(|e| e.to_string())?
    };
    write_output(
        out.as_deref(),
        &serde_json::to_string_pretty(&confirmed).expect("script serializes"),
    )
}

fn cmd_generate(
    file_config: &FileConfig,
    script_path: &Path,
    mode: PromptMode,
    concurrent: bool,
    out: &Path,
    endpoint: &EndpointArgs,
) -> Result<(), String> {
    let text = std::fs::read_to_string(script_path)
        .map_err(|e| format!("cannot read {}: {e}", script_path.display()))?;
    let script = parse_script(&text).map_err(|e| format!("invalid script: {e}"))?;
    let cfg = resolve_endpoint(file_config, endpoint);
    let execution = if concurrent {
        ExecutionMode::Concurrent
    } else {
        ExecutionMode::Sequential
    };
    let client = LlmClient::new();
    let run = generate_sequence(&client, &script, mode, execution, &cfg)
        .map_err(|e| e.to_string())?;
    write_output(
        Some(out),
        &serde_json::to_string_pretty(&run).expect("run serializes"),
    )
}

/// Accepts a generation run, a keyframe set, a frame-sequence JSON, a bare
/// array of dense rows, or a Live Link CSV.
fn load_motion_frames(path: &Path) -> Result<Vec<CoeffVector>, String> {
    let bytes =
        std::fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        let seq = import_livelink_csv(&bytes).map_err(|e| format!("invalid CSV: {e}"))?;
        return Ok(seq.frames().to_vec());
    }
    let text = String::from_utf8(bytes).map_err(|e| format!("not UTF-8: {e}"))?;
    if let Ok(run) = serde_json::from_str::<GenerationRun>(&text) {
        return Ok(run.outputs.frames().to_vec());
    }
    if let Ok(set) = serde_json::from_str::<MotionKeyframeSet>(&text) {
        return Ok(set.frames().to_vec());
    }
    if let Ok(seq) = serde_json::from_str::<FrameSequence>(&text) {
        return Ok(seq.frames().to_vec());
    }
    if let Ok(rows) = serde_json::from_str::<Vec<CoeffVector>>(&text) {
        if !rows.is_empty() {
            return Ok(rows);
        }
    }
    Err(format!(
        "{}: not a recognizable motion container",
        path.display()
    ))
}

#[allow(clippy::too_many_arguments)]
fn cmd_render(
    file_config: &FileConfig,
    frames_path: &Path,
    fps: Option<f64>,
    interval: f64,
    times: Option<String>,
    smooth: usize,
    format: RenderFormat,
    out: &Path,
) -> Result<(), String> {
    let frames = load_motion_frames(frames_path)?;
    let set = MotionKeyframeSet::new(frames, None).map_err(|e| e.to_string())?;
    let policy = match times {
        Some(list) => {
            let parsed: Result<Vec<f64>, _> =
                list.split(',').map(|t| t.trim().parse::<f64>()).collect();
            TimingPolicy::Explicit(parsed.map_err(|e| format!("invalid --times: {e}"))?)
        }
        None => TimingPolicy::Uniform(interval),
    };
    let timed = assign_timing(&set, &policy).map_err(|e| e.to_string())?;
    let fps = fps
        .or(file_config.defaults.fps)
        .unwrap_or(DEFAULT_FPS);
    let seq = interpolate_linear(&timed, fps).map_err(|e| e.to_string())?;
    let seq = smooth_moving_average(&seq, smooth).map_err(|e| e.to_string())?;
    match format {
        RenderFormat::Csv => std::fs::write(out, export_livelink_csv(&seq))
            .map_err(|e| format!("cannot write {}: {e}", out.display())),
        RenderFormat::Json => write_output(
            Some(out),
            &serde_json::to_string(&seq).expect("sequence serializes"),
        ),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    pred_path: &Path,
    gt_path: &Path,
    metrics: Option<String>,
    encoder: Option<PathBuf>,
    texts: Option<PathBuf>,
    pairs: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<(), String> {
    let pred = load_motion_frames(pred_path)?;
    let gt = load_motion_frames(gt_path)?;
    let selected: Vec<String> = metrics
        .unwrap_or_else(|| "fid,wdist,div,err".to_string())
        .split(',')
        .map(|m| m.trim().to_lowercase())
        .filter(|m| !m.is_empty())
        .collect();
    for m in &selected {
        if !matches!(m.as_str(), "fid" | "wdist" | "div" | "err") {
            return Err(format!("unknown metric '{m}' (expected fid, wdist, div, err)"));
        }
    }
    let want = |name: &str| selected.iter().any(|m| m == name);

    let mut report = MetricReport {
        fid: None,
        wdist: None,
        diversity: None,
        r_precision: None,
        mmd: None,
        mse: None,
        mae: None,
        rmse: None,
    };
    if want("fid") {
        let a = fit_gaussian(&pred).map_err(|e| format!("fid: {e}"))?;
        let b = fit_gaussian(&gt).map_err(|e| format!("fid: {e}"))?;
        report.fid = Some(frechet_distance(&a, &b).map_err(|e| format!("fid: {e}"))?);
    }
    if want("wdist") {
        report.wdist = Some(wasserstein_dist(&pred, &gt).map_err(|e| format!("wdist: {e}"))?);
    }
    if want("div") {
        report.diversity = Some(DiversityReport {
            gen: diversity(&pred, pairs, seed).map_err(|e| format!("diversity: {e}"))?,
            gt: diversity(&gt, pairs, seed).map_err(|e| format!("diversity: {e}"))?,
        });
    }
    if want("err") {
        if pred.len() != gt.len() {
            return Err(format!(
                "frame count mismatch: {} predicted vs {} reference",
                pred.len(),
                gt.len()
            ));
        }
        let pred_set =
            MotionKeyframeSet::new(pred.clone(), None).map_err(|e| format!("err: {e}"))?;
        let gt_set = MotionKeyframeSet::new(gt.clone(), None).map_err(|e| format!("err: {e}"))?;
        let errors = frame_errors(&pred_set, &gt_set).map_err(|e| format!("err: {e}"))?;
        report.mse = Some(errors.mse);
        report.mae = Some(errors.mae);
        report.rmse = Some(errors.rmse);
    }
    if let Some(model_path) = encoder {
        let model_text = std::fs::read_to_string(&model_path)
            .map_err(|e| format!("cannot read {}: {e}", model_path.display()))?;
        let model: RetrievalModel =
            serde_json::from_str(&model_text).map_err(|e| format!("invalid encoder: {e}"))?;
        let texts_path = texts.ok_or("--encoder requires --texts")?;
        let text_lines: Vec<String> = std::fs::read_to_string(&texts_path)
            .map_err(|e| format!("cannot read {}: {e}", texts_path.display()))?
            .lines()
            .map(|l| l.to_string())
            .collect();
        if text_lines.len() != pred.len() {
            return Err(format!(
                "{} texts for {} motions",
                text_lines.len(),
                pred.len()
            ));
        }
        let text_batch = EmbeddingBatch::new(
            text_lines.iter().map(|t| encode_text(t, &model)).collect(),
        )
        .map_err(|e| format!("retrieval: {e}"))?;
        let motion_batch = EmbeddingBatch::new(
            pred.iter().map(|m| encode_motion(m, &model)).collect(),
        )
        .map_err(|e| format!("retrieval: {e}"))?;
        let s = similarity_matrix(&text_batch, &motion_batch)
            .map_err(|e| format!("retrieval: {e}"))?;
        let k_max = 3.min(pred.len());
        let rp = |k: usize| -> Result<f64, String> {
            r_precision(&s, k.min(k_max)).map_err(|e| format!("retrieval: {e}"))
        };
        report.r_precision = Some(RPrecisionReport {
            top1: rp(1)?,
            top2: rp(2)?,
            top3: rp(3)?,
        });
        report.mmd =
            Some(mmd(&text_batch, &motion_batch).map_err(|e| format!("retrieval: {e}"))?);
    }
    write_output(
        out.as_deref(),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )
}

/// Text/motion pairs for encoder training: each dataset keyframe paired with
/// its best available description.
fn dataset_pairs(path: &Path) -> Result<Vec<(String, CoeffVector)>, String> {
    let records = load_dataset(path).map_err(|e| e.to_string())?;
    let mut pairs = Vec::new();
    for record in &records {
        for (kf, spec) in record.keyframes.iter().zip(record.script.keyframes()) {
            let text = if !kf.description_arkit.is_empty() {
                kf.description_arkit.clone()
            } else if !kf.description_original.is_empty() {
                kf.description_original.clone()
            } else {
                spec.description().to_string()
            };
            pairs.push((text, kf.coeffs.clone()));
        }
    }
    if pairs.is_empty() {
        return Err("dataset contains no keyframes".to_string());
    }
    Ok(pairs)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_encoder(
    data: &Path,
    ratio: f64,
    seed: u64,
    epochs: usize,
    patience: usize,
    batch: usize,
    lr: f64,
    out: &Path,
    history_out: Option<PathBuf>,
) -> Result<(), String> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(format!("--ratio {ratio} outside (0, 1)"));
    }
    let pairs = dataset_pairs(data)?;
    // Deterministic tail split of the pair list (records keep file order).
    let train_count = ((ratio * pairs.len() as f64).ceil() as usize)
        .min(pairs.len() - 1)
        .max(1);
    let (train, val) = pairs.split_at(train_count);
    let config = TrainConfig {
        learning_rate: lr,
        max_epochs: epochs,
        patience,
        batch_size: batch,
        seed,
        ..TrainConfig::default()
    };
    let (model, history) =
        train_encoder(train, val, &config).map_err(|e| format!("training: {e}"))?;
    std::fs::write(
        out,
        serde_json::to_string(&model).expect("model serializes"),
    )
    .map_err(|e| format!("cannot write {}: {e}", out.display()))?;
    if let Some(path) = history_out {
        std::fs::write(
            &path,
            serde_json::to_string_pretty(&history).expect("history serializes"),
        )
        .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    println!(
        "trained {} epochs; best val R-Precision@1 {:.4} at epoch {}",
        history.epochs.len(),
        history.best_val_r_precision_1,
        history.best_epoch
    );
    Ok(())
}

fn cmd_export_finetune(data: &Path, mode: PromptMode, out: &Path) -> Result<(), String> {
    let records = load_dataset(data).map_err(|e| e.to_string())?;
    let corpus: Vec<(Script, Vec<CoeffVector>)> = records
        .iter()
        .map(|r| {
            (
                r.script.clone(),
                r.keyframes.iter().map(|k| k.coeffs.clone()).collect(),
            )
        })
        .collect();
    let exported = export_finetune_records(&corpus, mode).map_err(|e| e.to_string())?;
    let mut body = String::new();
    for record in &exported {
        body.push_str(&record.to_jsonl_line());
        body.push('\n');
    }
    std::fs::write(out, body).map_err(|e| format!("cannot write {}: {e}", out.display()))?;
    println!("exported {} records", exported.len());
    Ok(())
}

fn cmd_stats(data: &Path, emotions: bool, out: Option<PathBuf>) -> Result<(), String> {
    let records = load_dataset(data).map_err(|e| e.to_string())?;
    let stats = dataset_stats(&records).map_err(|e| e.to_string())?;
    let mut value = serde_json::to_value(&stats).expect("stats serialize");
    if emotions {
        let dist = emotion_distribution(&records).map_err(|e| e.to_string())?;
        value["emotion_distribution"] = serde_json::to_value(dist).expect("serializes");
    }
    write_output(
        out.as_deref(),
        &serde_json::to_string_pretty(&value).expect("serializes"),
    )
}

fn cmd_annotate(
    file_config: &FileConfig,
    data: &Path,
    out: Option<PathBuf>,
    endpoint: &EndpointArgs,
) -> Result<(), String> {
    let mut records = load_dataset(data).map_err(|e| e.to_string())?;
    let cfg = resolve_endpoint(file_config, endpoint);
    let client = LlmClient::new();
    for record in &mut records {
        for kf in &mut record.keyframes {
            kf.description_arkit =
                annotate_from_coeffs(&client, &kf.coeffs, &cfg).map_err(|e| e.to_string())?;
        }
    }
    let target = out.unwrap_or_else(|| data.to_path_buf());
    save_dataset(&target, &records).map_err(|e| e.to_string())
}

fn cmd_split(
    data: &Path,
    ratio: f64,
    seed: u64,
    train_out: &Path,
    test_out: &Path,
) -> Result<(), String> {
    let records = load_dataset(data).map_err(|e| e.to_string())?;
    let spec = SplitSpec::new(ratio, seed).map_err(|e| e.to_string())?;
    let (train, test) = split_train_test(&records, spec).map_err(|e| e.to_string())?;
    save_dataset(train_out, &train).map_err(|e| e.to_string())?;
    save_dataset(test_out, &test).map_err(|e| e.to_string())?;
    println!("split {} records into {}/{}", records.len(), train.len(), test.len());
    Ok(())
}
