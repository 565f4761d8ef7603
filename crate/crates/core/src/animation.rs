//! Timing, interpolation, smoothing, and capture-format I/O: turns keyframe
//! sets into timed 60 Hz coefficient streams and reads/writes the pinned
//! Live-Link-style CSV dialect.

use serde::de::{self, Deserializer};
use serde::ser::{SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{registry, validate_coeffs, CoeffVector, MotionKeyframeSet, ValidatePolicy};

/// Default sampling rate, matching the capture stream.
pub const DEFAULT_FPS: f64 = 60.0;

#[derive(Debug, Error, PartialEq)]
pub enum AnimationError {
    #[error("keyframe times must be strictly increasing")]
    NonMonotoneTimes,
    #[error("expected {expected} times, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("smoothing window must be an odd integer in 1..=length, got {0}")]
    BadWindow(usize),
    #[error("csv header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("csv row {line}: {reason}")]
    RowParse { line: usize, reason: String },
    #[error("sequence must be non-empty")]
    Empty,
    #[error("fps must be positive")]
    BadFps,
}

/// One keyframe pinned to a timestamp in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedKeyframe {
    pub time: f64,
    pub coeffs: CoeffVector,
}

/// How keyframes get their timestamps.
#[derive(Debug, Clone, PartialEq)]
pub enum TimingPolicy {
    /// Keyframe i at (i-1)·interval seconds.
    Uniform(f64),
    /// Explicit strictly increasing times, one per keyframe.
    Explicit(Vec<f64>),
}

/// Assigns timestamps to a keyframe set.
pub fn assign_timing(
    ks: &MotionKeyframeSet,
    policy: &TimingPolicy,
) -> Result<Vec<TimedKeyframe>, AnimationError> {
    let times: Vec<f64> = match policy {
        TimingPolicy::Uniform(interval) => {
            if *interval <= 0.0 {
                return Err(AnimationError::NonMonotoneTimes);
            }
            (0..ks.len()).map(|i| i as f64 * interval).collect()
        }
        TimingPolicy::Explicit(times) => {
            if times.len() != ks.len() {
                return Err(AnimationError::LengthMismatch {
                    expected: ks.len(),
                    got: times.len(),
                });
            }
            if times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(AnimationError::NonMonotoneTimes);
            }
            times.clone()
        }
    };
    Ok(times
        .into_iter()
        .zip(ks.frames())
        .map(|(time, coeffs)| TimedKeyframe {
            time,
            coeffs: coeffs.clone(),
        })
        .collect())
}

/// A sampled coefficient stream at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    fps: f64,
    start_time: f64,
    frames: Vec<CoeffVector>,
}

impl FrameSequence {
    pub fn new(fps: f64, start_time: f64, frames: Vec<CoeffVector>) -> Result<Self, AnimationError> {
        if fps <= 0.0 {
            return Err(AnimationError::BadFps);
        }
        if frames.is_empty() {
            return Err(AnimationError::Empty);
        }
        Ok(FrameSequence {
            fps,
            start_time,
            frames,
        })
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
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
}

impl Serialize for FrameSequence {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = self.frames.iter().map(|f| f.values()).collect();
        let mut s = serializer.serialize_struct("FrameSequence", 3)?;
        s.serialize_field("fps", &self.fps)?;
        s.serialize_field("start_time", &self.start_time)?;
        s.serialize_field("frames", &rows)?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for FrameSequence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            fps: f64,
            #[serde(default)]
            start_time: f64,
            frames: Vec<Vec<f64>>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let frames = raw
            .frames
            .iter()
            .map(|row| validate_coeffs(row, ValidatePolicy::Strict))
            .collect::<Result<Vec<_>, _>>()
            .map_err(de::Error::custom)?;
        FrameSequence::new(raw.fps, raw.start_time, frames).map_err(de::Error::custom)
    }
}

/// Samples every channel independently on the grid start, start+1/fps, ...,
/// last keyframe time inclusive. Grid-aligned keyframe times reproduce their
/// vectors bit-exactly; a single keyframe yields a single frame.
pub fn interpolate_linear(
    tks: &[TimedKeyframe],
    fps: f64,
) -> Result<FrameSequence, AnimationError> {
    if tks.is_empty() {
        return Err(AnimationError::Empty);
    }
    if fps <= 0.0 {
        return Err(AnimationError::BadFps);
    }
    if tks.windows(2).any(|w| w[1].time <= w[0].time) {
        return Err(AnimationError::NonMonotoneTimes);
    }
    let start = tks[0].time;
    let last = tks[tks.len() - 1].time;
    let span = last - start;
    // Inclusive endpoint count; the epsilon absorbs grid times that fall a
    // few ulps past the last keyframe.
    let count = ((span * fps) + 1e-9).floor() as usize + 1;

    let mut frames = Vec::with_capacity(count);
    let mut seg = 0usize;
    for k in 0..count {
        let t = start + k as f64 / fps;
        while seg + 1 < tks.len() - 1 && tks[seg + 1].time <= t {
            seg += 1;
        }
        let (k0, k1) = if tks.len() == 1 {
            (&tks[0], &tks[0])
        } else {
            (&tks[seg], &tks[seg + 1])
        };
        if t <= k0.time {
            frames.push(k0.coeffs.clone());
        } else if t >= k1.time {
            frames.push(k1.coeffs.clone());
        } else {
            let alpha = (t - k0.time) / (k1.time - k0.time);
            let values: Vec<f64> = k0
                .coeffs
                .values()
                .iter()
                .zip(k1.coeffs.values())
                .map(|(v0, v1)| v0 + (v1 - v0) * alpha)
                .collect();
            frames.push(validate_coeffs(&values, ValidatePolicy::Clamp).expect("finite lerp"));
        }
    }
    FrameSequence::new(fps, start, frames)
}

/// Per-channel centered moving average; the window shrinks at the edges.
/// A window of 1 is the identity.
pub fn smooth_moving_average(
    seq: &FrameSequence,
    window: usize,
) -> Result<FrameSequence, AnimationError> {
    if window % 2 == 0 || window < 1 || window > seq.len() {
        return Err(AnimationError::BadWindow(window));
    }
    if window == 1 {
        return Ok(seq.clone());
    }
    let half = window / 2;
    let n = seq.len();
    let frames: Vec<CoeffVector> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let count = (hi - lo + 1) as f64;
            let mut acc = vec![0.0; seq.frames[0].values().len()];
            for frame in &seq.frames[lo..=hi] {
                for (a, v) in acc.iter_mut().zip(frame.values()) {
                    *a += v;
                }
            }
            for a in acc.iter_mut() {
                *a /= count;
            }
            validate_coeffs(&acc, ValidatePolicy::Clamp).expect("finite average")
        })
        .collect();
    FrameSequence::new(seq.fps, seq.start_time, frames)
}

fn format_timecode(t: f64, fps: f64) -> String {
    let total = t.max(0.0);
    let hours = (total / 3600.0).floor();
    let minutes = ((total - hours * 3600.0) / 60.0).floor();
    let seconds = (total - hours * 3600.0 - minutes * 60.0).floor();
    let frac = total - hours * 3600.0 - minutes * 60.0 - seconds;
    let frame_field = frac * fps;
    format!(
        "{:02}:{:02}:{:02}:{:06.3}",
        hours as u64, minutes as u64, seconds as u64, frame_field
    )
}

fn parse_timecode(field: &str, line: usize) -> Result<(u64, f64), AnimationError> {
    let parts: Vec<&str> = field.split(':').collect();
    if parts.len() != 4 {
        return Err(AnimationError::RowParse {
            line,
            reason: format!("bad timecode {field:?}"),
        });
    }
    let parse_u64 = |s: &str| {
        s.parse::<u64>().map_err(|_| AnimationError::RowParse {
            line,
            reason: format!("bad timecode {field:?}"),
        })
    };
    let hours = parse_u64(parts[0])?;
    let minutes = parse_u64(parts[1])?;
    let seconds = parse_u64(parts[2])?;
    let frames: f64 = parts[3].parse().map_err(|_| AnimationError::RowParse {
        line,
        reason: format!("bad timecode {field:?}"),
    })?;
    Ok((hours * 3600 + minutes * 60 + seconds, frames))
}

/// Writes the pinned Live-Link-style CSV dialect:
/// `Timecode,BlendShapeCount,<61 names>` header, one row per frame with an
/// `HH:MM:SS:FF.mmm` timecode (frame-unit last field), the literal count 61,
/// and values at 6 decimal places. LF line endings, UTF-8.
pub fn export_livelink_csv(seq: &FrameSequence) -> Vec<u8> {
    let reg = registry();
    let mut out = String::new();
    out.push_str("Timecode,BlendShapeCount,");
    out.push_str(&reg.names().join(","));
    out.push('\n');
    for (i, frame) in seq.frames.iter().enumerate() {
        let t = seq.start_time + i as f64 / seq.fps;
        out.push_str(&format_timecode(t, seq.fps));
        out.push_str(",61");
        for v in frame.values() {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    }
    out.into_bytes()
}

/// Reads the CSV dialect written by [`export_livelink_csv`]. The header must
/// match the registry order exactly; fps is inferred from the first
/// second-boundary rollover in the timecodes (default 60 when that never
/// happens).
pub fn import_livelink_csv(bytes: &[u8]) -> Result<FrameSequence, AnimationError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| AnimationError::HeaderMismatch("not valid UTF-8".to_string()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| AnimationError::HeaderMismatch("empty file".to_string()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let reg = registry();
    let expected = 2 + reg.len();
    if cols.len() != expected {
        return Err(AnimationError::HeaderMismatch(format!(
            "expected {expected} columns, got {}",
            cols.len()
        )));
    }
    if cols[0] != "Timecode" || cols[1] != "BlendShapeCount" {
        return Err(AnimationError::HeaderMismatch(
            "first columns must be Timecode,BlendShapeCount".to_string(),
        ));
    }
    for (i, name) in reg.names().iter().enumerate() {
        if cols[2 + i] != *name {
            return Err(AnimationError::HeaderMismatch(format!(
                "column {} is {:?}, expected {:?}",
                2 + i,
                cols[2 + i],
                name
            )));
        }
    }

    let mut rows: Vec<(u64, f64, CoeffVector)> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(AnimationError::RowParse {
                line: line_no,
                reason: format!("expected {expected} fields, got {}", fields.len()),
            });
        }
        let (secs, frame_field) = parse_timecode(fields[0], line_no)?;
        let values: Vec<f64> = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| AnimationError::RowParse {
                    line: line_no,
                    reason: format!("non-numeric field {f:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        let coeffs =
            validate_coeffs(&values, ValidatePolicy::Strict).map_err(|e| match e {
                crate::model::ModelError::WrongDimension { .. } => AnimationError::RowParse {
                    line: line_no,
                    reason: "wrong value count".to_string(),
                },
                other => AnimationError::RowParse {
                    line: line_no,
                    reason: other.to_string(),
                },
            })?;
        rows.push((secs, frame_field, coeffs));
    }
    if rows.is_empty() {
        return Err(AnimationError::Empty);
    }

    let fps = infer_fps(&rows).unwrap_or(DEFAULT_FPS);
    let start_time = rows[0].0 as f64 + rows[0].1 / fps;
    let frames = rows.into_iter().map(|(_, _, c)| c).collect();
    FrameSequence::new(fps, start_time, frames)
}

/// Frames are consecutive, so across a second boundary
/// (sec2 - sec1) * fps = ff1 + 1 - ff2.
fn infer_fps(rows: &[(u64, f64, CoeffVector)]) -> Option<f64> {
    for pair in rows.windows(2) {
        let (sec1, ff1, _) = &pair[0];
        let (sec2, ff2, _) = &pair[1];
        if sec2 > sec1 {
            let fps = (ff1 + 1.0 - ff2) / (sec2 - sec1) as f64;
            if fps > 0.0 {
                return Some(fps);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_coeffs, CoeffVector, MotionKeyframeSet, ValidatePolicy};

    fn constant_frame(x: f64) -> CoeffVector {
        validate_coeffs(&[x; 61], ValidatePolicy::Strict).unwrap()
    }

    fn two_keyframes() -> Vec<TimedKeyframe> {
        vec![
            TimedKeyframe {
                time: 0.0,
                coeffs: constant_frame(0.0),
            },
            TimedKeyframe {
                time: 1.0,
                coeffs: constant_frame(1.0),
            },
        ]
    }

    #[test]
    fn uniform_timing_spaces_keyframes() {
        let ks = MotionKeyframeSet::new(vec![constant_frame(0.0); 3], None).unwrap();
        let tks = assign_timing(&ks, &TimingPolicy::Uniform(1.0)).unwrap();
        let times: Vec<f64> = tks.iter().map(|k| k.time).collect();
        assert_eq!(times, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn explicit_timing_validates() {
        let ks = MotionKeyframeSet::new(vec![constant_frame(0.0); 3], None).unwrap();
        let tks =
            assign_timing(&ks, &TimingPolicy::Explicit(vec![0.0, 0.5, 2.0])).unwrap();
        assert_eq!(tks[2].time, 2.0);
        assert_eq!(
            assign_timing(&ks, &TimingPolicy::Explicit(vec![0.0, 0.5])),
            Err(AnimationError::LengthMismatch {
                expected: 3,
                got: 2
            })
        );
        assert_eq!(
            assign_timing(&ks, &TimingPolicy::Explicit(vec![0.0, 0.5, 0.5])),
            Err(AnimationError::NonMonotoneTimes)
        );
    }

    #[test]
    fn interpolation_midpoint() {
        let seq = interpolate_linear(&two_keyframes(), 2.0).unwrap();
        assert_eq!(seq.len(), 3);
        for v in seq.frames()[1].values() {
            assert_eq!(*v, 0.5);
        }
    }

    #[test]
    fn interpolation_inclusive_frame_count() {
        let seq = interpolate_linear(&two_keyframes(), 60.0).unwrap();
        assert_eq!(seq.len(), 61);
    }

    #[test]
    fn interpolation_single_keyframe_identity() {
        let tk = vec![TimedKeyframe {
            time: 0.25,
            coeffs: constant_frame(0.7),
        }];
        let seq = interpolate_linear(&tk, 60.0).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.frames()[0], constant_frame(0.7));
    }

    #[test]
    fn interpolation_grid_aligned_exactness() {
        let tks = vec![
            TimedKeyframe {
                time: 0.0,
                coeffs: constant_frame(0.1),
            },
            TimedKeyframe {
                time: 1.0,
                coeffs: constant_frame(-0.4),
            },
            TimedKeyframe {
                time: 2.0,
                coeffs: constant_frame(0.9),
            },
        ];
        let seq = interpolate_linear(&tks, 60.0).unwrap();
        assert_eq!(seq.len(), 121);
        assert_eq!(seq.frames()[0], tks[0].coeffs);
        assert_eq!(seq.frames()[60], tks[1].coeffs);
        assert_eq!(seq.frames()[120], tks[2].coeffs);
    }

    #[test]
    fn interpolation_bounded_and_monotone_per_segment() {
        let seq = interpolate_linear(&two_keyframes(), 60.0).unwrap();
        let mut prev = -1.0;
        for frame in seq.frames() {
            let v = frame.values()[0];
            assert!((0.0..=1.0).contains(&v));
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn smoothing_window_one_is_identity() {
        let seq = interpolate_linear(&two_keyframes(), 10.0).unwrap();
        assert_eq!(smooth_moving_average(&seq, 1).unwrap(), seq);
    }

    #[test]
    fn smoothing_preserves_constants() {
        let seq = FrameSequence::new(60.0, 0.0, vec![constant_frame(0.3); 9]).unwrap();
        let smoothed = smooth_moving_average(&seq, 5).unwrap();
        assert_eq!(smoothed, seq);
    }

    #[test]
    fn smoothing_spike_average_oracle() {
        let seq = FrameSequence::new(
            60.0,
            0.0,
            vec![constant_frame(0.0), constant_frame(1.0), constant_frame(0.0)],
        )
        .unwrap();
        let smoothed = smooth_moving_average(&seq, 3).unwrap();
        let mid = smoothed.frames()[1].values()[0];
        assert!((mid - 1.0 / 3.0).abs() < 1e-15);
        // Edges shrink to a 2-sample window.
        assert!((smoothed.frames()[0].values()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn smoothing_rejects_bad_windows() {
        let seq = FrameSequence::new(60.0, 0.0, vec![constant_frame(0.0); 4]).unwrap();
        assert_eq!(
            smooth_moving_average(&seq, 2),
            Err(AnimationError::BadWindow(2))
        );
        assert_eq!(
            smooth_moving_average(&seq, 5),
            Err(AnimationError::BadWindow(5))
        );
    }

    #[test]
    fn csv_export_neutral_row() {
        let seq = FrameSequence::new(60.0, 0.0, vec![CoeffVector::neutral()]).unwrap();
        let bytes = export_livelink_csv(&seq);
        let text = String::from_utf8(bytes).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("Timecode,BlendShapeCount,EyeBlinkLeft,"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("00:00:00:00.000,61,0.000000,"));
        assert_eq!(row.matches("0.000000").count(), 61);
    }

    #[test]
    fn csv_timecode_frame_units() {
        let seq = FrameSequence::new(
            60.0,
            0.0,
            vec![CoeffVector::neutral(), CoeffVector::neutral()],
        )
        .unwrap();
        let text = String::from_utf8(export_livelink_csv(&seq)).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert!(rows[0].starts_with("00:00:00:00.000,"));
        assert!(rows[1].starts_with("00:00:00:01.000,"));
    }

    #[test]
    fn csv_round_trip() {
        let tks = vec![
            TimedKeyframe {
                time: 0.0,
                coeffs: constant_frame(0.123456),
            },
            TimedKeyframe {
                time: 2.0,
                coeffs: constant_frame(-0.654321),
            },
        ];
        let seq = interpolate_linear(&tks, 60.0).unwrap();
        let imported = import_livelink_csv(&export_livelink_csv(&seq)).unwrap();
        assert_eq!(imported.len(), seq.len());
        assert!((imported.fps() - 60.0).abs() < 1e-9);
        for (a, b) in imported.frames().iter().zip(seq.frames()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn csv_rejects_header_mismatch() {
        let seq = FrameSequence::new(60.0, 0.0, vec![CoeffVector::neutral()]).unwrap();
        let text = String::from_utf8(export_livelink_csv(&seq)).unwrap();
        let truncated = text.replacen(",RightEyeRoll", "", 1);
        assert!(matches!(
            import_livelink_csv(truncated.as_bytes()),
            Err(AnimationError::HeaderMismatch(_))
        ));
        let renamed = text.replacen("JawOpen", "JawAjar", 1);
        assert!(matches!(
            import_livelink_csv(renamed.as_bytes()),
            Err(AnimationError::HeaderMismatch(_))
        ));
    }

    #[test]
    fn csv_rejects_non_numeric_field_with_line() {
        let seq = FrameSequence::new(
            60.0,
            0.0,
            vec![CoeffVector::neutral(), CoeffVector::neutral()],
        )
        .unwrap();
        let text = String::from_utf8(export_livelink_csv(&seq)).unwrap();
        let broken = text.replacen("00:00:00:01.000,61,0.000000", "00:00:00:01.000,61,oops", 1);
        match import_livelink_csv(broken.as_bytes()) {
            Err(AnimationError::RowParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected RowParse, got {other:?}"),
        }
    }

    #[test]
    fn single_row_defaults_to_60_fps() {
        let seq = FrameSequence::new(30.0, 0.0, vec![CoeffVector::neutral()]).unwrap();
        let imported = import_livelink_csv(&export_livelink_csv(&seq)).unwrap();
        assert_eq!(imported.fps(), DEFAULT_FPS);
    }

    #[test]
    fn frame_sequence_json_round_trip() {
        let seq = interpolate_linear(&two_keyframes(), 10.0).unwrap();
        let json = serde_json::to_string(&seq).unwrap();
        assert!(json.contains("\"fps\""));
        let back: FrameSequence = serde_json::from_str(&json).unwrap();
        assert_eq!(back, seq);
    }
}
