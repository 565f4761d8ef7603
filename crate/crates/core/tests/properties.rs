//! Property-based invariants: representation round-trips, parser totality,
//! and interpolation behavior under random inputs.

use proptest::prelude::*;

use keyface_core::animation::{
    export_livelink_csv, import_livelink_csv, interpolate_linear, FrameSequence, TimedKeyframe,
};
use keyface_core::gateway::parse_generation;
use keyface_core::model::{
    from_semantic_map, to_semantic_map, validate_coeffs, CoeffVector, ValidatePolicy,
};
use keyface_core::prompt::{parse_script, PromptMode};

fn coeff_strategy() -> impl Strategy<Value = CoeffVector> {
    proptest::collection::vec(-1.0f64..=1.0, 61)
        .prop_map(|v| validate_coeffs(&v, ValidatePolicy::Strict).unwrap())
}

proptest! {
    #[test]
    fn semantic_map_round_trip_is_identity(v in coeff_strategy()) {
        // Full map (zeros kept) → vector → map is the identity.
        let map = to_semantic_map(&v, false);
        let back = from_semantic_map(&map, ValidatePolicy::Strict).unwrap();
        prop_assert_eq!(back.values(), v.values());
        // Sparse map (zeros omitted) also reconstructs exactly: missing
        // channels default to zero.
        let sparse = to_semantic_map(&v, true);
        let back = from_semantic_map(&sparse, ValidatePolicy::Strict).unwrap();
        prop_assert_eq!(back.values(), v.values());
    }

    #[test]
    fn dense_json_round_trip_is_bit_exact(v in coeff_strategy()) {
        let json = serde_json::to_string(&v).unwrap();
        let back: CoeffVector = serde_json::from_str(&json).unwrap();
        for (a, b) in v.values().iter().zip(back.values()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn clamp_validation_always_lands_in_range(raw in proptest::collection::vec(-10.0f64..10.0, 61)) {
        let v = validate_coeffs(&raw, ValidatePolicy::Clamp).unwrap();
        prop_assert!(v.values().iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn parse_generation_never_panics_on_text(raw in ".*") {
        for mode in [PromptMode::Semantic, PromptMode::NonSemantic] {
            if let Ok((v, _)) = parse_generation(&raw, mode) {
                prop_assert!(v.values().iter().all(|x| (-1.0..=1.0).contains(x)));
                prop_assert_eq!(v.values().len(), 61);
            }
        }
    }

    #[test]
    fn parse_script_never_panics(raw in ".*") {
        let _ = parse_script(&raw);
    }

    #[test]
    fn parsed_scripts_are_contiguous(descriptions in proptest::collection::vec("[a-zA-Z ]{1,30}", 1..6)) {
        let mut text = String::from("Background: property test\n");
        for (i, d) in descriptions.iter().enumerate() {
            text.push_str(&format!("Keyframe {}: {}\n", i + 1, d.trim()));
        }
        if descriptions.iter().all(|d| !d.trim().is_empty()) {
            let script = parse_script(&text).unwrap();
            for (pos, kf) in script.keyframes().iter().enumerate() {
                prop_assert_eq!(kf.index(), pos + 1);
            }
        }
    }

    #[test]
    fn interpolation_stays_within_keyframe_envelope(
        a in coeff_strategy(),
        b in coeff_strategy(),
        fps in 10.0f64..120.0,
        span in 0.1f64..3.0,
    ) {
        let tks = vec![
            TimedKeyframe { time: 0.0, coeffs: a.clone() },
            TimedKeyframe { time: span, coeffs: b.clone() },
        ];
        let seq = interpolate_linear(&tks, fps).unwrap();
        for frame in seq.frames() {
            for (c, x) in frame.values().iter().enumerate() {
                let lo = a.values()[c].min(b.values()[c]);
                let hi = a.values()[c].max(b.values()[c]);
                prop_assert!(*x >= lo - 1e-12 && *x <= hi + 1e-12);
            }
        }
        // Endpoints are reproduced bit-exactly.
        prop_assert_eq!(seq.frames()[0].values(), a.values());
    }

    #[test]
    fn livelink_csv_round_trip_within_export_precision(frames in proptest::collection::vec(coeff_strategy(), 1..8)) {
        let seq = FrameSequence::new(60.0, 0.0, frames).unwrap();
        let csv = export_livelink_csv(&seq);
        let back = import_livelink_csv(&csv).unwrap();
        prop_assert_eq!(back.len(), seq.len());
        for (fa, fb) in seq.frames().iter().zip(back.frames()) {
            for (a, b) in fa.values().iter().zip(fb.values()) {
                // Export writes 6 decimal places.
                prop_assert!((a - b).abs() <= 5e-7 + 1e-12);
            }
        }
    }
}
