//! Keypoint lists as JSON lines: `{"x":..,"y":..,"scale":..,"orientation":..,"response":..}`.

use barkid_core::detector::Keypoint;
use serde_json::json;

/// Rounds to 6 significant digits.
pub fn sig6(v: f32) -> f64 {
    if !v.is_finite() {
        return 0.0;
    }
    format!("{:.5e}", v).parse().unwrap_or(0.0)
}

/// Export form, 6 significant digits per field.
pub fn to_jsonl(keypoints: &[Keypoint]) -> String {
    let mut out = String::new();
    for k in keypoints {
        let line = json!({
            "x": sig6(k.x),
            "y": sig6(k.y),
            "scale": sig6(k.scale),
            "orientation": sig6(k.orientation),
            "response": sig6(k.response),
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

/// Exact form used inside database files: shortest round-trip f32 text.
pub fn to_jsonl_exact(keypoints: &[Keypoint]) -> String {
    let mut out = String::new();
    for k in keypoints {
        out.push_str(&serde_json::to_string(k).expect("keypoint serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<Keypoint>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("keypoint line {}: {e}", i + 1)))
        .collect()
}
