//! Fixtures shared by the benchmarks.

use bgwqsd_core::{presets, ModelSpec};

/// Named models with a truncation radius that keeps one exact build cheap.
pub fn models() -> Vec<(&'static str, ModelSpec, u64)> {
    vec![
        ("model_a", presets::model_a(), 12),
        ("model_b", presets::model_b(), 40),
        ("classical", presets::classical_two_type(), 10),
    ]
}

/// Bound on distinct children vectors for exact rows.
pub const CAP: usize = 1_000_000;
