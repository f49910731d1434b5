//! Classical normalizers: Reinhard Lab statistics transfer and Macenko
//! stain-vector estimation.

mod macenko;
mod reinhard;

pub use macenko::{macenko_estimate, macenko_normalize, macenko_target, MacenkoParams, MIN_TISSUE_PIXELS};
pub use reinhard::{lab_stats, reinhard_lab, reinhard_normalize, LabStats};

/// Nearest-rank percentile. Sorts `values` in place; `pct` in `[0, 100]`.
pub fn percentile_nearest_rank(values: &mut [f64], pct: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    Some(values[rank.clamp(1, n) - 1])
}
