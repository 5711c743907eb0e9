//! Order statistics and exponential moving averages.

use super::array::NumError;

/// Linear-interpolation percentile over sorted values at fractional index
/// p/100 * (n-1). `p` is clamped to [0, 100].
pub fn percentile(values: &[f64], p: f64) -> Result<f64, NumError> {
    if values.is_empty() {
        return Err(NumError::EmptyInput("percentile"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in percentile"));
    let p = p.clamp(0.0, 100.0);
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// decay * prev + (1 - decay) * value
pub fn ema_update(prev: f64, value: f64, decay: f64) -> f64 {
    decay * prev + (1.0 - decay) * value
}
