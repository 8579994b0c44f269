/// Raw, window-normalized and change-rate channels per timestep.
pub const FEATURES: usize = 3;

/// Expands a raw window into `[raw, normalized, change_rate]` rows.
///
/// Normalization is min-max over this window only; a constant window maps
/// to all zeros. The change rate is `(x_i - x_{i-1}) / x_{i-1}`, with 0 for
/// the first element and wherever the previous reading is 0.
pub fn engineer_features(window: &[f64]) -> Vec<[f64; FEATURES]> {
    let min = window.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    window
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let normalized = if span > 0.0 { (x - min) / span } else { 0.0 };
            let change = match i {
                0 => 0.0,
                _ if window[i - 1] == 0.0 => 0.0,
                _ => (x - window[i - 1]) / window[i - 1],
            };
            [x, normalized, change]
        })
        .collect()
}
