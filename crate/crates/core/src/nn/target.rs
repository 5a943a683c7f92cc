use crate::eval::{angular_error, bin_to_degrees, DOA_BINS};

pub const DEFAULT_TARGET_SIGMA_DEG: f64 = 8.0;

/// Soft 360-bin label: each bin holds `exp(-d^2 / sigma^2)` for the circular
/// distance `d` to the nearest source.
pub fn encode_target(doas: &[f64], sigma_deg: f64) -> Vec<f64> {
    (0..DOA_BINS)
        .map(|i| {
            let theta = bin_to_degrees(i);
            doas.iter()
                .map(|&s| {
                    let d = angular_error(theta, s);
                    (-(d * d) / (sigma_deg * sigma_deg)).exp()
                })
                .fold(0.0, f64::max)
        })
        .collect()
}
