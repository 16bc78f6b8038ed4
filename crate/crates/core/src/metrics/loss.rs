//! Reference training losses: cross entropy, soft Dice, and their 50/50 mix.

use crate::error::{Error, Result};

/// Smoothing and probability floor.
pub const EPSILON: f64 = 1e-7;

/// Mean over rows of `-Σ_c y log p`, with `p` clamped to `[EPSILON, 1]`.
pub fn cross_entropy_loss<P: AsRef<[f64]>, T: AsRef<[f64]>>(
    probs: &[P],
    targets: &[T],
) -> Result<f64> {
    if probs.len() != targets.len() || probs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "cross entropy needs matching non-empty batches, got {} and {}",
            probs.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (i, (p, y)) in probs.iter().zip(targets).enumerate() {
        let (p, y) = (p.as_ref(), y.as_ref());
        if p.len() != y.len() || p.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "row {i}: {} probabilities vs {} targets",
                p.len(),
                y.len()
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "row {i}: probabilities sum to {sum}"
            )));
        }
        total -= p
            .iter()
            .zip(y)
            .map(|(&p, &y)| y * p.clamp(EPSILON, 1.0).ln())
            .sum::<f64>();
    }
    Ok(total / probs.len() as f64)
}

/// `1 - 2 Σ p y / (Σ p + Σ y + EPSILON)`.
pub fn dice_loss(probs: &[f64], targets: &[f64]) -> Result<f64> {
    if probs.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "dice needs equal lengths, got {} and {}",
            probs.len(),
            targets.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    let overlap: f64 = probs.iter().zip(targets).map(|(p, y)| p * y).sum();
    let p_sum: f64 = probs.iter().sum();
    let y_sum: f64 = targets.iter().sum();
    Ok(1.0 - 2.0 * overlap / (p_sum + y_sum + EPSILON))
}

pub fn combined_loss(ce: f64, dice: f64) -> f64 {
    0.5 * ce + 0.5 * dice
}
