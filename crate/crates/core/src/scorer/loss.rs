//! The hyperspherical objective: pull class-0 scores toward zero, push
//! class-1 scores away.

use crate::error::{Error, Result};

/// Floor for the logarithm argument, avoiding `-inf` when a class-1 score
/// approaches zero.
pub const LOG_FLOOR: f64 = 1e-12;

/// Per-sample loss from the squared score:
/// `(1-y)·s² − y·log(1 − exp(−s²))`.
pub(crate) fn sample_loss(score_sq: f64, label: u8) -> f64 {
    if label == 0 {
        score_sq
    } else {
        let w = 1.0 - (-score_sq).exp();
        -(w.max(LOG_FLOOR)).ln()
    }
}

/// Derivative of the per-sample loss with respect to the squared score.
pub(crate) fn sample_loss_d_score_sq(score_sq: f64, label: u8) -> f64 {
    if label == 0 {
        1.0
    } else {
        let e = (-score_sq).exp();
        let w = 1.0 - e;
        if w < LOG_FLOOR {
            // clamped region of the floored logarithm
            0.0
        } else {
            -e / w
        }
    }
}

/// Mean hyperspherical loss over a batch: scores are the output vector norms
/// `‖z_i‖`, labels are `0` (target class) or `1` (stabilization class).
pub fn hyperspherical_loss(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Model("loss of an empty batch is undefined".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Model(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| sample_loss(s * s, y))
        .sum();
    Ok(total / scores.len() as f64)
}
