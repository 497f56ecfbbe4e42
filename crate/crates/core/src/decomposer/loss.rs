//! Binary focal loss on a raw logit, with `alpha` weighting the positive
//! (cut) class.

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("logit is not finite: {0}")]
    NonFinite(f64),
    #[error("alpha must lie in (0, 1) and gamma be >= 0 (got alpha={alpha}, gamma={gamma})")]
    BadParameters { alpha: f64, gamma: f64 },
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Returns `(loss, d loss / d logit)`.
///
/// With `p = sigmoid(logit)`:
/// `label = 1`: `-alpha * (1 - p)^gamma * ln p`,
/// `label = 0`: `-(1 - alpha) * p^gamma * ln(1 - p)`.
pub fn focal_loss(logit: f64, label: bool, alpha: f64, gamma: f64) -> Result<(f64, f64), LossError> {
    if !logit.is_finite() {
        return Err(LossError::NonFinite(logit));
    }
    if !(alpha > 0.0 && alpha < 1.0 && gamma >= 0.0) {
        return Err(LossError::BadParameters { alpha, gamma });
    }
    let p = super::traverse::sigmoid(logit);
    let q = super::traverse::sigmoid(-logit);
    let log_p = -softplus(-logit);
    let log_q = -softplus(logit);
    Ok(if label {
        let w = q.powf(gamma);
        (-alpha * w * log_p, alpha * w * (gamma * p * log_p - q))
    } else {
        let w = p.powf(gamma);
        (-(1.0 - alpha) * w * log_q, (1.0 - alpha) * w * (p - gamma * q * log_q))
    })
}
