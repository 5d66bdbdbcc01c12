//! Reject-option losses.
//!
//! The sigmoid here is the *decreasing* one, `sigma(a) = 1 / (1 + exp(gamma * a))`,
//! so the double sigmoid loss falls as the margin `y * f(x)` grows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent arguments are clamped to this magnitude before `exp`.
pub const EXP_CLAMP: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Cost of rejection, in `(0, 0.5]`.
    pub d: f64,
    /// Sigmoid sharpness, `> 0`.
    pub gamma: f64,
    /// Weight of the double sigmoid term in the combined loss, in `[0, 1]`.
    pub alpha: f64,
}

impl LossConfig {
    pub fn new(d: f64, gamma: f64, alpha: f64) -> Result<Self> {
        let cfg = Self { d, gamma, alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.d <= 0.5) {
            return Err(Error::config(format!(
                "d must lie in (0, 0.5], got {}",
                self.d
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

pub fn sigma(a: f64, gamma: f64) -> f64 {
    let t = (gamma * a).clamp(-EXP_CLAMP, EXP_CLAMP);
    1.0 / (1.0 + t.exp())
}

/// The 0-d-1 loss: 1 on error, `d` on rejection, 0 on a confident correct call.
pub fn zero_d_one_loss(margin: f64, rho: f64, d: f64) -> f64 {
    if margin < -rho {
        1.0
    } else if margin.abs() <= rho {
        d
    } else {
        0.0
    }
}

pub fn double_sigmoid_loss(margin: f64, rho: f64, cfg: &LossConfig) -> f64 {
    let d = cfg.d;
    2.0 * d * sigma(margin - rho, cfg.gamma) + 2.0 * (1.0 - d) * sigma(margin + rho, cfg.gamma)
}

/// `(dL/dmargin, dL/drho)` of [`double_sigmoid_loss`].
pub fn double_sigmoid_grads(margin: f64, rho: f64, cfg: &LossConfig) -> (f64, f64) {
    let d = cfg.d;
    let s1 = sigma(margin - rho, cfg.gamma);
    let s2 = sigma(margin + rho, cfg.gamma);
    let a = 2.0 * d * s1 * (1.0 - s1);
    let b = 2.0 * (1.0 - d) * s2 * (1.0 - s2);
    (-cfg.gamma * (a + b), cfg.gamma * (a - b))
}

/// Index of the auxiliary logit belonging to `label` (+1 -> 1, -1 -> 0).
fn class_index(label: i8) -> usize {
    usize::from(label > 0)
}

fn log_sum_exp(logits: [f64; 2]) -> f64 {
    let m = logits[0].max(logits[1]);
    m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln()
}

/// `ln(1 + e^t)` without overflow or cancellation.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Two-class softmax cross-entropy of the auxiliary head, evaluated as
/// `softplus(other - own)`.
pub fn aux_cross_entropy(logits: [f64; 2], label: i8) -> f64 {
    let own = class_index(label);
    softplus(logits[1 - own] - logits[own])
}

/// Gradient of [`aux_cross_entropy`] w.r.t. the logits: `softmax - onehot`.
pub fn aux_cross_entropy_grad(logits: [f64; 2], label: i8) -> [f64; 2] {
    let lse = log_sum_exp(logits);
    let mut g = [(logits[0] - lse).exp(), (logits[1] - lse).exp()];
    g[class_index(label)] -= 1.0;
    g
}

/// `alpha * L_ds + (1 - alpha) * L_ce`.
///
/// With `alpha == 1` the auxiliary logits are ignored and may be absent.
pub fn combined_loss(
    margin: f64,
    rho: f64,
    aux_logits: Option<[f64; 2]>,
    label: i8,
    cfg: &LossConfig,
) -> Result<f64> {
    let ds = double_sigmoid_loss(margin, rho, cfg);
    if cfg.alpha == 1.0 {
        return Ok(ds);
    }
    let logits = aux_logits.ok_or_else(|| {
        Error::config(format!(
            "alpha = {} mixes in cross-entropy but the network has no auxiliary head",
            cfg.alpha
        ))
    })?;
    Ok(cfg.alpha * ds + (1.0 - cfg.alpha) * aux_cross_entropy(logits, label))
}
