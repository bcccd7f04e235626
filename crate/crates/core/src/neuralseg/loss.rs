//! Combined dice + edge-weighted cross-entropy loss over class probability
//! maps, and the boundary map used for the edge weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralseg::tensor::Tensor4;

/// Numerical floor inside the soft-dice denominator.
pub const DICE_EPS: f64 = 1e-6;
/// Probability floor inside the log term.
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Cross-entropy averaged over pixels.
    Mean,
    /// Cross-entropy summed over pixels.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub dice_weight: f64,
    pub ce_weight: f64,
    /// Per-pixel CE weight is `1 + edge_weight_gain * edge`.
    pub edge_weight_gain: f64,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            dice_weight: 1.0,
            ce_weight: 1.0,
            edge_weight_gain: 2.0,
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dice_weight < 0.0 || self.ce_weight < 0.0 || self.edge_weight_gain < 0.0 {
            return Err(Error::Config(
                "loss weights and edge gain must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub dice_term: f64,
    pub ce_term: f64,
    pub soft_dice: f64,
}

/// Boundary indicator: 1 where the closed 4-neighborhood contains both
/// classes, 0 elsewhere.
pub fn edge_map(mask: &[u8], h: usize, w: usize) -> Vec<f64> {
    debug_assert_eq!(mask.len(), h * w);
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let center = mask[y * w + x];
            let mut mixed = false;
            if y > 0 && mask[(y - 1) * w + x] != center {
                mixed = true;
            }
            if !mixed && y + 1 < h && mask[(y + 1) * w + x] != center {
                mixed = true;
            }
            if !mixed && x > 0 && mask[y * w + x - 1] != center {
                mixed = true;
            }
            if !mixed && x + 1 < w && mask[y * w + x + 1] != center {
                mixed = true;
            }
            if mixed {
                out[y * w + x] = 1.0;
            }
        }
    }
    out
}

/// Loss value and gradient with respect to the probabilities.
///
/// Soft dice is computed on the foreground channel over the whole batch:
/// `2 Σ p·g / (Σ p + Σ g + eps)`. Cross-entropy is per pixel, weighted by
/// `1 + gain * edge`, reduced per the config.
pub fn loss_and_grad(
    probs: &Tensor4,
    target: &[u8],
    edge: &[f64],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Tensor4)> {
    cfg.validate()?;
    if probs.c != 2 {
        return Err(Error::Shape {
            expected: "2 probability channels".into(),
            actual: format!("{}", probs.c),
        });
    }
    let plane = probs.h * probs.w;
    let total_px = probs.n * plane;
    if target.len() != total_px || edge.len() != total_px {
        return Err(Error::Shape {
            expected: format!("{total_px} target/edge pixels"),
            actual: format!("{} / {}", target.len(), edge.len()),
        });
    }

    // Soft dice on the foreground channel.
    let mut sum_pg = 0.0;
    let mut sum_p = 0.0;
    let mut sum_g = 0.0;
    for n in 0..probs.n {
        let p = probs.plane(n, 1);
        let g = &target[n * plane..(n + 1) * plane];
        for i in 0..plane {
            let gi = g[i] as f64;
            sum_pg += p[i] * gi;
            sum_p += p[i];
            sum_g += gi;
        }
    }
    let denom = sum_p + sum_g + DICE_EPS;
    let soft_dice = 2.0 * sum_pg / denom;
    let dice_term = cfg.dice_weight * (1.0 - soft_dice);

    let norm = match cfg.reduction {
        Reduction::Mean => 1.0 / total_px as f64,
        Reduction::Sum => 1.0,
    };

    let mut grad = Tensor4::zeros(probs.n, 2, probs.h, probs.w);
    let mut ce_acc = 0.0;
    for n in 0..probs.n {
        for i in 0..plane {
            let idx = n * plane + i;
            let g = target[idx] as usize;
            let weight = 1.0 + cfg.edge_weight_gain * edge[idx];
            let p_true = probs.plane(n, g)[i].max(LOG_FLOOR);
            ce_acc += weight * -p_true.ln();
            // d(ce)/d(p_true) = -w / p_true; other channel unaffected.
            grad.plane_mut(n, g)[i] += cfg.ce_weight * norm * (-weight / p_true);
            // d(dice)/d(p1) = (2 g - 2 dice) / denom on the foreground channel.
            let ddice = (2.0 * (if g == 1 { 1.0 } else { 0.0 }) - soft_dice) / denom;
            grad.plane_mut(n, 1)[i] += cfg.dice_weight * -ddice;
        }
    }
    let ce_term = cfg.ce_weight * norm * ce_acc;

    Ok((
        LossBreakdown {
            total: dice_term + ce_term,
            dice_term,
            ce_term,
            soft_dice,
        },
        grad,
    ))
}

/// Hard dice between a predicted batch (argmax labels) and targets.
pub fn hard_dice(pred: &[u8], target: &[u8]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&p, &t) in pred.iter().zip(target) {
        inter += (p & t) as usize;
        total += (p + t) as usize;
    }
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}
