//! Joint 2D projection objective: cross-entropy on masks plus L1 on depth,
//! summed (not averaged) over pixels and views, with analytic gradients.
//!
//! Depth L1 runs only over pixels valid in BOTH prediction and ground
//! truth; silhouette disagreement is penalized entirely by the mask term,
//! so no background depth constant is ever invented.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::render::{DepthImage, MaskImage};

/// Weighting and clamping knobs of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Depth-term weight in `total = mask + lambda * depth`.
    pub lambda: f64,
    /// Probabilities are clamped to `[epsilon, 1 - epsilon]` inside the
    /// cross-entropy so hard masks keep the loss finite.
    pub epsilon: f64,
    /// Novel viewpoints drawn per optimization step.
    pub k_views: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 1.0,
            epsilon: 1e-7,
            k_views: 5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(
                "lambda must be finite and non-negative",
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidInput("epsilon must lie in (0, 0.5)"));
        }
        if self.k_views == 0 {
            return Err(Error::InvalidInput(
                "at least one novel view per step is required",
            ));
        }
        Ok(())
    }
}

/// Summed binary cross-entropy between a predicted mask and a hard {0,1}
/// ground-truth mask, with the per-pixel gradient on the prediction.
/// Predictions outside the clamp interval contribute the clamped loss and
/// zero gradient.
pub fn mask_loss(pred: &MaskImage, gt: &MaskImage, epsilon: f64) -> Result<(f64, Vec<f64>)> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(Error::Contract("mask images must have identical shape"));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidInput("epsilon must lie in (0, 0.5)"));
    }
    if gt.probability.iter().any(|&g| g != 0.0 && g != 1.0) {
        return Err(Error::Contract("ground-truth mask must be hard 0/1"));
    }
    let mut total = 0.0;
    let mut grad = vec![0.0; pred.probability.len()];
    let lo = epsilon;
    let hi = 1.0 - epsilon;
    for (i, (&p, &g)) in pred.probability.iter().zip(&gt.probability).enumerate() {
        let clamped = p.clamp(lo, hi);
        total -= g * math::ln(clamped) + (1.0 - g) * math::ln(1.0 - clamped);
        if p >= lo && p <= hi {
            grad[i] = -(g / clamped) + (1.0 - g) / (1.0 - clamped);
        }
    }
    Ok((total, grad))
}

/// Summed L1 depth distance over jointly valid pixels, with the sign
/// subgradient (zero at equality) on the prediction. Pixels valid in only
/// one image contribute nothing.
pub fn depth_loss(pred: &DepthImage, gt: &DepthImage) -> Result<(f64, Vec<f64>)> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(Error::Contract("depth images must have identical shape"));
    }
    let mut total = 0.0;
    let mut grad = vec![0.0; pred.depth.len()];
    for i in 0..pred.depth.len() {
        if pred.valid[i] && gt.valid[i] {
            let diff = pred.depth[i] - gt.depth[i];
            total += math::abs(diff);
            grad[i] = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
        }
    }
    Ok((total, grad))
}

/// One view's prediction/ground-truth quadruple.
#[derive(Debug, Clone, Copy)]
pub struct ViewLossInput<'a> {
    pub pred_depth: &'a DepthImage,
    pub pred_mask: &'a MaskImage,
    pub gt_depth: &'a DepthImage,
    pub gt_mask: &'a MaskImage,
}

/// Gradients of the total loss on one view's predicted images. The lambda
/// weighting is already folded into `depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGrads {
    pub depth: Vec<f64>,
    pub mask: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub mask_sum: f64,
    pub depth_sum: f64,
    /// `mask_sum + lambda * depth_sum`.
    pub total: f64,
    pub per_view: Vec<ViewGrads>,
}

/// Sums the objective over all given views: `Σ mask_k + lambda * Σ depth_k`,
/// returning per-view gradients ready for the backward pass.
pub fn total_loss(views: &[ViewLossInput<'_>], w: &LossWeights) -> Result<TotalLoss> {
    w.validate()?;
    if views.is_empty() {
        return Err(Error::Contract("total_loss requires at least one view"));
    }
    let mut mask_sum = 0.0;
    let mut depth_sum = 0.0;
    let mut per_view = Vec::with_capacity(views.len());
    for view in views {
        let (m, mask_grad) = mask_loss(view.pred_mask, view.gt_mask, w.epsilon)?;
        let (d, mut depth_grad) = depth_loss(view.pred_depth, view.gt_depth)?;
        mask_sum += m;
        depth_sum += d;
        for g in &mut depth_grad {
            *g *= w.lambda;
        }
        per_view.push(ViewGrads {
            depth: depth_grad,
            mask: mask_grad,
        });
    }
    Ok(TotalLoss {
        mask_sum,
        depth_sum,
        total: mask_sum + w.lambda * depth_sum,
        per_view,
    })
}
