//! Segmentation training loss: weighted binary cross entropy + focal + dice,
//! each mean-reduced, computed through the differentiation graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub w_bce: f64,
    pub w_focal: f64,
    pub w_dice: f64,
    pub focal_gamma: f64,
    pub dice_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_bce: 1.0,
            w_focal: 1.0,
            w_dice: 1.0,
            focal_gamma: 2.0,
            dice_eps: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_bce, self.w_focal, self.w_dice];
        if ws.iter().any(|&w| w < 0.0) || ws.iter().all(|&w| w == 0.0) {
            return Err(Error::Config(
                "loss weights must be non-negative and not all zero".into(),
            ));
        }
        Ok(())
    }
}

/// Combined loss of mask logits `[1, H, W]` against a binary ground-truth
/// tensor of the same shape. Probabilities come from the clamped sigmoid;
/// dice is `1 − (2·Σpg + ε)/(Σp + Σg + ε)`.
pub fn combined_loss(logits: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    cfg.validate()?;
    if logits.shape() != gt.shape() {
        return Err(Error::ShapeMismatch {
            op: "combined_loss",
            lhs: logits.shape(),
            rhs: gt.shape(),
        });
    }
    if gt.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::NonBinaryMask);
    }

    let p = logits.sigmoid();
    let one_minus_p = p.scale(-1.0).add_scalar(1.0);
    let g = gt.detach();
    let one_minus_g = g.scale(-1.0).add_scalar(1.0);
    let log_p = p.ln();
    let log_1p = one_minus_p.ln();

    // BCE: −mean(g·log p + (1−g)·log(1−p))
    let bce = g
        .mul(&log_p)?
        .add(&one_minus_g.mul(&log_1p)?)?
        .mean_all()
        .scale(-1.0);

    // Focal: −mean(g·(1−p)^γ·log p + (1−g)·p^γ·log(1−p))
    let focal = g
        .mul(&one_minus_p.pow_scalar(cfg.focal_gamma))?
        .mul(&log_p)?
        .add(&one_minus_g.mul(&p.pow_scalar(cfg.focal_gamma))?.mul(&log_1p)?)?
        .mean_all()
        .scale(-1.0);

    // Dice: 1 − (2·Σpg + ε)/(Σp + Σg + ε)
    let numer = p.mul(&g)?.sum_all().scale(2.0).add_scalar(cfg.dice_eps);
    let denom = p.sum_all().add(&g.sum_all())?.add_scalar(cfg.dice_eps);
    let dice = numer.div(&denom)?.scale(-1.0).add_scalar(1.0);

    bce.scale(cfg.w_bce)
        .add(&focal.scale(cfg.w_focal))?
        .add(&dice.scale(cfg.w_dice))
}

/// Convenience wrapper taking a [`Mask`] as ground truth.
pub fn combined_loss_vs_mask(logits: &Tensor, gt: &Mask, cfg: &LossConfig) -> Result<Tensor> {
    combined_loss(logits, &gt.to_tensor(), cfg)
}
