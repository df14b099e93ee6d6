//! Segmentation and mutual-learning losses.
//!
//! * soft Jaccard distance between a probability field and a binary mask,
//! * regional KL divergence summed over a mask,
//! * the mixed regional KL over the true and predicted tumor masks, normalized
//!   by their combined size,
//! * the composite mutual-learning loss `(1 - lambda) * JD + lambda * rKLD`,
//!
//! plus analytic gradients with respect to the updating model's parameters.
//! Peer probabilities and the predicted mask are constants of the forward pass.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, GmlError, Result};
use crate::segcore::{
    binarize, check_grid, FeatureVolume, Forward, Gradient, Mask, MaskPair, ProbField,
    DEFAULT_THRESHOLD,
};

/// Mutual-learning weight used throughout the GML experiments.
pub const DEFAULT_LAMBDA: f64 = 0.9;

/// Which per-voxel divergence the regional KL sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KldForm {
    /// KL between the two Bernoulli distributions `(p1, 1 - p1)` and `(p2, 1 - p2)`.
    #[default]
    FullDistribution,
    /// Only the tumor-class term `p1 * ln(p1 / p2)`; may be negative.
    LiteralTumorTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutualLossConfig {
    pub lambda: f64,
    #[serde(default)]
    pub kld_form: KldForm,
}

impl Default for MutualLossConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            kld_form: KldForm::FullDistribution,
        }
    }
}

impl MutualLossConfig {
    pub fn new(lambda: f64, kld_form: KldForm) -> Result<Self> {
        let cfg = Self { lambda, kld_form };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(invalid_input(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

/// `x * ln(x / y)` with the `0 * ln 0 = 0` convention.
#[inline]
fn xlogxy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * libm::log(x / y)
    }
}

#[inline]
pub(crate) fn voxel_kld(p1: f64, p2: f64, form: KldForm) -> f64 {
    match form {
        KldForm::FullDistribution => xlogxy(p1, p2) + xlogxy(1.0 - p1, 1.0 - p2),
        KldForm::LiteralTumorTerm => xlogxy(p1, p2),
    }
}

/// d/dp1 of [`voxel_kld`].
#[inline]
fn voxel_kld_slope(p1: f64, p2: f64, form: KldForm) -> f64 {
    match form {
        KldForm::FullDistribution => libm::log(p1 / p2) - libm::log((1.0 - p1) / (1.0 - p2)),
        KldForm::LiteralTumorTerm => libm::log(p1 / p2) + 1.0,
    }
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(GmlError::Numeric(format!("{what} evaluated to {value}")))
    }
}

/// `1 - sum(p*t) / (sum(p) + sum(t) - sum(p*t))`; zero when the union is empty.
pub fn soft_jaccard_distance(pred: &ProbField, truth: &Mask) -> Result<f64> {
    check_grid(&pred.dims(), &truth.dims())?;
    let (inter, union) = jaccard_sums(pred, truth);
    if union == 0.0 {
        return Ok(0.0);
    }
    finite(1.0 - inter / union, "soft Jaccard distance")
}

fn jaccard_sums(pred: &ProbField, truth: &Mask) -> (f64, f64) {
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut tsum = 0.0;
    for (&p, &t) in pred.probs().iter().zip(truth.bits()) {
        let t = t as f64;
        inter += p * t;
        psum += p;
        tsum += t;
    }
    (inter, psum + tsum - inter)
}

/// Unnormalized regional KL: sum of per-voxel divergences where `mask == 1`.
pub fn rkld_masked(p1: &ProbField, p2: &ProbField, mask: &Mask, form: KldForm) -> Result<f64> {
    check_grid(&p1.dims(), &p2.dims())?;
    check_grid(&p1.dims(), &mask.dims())?;
    let total = p1
        .probs()
        .iter()
        .zip(p2.probs())
        .zip(mask.bits())
        .filter(|(_, &m)| m == 1)
        .map(|((&a, &b), _)| voxel_kld(a, b, form))
        .sum();
    finite(total, "regional KL")
}

/// Regional KL over `T` plus over `T'`, divided by `|T| + |T'|` (zero if both are empty).
pub fn rkld_mixed(p1: &ProbField, p2: &ProbField, pair: &MaskPair, form: KldForm) -> Result<f64> {
    let denom = (pair.truth.count() + pair.predicted.count()) as f64;
    let over_truth = rkld_masked(p1, p2, &pair.truth, form)?;
    let over_pred = rkld_masked(p1, p2, &pair.predicted, form)?;
    if denom == 0.0 {
        return Ok(0.0);
    }
    finite((over_truth + over_pred) / denom, "mixed regional KL")
}

/// Mutual-learning loss of `updating` against a detached `peer`, with the
/// predicted mask taken from `updating` at threshold 0.5.
pub fn mutual_loss(
    updating: &ProbField,
    peer: &ProbField,
    truth: &Mask,
    cfg: &MutualLossConfig,
) -> Result<f64> {
    let predicted = binarize(updating, DEFAULT_THRESHOLD)?;
    let pair = MaskPair::new(truth.clone(), predicted)?;
    mutual_loss_with_pair(updating, peer, &pair, cfg)
}

/// [`mutual_loss`] with an explicit mask pair.
pub fn mutual_loss_with_pair(
    updating: &ProbField,
    peer: &ProbField,
    pair: &MaskPair,
    cfg: &MutualLossConfig,
) -> Result<f64> {
    cfg.validate()?;
    let jd = soft_jaccard_distance(updating, &pair.truth)?;
    let kl = rkld_mixed(updating, peer, pair, cfg.kld_form)?;
    finite((1.0 - cfg.lambda) * jd + cfg.lambda * kl, "mutual loss")
}

/// dJD/dp per voxel.
fn jaccard_prob_grad(pred: &ProbField, truth: &Mask) -> Vec<f64> {
    let (inter, union) = jaccard_sums(pred, truth);
    if union == 0.0 {
        return alloc::vec![0.0; pred.len()];
    }
    let u2 = union * union;
    truth
        .bits()
        .iter()
        .map(|&t| {
            let t = t as f64;
            -(t * union - inter * (1.0 - t)) / u2
        })
        .collect()
}

/// Chain `dL/dp` through the sigmoid and the linear model.
fn backprop(forward: &Forward, volume: &FeatureVolume, prob_grad: &[f64]) -> Result<Gradient> {
    let dims = volume.dims();
    if forward.logits.len() != dims.voxels() || prob_grad.len() != dims.voxels() {
        return Err(invalid_input("forward pass does not match the volume"));
    }
    let logit_grad: Vec<f64> = forward
        .prob_slope()
        .zip(prob_grad)
        .map(|(s, g)| s * g)
        .collect();
    let weights = (0..dims.channels)
        .map(|c| {
            volume
                .channel(c)
                .iter()
                .zip(&logit_grad)
                .map(|(&x, g)| x as f64 * g)
                .sum()
        })
        .collect();
    let grad = Gradient {
        weights,
        bias: logit_grad.iter().sum(),
    };
    if !grad.is_finite() {
        return Err(GmlError::Numeric(format!("non-finite gradient {grad:?}")));
    }
    Ok(grad)
}

/// Gradient of the soft Jaccard distance with respect to the model parameters.
pub fn jaccard_grad(forward: &Forward, truth: &Mask, volume: &FeatureVolume) -> Result<Gradient> {
    check_grid(&forward.field.dims(), &truth.dims())?;
    let g = jaccard_prob_grad(&forward.field, truth);
    backprop(forward, volume, &g)
}

/// Gradient of [`mutual_loss`] with respect to the updating model's parameters.
///
/// `forward` is the updating model's pass over `volume`; its predicted mask is
/// recomputed here and held constant, as is `peer`.
pub fn mutual_loss_grad(
    forward: &Forward,
    peer: &ProbField,
    truth: &Mask,
    volume: &FeatureVolume,
    cfg: &MutualLossConfig,
) -> Result<Gradient> {
    cfg.validate()?;
    let updating = &forward.field;
    check_grid(&updating.dims(), &peer.dims())?;
    check_grid(&updating.dims(), &truth.dims())?;
    let predicted = binarize(updating, DEFAULT_THRESHOLD)?;

    let mut grad = jaccard_prob_grad(updating, truth);
    for g in &mut grad {
        *g *= 1.0 - cfg.lambda;
    }
    let denom = (truth.count() + predicted.count()) as f64;
    if cfg.lambda != 0.0 && denom > 0.0 {
        let scale = cfg.lambda / denom;
        for (v, g) in grad.iter_mut().enumerate() {
            let weight = (truth.bits()[v] + predicted.bits()[v]) as f64;
            if weight > 0.0 {
                let (p, q) = (updating.probs()[v], peer.probs()[v]);
                *g += scale * weight * voxel_kld_slope(p, q, cfg.kld_form);
            }
        }
    }
    backprop(forward, volume, &grad)
}
