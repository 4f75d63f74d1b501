//! Dice + cross-entropy on tissue probabilities and on laminar band
//! channels, with an ignore label, and their analytic gradients.
//!
//! Label code `k` is scored against channel `k - 1`. Voxels carrying the
//! ignore label contribute nothing to either term and receive zero gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{ChannelStack, LabelField3D};

/// Dice smoothing added to numerator and denominator.
pub const DICE_SMOOTH: f64 = 1e-5;
/// Probabilities are clipped to `[CE_CLIP, 1 - CE_CLIP]` before the log.
pub const CE_CLIP: f64 = 1e-7;

pub const DEFAULT_IGNORE_LABEL: u8 = 0;

/// Non-ignored voxels and their channel, validated against the stack.
fn scored_voxels(pred: &ChannelStack, gt: &LabelField3D, ignore_label: u8) -> Result<Vec<(usize, usize)>> {
    pred.dims().ensure_same_shape(gt.dims())?;
    let mut out = Vec::new();
    for (i, &code) in gt.labels().iter().enumerate() {
        if code == ignore_label {
            continue;
        }
        match (code as usize).checked_sub(1).filter(|&c| c < pred.channels()) {
            Some(c) => out.push((i, c)),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "label {code} has no channel among {}",
                    pred.channels()
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDomain);
    }
    Ok(out)
}

/// Per-class smoothed Dice `(2 I + eps) / (P + G + eps)` over non-ignored
/// voxels, one entry per channel.
pub fn dice_per_class(pred: &ChannelStack, gt: &LabelField3D, ignore_label: u8) -> Result<Vec<f64>> {
    let voxels = scored_voxels(pred, gt, ignore_label)?;
    let (inter, denom) = dice_sums(pred, &voxels);
    Ok(inter
        .iter()
        .zip(&denom)
        .map(|(i, d)| (2.0 * i + DICE_SMOOTH) / d)
        .collect())
}

fn dice_sums(pred: &ChannelStack, voxels: &[(usize, usize)]) -> (Vec<f64>, Vec<f64>) {
    let channels = pred.channels();
    let mut inter = vec![0.0; channels];
    let mut denom = vec![DICE_SMOOTH; channels];
    for c in 0..channels {
        let p = pred.channel(c);
        for &(i, _) in voxels {
            denom[c] += p[i];
        }
    }
    for &(i, c) in voxels {
        inter[c] += pred.at(c, i);
        denom[c] += 1.0;
    }
    (inter, denom)
}

/// `1 - mean_c dice_c` and its gradient with respect to `pred`.
pub fn soft_dice(pred: &ChannelStack, gt: &LabelField3D, ignore_label: u8) -> Result<(f64, ChannelStack)> {
    let voxels = scored_voxels(pred, gt, ignore_label)?;
    let (inter, denom) = dice_sums(pred, &voxels);
    let channels = pred.channels();
    let scale = 1.0 / channels as f64;
    let ratio: Vec<f64> = inter.iter().zip(&denom).map(|(i, d)| (2.0 * i + DICE_SMOOTH) / d).collect();
    let loss = 1.0 - scale * ratio.iter().sum::<f64>();

    // d ratio_c / d p_c(v) = (2 g_c(v) - ratio_c) / denom_c
    let mut grad = ChannelStack::zeros(*pred.dims(), channels);
    let n = pred.dims().len();
    for c in 0..channels {
        let base = scale * ratio[c] / denom[c];
        let out = &mut grad.data_mut()[c * n..(c + 1) * n];
        for &(i, _) in &voxels {
            out[i] = base;
        }
    }
    for &(i, c) in &voxels {
        grad.data_mut()[c * n + i] -= scale * 2.0 / denom[c];
    }
    Ok((loss, grad))
}

/// Mean `-ln(clip(p_gt))` over non-ignored voxels and its gradient.
pub fn cross_entropy(pred: &ChannelStack, gt: &LabelField3D, ignore_label: u8) -> Result<(f64, ChannelStack)> {
    let voxels = scored_voxels(pred, gt, ignore_label)?;
    let count = voxels.len() as f64;
    let n = pred.dims().len();
    let mut grad = ChannelStack::zeros(*pred.dims(), pred.channels());
    let mut total = 0.0;
    for &(i, c) in &voxels {
        let p = pred.at(c, i);
        let clipped = p.clamp(CE_CLIP, 1.0 - CE_CLIP);
        total -= clipped.ln();
        if clipped == p {
            grad.data_mut()[c * n + i] = -1.0 / (p * count);
        }
    }
    Ok((total / count, grad))
}

/// The four loss components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dice_tissue: f64,
    pub ce_tissue: f64,
    pub dice_laplace: f64,
    pub ce_laplace: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.dice_tissue, self.ce_tissue, self.dice_laplace, self.ce_laplace, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct CombinedLoss {
    pub breakdown: LossBreakdown,
    /// Gradient with respect to the tissue probabilities.
    pub grad_tissue: ChannelStack,
    /// Gradient with respect to the laminar band channels, already scaled
    /// by the Laplacian weight.
    pub grad_laplace: ChannelStack,
}

/// `DCE(tissue) + laplace_weight * DCE(laminar)`.
///
/// `tissue_pred` holds one probability channel per tissue class and
/// `laminar_pred` the band-pass channels of the predicted field; the targets
/// are hard labels with `ignore_label` marking unscored voxels.
pub fn combined_loss(
    tissue_pred: &ChannelStack,
    tissue_gt: &LabelField3D,
    laminar_pred: &ChannelStack,
    laminar_gt: &LabelField3D,
    laplace_weight: f64,
    ignore_label: u8,
) -> Result<CombinedLoss> {
    if !(laplace_weight.is_finite() && laplace_weight >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "laplace weight must be nonnegative, got {laplace_weight}"
        )));
    }
    tissue_pred.dims().ensure_same_shape(laminar_pred.dims())?;
    let (dice_t, mut grad_tissue) = soft_dice(tissue_pred, tissue_gt, ignore_label)?;
    let (ce_t, g_ce_t) = cross_entropy(tissue_pred, tissue_gt, ignore_label)?;
    let (dice_l, mut grad_laplace) = soft_dice(laminar_pred, laminar_gt, ignore_label)?;
    let (ce_l, g_ce_l) = cross_entropy(laminar_pred, laminar_gt, ignore_label)?;

    for (g, extra) in grad_tissue.data_mut().iter_mut().zip(g_ce_t.data()) {
        *g += extra;
    }
    for (g, extra) in grad_laplace.data_mut().iter_mut().zip(g_ce_l.data()) {
        *g = laplace_weight * (*g + extra);
    }
    let breakdown = LossBreakdown {
        dice_tissue: dice_t,
        ce_tissue: ce_t,
        dice_laplace: dice_l,
        ce_laplace: ce_l,
        total: dice_t + ce_t + laplace_weight * (dice_l + ce_l),
    };
    Ok(CombinedLoss {
        breakdown,
        grad_tissue,
        grad_laplace,
    })
}
