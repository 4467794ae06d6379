use crate::augment::MaskPlan;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::config::ReconNorm;

fn recon_weights(target: &Tensor, plan: Option<&MaskPlan>, mode: ReconNorm) -> Result<Vec<f64>> {
    match (mode, plan) {
        (ReconNorm::AllPixels, _) | (ReconNorm::MaskedOnly, None) => Ok(vec![1.0; target.numel()]),
        (ReconNorm::MaskedOnly, Some(plan)) => {
            let [c, h, w] = target.dims3()?;
            plan.check_extent(h, w)?;
            Ok(plan.pixel_weights(c))
        }
    }
}

/// Reconstruction MSE on the tape. Without a plan, masked-only mode
/// degrades to all pixels.
pub fn recon_loss_var(
    tape: &mut Tape,
    pred: Var,
    target: &Tensor,
    plan: Option<&MaskPlan>,
    mode: ReconNorm,
) -> Result<Var> {
    let weights = recon_weights(target, plan, mode)?;
    tape.masked_mse(pred, target, weights)
}

/// Value-only [`recon_loss_var`]; zero when nothing is masked in masked-only mode.
pub fn recon_loss(
    pred: &Tensor,
    target: &Tensor,
    plan: Option<&MaskPlan>,
    mode: ReconNorm,
) -> Result<f64> {
    pred.expect_same_shape(target)?;
    let weights = recon_weights(target, plan, mode)?;
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let sse: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .zip(&weights)
        .map(|((p, t), w)| w * (p - t) * (p - t))
        .sum();
    Ok(sse / total)
}

/// `1 - cos(a, b)`; a zero vector gives 1.
pub fn consistency_loss(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.dims().len() != 1 {
        return Err(Error::shape(format!(
            "embeddings must be rank 1, got {:?}",
            a.dims()
        )));
    }
    a.expect_same_shape(b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        log::warn!("consistency_loss: zero embedding, loss defined as 1");
        return Ok(1.0);
    }
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    Ok(1.0 - dot / (na * nb))
}

/// `sup + λ·con`.
pub fn total_loss(sup: f64, con: f64, lambda: f64) -> f64 {
    sup + lambda * con
}
