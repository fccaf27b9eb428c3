use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batch::{caption_batch_loss_with, GradRequest, LossWeights};
use super::state::{CaptionEmbeddings, ModelState};
use crate::corpus::MiniGroup;
use crate::{Error, Result};

/// Parameter group probed by [`finite_diff_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    HeadW1,
    HeadB1,
    HeadW2,
    HeadB2,
    /// Features of the images taking part in the batch.
    Features,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        Self::HeadW1,
        Self::HeadB1,
        Self::HeadW2,
        Self::HeadB2,
        Self::Features,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub group: ParamGroup,
    pub checked: usize,
    /// Coordinates skipped because a perturbation flipped a ReLU.
    pub skipped: usize,
    pub max_rel_error: f64,
}

/// Relative error `|a - n| / max(1e-12, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Compares analytic gradients with central differences on up to `samples`
/// random coordinates of `group`. Coordinates whose ±`eps` perturbation
/// changes any hidden activation sign are replaced by fresh draws, since
/// the loss is not differentiable across a ReLU kink.
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_check<R: Rng + ?Sized>(
    state: &ModelState,
    groups: &[MiniGroup],
    captions: &CaptionEmbeddings,
    weights: LossWeights,
    group: ParamGroup,
    eps: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    if eps.is_nan() || eps <= 0.0 || samples == 0 {
        return Err(Error::Config(
            "gradient check needs eps > 0 and at least one sample".into(),
        ));
    }
    let all = GradRequest {
        head: true,
        features: true,
    };
    let base = caption_batch_loss_with(state, groups, captions, weights, all, true)?;
    let head_grad = base.grads.head.as_ref().expect("head gradient requested");
    let feature_slots: Vec<usize> = base.grads.features.keys().copied().collect();
    let per_image = state.store.n() * state.store.d();

    let analytic: Vec<f64> = match group {
        ParamGroup::HeadW1 => head_grad.w1.clone(),
        ParamGroup::HeadB1 => head_grad.b1.clone(),
        ParamGroup::HeadW2 => head_grad.w2.clone(),
        ParamGroup::HeadB2 => vec![head_grad.b2],
        ParamGroup::Features => base.grads.features.values().flatten().copied().collect(),
    };

    let loss_at = |coord: usize, delta: f64| -> Result<(f64, Vec<bool>)> {
        let mut probe = state.clone();
        match group {
            ParamGroup::HeadW1 => probe.head.w1[coord] += delta,
            ParamGroup::HeadB1 => probe.head.b1[coord] += delta,
            ParamGroup::HeadW2 => probe.head.w2[coord] += delta,
            ParamGroup::HeadB2 => probe.head.b2 += delta,
            ParamGroup::Features => {
                let slot = feature_slots[coord / per_image];
                probe.store.data[slot][coord % per_image] += delta;
            }
        }
        let none = GradRequest {
            head: false,
            features: false,
        };
        let out = caption_batch_loss_with(&probe, groups, captions, weights, none, true)?;
        Ok((out.total, out.pattern))
    };

    let mut report = GradCheckReport {
        group,
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
    };
    for coord in index::sample(rng, analytic.len(), analytic.len()) {
        if report.checked == samples {
            break;
        }
        let (plus, p_plus) = loss_at(coord, eps)?;
        let (minus, p_minus) = loss_at(coord, -eps)?;
        if p_plus != base.pattern || p_minus != base.pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        report.max_rel_error = report
            .max_rel_error
            .max(relative_error(analytic[coord], numeric));
        report.checked += 1;
    }
    Ok(report)
}
