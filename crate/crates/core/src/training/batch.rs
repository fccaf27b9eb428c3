use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::state::{CaptionEmbeddings, GradientBundle, ModelState};
use crate::corpus::{support_positions, MiniGroup};
use crate::discovery::{bce_from_logits, similarity_from_units, GuideWeights, HeadGrad};
use crate::{math, Error, Result};

/// Weights of the two loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub region_word: f64,
    pub image_text: f64,
}

/// Which gradients to produce, independent of the state's trainable flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradRequest {
    pub head: bool,
    pub features: bool,
}

/// Loss values for one batch plus the gradient of `total`.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub total: f64,
    /// Unweighted region-word term, averaged over queries and groups.
    pub region_word: f64,
    /// Unweighted image-text term.
    pub image_text: f64,
    pub grads: GradientBundle,
    /// Hidden-unit sign pattern of every head evaluation, in a fixed order.
    pub(crate) pattern: Vec<bool>,
}

/// Per-image cached forward values, computed once per batch.
struct Cached<'a> {
    raw: &'a [f64],
    units: Vec<f64>,
    norms: Vec<f64>,
}

#[derive(Default)]
struct SlotGrad {
    raw: Vec<f64>,
    unit: Vec<f64>,
}

struct GroupPass {
    loss: f64,
    head: Option<HeadGrad>,
    slots: BTreeMap<usize, SlotGrad>,
    pattern: Vec<bool>,
}

/// Loss and gradients for the groups in a batch, producing gradients for the
/// state's trainable groups.
pub fn caption_batch_loss(
    state: &ModelState,
    groups: &[MiniGroup],
    captions: &CaptionEmbeddings,
    weights: LossWeights,
) -> Result<BatchLoss> {
    let want = GradRequest {
        head: state.trainable.head,
        features: state.trainable.features,
    };
    caption_batch_loss_with(state, groups, captions, weights, want, false)
}

/// Each image in a group serves as the query once, with the remaining group
/// members as supports in group order. The region-word term is averaged
/// over query positions and then over groups; the image-text term covers the
/// distinct images of the batch.
pub fn caption_batch_loss_with(
    state: &ModelState,
    groups: &[MiniGroup],
    captions: &CaptionEmbeddings,
    weights: LossWeights,
    want: GradRequest,
    record_pattern: bool,
) -> Result<BatchLoss> {
    if groups.is_empty() {
        return Err(Error::Empty("batch has no mini-groups".into()));
    }
    let (n, d) = (state.store.n(), state.store.d());
    let m = state.head.m();
    if state.head.n() != n {
        return Err(Error::Shape(format!(
            "head expects {} proposals, store has {n}",
            state.head.n()
        )));
    }

    // Distinct images in first-occurrence order; each gets one cache slot.
    let mut slot_of: HashMap<&str, usize> = HashMap::new();
    let mut store_slots = Vec::new();
    let mut group_slots = Vec::with_capacity(groups.len());
    for g in groups {
        if g.len() != m + 1 {
            return Err(Error::Shape(format!(
                "mini-group of {} images for a head with {m} supports",
                g.len()
            )));
        }
        let mut positions = Vec::with_capacity(g.len());
        for id in &g.images {
            let next = slot_of.len();
            let slot = *slot_of.entry(id.as_str()).or_insert_with(|| {
                store_slots.push(id.as_str());
                next
            });
            positions.push(slot);
        }
        group_slots.push(positions);
    }
    let cache: Vec<Cached> = store_slots
        .iter()
        .map(|id| {
            let raw = state
                .store
                .get(id)
                .ok_or_else(|| Error::Config(format!("image {id} is not in the feature store")))?;
            let mut units = Vec::with_capacity(n * d);
            let mut norms = Vec::with_capacity(n);
            for (i, row) in raw.chunks(d).enumerate() {
                let len = math::norm(row);
                if len == 0.0 || !len.is_finite() {
                    return Err(Error::ZeroVector(format!("image {id} region {i}")));
                }
                units.extend(row.iter().map(|v| v / len));
                norms.push(len);
            }
            Ok(Cached { raw, units, norms })
        })
        .collect::<Result<_>>()?;

    let mut guides = Vec::with_capacity(groups.len());
    let mut classes = Vec::with_capacity(groups.len());
    for g in groups {
        guides.push(state.guide(g.concept)?);
        classes.push(
            state
                .classifier
                .row_index(g.concept)
                .ok_or(Error::UnknownConcept(g.concept.0))?,
        );
    }

    let scale = weights.region_word / (groups.len() * (m + 1)) as f64;
    let rw_want = GradRequest {
        head: want.head && weights.region_word != 0.0,
        features: want.features && weights.region_word != 0.0,
    };
    let passes: Vec<GroupPass> = (0..groups.len())
        .into_par_iter()
        .map(|g| {
            group_pass(
                state,
                &group_slots[g],
                &cache,
                &guides[g],
                classes[g],
                scale,
                rw_want,
                record_pattern,
            )
        })
        .collect::<Result<_>>()?;

    let mut region_word = 0.0;
    let mut head_grad = want.head.then(|| state.head.zero_grad());
    let mut slot_grads: Vec<SlotGrad> = (0..cache.len()).map(|_| SlotGrad::default()).collect();
    let mut pattern = Vec::new();
    for pass in passes {
        region_word += pass.loss / (m + 1) as f64;
        if let (Some(total), Some(part)) = (head_grad.as_mut(), pass.head.as_ref()) {
            total.add_scaled(part, 1.0);
        }
        for (slot, part) in pass.slots {
            accumulate(&mut slot_grads[slot].raw, &part.raw);
            accumulate(&mut slot_grads[slot].unit, &part.unit);
        }
        pattern.extend(pass.pattern);
    }
    region_word /= groups.len() as f64;

    let image_text = image_text_pass(
        &cache,
        &store_slots,
        captions,
        n,
        d,
        state.temperature,
        if want.features {
            weights.image_text
        } else {
            0.0
        },
        &mut slot_grads,
    )?;

    let mut features = BTreeMap::new();
    if want.features {
        for (slot, grad) in slot_grads.into_iter().enumerate() {
            let c = &cache[slot];
            let mut raw = if grad.raw.is_empty() {
                vec![0.0; n * d]
            } else {
                grad.raw
            };
            if !grad.unit.is_empty() {
                for i in 0..n {
                    let r = i * d..(i + 1) * d;
                    let back = math::normalize_backward(
                        &c.units[r.clone()],
                        c.norms[i],
                        &grad.unit[r.clone()],
                    );
                    for (a, b) in raw[r].iter_mut().zip(back) {
                        *a += b;
                    }
                }
            }
            let store_slot = state
                .store
                .slot(store_slots[slot])
                .expect("cached image is in the store");
            features.insert(store_slot, raw);
        }
    }

    let total = weights.region_word * region_word + weights.image_text * image_text;
    if !total.is_finite() {
        return Err(Error::NonFinite("batch loss".into()));
    }
    Ok(BatchLoss {
        total,
        region_word,
        image_text,
        grads: GradientBundle {
            head: head_grad,
            features,
        },
        pattern,
    })
}

fn accumulate(into: &mut Vec<f64>, from: &[f64]) {
    if from.is_empty() {
        return;
    }
    if into.is_empty() {
        into.extend_from_slice(from);
    } else {
        for (a, b) in into.iter_mut().zip(from) {
            *a += b;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn group_pass(
    state: &ModelState,
    slots: &[usize],
    cache: &[Cached],
    guide: &GuideWeights,
    class: usize,
    scale: f64,
    want: GradRequest,
    record_pattern: bool,
) -> Result<GroupPass> {
    let head = &state.head;
    let clf = &state.classifier;
    let (n, d) = (head.n(), state.store.d());
    let m = head.m();
    let w = guide.as_slice();
    let mut pass = GroupPass {
        loss: 0.0,
        head: want.head.then(|| head.zero_grad()),
        slots: BTreeMap::new(),
        pattern: Vec::new(),
    };
    let mut scratch = head.zero_grad();

    for q in 0..slots.len() {
        let query = &cache[slots[q]];
        let support_slots: Vec<usize> = support_positions(slots.len(), q)
            .into_iter()
            .map(|p| slots[p])
            .collect();
        let support_units: Vec<&[f64]> = support_slots
            .iter()
            .map(|&s| cache[s].units.as_slice())
            .collect();
        let s = similarity_from_units(&query.units, &support_units, n, d, guide);
        let traces: Vec<_> = s.chunks(m * n).map(|row| head.forward(row)).collect();
        if record_pattern {
            for t in &traces {
                pass.pattern.extend(t.active());
            }
        }
        let logits: Vec<f64> = traces.iter().map(|t| t.logit).collect();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head logits".into()));
        }
        let p = math::softmax(&logits);
        let mut f_p = vec![0.0; d];
        for (i, pi) in p.iter().enumerate() {
            for (a, b) in f_p.iter_mut().zip(&query.raw[i * d..(i + 1) * d]) {
                *a += pi * b;
            }
        }
        let scores = clf.logits(&f_p);
        pass.loss += bce_from_logits(&scores, class);
        if !want.head && !want.features {
            continue;
        }

        let ds: Vec<f64> = scores
            .iter()
            .enumerate()
            .map(|(k, &sk)| scale * (math::sigmoid(sk) - if k == class { 1.0 } else { 0.0 }))
            .collect();
        let df_p = clf.transpose_mul(&ds);
        let dp: Vec<f64> = (0..n)
            .map(|i| math::dot(&query.raw[i * d..(i + 1) * d], &df_p))
            .collect();
        let mean_dp = math::dot(&p, &dp);

        let mut d_s = Vec::with_capacity(n * m * n);
        let grad = pass.head.as_mut().unwrap_or(&mut scratch);
        let b2 = grad.b2;
        for (i, trace) in traces.iter().enumerate() {
            let dlogit = p[i] * (dp[i] - mean_dp);
            d_s.extend(head.backward(trace, dlogit, grad));
        }
        // The softmax ignores a shift shared by all logits, so the output
        // bias has zero gradient; keep it exact rather than a rounding
        // residue of Σ dlogit.
        grad.b2 = b2;
        if !want.features {
            continue;
        }

        let q_grad = pass.slots.entry(slots[q]).or_default();
        if q_grad.raw.is_empty() {
            q_grad.raw = vec![0.0; n * d];
        }
        for (i, pi) in p.iter().enumerate() {
            for (a, b) in q_grad.raw[i * d..(i + 1) * d].iter_mut().zip(&df_p) {
                *a += pi * b;
            }
        }

        // s_ij = Σ_t w_t u_i[t] v_j[t]: spread dS onto both unit rows.
        let mut dq_unit = vec![0.0; n * d];
        let mut acc = vec![0.0; d];
        let mut weighted = vec![0.0; d];
        for i in 0..n {
            let ui = &query.units[i * d..(i + 1) * d];
            for t in 0..d {
                weighted[t] = w[t] * ui[t];
            }
            acc.iter_mut().for_each(|a| *a = 0.0);
            let row = &d_s[i * m * n..(i + 1) * m * n];
            for (k, &slot) in support_slots.iter().enumerate() {
                let sup = &cache[slot].units;
                let sg = pass.slots.entry(slot).or_default();
                if sg.unit.is_empty() {
                    sg.unit = vec![0.0; n * d];
                }
                for j in 0..n {
                    let g = row[k * n + j];
                    if g == 0.0 {
                        continue;
                    }
                    let vj = &sup[j * d..(j + 1) * d];
                    for t in 0..d {
                        acc[t] += g * vj[t];
                        sg.unit[j * d + t] += g * weighted[t];
                    }
                }
            }
            for t in 0..d {
                dq_unit[i * d + t] += w[t] * acc[t];
            }
        }
        let q_grad = pass.slots.entry(slots[q]).or_default();
        accumulate(&mut q_grad.unit, &dq_unit);
    }
    Ok(pass)
}

/// Image-text loss over distinct batch images; adds `weight`-scaled
/// gradients to the raw feature accumulators.
#[allow(clippy::too_many_arguments)]
fn image_text_pass(
    cache: &[Cached],
    ids: &[&str],
    captions: &CaptionEmbeddings,
    n: usize,
    d: usize,
    temperature: f64,
    weight: f64,
    grads: &mut [SlotGrad],
) -> Result<f64> {
    let b = cache.len();
    let mut xs = Vec::with_capacity(b);
    let mut ts = Vec::with_capacity(b);
    for (c, id) in cache.iter().zip(ids) {
        let x = crate::scenario::image_feature(c.raw, n, d);
        let len = math::norm(&x);
        if len == 0.0 {
            return Err(Error::ZeroVector(format!("image proxy of {id}")));
        }
        let t = captions
            .get(*id)
            .ok_or_else(|| Error::Config(format!("no caption embedding for image {id}")))?;
        let t = math::normalized(t)
            .ok_or_else(|| Error::ZeroVector(format!("caption proxy of {id}")))?;
        xs.push((x.iter().map(|v| v / len).collect::<Vec<f64>>(), len));
        ts.push(t);
    }
    let mut loss = 0.0;
    for (a, (xa, len)) in xs.iter().enumerate() {
        let logits: Vec<f64> = ts.iter().map(|t| temperature * math::dot(xa, t)).collect();
        loss += bce_from_logits(&logits, a);
        if weight == 0.0 {
            continue;
        }
        let mut dx_unit = vec![0.0; d];
        for (bb, (l, t)) in logits.iter().zip(&ts).enumerate() {
            let g = weight / b as f64
                * (math::sigmoid(*l) - if a == bb { 1.0 } else { 0.0 })
                * temperature;
            for (x, tv) in dx_unit.iter_mut().zip(t) {
                *x += g * tv;
            }
        }
        let dx = math::normalize_backward(xa, *len, &dx_unit);
        let raw = &mut grads[a].raw;
        if raw.is_empty() {
            *raw = vec![0.0; n * d];
        }
        for i in 0..n {
            for t in 0..d {
                raw[i * d + t] += dx[t] / n as f64;
            }
        }
    }
    Ok(loss / b as f64)
}
