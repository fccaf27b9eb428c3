use std::collections::BTreeMap;

use super::state::{GradientBundle, ModelState};
use crate::discovery::HeadGrad;
use crate::{Error, Result};

/// Plain SGD with momentum: `v = μv + g; θ -= lr·v`.
///
/// Velocity lives here rather than in the model so a checkpoint holds only
/// parameters. Feature velocity is allocated the first time an image
/// receives a gradient and decays on every later step, as it would with a
/// dense buffer.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    head: Option<HeadGrad>,
    features: BTreeMap<usize, Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            head: None,
            features: BTreeMap::new(),
        }
    }

    /// Applies one update to the trainable groups of `state`. A non-finite
    /// gradient or update leaves both the state and the velocity untouched.
    pub fn step(&mut self, state: &mut ModelState, grads: &GradientBundle) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let mu = self.momentum;

        let head_velocity = match (&grads.head, state.trainable.head) {
            (Some(g), true) => {
                let mut v = self.head.clone().unwrap_or_else(|| state.head.zero_grad());
                scale(&mut v, mu);
                v.add_scaled(g, 1.0);
                Some(v)
            }
            (None, true) => self.head.clone().map(|mut v| {
                scale(&mut v, mu);
                v
            }),
            _ => None,
        };

        // Stage velocity for slots with a gradient; the others only decay.
        let mut staged = Vec::with_capacity(grads.features.len());
        if state.trainable.features {
            for (&slot, g) in &grads.features {
                if slot >= state.store.len() {
                    return Err(Error::Shape(format!(
                        "gradient for unknown feature slot {slot}"
                    )));
                }
                let mut v = self
                    .features
                    .get(&slot)
                    .cloned()
                    .unwrap_or_else(|| vec![0.0; g.len()]);
                for (x, gv) in v.iter_mut().zip(g) {
                    *x = mu * *x + gv;
                }
                staged.push((slot, v));
            }
        }

        let lr = self.learning_rate;
        let mut head = state.head.clone();
        if let Some(v) = &head_velocity {
            for (p, x) in head.w1.iter_mut().zip(&v.w1) {
                *p -= lr * x;
            }
            for (p, x) in head.b1.iter_mut().zip(&v.b1) {
                *p -= lr * x;
            }
            for (p, x) in head.w2.iter_mut().zip(&v.w2) {
                *p -= lr * x;
            }
            head.b2 -= lr * v.b2;
            if !head.is_finite() {
                return Err(Error::NonFinite("head update".into()));
            }
        }
        let mut updated = Vec::with_capacity(staged.len());
        for (slot, v) in &staged {
            let next: Vec<f64> = state
                .store
                .values(*slot)
                .iter()
                .zip(v)
                .map(|(p, x)| p - lr * x)
                .collect();
            if next.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "feature update of {}",
                    state.store.ids()[*slot]
                )));
            }
            updated.push(next);
        }

        state.head = head;
        if head_velocity.is_some() {
            self.head = head_velocity;
        }
        if state.trainable.features {
            for (slot, v) in self.features.iter_mut() {
                if grads.features.contains_key(slot) {
                    continue;
                }
                for (p, x) in state.store.data[*slot].iter_mut().zip(v.iter_mut()) {
                    *x *= mu;
                    *p -= lr * *x;
                }
            }
            for ((slot, v), next) in staged.into_iter().zip(updated) {
                state.store.data[slot] = next;
                self.features.insert(slot, v);
            }
        }
        Ok(())
    }
}

fn scale(g: &mut HeadGrad, s: f64) {
    g.w1.iter_mut()
        .chain(g.b1.iter_mut())
        .chain(g.w2.iter_mut())
        .for_each(|x| *x *= s);
    g.b2 *= s;
}
