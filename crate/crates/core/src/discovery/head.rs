use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SimilarityMatrix;
use crate::{Error, Result};

/// How a similarity row is presented to the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RowLayout {
    /// Raw row, support blocks in the order supplied.
    #[default]
    Raw,
    /// Each support block sorted descending, which makes the head invariant
    /// to proposal order within a support.
    SortedBlocks,
}

/// Two-layer MLP scoring each query proposal from its similarity row:
/// `logit = w2 · relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryHead {
    m: usize,
    n: usize,
    hidden: usize,
    layout: RowLayout,
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: f64,
}

/// Gradient with the same shapes as [`DiscoveryHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Forward intermediates needed for backprop of one row.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    input: Vec<f64>,
    /// `perm[p]` = raw position feeding input position `p` (sorted layout).
    perm: Option<Vec<usize>>,
    pre: Vec<f64>,
    pub logit: f64,
}

impl HeadTrace {
    /// Sign pattern of the hidden pre-activations.
    pub fn active(&self) -> impl Iterator<Item = bool> + '_ {
        self.pre.iter().map(|&z| z > 0.0)
    }
}

impl DiscoveryHead {
    /// He-initialised weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn new<R: Rng + ?Sized>(
        m: usize,
        n: usize,
        hidden: usize,
        layout: RowLayout,
        rng: &mut R,
    ) -> Result<Self> {
        let mut head = Self::zeroed(m, n, hidden, layout)?;
        let input = m * n;
        let s1 = (2.0 / input as f64).sqrt();
        let s2 = (2.0 / hidden as f64).sqrt();
        for w in &mut head.w1 {
            *w = s1 * rng.sample::<f64, _>(StandardNormal);
        }
        for w in &mut head.w2 {
            *w = s2 * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(head)
    }

    pub fn zeroed(m: usize, n: usize, hidden: usize, layout: RowLayout) -> Result<Self> {
        if m == 0 || n == 0 || hidden == 0 {
            return Err(Error::Config(format!(
                "head needs positive m, n, hidden (got {m}, {n}, {hidden})"
            )));
        }
        Ok(Self {
            m,
            n,
            hidden,
            layout,
            w1: vec![0.0; hidden * m * n],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        })
    }

    /// Builds a head from explicit parameters (e.g. a checkpoint).
    pub fn from_parts(
        m: usize,
        n: usize,
        layout: RowLayout,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
    ) -> Result<Self> {
        let hidden = b1.len();
        let head = Self {
            m,
            n,
            hidden,
            layout,
            w1,
            b1,
            w2,
            b2,
        };
        if hidden == 0
            || m == 0
            || n == 0
            || head.w1.len() != hidden * m * n
            || head.w2.len() != hidden
        {
            return Err(Error::Shape("inconsistent head parameter shapes".into()));
        }
        if !head.is_finite() {
            return Err(Error::NonFinite("head parameters".into()));
        }
        Ok(head)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn layout(&self) -> RowLayout {
        self.layout
    }

    pub fn input_dim(&self) -> usize {
        self.m * self.n
    }

    pub fn w1(&self) -> &[f64] {
        &self.w1
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn w2(&self) -> &[f64] {
        &self.w2
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    pub fn is_finite(&self) -> bool {
        self.b2.is_finite()
            && self
                .w1
                .iter()
                .chain(&self.b1)
                .chain(&self.w2)
                .all(|v| v.is_finite())
    }

    pub fn zero_grad(&self) -> HeadGrad {
        HeadGrad {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.hidden],
            w2: vec![0.0; self.hidden],
            b2: 0.0,
        }
    }

    fn prepare(&self, row: &[f64]) -> (Vec<f64>, Option<Vec<usize>>) {
        match self.layout {
            RowLayout::Raw => (row.to_vec(), None),
            RowLayout::SortedBlocks => {
                let mut perm = Vec::with_capacity(row.len());
                for k in 0..self.m {
                    let mut block: Vec<usize> = (k * self.n..(k + 1) * self.n).collect();
                    // stable: equal values keep original order
                    block.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
                    perm.extend(block);
                }
                (perm.iter().map(|&p| row[p]).collect(), Some(perm))
            }
        }
    }

    pub fn forward(&self, row: &[f64]) -> HeadTrace {
        debug_assert_eq!(row.len(), self.input_dim());
        let (input, perm) = self.prepare(row);
        let width = self.input_dim();
        let mut pre = self.b1.clone();
        let mut logit = self.b2;
        for (h, z) in pre.iter_mut().enumerate() {
            *z += crate::math::dot(&self.w1[h * width..(h + 1) * width], &input);
            if *z > 0.0 {
                logit += self.w2[h] * *z;
            }
        }
        HeadTrace {
            input,
            perm,
            pre,
            logit,
        }
    }

    /// One logit per query proposal.
    pub fn logits(&self, s: &SimilarityMatrix) -> Result<Vec<f64>> {
        if s.m() != self.m || s.n() != self.n {
            return Err(Error::Shape(format!(
                "similarity matrix is {}x({}*{}), head expects {}x({}*{})",
                s.n(),
                s.m(),
                s.n(),
                self.n,
                self.m,
                self.n
            )));
        }
        Ok((0..s.n()).map(|i| self.forward(s.row(i)).logit).collect())
    }

    /// Accumulates parameter gradients for `dlogit` and returns the gradient
    /// with respect to the raw similarity row.
    pub fn backward(&self, trace: &HeadTrace, dlogit: f64, grad: &mut HeadGrad) -> Vec<f64> {
        let width = self.input_dim();
        let mut dinput = vec![0.0; width];
        grad.b2 += dlogit;
        for h in 0..self.hidden {
            let z = trace.pre[h];
            if z <= 0.0 {
                continue;
            }
            grad.w2[h] += dlogit * z;
            let dz = dlogit * self.w2[h];
            grad.b1[h] += dz;
            let w = &self.w1[h * width..(h + 1) * width];
            let gw = &mut grad.w1[h * width..(h + 1) * width];
            for p in 0..width {
                gw[p] += dz * trace.input[p];
                dinput[p] += dz * w[p];
            }
        }
        match &trace.perm {
            None => dinput,
            Some(perm) => {
                let mut raw = vec![0.0; width];
                for (p, &src) in perm.iter().enumerate() {
                    raw[src] += dinput[p];
                }
                raw
            }
        }
    }
}

impl HeadGrad {
    pub fn add_scaled(&mut self, other: &HeadGrad, scale: f64) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += scale * b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += scale * b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += scale * b;
        }
        self.b2 += scale * other.b2;
    }

    pub fn is_finite(&self) -> bool {
        self.b2.is_finite()
            && self
                .w1
                .iter()
                .chain(&self.b1)
                .chain(&self.w2)
                .all(|v| v.is_finite())
    }
}
