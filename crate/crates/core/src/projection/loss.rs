//! Margin contrastive objective over (hidden, truth) pairs.
//!
//! Positives (factual) cost `(1 - s)²`, negatives (hallucinated) cost
//! `max(0, s + δ)²`, and a batch loss is `½ [mean_pos + mean_neg]`. A class
//! absent from the batch contributes 0 while the ½ factor is kept.

use super::head::{ForwardCache, HeadGradients};
use super::ProjectionPair;
use crate::error::Result;
use crate::numerics::dot;

/// One training pair: a pooled hidden vector, its truth embedding, and whether it is factual.
#[derive(Debug, Clone, Copy)]
pub struct TrainingPair<'a> {
    pub hidden: &'a [f64],
    pub truth: &'a [f64],
    pub positive: bool,
}

pub fn contrastive_loss(s: f64, positive: bool, margin: f64) -> f64 {
    if positive {
        (1.0 - s) * (1.0 - s)
    } else {
        let h = (s + margin).max(0.0);
        h * h
    }
}

/// `d loss / d s`.
pub fn contrastive_loss_grad(s: f64, positive: bool, margin: f64) -> f64 {
    if positive {
        -2.0 * (1.0 - s)
    } else {
        2.0 * (s + margin).max(0.0)
    }
}

/// Per-item weights `1/(2|P|)` and `1/(2|N|)` (0 for an empty class).
fn class_weights(batch: &[TrainingPair<'_>]) -> (f64, f64) {
    let pos = batch.iter().filter(|p| p.positive).count();
    let neg = batch.len() - pos;
    let w = |n: usize| if n == 0 { 0.0 } else { 0.5 / n as f64 };
    (w(pos), w(neg))
}

/// Gradients for both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients {
    pub head_h: HeadGradients,
    pub head_t: HeadGradients,
}

impl PairGradients {
    pub fn zeros_for(pair: &ProjectionPair) -> Self {
        Self { head_h: pair.head_h.zeros_like(), head_t: pair.head_t.zeros_like() }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.head_h.params().into_iter().chain(self.head_t.params())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        let [a, b, c, d, e, f] = self.head_h.params_mut();
        let [g, h, i, j, k, l] = self.head_t.params_mut();
        [a, b, c, d, e, f, g, h, i, j, k, l].into_iter()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().flat_map(|t| t.iter()).fold(0.0, |acc, g| acc + g * g).sqrt()
    }
}

/// Batch loss from precomputed `(similarity, positive)` pairs.
pub fn loss_from_similarities(items: &[(f64, bool)], margin: f64) -> f64 {
    let pos = items.iter().filter(|(_, p)| *p).count();
    let neg = items.len() - pos;
    let mean = |positive: bool, n: usize| {
        if n == 0 {
            return 0.0;
        }
        items
            .iter()
            .filter(|(_, p)| *p == positive)
            .map(|&(s, p)| contrastive_loss(s, p, margin))
            .sum::<f64>()
            / n as f64
    };
    0.5 * (mean(true, pos) + mean(false, neg))
}

/// Cosine similarity of a pair after projection (evaluation mode).
pub fn similarity(pair: &ProjectionPair, hidden: &[f64], truth: &[f64]) -> Result<f64> {
    Ok(dot(&pair.head_h.project(hidden)?, &pair.head_t.project(truth)?).clamp(-1.0, 1.0))
}

/// Evaluation-mode batch loss (no dropout).
pub fn batch_loss(pair: &ProjectionPair, batch: &[TrainingPair<'_>], margin: f64) -> Result<f64> {
    let sims = batch
        .iter()
        .map(|item| {
            let s = dot(&pair.head_h.project(item.hidden)?, &pair.head_t.project(item.truth)?);
            Ok((s, item.positive))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(loss_from_similarities(&sims, margin))
}

/// Exact gradients of [`batch_loss`] with respect to every parameter of both heads.
pub fn backward(pair: &ProjectionPair, batch: &[TrainingPair<'_>], margin: f64) -> Result<PairGradients> {
    loss_and_gradients(pair, batch, margin, None).map(|(_, g)| g)
}

/// Dropout masks for one item: (hidden head, truth head).
pub type ItemMasks = (Option<Vec<f64>>, Option<Vec<f64>>);

/// Batch loss and gradients; `masks[i]` applies to `batch[i]` when given.
pub fn loss_and_gradients(
    pair: &ProjectionPair,
    batch: &[TrainingPair<'_>],
    margin: f64,
    masks: Option<&[ItemMasks]>,
) -> Result<(f64, PairGradients)> {
    let (wp, wn) = class_weights(batch);
    let mut grads = PairGradients::zeros_for(pair);
    let mut loss = 0.0;
    for (i, item) in batch.iter().enumerate() {
        let (mask_h, mask_t) = match masks {
            Some(m) => (m[i].0.as_deref(), m[i].1.as_deref()),
            None => (None, None),
        };
        let (out_h, cache_h): (Vec<f64>, ForwardCache) = pair.head_h.forward(item.hidden, mask_h)?;
        let (out_t, cache_t) = pair.head_t.forward(item.truth, mask_t)?;
        let s = dot(&out_h, &out_t);
        let w = if item.positive { wp } else { wn };
        loss += w * contrastive_loss(s, item.positive, margin);

        let ds = w * contrastive_loss_grad(s, item.positive, margin);
        if ds == 0.0 {
            continue;
        }
        let g_h: Vec<f64> = out_t.iter().map(|x| ds * x).collect();
        let g_t: Vec<f64> = out_h.iter().map(|x| ds * x).collect();
        pair.head_h.backward(&cache_h, &g_h, &mut grads.head_h);
        pair.head_t.backward(&cache_t, &g_t, &mut grads.head_t);
    }
    Ok((loss, grads))
}
