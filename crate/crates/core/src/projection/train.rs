use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::head::dropout_mask;
use super::loss::{batch_loss, loss_and_gradients, similarity, ItemMasks, TrainingPair};
use super::optim::{clip_global_norm, AdamW, CosineSchedule};
use super::ProjectionPair;
use crate::dataio::{paired_factual_id, Label, LayerPolicy, RunConfig, TraceBundle};
use crate::error::{Error, Result};
use crate::numerics::Rng;

const SPLIT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;

/// Sample ids assigned to training and validation, each in bundle order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

impl Split {
    /// `"train"`, `"validation"`, or `"none"` for a sample id.
    pub fn role(&self, id: &str) -> &'static str {
        if self.train.iter().any(|t| t == id) {
            "train"
        } else if self.validation.iter().any(|v| v == id) {
            "validation"
        } else {
            "none"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub validation_balanced_accuracy: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub pair: ProjectionPair,
    pub history: Vec<EpochRecord>,
    pub split: Split,
}

/// Per-class shuffled split of labelled samples; unknown labels are left out.
/// Each class with at least two samples keeps at least one on each side.
pub fn stratified_split(bundle: &TraceBundle, train_fraction: f64, seed: u64) -> Split {
    let mut rng = Rng::new(seed).fork(SPLIT_STREAM);
    let mut role = vec![None; bundle.samples.len()];
    for label in [Label::Factual, Label::Hallucinated] {
        let mut idx: Vec<usize> =
            (0..bundle.samples.len()).filter(|&i| bundle.samples[i].label == label).collect();
        rng.shuffle(&mut idx);
        let n = idx.len();
        let mut n_train = (n as f64 * train_fraction).round() as usize;
        if n >= 2 {
            n_train = n_train.clamp(1, n - 1);
        } else {
            n_train = n;
        }
        for (k, &i) in idx.iter().enumerate() {
            role[i] = Some(k < n_train);
        }
    }
    let mut split = Split::default();
    for (sample, r) in bundle.samples.iter().zip(role) {
        match r {
            Some(true) => split.train.push(sample.id.clone()),
            Some(false) => split.validation.push(sample.id.clone()),
            None => {}
        }
    }
    split
}

/// Training pairs for the given sample ids under the configured layer policy.
/// With `paired_truth`, a hallucinated `<key>-h` uses the truth embedding of
/// `<key>-f` when that sample exists.
pub fn training_pairs<'a>(
    bundle: &'a TraceBundle,
    ids: &[String],
    config: &RunConfig,
) -> Result<Vec<TrainingPair<'a>>> {
    let by_id: HashMap<&str, usize> =
        bundle.samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut pairs = Vec::new();
    for id in ids {
        let &i = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::data(Some(id), "sample listed in split is not in the bundle"))?;
        let sample = &bundle.samples[i];
        let positive = match sample.label {
            Label::Factual => true,
            Label::Hallucinated => false,
            Label::Unknown => continue,
        };
        let mut truth = sample.truth_embedding.as_slice();
        if config.paired_truth && !positive {
            if let Some(&j) = paired_factual_id(&sample.id).and_then(|f| by_id.get(f.as_str())) {
                truth = &bundle.samples[j].truth_embedding;
            }
        }
        match config.layer_policy {
            LayerPolicy::FinalLayer => {
                pairs.push(TrainingPair { hidden: sample.final_layer(), truth, positive })
            }
            LayerPolicy::AllLayers => {
                pairs.extend(sample.layer_vectors.iter().map(|h| TrainingPair { hidden: h, truth, positive }))
            }
        }
    }
    Ok(pairs)
}

/// Orders items so each class is spread evenly: positives and negatives are
/// shuffled separately, then merged by fractional position within their class.
fn interleaved_order(items: &[TrainingPair<'_>], rng: &mut Rng) -> Vec<usize> {
    let mut pos: Vec<usize> = (0..items.len()).filter(|&i| items[i].positive).collect();
    let mut neg: Vec<usize> = (0..items.len()).filter(|&i| !items[i].positive).collect();
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    let keyed = |class: &[usize]| {
        let n = class.len() as f64;
        class.iter().enumerate().map(|(k, &i)| ((k as f64 + 0.5) / n, i)).collect::<Vec<_>>()
    };
    let mut all = keyed(&pos);
    all.extend(keyed(&neg));
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    all.into_iter().map(|(_, i)| i).collect()
}

/// Mean of per-class recall, predicting factual when similarity exceeds the
/// midpoint between the positive target 1 and the negative bound `-margin`.
fn balanced_accuracy(pair: &ProjectionPair, items: &[TrainingPair<'_>], margin: f64) -> Result<Option<f64>> {
    let threshold = (1.0 - margin) / 2.0;
    let mut hits = [0usize; 2];
    let mut counts = [0usize; 2];
    for item in items {
        let s = similarity(pair, item.hidden, item.truth)?;
        let class = usize::from(item.positive);
        counts[class] += 1;
        if (s > threshold) == item.positive {
            hits[class] += 1;
        }
    }
    let recalls: Vec<f64> =
        (0..2).filter(|&c| counts[c] > 0).map(|c| hits[c] as f64 / counts[c] as f64).collect();
    if recalls.is_empty() {
        return Ok(None);
    }
    Ok(Some(recalls.iter().sum::<f64>() / recalls.len() as f64))
}

/// Trains `pair` in place on the split's training ids and returns the
/// per-epoch history.
pub fn train(pair: &mut ProjectionPair, bundle: &TraceBundle, split: &Split) -> Result<Vec<EpochRecord>> {
    let config = pair.config.clone();
    config.validate()?;
    pair.check_bundle(bundle)?;
    let train_items = training_pairs(bundle, &split.train, &config)?;
    let val_items = training_pairs(bundle, &split.validation, &config)?;
    let n_pos = train_items.iter().filter(|p| p.positive).count();
    if n_pos == 0 || n_pos == train_items.len() {
        return Err(Error::Training(
            "training split needs at least one factual and one hallucinated sample".into(),
        ));
    }

    let steps_per_epoch = train_items.len().div_ceil(config.batch_size);
    let schedule = CosineSchedule {
        lr0: config.learning_rate,
        lr_floor: config.lr_floor,
        total_steps: (steps_per_epoch * config.epochs) as u64,
    };
    let mut opt = AdamW::new(pair, schedule, config.weight_decay);
    let mut rng = Rng::new(config.seed).fork(SHUFFLE_STREAM);
    let hidden_width = config.hidden_mlp_dim;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let order = interleaved_order(&train_items, &mut rng);
        let mut losses = Vec::with_capacity(steps_per_epoch);
        let mut lr = opt.next_lr();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainingPair<'_>> = chunk.iter().map(|&i| train_items[i]).collect();
            let masks: Vec<ItemMasks> = batch
                .iter()
                .map(|_| {
                    let h = dropout_mask(&mut rng, hidden_width, config.dropout);
                    let t = dropout_mask(&mut rng, hidden_width, config.dropout);
                    (h, t)
                })
                .collect();
            let (loss, mut grads) = loss_and_gradients(pair, &batch, config.margin, Some(&masks))?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss in epoch {epoch}, step {}",
                    opt.step_count() + 1
                )));
            }
            clip_global_norm(&mut grads, config.grad_clip_norm);
            lr = opt.step(pair, &grads);
            losses.push(loss);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let (validation_loss, validation_balanced_accuracy) = if val_items.is_empty() {
            (None, None)
        } else {
            (
                Some(batch_loss(pair, &val_items, config.margin)?),
                balanced_accuracy(pair, &val_items, config.margin)?,
            )
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
            validation_balanced_accuracy,
            learning_rate: lr,
        });
    }
    Ok(history)
}

/// Initializes a pair for `bundle`, splits it, and trains.
pub fn fit(bundle: &TraceBundle, config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let truth_dim = bundle.truth_dim().ok_or_else(|| Error::Training("bundle has no samples".into()))?;
    let split = stratified_split(bundle, config.train_fraction, config.seed);
    let mut pair = ProjectionPair::init(bundle.hidden_dim, truth_dim, config);
    let history = train(&mut pair, bundle, &split)?;
    Ok(TrainOutcome { pair, history, split })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::TraceSample;

    fn toy_bundle(n_per_class: usize, seed: u64) -> TraceBundle {
        let mut rng = Rng::new(seed);
        let mut b = TraceBundle::new("toy", "toy", 6, 3);
        for i in 0..n_per_class * 2 {
            let factual = i % 2 == 0;
            let truth = rng.unit_vec(4);
            let mut hidden: Vec<f64> = truth.iter().chain(&[0.0, 0.0]).copied().collect();
            if !factual {
                hidden.iter_mut().for_each(|x| *x = -*x);
            }
            hidden.iter_mut().for_each(|x| *x += 0.05 * rng.normal());
            b.samples.push(TraceSample {
                id: format!("s{i}"),
                text: String::new(),
                label: if factual { Label::Factual } else { Label::Hallucinated },
                layer_vectors: vec![rng.normal_vec(6), rng.normal_vec(6), hidden],
                truth_embedding: truth,
                token_count: 1,
            });
        }
        b
    }

    fn small_config() -> RunConfig {
        RunConfig {
            shared_dim: 4,
            hidden_mlp_dim: 8,
            epochs: 3,
            learning_rate: 1e-2,
            lr_floor: 1e-4,
            ..RunConfig::default()
        }
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let b = toy_bundle(10, 1);
        let s = stratified_split(&b, 0.8, 7);
        assert_eq!(s.train.len(), 16);
        assert_eq!(s.validation.len(), 4);
        assert!(s.train.iter().all(|id| !s.validation.contains(id)));
        assert_eq!(s, stratified_split(&b, 0.8, 7));
    }

    #[test]
    fn single_class_is_a_training_error() {
        let mut b = toy_bundle(5, 2);
        b.samples.retain(|s| s.label == Label::Factual);
        assert!(matches!(fit(&b, &small_config()), Err(Error::Training(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let b = toy_bundle(8, 3);
        let a = fit(&b, &small_config()).unwrap();
        let c = fit(&b, &small_config()).unwrap();
        assert_eq!(a.history, c.history);
        assert_eq!(a.pair, c.pair);
    }

    #[test]
    fn final_learning_rate_is_the_floor() {
        let b = toy_bundle(8, 4);
        let out = fit(&b, &small_config()).unwrap();
        assert!((out.history.last().unwrap().learning_rate - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn interleave_spreads_classes() {
        let t = [0.0];
        let items: Vec<TrainingPair<'_>> =
            (0..8).map(|i| TrainingPair { hidden: &t, truth: &t, positive: i < 4 }).collect();
        let order = interleaved_order(&items, &mut Rng::new(0));
        for w in order.chunks(2) {
            assert_ne!(items[w[0]].positive, items[w[1]].positive);
        }
    }

    #[test]
    fn paired_truth_uses_counterpart() {
        let mut b = toy_bundle(1, 5);
        b.samples[0].id = "k-f".into();
        b.samples[1].id = "k-h".into();
        let config = RunConfig { paired_truth: true, ..small_config() };
        let ids = vec!["k-h".to_owned()];
        let pairs = training_pairs(&b, &ids, &config).unwrap();
        assert_eq!(pairs[0].truth, b.samples[0].truth_embedding.as_slice());
        let all = RunConfig { layer_policy: LayerPolicy::AllLayers, ..small_config() };
        assert_eq!(training_pairs(&b, &ids, &all).unwrap().len(), 3);
    }
}
