use lsd_core::dataio::RunConfig;
use lsd_core::numerics::{l2_norm, Rng};
use lsd_core::projection::{
    backward, batch_loss, clip_global_norm, AdamW, CosineSchedule, PairGradients, ProjectionPair,
    TrainingPair,
};
use proptest::prelude::*;

const MARGIN: f64 = 0.2;

fn small_pair(seed: u64) -> ProjectionPair {
    let config = RunConfig { shared_dim: 4, hidden_mlp_dim: 7, seed, ..RunConfig::default() };
    let mut pair = ProjectionPair::init(8, 6, &config);
    // Non-trivial LayerNorm and bias parameters so every tensor gets exercised.
    let mut rng = Rng::new(seed ^ 0xabcd);
    for head in [&mut pair.head_h, &mut pair.head_t] {
        for v in head.b1.iter_mut().chain(head.b2.iter_mut()).chain(head.ln_bias.iter_mut()) {
            *v = 0.1 * rng.normal();
        }
        for g in head.ln_gain.iter_mut() {
            *g = 1.0 + 0.2 * rng.normal();
        }
    }
    pair
}

struct Instance {
    hidden: Vec<Vec<f64>>,
    truth: Vec<Vec<f64>>,
    labels: Vec<bool>,
}

impl Instance {
    fn random(seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        Self {
            hidden: (0..3).map(|_| rng.normal_vec(8)).collect(),
            truth: (0..3).map(|_| rng.unit_vec(6)).collect(),
            labels: vec![true, false, true],
        }
    }

    fn batch(&self) -> Vec<TrainingPair<'_>> {
        (0..self.labels.len())
            .map(|i| TrainingPair {
                hidden: &self.hidden[i],
                truth: &self.truth[i],
                positive: self.labels[i],
            })
            .collect()
    }
}

fn finite_difference(pair: &ProjectionPair, batch: &[TrainingPair<'_>], eps: f64) -> Vec<Vec<f64>> {
    let mut work = pair.clone();
    let shapes: Vec<usize> = pair.tensors().map(<[f64]>::len).collect();
    let mut out = Vec::new();
    for (t, &len) in shapes.iter().enumerate() {
        let mut grads = Vec::with_capacity(len);
        for i in 0..len {
            let original = work.tensors().nth(t).unwrap()[i];
            work.tensors_mut().nth(t).unwrap()[i] = original + eps;
            let plus = batch_loss(&work, batch, MARGIN).unwrap();
            work.tensors_mut().nth(t).unwrap()[i] = original - eps;
            let minus = batch_loss(&work, batch, MARGIN).unwrap();
            work.tensors_mut().nth(t).unwrap()[i] = original;
            grads.push((plus - minus) / (2.0 * eps));
        }
        out.push(grads);
    }
    out
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..5 {
        let pair = small_pair(seed);
        let inst = Instance::random(100 + seed);
        let batch = inst.batch();
        let analytic = backward(&pair, &batch, MARGIN).unwrap();
        let numeric = finite_difference(&pair, &batch, 1e-5);
        let mut worst = 0.0f64;
        for (a_t, n_t) in analytic.tensors().zip(&numeric) {
            for (&a, &n) in a_t.iter().zip(n_t) {
                let diff = (a - n).abs();
                if diff > 1e-7 {
                    worst = worst.max(diff / a.abs().max(n.abs()));
                }
            }
        }
        assert!(worst < 1e-4, "seed {seed}: max relative error {worst:e}");
    }
}

#[test]
fn zero_loss_configuration_is_stationary() {
    let mut pair = small_pair(9);
    for head in [&mut pair.head_h, &mut pair.head_t] {
        head.ln_gain.iter_mut().for_each(|g| *g = 0.0);
        head.ln_bias = vec![1.0, 0.0, 0.0, 0.0];
    }
    let inst = Instance::random(3);
    let positives: Vec<TrainingPair<'_>> =
        inst.batch().into_iter().map(|p| TrainingPair { positive: true, ..p }).collect();
    assert_eq!(batch_loss(&pair, &positives, MARGIN).unwrap(), 0.0);
    let g = backward(&pair, &positives, MARGIN).unwrap();
    assert_eq!(g.global_norm(), 0.0);

    pair.head_t.ln_bias = vec![-1.0, 0.0, 0.0, 0.0];
    let negatives: Vec<TrainingPair<'_>> =
        inst.batch().into_iter().map(|p| TrainingPair { positive: false, ..p }).collect();
    assert_eq!(batch_loss(&pair, &negatives, MARGIN).unwrap(), 0.0);
    assert_eq!(backward(&pair, &negatives, MARGIN).unwrap().global_norm(), 0.0);
}

#[test]
fn one_adamw_step_decreases_loss() {
    let mut pair = small_pair(11);
    let inst = Instance::random(12);
    let batch = inst.batch();
    let before = batch_loss(&pair, &batch, MARGIN).unwrap();
    let mut grads: PairGradients = backward(&pair, &batch, MARGIN).unwrap();
    clip_global_norm(&mut grads, 0.0);
    let schedule = CosineSchedule { lr0: 1e-3, lr_floor: 1e-3, total_steps: 1 };
    let mut opt = AdamW::new(&pair, schedule, 0.0);
    opt.step(&mut pair, &grads);
    let after = batch_loss(&pair, &batch, MARGIN).unwrap();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn clipping_caps_global_norm() {
    let pair = small_pair(13);
    let inst = Instance::random(14);
    let mut grads = backward(&pair, &inst.batch(), MARGIN).unwrap();
    let pre = clip_global_norm(&mut grads, 1e-3);
    assert!(pre > 1e-3);
    assert!(grads.global_norm() <= 1e-3);
}

proptest! {
    #[test]
    fn projections_are_unit_norm(seed in 0u64..1000, scale in 0.1f64..50.0) {
        let pair = small_pair(seed);
        let mut rng = Rng::new(seed + 1);
        let x: Vec<f64> = rng.normal_vec(8).into_iter().map(|v| v * scale).collect();
        let out = pair.head_h.project(&x).unwrap();
        prop_assert!((l2_norm(&out) - 1.0).abs() < 1e-12);
    }
}
