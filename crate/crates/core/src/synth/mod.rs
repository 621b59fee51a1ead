//! Synthetic trace bundles with factual convergence and hallucinated drift,
//! plus templated factual/hallucinated text pairs.

mod text;

pub use text::{gen_text_pairs, write_extractor_input, write_text_pairs, Domain, TextPairTemplate};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Label, TraceBundle, TraceSample};
use crate::error::{Error, Result};
use crate::numerics::{dot, normalize, Matrix, Rng};

const MAP_STREAM: u64 = 0;
const LABEL_STREAM: u64 = 1;
const SAMPLE_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub truth_dim: usize,
    /// Fraction of the remaining arc toward the target covered by the last layer.
    pub convergence_rate: f64,
    /// Weight of the truth direction subtracted from a hallucinated target.
    pub drift_rate: f64,
    /// Norm of the isotropic noise relative to the unit direction.
    pub noise_std: f64,
    /// Arc fraction toward the target already present at the first factual layer.
    pub factual_head_start: f64,
    /// Amplitude of the layer-wise wobble on hallucinated paths.
    pub oscillation: f64,
    pub factual_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 500,
            n_layers: 13,
            hidden_dim: 64,
            truth_dim: 32,
            convergence_rate: 0.9,
            drift_rate: 0.4,
            noise_std: 0.3,
            factual_head_start: 0.3,
            oscillation: 0.15,
            factual_fraction: 0.48,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be positive"));
        }
        if self.n_layers < crate::dataio::MIN_LAYERS {
            return Err(Error::config("n_layers", "must be at least 3"));
        }
        if self.hidden_dim < 4 || self.truth_dim < 4 {
            return Err(Error::config("hidden_dim", "dimensions must be at least 4"));
        }
        if !(self.convergence_rate > 0.0 && self.convergence_rate <= 1.0) {
            return Err(Error::config("convergence_rate", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.factual_head_start) {
            return Err(Error::config("factual_head_start", "must lie in [0, 1)"));
        }
        if !(self.factual_fraction > 0.0 && self.factual_fraction < 1.0) {
            return Err(Error::config("factual_fraction", "must lie in (0, 1)"));
        }
        for (field, v) in [
            ("drift_rate", self.drift_rate),
            ("noise_std", self.noise_std),
            ("oscillation", self.oscillation),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Spherical interpolation between unit vectors `a` and `b`.
fn slerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    let c = dot(a, b).clamp(-1.0, 1.0);
    let omega = c.acos();
    if omega < 1e-9 {
        return b.to_vec();
    }
    let s = omega.sin();
    let wa = ((1.0 - t) * omega).sin() / s;
    let wb = (t * omega).sin() / s;
    a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect()
}

fn to_f32(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| f64::from(x as f32)).collect()
}

/// The fixed map from truth space to hidden space.
pub fn truth_map(spec: &SynthSpec) -> Matrix {
    let mut rng = Rng::new(spec.seed).fork(MAP_STREAM);
    let data = rng.normal_vec(spec.hidden_dim * spec.truth_dim);
    Matrix::from_vec(spec.hidden_dim, spec.truth_dim, data).expect("shape matches data")
}

/// Unit truth direction in hidden space for a truth embedding.
pub fn raw_truth_direction(map: &Matrix, truth: &[f64]) -> Result<Vec<f64>> {
    normalize(&map.matvec(truth)?)
}

fn layer_vector(direction: &[f64], noise_std: f64, scale: f64, rng: &mut Rng) -> Vec<f64> {
    let d = direction.len() as f64;
    direction.iter().map(|x| scale * (x + noise_std * rng.normal() / d.sqrt())).collect()
}

fn sample(spec: &SynthSpec, map: &Matrix, index: usize, label: Label) -> Result<TraceSample> {
    let mut rng = Rng::new(spec.seed).fork(SAMPLE_STREAM_BASE + index as u64);
    let truth = to_f32(rng.unit_vec(spec.truth_dim));
    let target_truth = raw_truth_direction(map, &truth)?;
    let scale = (spec.hidden_dim as f64).sqrt();
    let last = (spec.n_layers - 1) as f64;
    let start = rng.unit_vec(spec.hidden_dim);

    let directions: Vec<Vec<f64>> = match label {
        Label::Hallucinated => {
            let r = rng.unit_vec(spec.hidden_dim);
            let target = normalize(
                &r.iter().zip(&target_truth).map(|(a, g)| a - spec.drift_rate * g).collect::<Vec<_>>(),
            )?;
            let wobble = rng.unit_vec(spec.hidden_dim);
            let phase = rng.uniform() * std::f64::consts::TAU;
            (0..spec.n_layers)
                .map(|l| {
                    let t = l as f64 / last;
                    let base = slerp(&start, &target, spec.convergence_rate * t);
                    let w = spec.oscillation * (phase + std::f64::consts::PI * l as f64).sin();
                    normalize(&base.iter().zip(&wobble).map(|(b, u)| b + w * u).collect::<Vec<_>>())
                })
                .collect::<Result<_>>()?
        }
        _ => {
            let head = spec.factual_head_start;
            (0..spec.n_layers)
                .map(|l| {
                    let t = l as f64 / last;
                    Ok(slerp(&start, &target_truth, head + (1.0 - head) * spec.convergence_rate * t))
                })
                .collect::<Result<_>>()?
        }
    };
    let layer_vectors =
        directions.iter().map(|d| to_f32(layer_vector(d, spec.noise_std, scale, &mut rng))).collect();
    let kind = if label == Label::Factual { "factual" } else { "hallucinated" };
    Ok(TraceSample {
        id: format!("syn-{index:05}"),
        text: format!("synthetic {kind} trajectory {index}"),
        label,
        layer_vectors,
        truth_embedding: truth,
        token_count: spec.n_layers,
    })
}

/// Labels in sample order: `round(n · factual_fraction)` factual, shuffled.
fn labels(spec: &SynthSpec) -> Vec<Label> {
    let n_factual = ((spec.n_samples as f64) * spec.factual_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..spec.n_samples)
        .map(|i| if i < n_factual { Label::Factual } else { Label::Hallucinated })
        .collect();
    Rng::new(spec.seed).fork(LABEL_STREAM).shuffle(&mut labels);
    labels
}

pub fn gen_trajectories(spec: &SynthSpec) -> Result<TraceBundle> {
    spec.validate()?;
    let map = truth_map(spec);
    let samples = labels(spec)
        .into_par_iter()
        .enumerate()
        .map(|(i, label)| sample(spec, &map, i, label))
        .collect::<Result<Vec<_>>>()?;
    let mut bundle =
        TraceBundle::new("synthetic-geometry", "synthetic-truth", spec.hidden_dim, spec.n_layers);
    bundle.samples = samples;
    bundle.validate()?;
    Ok(bundle)
}
