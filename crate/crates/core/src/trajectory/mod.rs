//! Layer-by-layer geometry of projected hidden states relative to the
//! projected truth embedding.

mod table;

pub use table::{
    metrics_rows, read_layer_rows, read_metrics_rows, write_layer_rows, write_metrics_rows, LayerRow,
    MetricsRow, STATUS_OK,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{ConvergenceFallback, Label, RunConfig, TraceBundle, TraceSample, MIN_LAYERS};
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, mean, population_std, sub};
use crate::projection::ProjectionPair;

/// Displacements shorter than this have no direction.
pub const MIN_DISPLACEMENT: f64 = 1e-12;
const UNIT_TOLERANCE: f64 = 1e-9;

/// Every scalar metric, in report and CSV order.
pub const SCALAR_METRICS: [&str; 11] = [
    "final_alignment",
    "mean_alignment",
    "max_alignment",
    "mean_velocity",
    "max_velocity",
    "mean_acceleration",
    "alignment_gain",
    "convergence_layer",
    "stability",
    "oscillation",
    "smoothness",
];

/// Default detector features.
pub const DEFAULT_FEATURES: [&str; 9] = [
    "final_alignment",
    "mean_alignment",
    "max_alignment",
    "mean_velocity",
    "mean_acceleration",
    "stability",
    "alignment_gain",
    "convergence_layer",
    "oscillation",
];

/// Unit-norm projected layer points and the projected truth vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedTrajectory {
    points: Vec<Vec<f64>>,
    truth: Vec<f64>,
}

impl ProjectedTrajectory {
    pub fn new(points: Vec<Vec<f64>>, truth: Vec<f64>) -> Result<Self> {
        if points.len() < MIN_LAYERS {
            return Err(Error::InsufficientData(format!(
                "trajectory needs at least {MIN_LAYERS} points, got {}",
                points.len()
            )));
        }
        for v in points.iter().chain(std::iter::once(&truth)) {
            if v.len() != truth.len() {
                return Err(Error::Dimension {
                    context: "trajectory point",
                    expected: truth.len(),
                    found: v.len(),
                });
            }
            if (l2_norm(v) - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::DegenerateVector("trajectory points must be unit-norm"));
            }
        }
        Ok(Self { points, truth })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn project_trajectory(pair: &ProjectionPair, sample: &TraceSample) -> Result<ProjectedTrajectory> {
    let points = sample.layer_vectors.iter().map(|h| pair.head_h.project(h)).collect::<Result<Vec<_>>>()?;
    let truth = pair.head_t.project(&sample.truth_embedding)?;
    ProjectedTrajectory::new(points, truth)
}

pub fn alignment_profile(t: &ProjectedTrajectory) -> Vec<f64> {
    t.points.iter().map(|p| dot(p, &t.truth).clamp(-1.0, 1.0)).collect()
}

fn displacements(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points.windows(2).map(|w| sub(&w[1], &w[0])).collect()
}

pub fn velocity_profile(points: &[Vec<f64>]) -> Vec<f64> {
    displacements(points).iter().map(|d| l2_norm(d).min(2.0)).collect()
}

/// Cosine between consecutive displacements; 0 when either is shorter than
/// [`MIN_DISPLACEMENT`].
pub fn acceleration_profile(points: &[Vec<f64>]) -> Vec<f64> {
    displacements(points)
        .windows(2)
        .map(|w| {
            let (sa, sb) = (dot(&w[0], &w[0]), dot(&w[1], &w[1]));
            if sa.sqrt() < MIN_DISPLACEMENT || sb.sqrt() < MIN_DISPLACEMENT {
                0.0
            } else {
                (dot(&w[0], &w[1]) / (sa * sb).sqrt()).clamp(-1.0, 1.0)
            }
        })
        .collect()
}

/// 1-based index of the first layer reaching `fraction` of the final
/// alignment. When the final alignment is not positive, `fallback` decides.
pub fn convergence_layer(profile: &[f64], fraction: f64, fallback: ConvergenceFallback) -> usize {
    let last = profile.len();
    let final_a = profile[last - 1];
    if final_a <= 0.0 && fallback == ConvergenceFallback::Argmax {
        let mut best = 0;
        for (i, &a) in profile.iter().enumerate() {
            if a > profile[best] {
                best = i;
            }
        }
        return best + 1;
    }
    let target = fraction * final_a;
    profile.iter().position(|&a| a >= target).map_or(last, |i| i + 1)
}

/// Sign changes in the sequence of layer-to-layer alignment changes.
/// Zero changes carry no sign and are skipped.
pub fn oscillation(profile: &[f64]) -> usize {
    let mut count = 0;
    let mut prev = 0.0f64;
    for w in profile.windows(2) {
        let delta = w[1] - w[0];
        if delta == 0.0 {
            continue;
        }
        if prev != 0.0 && prev.signum() != delta.signum() {
            count += 1;
        }
        prev = delta;
    }
    count
}

/// Population std of alignment over the last ⌈L/3⌉ layers.
pub fn stability(profile: &[f64]) -> f64 {
    let k = profile.len().div_ceil(3);
    population_std(&profile[profile.len() - k..])
}

/// `1 − mean ‖d⁽ˡ⁺¹⁾ − d⁽ˡ⁾‖ / 4`, clamped to [0, 1].
pub fn smoothness(points: &[Vec<f64>]) -> f64 {
    let d = displacements(points);
    let second: Vec<f64> = d.windows(2).map(|w| l2_norm(&sub(&w[1], &w[0]))).collect();
    if second.is_empty() {
        return 1.0;
    }
    (1.0 - mean(&second) / 4.0).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub alignment_profile: Vec<f64>,
    pub final_alignment: f64,
    pub mean_alignment: f64,
    pub max_alignment: f64,
    pub velocity_profile: Vec<f64>,
    pub mean_velocity: f64,
    pub max_velocity: f64,
    pub acceleration_profile: Vec<f64>,
    pub mean_acceleration: f64,
    pub alignment_gain: f64,
    pub convergence_layer: usize,
    pub stability: f64,
    pub oscillation: usize,
    pub smoothness: f64,
}

impl TrajectoryMetrics {
    pub fn compute(t: &ProjectedTrajectory, fraction: f64, fallback: ConvergenceFallback) -> Self {
        let profile = alignment_profile(t);
        let velocity = velocity_profile(&t.points);
        let acceleration = acceleration_profile(&t.points);
        let max = |xs: &[f64]| xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            final_alignment: profile[profile.len() - 1],
            mean_alignment: mean(&profile),
            max_alignment: max(&profile),
            mean_velocity: mean(&velocity),
            max_velocity: max(&velocity),
            mean_acceleration: mean(&acceleration),
            alignment_gain: profile[profile.len() - 1] - profile[0],
            convergence_layer: convergence_layer(&profile, fraction, fallback),
            stability: stability(&profile),
            oscillation: oscillation(&profile),
            smoothness: smoothness(&t.points),
            alignment_profile: profile,
            velocity_profile: velocity,
            acceleration_profile: acceleration,
        }
    }

    /// Scalar metrics in [`SCALAR_METRICS`] order.
    pub fn scalars(&self) -> [f64; 11] {
        [
            self.final_alignment,
            self.mean_alignment,
            self.max_alignment,
            self.mean_velocity,
            self.max_velocity,
            self.mean_acceleration,
            self.alignment_gain,
            self.convergence_layer as f64,
            self.stability,
            self.oscillation as f64,
            self.smoothness,
        ]
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        SCALAR_METRICS.iter().position(|&m| m == name).map(|i| self.scalars()[i])
    }
}

/// Metrics for one sample, or the reason they could not be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetrics {
    pub sample_id: String,
    pub label: Label,
    pub metrics: std::result::Result<TrajectoryMetrics, String>,
}

/// Per-sample metrics in bundle order. Failures are recorded per sample.
pub fn metrics_table(
    pair: &ProjectionPair,
    bundle: &TraceBundle,
    config: &RunConfig,
) -> Result<Vec<SampleMetrics>> {
    pair.check_bundle(bundle)?;
    Ok(bundle
        .samples
        .par_iter()
        .map(|s| SampleMetrics {
            sample_id: s.id.clone(),
            label: s.label,
            metrics: project_trajectory(pair, s)
                .map(|t| {
                    TrajectoryMetrics::compute(&t, config.convergence_fraction, config.convergence_fallback)
                })
                .map_err(|e| e.to_string()),
        })
        .collect())
}
