//! Group comparisons: Welch and pooled t-tests, Cohen's d, Bonferroni
//! correction, and the per-layer significance sweep.

mod report;
mod special;

pub use report::{reference_effect_check, render_markdown, ReferenceCheck};
pub use special::{regularized_incomplete_beta, student_t_sf};

use serde::{Deserialize, Serialize};

use crate::dataio::Label;
use crate::error::{Error, Result};
use crate::numerics::{mean, sample_std};
use crate::trajectory::{SampleMetrics, TrajectoryMetrics, SCALAR_METRICS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
}

impl GroupSummary {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "a group needs at least 2 values, got {}",
                xs.len()
            )));
        }
        Ok(Self { n: xs.len(), mean: mean(xs), std: sample_std(xs) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TTestMode {
    /// Unequal variances with Welch–Satterthwaite degrees of freedom.
    #[default]
    Welch,
    /// `t = (m_f − m_h) / (s_p √(2/n))` with the averaged-variance `s_p`; equal group sizes only.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub metric_name: String,
    pub t_stat: f64,
    pub dof: f64,
    pub p_value: f64,
    pub p_bonferroni: f64,
    pub cohens_d: f64,
    pub pooled_std: f64,
    pub group_factual: GroupSummary,
    pub group_halluc: GroupSummary,
}

/// `s_p = √((s_f² + s_h²) / 2)`.
pub fn pooled_std(f: &GroupSummary, h: &GroupSummary) -> f64 {
    ((f.std * f.std + h.std * h.std) / 2.0).sqrt()
}

/// Standardized mean difference `(m_f − m_h) / s_p`; returns `(d, s_p)`.
pub fn cohens_d(f: &GroupSummary, h: &GroupSummary) -> Result<(f64, f64)> {
    let sp = pooled_std(f, h);
    if sp == 0.0 {
        return Err(Error::DegenerateGroups);
    }
    Ok(((f.mean - h.mean) / sp, sp))
}

/// Like [`cohens_d`] but maps zero spread to 0 (equal means) or ±∞.
fn effect_size(f: &GroupSummary, h: &GroupSummary) -> (f64, f64) {
    cohens_d(f, h).unwrap_or_else(|_| (ratio_or_zero(f.mean - h.mean), 0.0))
}

fn ratio_or_zero(diff: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

pub fn welch_ttest(metric_name: &str, f: &[f64], h: &[f64], mode: TTestMode) -> Result<StatResult> {
    let gf = GroupSummary::from_samples(f)?;
    let gh = GroupSummary::from_samples(h)?;
    let diff = gf.mean - gh.mean;
    let (t_stat, dof) = match mode {
        TTestMode::Welch => {
            let vf = gf.std * gf.std / gf.n as f64;
            let vh = gh.std * gh.std / gh.n as f64;
            let se = (vf + vh).sqrt();
            if se == 0.0 {
                (ratio_or_zero(diff), (gf.n + gh.n - 2) as f64)
            } else {
                let dof = (vf + vh).powi(2) / (vf * vf / (gf.n - 1) as f64 + vh * vh / (gh.n - 1) as f64);
                (diff / se, dof)
            }
        }
        TTestMode::Pooled => {
            if gf.n != gh.n {
                return Err(Error::InsufficientData(format!(
                    "pooled mode needs equal group sizes, got {} and {}",
                    gf.n, gh.n
                )));
            }
            let se = pooled_std(&gf, &gh) * (2.0 / gf.n as f64).sqrt();
            let t = if se == 0.0 { ratio_or_zero(diff) } else { diff / se };
            (t, (2 * gf.n - 2) as f64)
        }
    };
    let p_value = student_t_sf(t_stat, dof);
    let (d, sp) = effect_size(&gf, &gh);
    Ok(StatResult {
        metric_name: metric_name.to_owned(),
        t_stat,
        dof,
        p_value,
        p_bonferroni: p_value,
        cohens_d: d,
        pooled_std: sp,
        group_factual: gf,
        group_halluc: gh,
    })
}

/// `min(1, m · pᵢ)` for each p-value.
pub fn bonferroni(p: &[f64], m: usize) -> Vec<f64> {
    p.iter().map(|&x| (x * m as f64).min(1.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub mode: TTestMode,
    pub num_layers: usize,
    /// Alignment at each layer, corrected over the number of layers.
    pub layers: Vec<StatResult>,
    /// Scalar metrics, corrected over the number of metrics.
    pub metrics: Vec<StatResult>,
}

impl StatReport {
    pub fn metric(&self, name: &str) -> Option<&StatResult> {
        self.metrics.iter().find(|r| r.metric_name == name)
    }
}

pub fn layer_metric_name(layer: usize) -> String {
    format!("alignment_layer_{layer}")
}

fn apply_bonferroni(results: &mut [StatResult]) {
    let p: Vec<f64> = results.iter().map(|r| r.p_value).collect();
    for (r, pb) in results.iter_mut().zip(bonferroni(&p, p.len())) {
        r.p_bonferroni = pb;
    }
}

/// Factual-versus-hallucinated tests for every layer's alignment and every
/// scalar metric. Samples that failed or carry no label are skipped.
pub fn layer_sweep(table: &[SampleMetrics], mode: TTestMode) -> Result<StatReport> {
    let mut factual: Vec<&TrajectoryMetrics> = Vec::new();
    let mut halluc: Vec<&TrajectoryMetrics> = Vec::new();
    for s in table {
        match (&s.metrics, s.label) {
            (Ok(m), Label::Factual) => factual.push(m),
            (Ok(m), Label::Hallucinated) => halluc.push(m),
            _ => {}
        }
    }
    labelled_sweep(&factual, &halluc, mode)
}

/// [`layer_sweep`] on pre-split groups.
pub fn labelled_sweep(
    factual: &[&TrajectoryMetrics],
    halluc: &[&TrajectoryMetrics],
    mode: TTestMode,
) -> Result<StatReport> {
    if factual.len() < 2 || halluc.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 factual and 2 hallucinated samples, got {} and {}",
            factual.len(),
            halluc.len()
        )));
    }
    let num_layers = factual[0].alignment_profile.len();
    if let Some(m) = factual.iter().chain(halluc).find(|m| m.alignment_profile.len() != num_layers) {
        return Err(Error::Dimension {
            context: "alignment profile length",
            expected: num_layers,
            found: m.alignment_profile.len(),
        });
    }
    let mut layers = (0..num_layers)
        .map(|l| {
            let f: Vec<f64> = factual.iter().map(|m| m.alignment_profile[l]).collect();
            let h: Vec<f64> = halluc.iter().map(|m| m.alignment_profile[l]).collect();
            welch_ttest(&layer_metric_name(l + 1), &f, &h, mode)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut metrics = SCALAR_METRICS
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let f: Vec<f64> = factual.iter().map(|m| m.scalars()[i]).collect();
            let h: Vec<f64> = halluc.iter().map(|m| m.scalars()[i]).collect();
            welch_ttest(name, &f, &h, mode)
        })
        .collect::<Result<Vec<_>>>()?;
    apply_bonferroni(&mut layers);
    apply_bonferroni(&mut metrics);
    Ok(StatReport { mode, num_layers, layers, metrics })
}

/// One-sample Kolmogorov–Smirnov statistic against Uniform(0, 1).
pub fn ks_uniform_statistic(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max)
}
