//! Supervised and unsupervised hallucination detection over trajectory features.

mod cluster;
mod cv;
mod eval;
mod logistic;

pub use cluster::{clustering_accuracy, kmeans2, pca2, KMeansResult, Pca};
pub use cv::{cross_validate, stratified_folds, CvReport};
pub use eval::{auroc, eval_at_threshold, roc_points, tune_threshold, Confusion, EvalSummary, RocPoint};
pub use logistic::{fit_logistic, logistic_loss, LogisticModel, DEFAULT_L2};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::stats::layer_metric_name;
use crate::trajectory::{LayerRow, MetricsRow};

/// Named feature columns for a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub sample_ids: Vec<String>,
    pub rows: Matrix,
    /// 1 = hallucinated, 0 = factual, `None` = unlabelled.
    pub labels: Vec<Option<u8>>,
    pub splits: Vec<String>,
}

impl FeatureMatrix {
    /// Builds features from successful metric rows. With `layers`, the
    /// per-layer alignment profile is appended as extra columns.
    pub fn from_rows(rows: &[MetricsRow], names: &[&str], layers: Option<&[LayerRow]>) -> Result<Self> {
        let ok: Vec<&MetricsRow> = rows.iter().filter(|r| r.is_ok()).collect();
        let mut profiles: HashMap<&str, Vec<(usize, f64)>> = HashMap::new();
        if let Some(layers) = layers {
            for l in layers {
                profiles.entry(l.sample_id.as_str()).or_default().push((l.layer, l.alignment));
            }
        }
        let num_layers = ok.first().and_then(|r| profiles.get(r.sample_id.as_str())).map_or(0, Vec::len);
        let mut feature_names: Vec<String> = names.iter().map(|s| (*s).to_owned()).collect();
        feature_names.extend((1..=num_layers).map(layer_metric_name));

        let mut data = Vec::with_capacity(ok.len() * feature_names.len());
        for r in &ok {
            for &name in names {
                let v = r.scalar(name).ok_or_else(|| {
                    Error::data(Some(&r.sample_id), format!("unknown or missing feature `{name}`"))
                })?;
                data.push(v);
            }
            if layers.is_some() {
                let mut profile = profiles.get(r.sample_id.as_str()).cloned().unwrap_or_default();
                profile.sort_by_key(|&(l, _)| l);
                if profile.len() != num_layers || profile.iter().enumerate().any(|(i, &(l, _))| l != i + 1) {
                    return Err(Error::data(Some(&r.sample_id), "per-layer rows are incomplete"));
                }
                data.extend(profile.iter().map(|&(_, a)| a));
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(None, "features contain non-finite values"));
        }
        Ok(Self {
            rows: Matrix::from_vec(ok.len(), feature_names.len(), data)?,
            names: feature_names,
            sample_ids: ok.iter().map(|r| r.sample_id.clone()).collect(),
            labels: ok.iter().map(|r| r.label.as_target()).collect(),
            splits: ok.iter().map(|r| r.split.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row indices with a label, optionally restricted to one split role.
    pub fn labelled_indices(&self, split: Option<&str>) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i].is_some() && split.is_none_or(|s| self.splits[i] == s))
            .collect()
    }

    /// Rows and labels at `indices` (labels must be present).
    pub fn select(&self, indices: &[usize]) -> (Matrix, Vec<u8>) {
        let p = self.rows.cols();
        let mut data = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            data.extend_from_slice(self.rows.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i].unwrap_or(0)).collect();
        (Matrix::from_vec(indices.len(), p, data).expect("consistent shape"), labels)
    }
}

/// Per-feature z-scoring fitted on training rows. Constant features get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 {
            return Err(Error::InsufficientData("no rows to standardize".into()));
        }
        let mut mean = vec![0.0; p];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; p];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Dimension {
                context: "standardizer features",
                expected: self.mean.len(),
                found: x.cols(),
            });
        }
        let mut out = x.clone();
        let p = x.cols();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let j = k % p;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        Ok(out)
    }
}
