//! Trace bundles on disk and run configuration.
//!
//! A bundle is a directory holding `manifest.json` plus one raw little-endian
//! binary32 file per sample under `tensors/`. Each tensor file stores the
//! pooled layer vectors (layer-major, `num_layers × hidden_dim`) immediately
//! followed by the truth embedding.

mod bundle;
mod config;

pub(crate) use bundle::{decode_f32, encode_f32, replace_dir_with_marker, temp_sibling};
pub use bundle::{
    read_bundle, write_bundle, BundleManifest, SampleEntry, FORMAT_VERSION, MANIFEST_FILE, TENSOR_DIR,
};
pub use config::{load_config, ConfigOverrides, ConvergenceFallback, LayerPolicy, RunConfig};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::l2_norm;

/// Tolerance on the stored truth embedding's unit norm.
pub const TRUTH_NORM_TOLERANCE: f64 = 1e-4;

/// Minimum layer count: velocity needs two steps, acceleration one.
pub const MIN_LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Factual,
    Hallucinated,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Factual => "factual",
            Label::Hallucinated => "hallucinated",
            Label::Unknown => "unknown",
        }
    }

    /// Binary target with hallucinated as the positive class.
    pub fn as_target(self) -> Option<u8> {
        match self {
            Label::Factual => Some(0),
            Label::Hallucinated => Some(1),
            Label::Unknown => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factual" => Ok(Label::Factual),
            "hallucinated" => Ok(Label::Hallucinated),
            "unknown" => Ok(Label::Unknown),
            other => Err(Error::data(None, format!("unknown label `{other}`"))),
        }
    }
}

/// One sample: pooled hidden vector per layer plus its truth embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub layer_vectors: Vec<Vec<f64>>,
    pub truth_embedding: Vec<f64>,
    pub token_count: usize,
}

impl TraceSample {
    pub fn num_layers(&self) -> usize {
        self.layer_vectors.len()
    }

    pub fn final_layer(&self) -> &[f64] {
        self.layer_vectors.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceBundle {
    pub samples: Vec<TraceSample>,
    pub model_name: String,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub truth_encoder_name: String,
    pub format_version: u32,
}

impl TraceBundle {
    pub fn new(
        model_name: impl Into<String>,
        truth_encoder_name: impl Into<String>,
        hidden_dim: usize,
        num_layers: usize,
    ) -> Self {
        Self {
            samples: Vec::new(),
            model_name: model_name.into(),
            hidden_dim,
            num_layers,
            truth_encoder_name: truth_encoder_name.into(),
            format_version: FORMAT_VERSION,
        }
    }

    /// Truth embedding dimension shared by all samples (`None` when empty).
    pub fn truth_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.truth_embedding.len())
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    /// Checks every bundle and sample invariant.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version { found: self.format_version, supported: FORMAT_VERSION });
        }
        if self.num_layers < MIN_LAYERS {
            return Err(Error::format(
                None,
                format!("num_layers {} is below the minimum of {MIN_LAYERS}", self.num_layers),
            ));
        }
        if self.hidden_dim == 0 {
            return Err(Error::format(None, "hidden_dim must be positive"));
        }
        let truth_dim = self.truth_dim();
        let mut seen = HashSet::with_capacity(self.samples.len());
        for sample in &self.samples {
            validate_id(&sample.id)?;
            if !seen.insert(sample.id.as_str()) {
                return Err(Error::data(Some(&sample.id), "duplicate sample id"));
            }
            self.validate_sample(sample, truth_dim.unwrap_or(0))?;
        }
        Ok(())
    }

    fn validate_sample(&self, sample: &TraceSample, truth_dim: usize) -> Result<()> {
        let id = Some(sample.id.as_str());
        if sample.layer_vectors.len() != self.num_layers {
            return Err(Error::format(
                id,
                format!("expected {} layers, found {}", self.num_layers, sample.layer_vectors.len()),
            ));
        }
        for (layer, v) in sample.layer_vectors.iter().enumerate() {
            if v.len() != self.hidden_dim {
                return Err(Error::format(
                    id,
                    format!(
                        "layer {} has dimension {}, header hidden_dim is {}",
                        layer + 1,
                        v.len(),
                        self.hidden_dim
                    ),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::data(id, format!("non-finite value in layer {}", layer + 1)));
            }
        }
        if sample.truth_embedding.is_empty() || sample.truth_embedding.len() != truth_dim {
            return Err(Error::format(
                id,
                format!(
                    "truth embedding has dimension {}, expected {truth_dim}",
                    sample.truth_embedding.len()
                ),
            ));
        }
        if sample.truth_embedding.iter().any(|x| !x.is_finite()) {
            return Err(Error::data(id, "non-finite value in truth embedding"));
        }
        let norm = l2_norm(&sample.truth_embedding);
        if (norm - 1.0).abs() > TRUTH_NORM_TOLERANCE {
            return Err(Error::data(
                id,
                format!("truth embedding norm {norm} is not 1 within {TRUTH_NORM_TOLERANCE}"),
            ));
        }
        Ok(())
    }
}

/// Sample ids double as tensor file stems, so they are restricted to a
/// portable file-name alphabet.
pub fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::data(
            Some(id),
            "sample id must be non-empty, not start with '.', and use only [A-Za-z0-9._-]",
        ))
    }
}

/// Factual counterpart of a hallucinated sample under the `<key>-h` / `<key>-f`
/// pairing convention.
pub fn paired_factual_id(id: &str) -> Option<String> {
    id.strip_suffix("-h").map(|key| format!("{key}-f"))
}
