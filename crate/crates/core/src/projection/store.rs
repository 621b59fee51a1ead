use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::head::{ProjectionHead, TENSOR_NAMES};
use super::train::{EpochRecord, Split};
use super::ProjectionPair;
use crate::dataio::{decode_f32, encode_f32, replace_dir_with_marker, temp_sibling, RunConfig};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const PROJECTION_MANIFEST: &str = "projection_manifest.json";
const FORMAT_VERSION: u32 = 1;
const HEADS: [&str; 2] = ["head_h", "head_t"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    file: String,
    shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectionManifest {
    format_version: u32,
    hidden_dim: usize,
    truth_dim: usize,
    shared_dim: usize,
    seed: u64,
    config_snapshot: RunConfig,
    tensors: Vec<TensorEntry>,
    loss_history: Vec<EpochRecord>,
    split: Split,
}

/// A trained pair together with its training record.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredProjection {
    pub pair: ProjectionPair,
    pub history: Vec<EpochRecord>,
    pub split: Split,
}

pub fn save_projection(
    pair: &ProjectionPair,
    history: &[EpochRecord],
    split: &Split,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    pair.validate()?;
    let tmp = temp_sibling(dir)?;
    let result = (|| {
        let mut tensors = Vec::new();
        for (head_name, head) in HEADS.iter().zip([&pair.head_h, &pair.head_t]) {
            let head_dir = tmp.join(head_name);
            fs::create_dir_all(&head_dir).map_err(|e| Error::io(&head_dir, e))?;
            for ((name, values), shape) in TENSOR_NAMES.iter().zip(head.params()).zip(head.shapes()) {
                let file = format!("{head_name}/{name}.f32");
                let path = tmp.join(&file);
                fs::write(&path, encode_f32(values.iter().copied())).map_err(|e| Error::io(&path, e))?;
                tensors.push(TensorEntry { name: format!("{head_name}.{name}"), file, shape });
            }
        }
        let manifest = ProjectionManifest {
            format_version: FORMAT_VERSION,
            hidden_dim: pair.hidden_dim(),
            truth_dim: pair.truth_dim(),
            shared_dim: pair.shared_dim(),
            seed: pair.config.seed,
            config_snapshot: pair.config.clone(),
            tensors,
            loss_history: history.to_vec(),
            split: split.clone(),
        };
        let path = tmp.join(PROJECTION_MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    })();
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    replace_dir_with_marker(&tmp, dir, PROJECTION_MANIFEST)
}

pub fn load_projection(dir: impl AsRef<Path>) -> Result<StoredProjection> {
    let dir = dir.as_ref();
    let path = dir.join(PROJECTION_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ProjectionManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Version { found: manifest.format_version, supported: FORMAT_VERSION });
    }
    if manifest.tensors.len() != 2 * TENSOR_NAMES.len() {
        return Err(Error::format(None, "projection manifest must list 12 tensors"));
    }
    let mut heads = Vec::with_capacity(2);
    for (h, head_name) in HEADS.iter().enumerate() {
        let entries = &manifest.tensors[h * 6..(h + 1) * 6];
        let mut loaded = Vec::with_capacity(6);
        for (entry, name) in entries.iter().zip(TENSOR_NAMES) {
            let expected = format!("{head_name}.{name}");
            if entry.name != expected {
                return Err(Error::format(None, format!("expected tensor {expected}, found {}", entry.name)));
            }
            if entry.file.contains("..") || Path::new(&entry.file).is_absolute() {
                return Err(Error::format(None, format!("tensor path {} escapes the directory", entry.file)));
            }
            let file = dir.join(&entry.file);
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            let len = entry.shape[0] * entry.shape[1];
            if bytes.len() != len * 4 {
                return Err(Error::format(
                    None,
                    format!("{} has {} bytes, expected {}", entry.file, bytes.len(), len * 4),
                ));
            }
            let values = decode_f32(&bytes);
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(None, format!("{} contains non-finite values", entry.file)));
            }
            loaded.push((entry.shape, values));
        }
        let mut it = loaded.into_iter();
        let mut next = || it.next().expect("six tensors");
        let (s1, w1) = next();
        let (_, b1) = next();
        let (s2, w2) = next();
        let (_, b2) = next();
        let (_, ln_gain) = next();
        let (_, ln_bias) = next();
        heads.push(ProjectionHead {
            w1: Matrix::from_vec(s1[0], s1[1], w1)?,
            b1,
            w2: Matrix::from_vec(s2[0], s2[1], w2)?,
            b2,
            ln_gain,
            ln_bias,
        });
    }
    let head_t = heads.pop().expect("two heads");
    let head_h = heads.pop().expect("two heads");
    let pair = ProjectionPair { head_h, head_t, config: manifest.config_snapshot };
    pair.validate()?;
    if pair.hidden_dim() != manifest.hidden_dim
        || pair.truth_dim() != manifest.truth_dim
        || pair.shared_dim() != manifest.shared_dim
    {
        return Err(Error::format(None, "tensor shapes disagree with manifest dimensions"));
    }
    Ok(StoredProjection { pair, history: manifest.loss_history, split: manifest.split })
}
