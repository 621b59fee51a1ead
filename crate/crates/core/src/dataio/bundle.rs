use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Label, TraceBundle, TraceSample};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSOR_DIR: &str = "tensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub format_version: u32,
    pub model_name: String,
    pub truth_encoder_name: String,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub token_count: usize,
    pub tensor_file: String,
    pub layer_shape: [usize; 2],
    pub truth_dim: usize,
}

/// Writes `bundle` to `dir` after validating it.
///
/// The bundle is first written to a sibling temporary directory and then
/// renamed into place. An existing `dir` is replaced only if it is empty or
/// already holds a bundle manifest.
pub fn write_bundle(bundle: &TraceBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    bundle.validate()?;

    let tmp = temp_sibling(dir)?;
    let result = write_into(bundle, &tmp).and_then(|()| replace_dir(&tmp, dir));
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}

fn write_into(bundle: &TraceBundle, dir: &Path) -> Result<()> {
    let tensor_dir = dir.join(TENSOR_DIR);
    fs::create_dir_all(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))?;

    let mut entries = Vec::with_capacity(bundle.samples.len());
    for sample in &bundle.samples {
        let tensor_file = format!("{TENSOR_DIR}/{}.f32", sample.id);
        let path = dir.join(&tensor_file);
        let floats = sample.layer_vectors.iter().flatten().chain(&sample.truth_embedding).copied();
        fs::write(&path, encode_f32(floats)).map_err(|e| Error::io(&path, e))?;
        entries.push(SampleEntry {
            id: sample.id.clone(),
            text: sample.text.clone(),
            label: sample.label,
            token_count: sample.token_count,
            tensor_file,
            layer_shape: [bundle.num_layers, bundle.hidden_dim],
            truth_dim: sample.truth_embedding.len(),
        });
    }

    let manifest = BundleManifest {
        format_version: bundle.format_version,
        model_name: bundle.model_name.clone(),
        truth_encoder_name: bundle.truth_encoder_name.clone(),
        hidden_dim: bundle.hidden_dim,
        num_layers: bundle.num_layers,
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Reads and fully validates a bundle directory.
pub fn read_bundle(dir: impl AsRef<Path>) -> Result<TraceBundle> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let value: serde_json::Value =
        serde_json::from_slice(&raw).map_err(|e| Error::json(&manifest_path, e))?;

    // Check the version before the schema so newer layouts report a version error.
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::format(None, "manifest has no integer format_version"))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            supported: FORMAT_VERSION,
        });
    }
    let manifest: BundleManifest =
        serde_json::from_value(value).map_err(|e| Error::json(&manifest_path, e))?;

    let mut bundle = TraceBundle {
        samples: Vec::with_capacity(manifest.samples.len()),
        model_name: manifest.model_name,
        hidden_dim: manifest.hidden_dim,
        num_layers: manifest.num_layers,
        truth_encoder_name: manifest.truth_encoder_name,
        format_version: manifest.format_version,
    };
    for entry in manifest.samples {
        let sample = read_sample(dir, &entry, bundle.num_layers, bundle.hidden_dim)?;
        bundle.samples.push(sample);
    }
    bundle.validate()?;
    Ok(bundle)
}

fn read_sample(dir: &Path, entry: &SampleEntry, num_layers: usize, hidden_dim: usize) -> Result<TraceSample> {
    let id = Some(entry.id.as_str());
    if entry.layer_shape != [num_layers, hidden_dim] {
        return Err(Error::format(
            id,
            format!("layer_shape {:?} does not match header [{num_layers}, {hidden_dim}]", entry.layer_shape),
        ));
    }
    let rel = Path::new(&entry.tensor_file);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(Error::format(id, format!("tensor_file `{}` escapes the bundle", entry.tensor_file)));
    }
    let path = dir.join(rel);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let layer_len = num_layers * hidden_dim;
    let expected = (layer_len + entry.truth_dim) * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            id,
            format!("tensor file {} has {} bytes, expected {expected}", path.display(), bytes.len()),
        ));
    }
    let floats = decode_f32(&bytes);
    if let Some(pos) = floats.iter().position(|x| !x.is_finite()) {
        return Err(Error::data(id, format!("non-finite float at offset {pos}")));
    }
    let layer_vectors = floats[..layer_len].chunks_exact(hidden_dim.max(1)).map(<[f64]>::to_vec).collect();
    Ok(TraceSample {
        id: entry.id.clone(),
        text: entry.text.clone(),
        label: entry.label,
        layer_vectors,
        truth_embedding: floats[layer_len..].to_vec(),
        token_count: entry.token_count,
    })
}

/// Little-endian binary32 encoding; values are rounded to nearest `f32`.
pub(crate) fn encode_f32(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(|x| (x as f32).to_le_bytes()).collect()
}

pub(crate) fn decode_f32(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect()
}

pub(crate) fn temp_sibling(dir: &Path) -> Result<PathBuf> {
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let name =
        dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "bundle".to_owned());
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    let tmp = parent.join(format!(".{name}.tmp-{}-{nanos}", std::process::id()));
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    Ok(tmp)
}

/// Moves `tmp` to `dir`, replacing `dir` if it is empty or holds one of the
/// given marker files.
pub(crate) fn replace_dir_with_marker(tmp: &Path, dir: &Path, marker: &str) -> Result<()> {
    if dir.exists() {
        let is_empty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_none();
        if !is_empty && !dir.join(marker).exists() {
            return Err(Error::io(
                dir,
                std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    format!("refusing to replace a non-empty directory without {marker}"),
                ),
            ));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(tmp, dir).map_err(|e| Error::io(dir, e))
}

fn replace_dir(tmp: &Path, dir: &Path) -> Result<()> {
    replace_dir_with_marker(tmp, dir, MANIFEST_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f32r(x: f64) -> f64 {
        x as f32 as f64
    }

    fn two_sample_bundle() -> TraceBundle {
        let mut b = TraceBundle::new("toy-model", "toy-encoder", 3, 3);
        for (i, label) in [Label::Factual, Label::Hallucinated].into_iter().enumerate() {
            b.samples.push(TraceSample {
                id: format!("s{i}"),
                text: format!("sample {i}"),
                label,
                layer_vectors: (0..3)
                    .map(|l| vec![f32r(0.1 * (l + i) as f64), -1.5, f32r(3.25e-3)])
                    .collect(),
                truth_embedding: vec![f32r(0.6), 0.0, f32r(0.8)],
                token_count: 4 + i,
            });
        }
        b
    }

    #[test]
    fn empty_bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b");
        let b = TraceBundle::new("m", "e", 8, 13);
        write_bundle(&b, &path).unwrap();
        assert_eq!(read_bundle(&path).unwrap(), b);
    }

    #[test]
    fn two_sample_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b");
        let b = two_sample_bundle();
        write_bundle(&b, &path).unwrap();
        let back = read_bundle(&path).unwrap();
        assert_eq!(back, b);
        for (x, y) in b.samples.iter().zip(&back.samples) {
            for (u, v) in x.layer_vectors.iter().flatten().zip(y.layer_vectors.iter().flatten()) {
                assert_eq!((*u as f32).to_bits(), (*v as f32).to_bits());
            }
        }
        // Rewriting produces identical bytes.
        let again = dir.path().join("c");
        write_bundle(&back, &again).unwrap();
        for s in &b.samples {
            let f = format!("{TENSOR_DIR}/{}.f32", s.id);
            assert_eq!(fs::read(path.join(&f)).unwrap(), fs::read(again.join(&f)).unwrap());
        }
    }

    #[test]
    fn duplicate_id_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = two_sample_bundle();
        b.samples[1].id = "s0".into();
        assert!(write_bundle(&b, dir.path().join("b")).is_err());
        assert!(!dir.path().join("b").exists());
    }

    #[test]
    fn truncated_tensor_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b");
        write_bundle(&two_sample_bundle(), &path).unwrap();
        let f = path.join(TENSOR_DIR).join("s1.f32");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 3]).unwrap();
        match read_bundle(&path) {
            Err(Error::Format { sample, .. }) => assert_eq!(sample.as_deref(), Some("s1")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_hidden_dim_names_sample() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b");
        write_bundle(&two_sample_bundle(), &path).unwrap();
        let mpath = path.join(MANIFEST_FILE);
        let mut m: BundleManifest = serde_json::from_slice(&fs::read(&mpath).unwrap()).unwrap();
        m.samples[1].layer_shape = [3, 4];
        fs::write(&mpath, serde_json::to_vec(&m).unwrap()).unwrap();
        let err = read_bundle(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("`s1`"), "{err}");
    }

    #[test]
    fn unknown_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b");
        write_bundle(&two_sample_bundle(), &path).unwrap();
        let mpath = path.join(MANIFEST_FILE);
        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&mpath).unwrap()).unwrap();
        v["format_version"] = 999.into();
        fs::write(&mpath, serde_json::to_vec(&v).unwrap()).unwrap();
        assert!(matches!(read_bundle(&path), Err(Error::Version { found: 999, .. })));
    }

    #[test]
    fn non_finite_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b");
        write_bundle(&two_sample_bundle(), &path).unwrap();
        let f = path.join(TENSOR_DIR).join("s0.f32");
        let mut bytes = fs::read(&f).unwrap();
        bytes[4..8].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&f, bytes).unwrap();
        assert!(matches!(read_bundle(&path), Err(Error::Data { .. })));
    }

    #[test]
    fn refuses_to_clobber_foreign_directory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b");
        fs::create_dir_all(&path).unwrap();
        fs::write(path.join("notes.txt"), "keep me").unwrap();
        assert!(write_bundle(&two_sample_bundle(), &path).is_err());
        assert!(path.join("notes.txt").exists());
    }

    #[test]
    fn overwrites_existing_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b");
        write_bundle(&two_sample_bundle(), &path).unwrap();
        let empty = TraceBundle::new("toy-model", "toy-encoder", 3, 3);
        write_bundle(&empty, &path).unwrap();
        assert_eq!(read_bundle(&path).unwrap().samples.len(), 0);
        assert!(!path.join(TENSOR_DIR).join("s0.f32").exists());
    }
}
