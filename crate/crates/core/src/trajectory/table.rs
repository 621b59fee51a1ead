use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SampleMetrics, TrajectoryMetrics, SCALAR_METRICS};
use crate::dataio::Label;
use crate::error::{Error, Result};
use crate::projection::Split;

pub const STATUS_OK: &str = "ok";

/// One line of `metrics.csv`. Metric cells are empty for failed samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub sample_id: String,
    pub final_alignment: Option<f64>,
    pub mean_alignment: Option<f64>,
    pub max_alignment: Option<f64>,
    pub mean_velocity: Option<f64>,
    pub max_velocity: Option<f64>,
    pub mean_acceleration: Option<f64>,
    pub alignment_gain: Option<f64>,
    pub convergence_layer: Option<usize>,
    pub stability: Option<f64>,
    pub oscillation: Option<usize>,
    pub smoothness: Option<f64>,
    pub split: String,
    pub status: String,
    pub label: Label,
}

impl MetricsRow {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    /// Scalar metric by column name.
    pub fn scalar(&self, name: &str) -> Option<f64> {
        match name {
            "final_alignment" => self.final_alignment,
            "mean_alignment" => self.mean_alignment,
            "max_alignment" => self.max_alignment,
            "mean_velocity" => self.mean_velocity,
            "max_velocity" => self.max_velocity,
            "mean_acceleration" => self.mean_acceleration,
            "alignment_gain" => self.alignment_gain,
            "convergence_layer" => self.convergence_layer.map(|v| v as f64),
            "stability" => self.stability,
            "oscillation" => self.oscillation.map(|v| v as f64),
            "smoothness" => self.smoothness,
            _ => None,
        }
    }

    fn from_metrics(id: &str, label: Label, split: &str, m: &TrajectoryMetrics) -> Self {
        Self {
            sample_id: id.to_owned(),
            final_alignment: Some(m.final_alignment),
            mean_alignment: Some(m.mean_alignment),
            max_alignment: Some(m.max_alignment),
            mean_velocity: Some(m.mean_velocity),
            max_velocity: Some(m.max_velocity),
            mean_acceleration: Some(m.mean_acceleration),
            alignment_gain: Some(m.alignment_gain),
            convergence_layer: Some(m.convergence_layer),
            stability: Some(m.stability),
            oscillation: Some(m.oscillation),
            smoothness: Some(m.smoothness),
            split: split.to_owned(),
            status: STATUS_OK.to_owned(),
            label,
        }
    }

    fn failed(id: &str, label: Label, split: &str, reason: &str) -> Self {
        Self {
            sample_id: id.to_owned(),
            final_alignment: None,
            mean_alignment: None,
            max_alignment: None,
            mean_velocity: None,
            max_velocity: None,
            mean_acceleration: None,
            alignment_gain: None,
            convergence_layer: None,
            stability: None,
            oscillation: None,
            smoothness: None,
            split: split.to_owned(),
            status: format!("error: {reason}"),
            label,
        }
    }
}

/// One line of `layers.csv`; velocity and acceleration are empty where undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub sample_id: String,
    pub layer: usize,
    pub alignment: f64,
    pub velocity: Option<f64>,
    pub acceleration: Option<f64>,
}

/// Flattens a metrics table into CSV rows, tagging each sample with its split role.
pub fn metrics_rows(table: &[SampleMetrics], split: Option<&Split>) -> (Vec<MetricsRow>, Vec<LayerRow>) {
    let mut rows = Vec::with_capacity(table.len());
    let mut layers = Vec::new();
    for s in table {
        let role = split.map_or("none", |sp| sp.role(&s.sample_id));
        match &s.metrics {
            Ok(m) => {
                rows.push(MetricsRow::from_metrics(&s.sample_id, s.label, role, m));
                for (l, &a) in m.alignment_profile.iter().enumerate() {
                    layers.push(LayerRow {
                        sample_id: s.sample_id.clone(),
                        layer: l + 1,
                        alignment: a,
                        velocity: m.velocity_profile.get(l).copied(),
                        acceleration: m.acceleration_profile.get(l).copied(),
                    });
                }
            }
            Err(reason) => rows.push(MetricsRow::failed(&s.sample_id, s.label, role, reason)),
        }
    }
    (rows, layers)
}

fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_metrics_rows(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    write_rows(rows, path.as_ref())
}

pub fn write_layer_rows(rows: &[LayerRow], path: impl AsRef<Path>) -> Result<()> {
    write_rows(rows, path.as_ref())
}

pub fn read_metrics_rows(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    for m in SCALAR_METRICS {
        if !header.iter().any(|h| h == m) {
            return Err(Error::format(None, format!("{} lacks column `{m}`", path.display())));
        }
    }
    read_rows(path)
}

pub fn read_layer_rows(path: impl AsRef<Path>) -> Result<Vec<LayerRow>> {
    read_rows(path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::ConvergenceFallback;
    use crate::trajectory::ProjectedTrajectory;

    fn table() -> Vec<SampleMetrics> {
        let points = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        let t = ProjectedTrajectory::new(points, vec![1.0, 0.0]).unwrap();
        vec![
            SampleMetrics {
                sample_id: "a".into(),
                label: Label::Factual,
                metrics: Ok(TrajectoryMetrics::compute(&t, 0.8, ConvergenceFallback::Argmax)),
            },
            SampleMetrics {
                sample_id: "b".into(),
                label: Label::Unknown,
                metrics: Err("degenerate projection".into()),
            },
        ]
    }

    #[test]
    fn csv_round_trip_and_header() {
        let split = Split { train: vec!["a".into()], validation: vec![] };
        let (rows, layers) = metrics_rows(&table(), Some(&split));
        assert_eq!(layers.len(), 3);
        assert_eq!(layers[2].velocity, None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_rows(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("sample_id,final_alignment,"));
        assert!(header.ends_with(",split,status,label"));
        let back = read_metrics_rows(&path).unwrap();
        assert_eq!(back, rows);
        assert!(back[0].is_ok());
        assert!(!back[1].is_ok());
        assert_eq!(back[0].split, "train");
        assert_eq!(back[1].scalar("final_alignment"), None);

        let lp = dir.path().join("layers.csv");
        write_layer_rows(&layers, &lp).unwrap();
        assert_eq!(read_layer_rows(&lp).unwrap(), layers);
    }
}
