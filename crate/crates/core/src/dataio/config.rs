use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which hidden vectors of a sample become training pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LayerPolicy {
    #[default]
    FinalLayer,
    AllLayers,
}

/// Convergence layer rule when the final alignment is not positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConvergenceFallback {
    /// Layer of maximum alignment.
    #[default]
    Argmax,
    /// Apply the fractional threshold anyway; the last layer if nothing crosses it.
    Threshold,
}

/// Training and analysis configuration. JSON keys are the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub shared_dim: usize,
    pub hidden_mlp_dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub lr_floor: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub layer_policy: LayerPolicy,
    /// Pair hallucinated samples with their factual counterpart's truth embedding.
    pub paired_truth: bool,
    pub convergence_fraction: f64,
    pub convergence_fallback: ConvergenceFallback,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            shared_dim: 512,
            hidden_mlp_dim: 1024,
            margin: 0.2,
            learning_rate: 5e-5,
            lr_floor: 1e-6,
            weight_decay: 1e-5,
            batch_size: 4,
            epochs: 10,
            dropout: 0.1,
            grad_clip_norm: 1.0,
            seed: 42,
            train_fraction: 0.8,
            layer_policy: LayerPolicy::FinalLayer,
            paired_truth: false,
            convergence_fraction: 0.8,
            convergence_fallback: ConvergenceFallback::Argmax,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        fn finite(field: &str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, "must be finite"))
            }
        }
        for (field, v) in [
            ("margin", self.margin),
            ("learning_rate", self.learning_rate),
            ("lr_floor", self.lr_floor),
            ("weight_decay", self.weight_decay),
            ("dropout", self.dropout),
            ("grad_clip_norm", self.grad_clip_norm),
            ("train_fraction", self.train_fraction),
            ("convergence_fraction", self.convergence_fraction),
        ] {
            finite(field, v)?;
        }
        for (field, v) in [
            ("shared_dim", self.shared_dim),
            ("hidden_mlp_dim", self.hidden_mlp_dim),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", format!("{} is outside [0, 1)", self.dropout)));
        }
        if self.margin < 0.0 {
            return Err(Error::config("margin", "must be non-negative"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config(
                "train_fraction",
                format!("{} is outside (0, 1)", self.train_fraction),
            ));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.lr_floor < 0.0 || self.lr_floor > self.learning_rate {
            return Err(Error::config("lr_floor", "must lie in [0, learning_rate]"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if self.grad_clip_norm < 0.0 {
            return Err(Error::config("grad_clip_norm", "must be non-negative (0 disables)"));
        }
        if !(self.convergence_fraction > 0.0 && self.convergence_fraction <= 1.0) {
            return Err(Error::config("convergence_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &ConfigOverrides) {
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { self.$f = v; } )* };
        }
        take!(
            shared_dim,
            hidden_mlp_dim,
            margin,
            learning_rate,
            lr_floor,
            weight_decay,
            batch_size,
            epochs,
            dropout,
            grad_clip_norm,
            seed,
            train_fraction,
            layer_policy,
            paired_truth,
            convergence_fraction,
            convergence_fallback
        );
    }
}

/// Command-line overrides; `Some` fields win over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub shared_dim: Option<usize>,
    pub hidden_mlp_dim: Option<usize>,
    pub margin: Option<f64>,
    pub learning_rate: Option<f64>,
    pub lr_floor: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub dropout: Option<f64>,
    pub grad_clip_norm: Option<f64>,
    pub seed: Option<u64>,
    pub train_fraction: Option<f64>,
    pub layer_policy: Option<LayerPolicy>,
    pub paired_truth: Option<bool>,
    pub convergence_fraction: Option<f64>,
    pub convergence_fallback: Option<ConvergenceFallback>,
}

/// Loads a config file (defaults when `path` is `None` or the file is blank),
/// applies overrides, then validates.
pub fn load_config(path: Option<&Path>, overrides: &ConfigOverrides) -> Result<RunConfig> {
    let mut config = match path {
        None => RunConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            if text.trim().is_empty() {
                RunConfig::default()
            } else {
                serde_json::from_str(&text).map_err(|e| Error::json(path, e))?
            }
        }
    };
    config.apply(overrides);
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn empty_file_gives_defaults() {
        let f = write("");
        let c = load_config(Some(f.path()), &ConfigOverrides::default()).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.margin, 0.2);
        assert_eq!(c.shared_dim, 512);
        assert_eq!(c.hidden_mlp_dim, 1024);
        assert_eq!(c.learning_rate, 5e-5);
        assert_eq!(c.lr_floor, 1e-6);
        assert_eq!(c.weight_decay, 1e-5);
        assert_eq!(c.batch_size, 4);
        assert_eq!(c.epochs, 10);
        assert_eq!(c.dropout, 0.1);
        assert_eq!(c.grad_clip_norm, 1.0);
        assert_eq!(c.train_fraction, 0.8);
    }

    #[test]
    fn dropout_out_of_range_rejected() {
        let f = write(r#"{"dropout": 1.5}"#);
        match load_config(Some(f.path()), &ConfigOverrides::default()) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "dropout"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn cli_override_wins() {
        let f = write(r#"{"margin": 0.25, "epochs": 3}"#);
        let o = ConfigOverrides { margin: Some(0.3), ..Default::default() };
        let c = load_config(Some(f.path()), &o).unwrap();
        assert_eq!(c.margin, 0.3);
        assert_eq!(c.epochs, 3);
    }

    #[test]
    fn unknown_keys_rejected() {
        let f = write(r#"{"marginn": 0.3}"#);
        assert!(load_config(Some(f.path()), &ConfigOverrides::default()).is_err());
    }

    #[test]
    fn enum_spelling() {
        let f = write(r#"{"layer_policy": "all-layers", "convergence_fallback": "threshold"}"#);
        let c = load_config(Some(f.path()), &ConfigOverrides::default()).unwrap();
        assert_eq!(c.layer_policy, LayerPolicy::AllLayers);
        assert_eq!(c.convergence_fallback, ConvergenceFallback::Threshold);
    }

    #[test]
    fn range_checks() {
        for bad in [
            r#"{"margin": -0.1}"#,
            r#"{"train_fraction": 1.0}"#,
            r#"{"shared_dim": 0}"#,
            r#"{"lr_floor": 1.0}"#,
        ] {
            let f = write(bad);
            assert!(
                matches!(load_config(Some(f.path()), &ConfigOverrides::default()), Err(Error::Config { .. })),
                "{bad}"
            );
        }
    }
}
