//! Projection heads for hidden states and truth embeddings, the margin
//! contrastive objective, and AdamW training with cosine decay.

mod head;
mod loss;
mod optim;
mod store;
mod train;

pub use head::{
    dropout_mask, ForwardCache, HeadGradients, ProjectionHead, LAYER_NORM_EPS, MIN_PROJECTION_NORM,
    TENSOR_NAMES,
};
pub use loss::{
    backward, batch_loss, contrastive_loss, contrastive_loss_grad, loss_and_gradients,
    loss_from_similarities, similarity, ItemMasks, PairGradients, TrainingPair,
};
pub use optim::{clip_global_norm, AdamW, CosineSchedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use store::{load_projection, save_projection, StoredProjection, PROJECTION_MANIFEST};
pub use train::{fit, stratified_split, train, training_pairs, EpochRecord, Split, TrainOutcome};

use crate::dataio::{RunConfig, TraceBundle};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Seed stream used for head initialization.
const INIT_STREAM: u64 = 1;

/// The hidden-state head and the truth head, sharing an output dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair {
    pub head_h: ProjectionHead,
    pub head_t: ProjectionHead,
    pub config: RunConfig,
}

impl ProjectionPair {
    pub fn init(hidden_dim: usize, truth_dim: usize, config: &RunConfig) -> Self {
        let mut rng = Rng::new(config.seed).fork(INIT_STREAM);
        let head_h = ProjectionHead::init(hidden_dim, config.hidden_mlp_dim, config.shared_dim, &mut rng);
        let head_t = ProjectionHead::init(truth_dim, config.hidden_mlp_dim, config.shared_dim, &mut rng);
        Self { head_h, head_t, config: config.clone() }
    }

    pub fn hidden_dim(&self) -> usize {
        self.head_h.in_dim()
    }

    pub fn truth_dim(&self) -> usize {
        self.head_t.in_dim()
    }

    pub fn shared_dim(&self) -> usize {
        self.head_h.out_dim()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.head_h.params().into_iter().chain(self.head_t.params())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        let [a, b, c, d, e, f] = self.head_h.params_mut();
        let [g, h, i, j, k, l] = self.head_t.params_mut();
        [a, b, c, d, e, f, g, h, i, j, k, l].into_iter()
    }

    pub fn validate(&self) -> Result<()> {
        self.head_h.validate()?;
        self.head_t.validate()?;
        if self.head_h.out_dim() != self.head_t.out_dim() {
            return Err(Error::Dimension {
                context: "shared dimension of the two heads",
                expected: self.head_h.out_dim(),
                found: self.head_t.out_dim(),
            });
        }
        Ok(())
    }

    /// Checks that `bundle` has the input dimensions this pair was trained for.
    pub fn check_bundle(&self, bundle: &TraceBundle) -> Result<()> {
        if bundle.hidden_dim != self.hidden_dim() {
            return Err(Error::ArtifactMismatch(format!(
                "bundle hidden_dim {} but projection expects {}",
                bundle.hidden_dim,
                self.hidden_dim()
            )));
        }
        if let Some(td) = bundle.truth_dim() {
            if td != self.truth_dim() {
                return Err(Error::ArtifactMismatch(format!(
                    "bundle truth_dim {td} but projection expects {}",
                    self.truth_dim()
                )));
            }
        }
        Ok(())
    }
}

/// Masked mean over tokens: `Σ mᵢ hᵢ / Σ mᵢ` for a `tokens × dim` matrix.
pub fn pool(layer_tokens: &Matrix, mask: &[f64]) -> Result<Vec<f64>> {
    if mask.len() != layer_tokens.rows() {
        return Err(Error::Dimension {
            context: "pooling mask",
            expected: layer_tokens.rows(),
            found: mask.len(),
        });
    }
    let total: f64 = mask.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateInput("attention mask has no valid tokens".into()));
    }
    let mut acc = vec![0.0; layer_tokens.cols()];
    for (i, &m) in mask.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for (a, &h) in acc.iter_mut().zip(layer_tokens.row(i)) {
            *a += h * m;
        }
    }
    Ok(acc.into_iter().map(|a| a / total).collect())
}
