use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, Matrix, Rng};

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Pre-normalization norms below this are rejected.
pub const MIN_PROJECTION_NORM: f64 = 1e-12;

/// Two-layer MLP with LayerNorm:
/// `normalize(LayerNorm(W2 · dropout(ReLU(W1 x + b1)) + b2))`.
///
/// The same struct doubles as the gradient accumulator for a head.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
}

pub type HeadGradients = ProjectionHead;

/// Names of the six parameter tensors, in `params()` order.
pub const TENSOR_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "ln_gain", "ln_bias"];

/// Activations kept by [`ProjectionHead::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    pre_relu: Vec<f64>,
    mask: Option<Vec<f64>>,
    hidden: Vec<f64>,
    normalized: Vec<f64>,
    inv_std: f64,
    norm: f64,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl ProjectionHead {
    /// Glorot-uniform weights, zero biases, unit LayerNorm gain, zero LayerNorm bias.
    pub fn init(in_dim: usize, hidden_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| (2.0 * rng.uniform() - 1.0) * limit).collect();
            Matrix::from_vec(rows, cols, data).expect("shape matches data")
        };
        let w1 = glorot(hidden_dim, in_dim);
        let w2 = glorot(out_dim, hidden_dim);
        Self {
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; out_dim],
            ln_gain: vec![1.0; out_dim],
            ln_bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden_dim, in_dim),
            b1: vec![0.0; hidden_dim],
            w2: Matrix::zeros(out_dim, hidden_dim),
            b2: vec![0.0; out_dim],
            ln_gain: vec![0.0; out_dim],
            ln_bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.hidden_dim(), self.out_dim())
    }

    pub fn in_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn params(&self) -> [&[f64]; 6] {
        [self.w1.data(), &self.b1, self.w2.data(), &self.b2, &self.ln_gain, &self.ln_bias]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.data_mut(),
            &mut self.b1,
            self.w2.data_mut(),
            &mut self.b2,
            &mut self.ln_gain,
            &mut self.ln_bias,
        ]
    }

    /// Shapes of the tensors in `params()` order (vectors as `[len, 1]`).
    pub fn shapes(&self) -> [[usize; 2]; 6] {
        let (h, i) = self.w1.shape();
        let s = self.out_dim();
        [[h, i], [h, 1], [s, h], [s, 1], [s, 1], [s, 1]]
    }

    pub fn validate(&self) -> Result<()> {
        let (h, _) = self.w1.shape();
        let s = self.out_dim();
        let checks = [
            ("head b1", self.b1.len(), h),
            ("head w2 columns", self.w2.cols(), h),
            ("head b2", self.b2.len(), s),
            ("head ln_gain", self.ln_gain.len(), s),
            ("head ln_bias", self.ln_bias.len(), s),
        ];
        for (context, found, expected) in checks {
            if found != expected {
                return Err(Error::Dimension { context, expected, found });
            }
        }
        if self.params().iter().any(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::DegenerateInput("non-finite head parameter".into()));
        }
        Ok(())
    }

    /// Forward pass. `dropout_mask`, when given, multiplies the ReLU output and
    /// holds values in `{0, 1/(1-p)}`.
    pub fn forward(&self, x: &[f64], dropout_mask: Option<&[f64]>) -> Result<(Vec<f64>, ForwardCache)> {
        if x.len() != self.in_dim() {
            return Err(Error::Dimension {
                context: "projection input",
                expected: self.in_dim(),
                found: x.len(),
            });
        }
        if let Some(mask) = dropout_mask {
            if mask.len() != self.hidden_dim() {
                return Err(Error::Dimension {
                    context: "dropout mask",
                    expected: self.hidden_dim(),
                    found: mask.len(),
                });
            }
        }

        let mut pre_relu = self.w1.matvec(x)?;
        for (z, b) in pre_relu.iter_mut().zip(&self.b1) {
            *z += b;
        }
        let hidden: Vec<f64> = match dropout_mask {
            Some(mask) => pre_relu.iter().zip(mask).map(|(&z, &m)| z.max(0.0) * m).collect(),
            None => pre_relu.iter().map(|&z| z.max(0.0)).collect(),
        };
        let mut z2 = self.w2.matvec(&hidden)?;
        for (z, b) in z2.iter_mut().zip(&self.b2) {
            *z += b;
        }

        let n = z2.len() as f64;
        let mu = z2.iter().sum::<f64>() / n;
        let var = z2.iter().map(|z| (z - mu) * (z - mu)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let normalized: Vec<f64> = z2.iter().map(|z| (z - mu) * inv_std).collect();
        let y: Vec<f64> = normalized
            .iter()
            .zip(self.ln_gain.iter().zip(&self.ln_bias))
            .map(|(xh, (g, b))| g * xh + b)
            .collect();

        let norm = l2_norm(&y);
        if !(norm >= MIN_PROJECTION_NORM) {
            return Err(Error::DegenerateProjection { norm });
        }
        let output: Vec<f64> = y.iter().map(|v| v / norm).collect();
        let cache = ForwardCache {
            input: x.to_vec(),
            pre_relu,
            mask: dropout_mask.map(<[f64]>::to_vec),
            hidden,
            normalized,
            inv_std,
            norm,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Evaluation-mode projection (no dropout).
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x, None).map(|(out, _)| out)
    }

    /// Accumulates parameter gradients into `grads` given `dL/d output`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64], grads: &mut HeadGradients) {
        // Through the L2 normalization: (I - u uᵀ) g / ‖y‖.
        let proj = dot(&cache.output, grad_out);
        let dy: Vec<f64> =
            grad_out.iter().zip(&cache.output).map(|(g, u)| (g - u * proj) / cache.norm).collect();

        for i in 0..dy.len() {
            grads.ln_gain[i] += dy[i] * cache.normalized[i];
            grads.ln_bias[i] += dy[i];
        }

        // LayerNorm.
        let n = dy.len() as f64;
        let dxhat: Vec<f64> = dy.iter().zip(&self.ln_gain).map(|(d, g)| d * g).collect();
        let sum_dxhat: f64 = dxhat.iter().sum();
        let sum_dxhat_xhat = dot(&dxhat, &cache.normalized);
        let dz2: Vec<f64> = dxhat
            .iter()
            .zip(&cache.normalized)
            .map(|(d, xh)| cache.inv_std * (d - sum_dxhat / n - xh * sum_dxhat_xhat / n))
            .collect();

        grads.w2.add_outer(&dz2, &cache.hidden, 1.0);
        for (g, d) in grads.b2.iter_mut().zip(&dz2) {
            *g += d;
        }

        let dhidden = self.w2.matvec_transposed(&dz2).expect("w2 shape checked in forward");
        let dz1: Vec<f64> = dhidden
            .iter()
            .enumerate()
            .map(|(j, d)| {
                if cache.pre_relu[j] <= 0.0 {
                    return 0.0;
                }
                match &cache.mask {
                    Some(mask) => d * mask[j],
                    None => *d,
                }
            })
            .collect();

        grads.w1.add_outer(&dz1, &cache.input, 1.0);
        for (g, d) in grads.b1.iter_mut().zip(&dz1) {
            *g += d;
        }
    }
}

/// Inverted-dropout mask with keep probability `1 - p`; `None` when `p == 0`.
pub fn dropout_mask(rng: &mut Rng, len: usize, p: f64) -> Option<Vec<f64>> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some((0..len).map(|_| if rng.uniform() < p { 0.0 } else { keep }).collect())
}
