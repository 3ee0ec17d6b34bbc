use ndarray::{Array1, Array2};
use rand::Rng;

use super::{EncoderConfig, ModelError};

/// Row-wise layer normalisation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        Self {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }
}

/// Dense map over row vectors, `y = x · weight + bias` with `weight` stored
/// as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn uniform<R: Rng>(dim: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            weight: uniform((dim, dim), scale, rng),
            bias: Array1::zeros(dim),
        }
    }
}

/// Embedding generator `G(r) = weight · r + bias`: a single affine map with
/// no non-linearity.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Affine {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weight: Array2::zeros((dim, dim)),
            bias: Array1::zeros(dim),
        }
    }

    pub fn apply(&self, r: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(r) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub attn_norm: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ffn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

/// Every trainable tensor of the model. The same type doubles as the
/// gradient and optimizer-moment container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    n_items: usize,
    /// `(n_items + 1) × d`; the last row is padding and stays zero.
    pub item_embeddings: Array2<f64>,
    pub positional: Array2<f64>,
    pub blocks: Vec<AttentionBlock>,
    pub final_norm: LayerNorm,
    pub user_generator: Affine,
    pub item_generator: Affine,
}

fn uniform<R: Rng>(shape: (usize, usize), scale: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-scale..scale))
}

macro_rules! tensor_list {
    ($self:ident, $as_slice:ident, $iter:ident) => {{
        let mut out = Vec::with_capacity(8 + 16 * $self.blocks.len());
        out.push((
            "item_embeddings".to_string(),
            $self.item_embeddings.$as_slice().unwrap(),
        ));
        out.push((
            "positional_embeddings".to_string(),
            $self.positional.$as_slice().unwrap(),
        ));
        for (b, block) in $self.blocks.$iter().enumerate() {
            let p = |name: &str| format!("block{b}.{name}");
            let AttentionBlock {
                attn_norm,
                query,
                key,
                value,
                output,
                ffn_norm,
                ffn_in,
                ffn_out,
            } = block;
            out.push((p("attn_norm.gain"), attn_norm.gain.$as_slice().unwrap()));
            out.push((p("attn_norm.bias"), attn_norm.bias.$as_slice().unwrap()));
            for (name, lin) in [
                ("query", query),
                ("key", key),
                ("value", value),
                ("output", output),
            ] {
                out.push((
                    p(&format!("{name}.weight")),
                    lin.weight.$as_slice().unwrap(),
                ));
                out.push((p(&format!("{name}.bias")), lin.bias.$as_slice().unwrap()));
            }
            out.push((p("ffn_norm.gain"), ffn_norm.gain.$as_slice().unwrap()));
            out.push((p("ffn_norm.bias"), ffn_norm.bias.$as_slice().unwrap()));
            for (name, lin) in [("ffn_in", ffn_in), ("ffn_out", ffn_out)] {
                out.push((
                    p(&format!("{name}.weight")),
                    lin.weight.$as_slice().unwrap(),
                ));
                out.push((p(&format!("{name}.bias")), lin.bias.$as_slice().unwrap()));
            }
        }
        out.push((
            "final_norm.gain".to_string(),
            $self.final_norm.gain.$as_slice().unwrap(),
        ));
        out.push((
            "final_norm.bias".to_string(),
            $self.final_norm.bias.$as_slice().unwrap(),
        ));
        out.push((
            "user_generator.weight".to_string(),
            $self.user_generator.weight.$as_slice().unwrap(),
        ));
        out.push((
            "user_generator.bias".to_string(),
            $self.user_generator.bias.$as_slice().unwrap(),
        ));
        out.push((
            "item_generator.weight".to_string(),
            $self.item_generator.weight.$as_slice().unwrap(),
        ));
        out.push((
            "item_generator.bias".to_string(),
            $self.item_generator.bias.$as_slice().unwrap(),
        ));
        out
    }};
}

impl ModelParams {
    /// Embeddings and projections uniform in `±1/√d`, layer norms at
    /// identity, generators and biases zero, padding row zero.
    pub fn init<R: Rng>(cfg: &EncoderConfig, n_items: usize, rng: &mut R) -> Self {
        let d = cfg.dim;
        let scale = 1.0 / (d as f64).sqrt();
        let mut item_embeddings = uniform((n_items + 1, d), scale, rng);
        item_embeddings.row_mut(n_items).fill(0.0);
        let positional = uniform((cfg.max_len, d), scale, rng);
        let blocks = (0..cfg.n_blocks)
            .map(|_| AttentionBlock {
                attn_norm: LayerNorm::new(d),
                query: Linear::uniform(d, scale, rng),
                key: Linear::uniform(d, scale, rng),
                value: Linear::uniform(d, scale, rng),
                output: Linear::uniform(d, scale, rng),
                ffn_norm: LayerNorm::new(d),
                ffn_in: Linear::uniform(d, scale, rng),
                ffn_out: Linear::uniform(d, scale, rng),
            })
            .collect();
        Self {
            n_items,
            item_embeddings,
            positional,
            blocks,
            final_norm: LayerNorm::new(d),
            user_generator: Affine::zeros(d),
            item_generator: Affine::zeros(d),
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn pad_id(&self) -> usize {
        self.n_items
    }

    pub fn dim(&self) -> usize {
        self.item_embeddings.ncols()
    }

    pub fn max_len(&self) -> usize {
        self.positional.nrows()
    }

    /// Named parameter blocks in the fixed serialisation order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        tensor_list!(self, as_slice, iter)
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        tensor_list!(self, as_slice_mut, iter_mut)
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// True when the shapes match those implied by `cfg` and `n_items`.
    pub fn compatible_with(&self, cfg: &EncoderConfig, n_items: usize) -> bool {
        self.n_items == n_items
            && self.dim() == cfg.dim
            && self.max_len() == cfg.max_len
            && self.blocks.len() == cfg.n_blocks
    }

    /// Fails on the first block holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<(), ModelError> {
        for (name, values) in self.tensors() {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { block: name });
            }
        }
        Ok(())
    }

    /// `self += alpha · other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelParams) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }
}
