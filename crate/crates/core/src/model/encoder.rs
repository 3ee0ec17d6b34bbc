//! Causal multi-head self-attention encoder with a hand-written backward
//! pass.
//!
//! Per block, with `x` the block input:
//!
//! ```text
//! a   = LN_attn(x)
//! att = MHA(query = a, key = value = x) with a causal mask
//! y   = a + dropout(att · W_o + b_o)
//! c   = LN_ffn(y)
//! out = c + relu(c · W_1 + b_1) · W_2 + b_2
//! ```
//!
//! The encoder input is `√d · e_t + pos_t` (with embedding dropout) and the
//! stack ends with a final layer norm. Positions are counted from the oldest
//! item kept, so the hidden state at position `t` depends only on items
//! `0..=t`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, RngCore};

use super::params::{AttentionBlock, LayerNorm, Linear};
use super::{EncoderConfig, InputEmbeddings, ModelError, ModelParams};
use crate::data::ItemId;

const LN_EPS: f64 = 1e-8;

struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, ln: &LayerNorm) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let k = *s;
        row.mapv_inplace(|v| v * k);
    }
    let y = &xhat * &ln.gain + &ln.bias;
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    ln: &LayerNorm,
    cache: &NormCache,
    grad: &mut LayerNorm,
) -> Array2<f64> {
    grad.gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    grad.bias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * &ln.gain;
    for ((mut row, xhat), &inv_std) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(&cache.inv_std)
    {
        let mean_g = row.sum() / d;
        let mean_gx = row.dot(&xhat) / d;
        for (g, &xh) in row.iter_mut().zip(xhat) {
            *g = inv_std * (*g - mean_g - xh * mean_gx);
        }
    }
    dx
}

fn linear(x: &Array2<f64>, lin: &Linear) -> Array2<f64> {
    x.dot(&lin.weight) + &lin.bias
}

/// Accumulates the parameter gradient of `y = x · W + b` and returns `dx`.
fn linear_backward(
    x: &Array2<f64>,
    dy: &Array2<f64>,
    lin: &Linear,
    grad: &mut Linear,
) -> Array2<f64> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut grad.weight);
    grad.bias += &dy.sum_axis(Axis(0));
    dy.dot(&lin.weight.t())
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut dyn RngCore) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || if rng.random_bool(rate) { 0.0 } else { keep })
}

struct BlockCache {
    x: Array2<f64>,
    a: Array2<f64>,
    attn_norm: NormCache,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per head, row-major `L × L` attention weights (zero above the diagonal).
    probs: Vec<Vec<f64>>,
    ctx: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    c: Array2<f64>,
    ffn_norm: NormCache,
    hidden: Array2<f64>,
}

fn block_forward(
    block: &AttentionBlock,
    n_heads: usize,
    x: Array2<f64>,
    mut dropout: Option<(&mut dyn RngCore, f64)>,
) -> (Array2<f64>, BlockCache) {
    let (len, d) = x.dim();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let (a, attn_norm) = layer_norm(&x, &block.attn_norm);
    let q = linear(&a, &block.query);
    let k = linear(&x, &block.key);
    let v = linear(&x, &block.value);
    let (qs, ks, vs) = (
        q.as_slice().unwrap(),
        k.as_slice().unwrap(),
        v.as_slice().unwrap(),
    );

    let mut ctx = Array2::<f64>::zeros((len, d));
    let mut probs = vec![vec![0.0; len * len]; n_heads];
    {
        let cs = ctx.as_slice_mut().unwrap();
        let mut scores = vec![0.0; len];
        for (h, p) in probs.iter_mut().enumerate() {
            let off = h * dh;
            for t in 0..len {
                let qt = &qs[t * d + off..t * d + off + dh];
                let mut max = f64::NEG_INFINITY;
                for j in 0..=t {
                    let kj = &ks[j * d + off..j * d + off + dh];
                    let s = qt.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    scores[j] = s;
                    max = max.max(s);
                }
                let mut total = 0.0;
                for s in scores[..=t].iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let row = &mut p[t * len..t * len + len];
                let out = &mut cs[t * d + off..t * d + off + dh];
                for j in 0..=t {
                    let w = scores[j] / total;
                    row[j] = w;
                    let vj = &vs[j * d + off..j * d + off + dh];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o += w * vv;
                    }
                }
            }
        }
    }

    let mut att = linear(&ctx, &block.output);
    let attn_mask = dropout
        .as_mut()
        .map(|(rng, rate)| dropout_mask((len, d), *rate, &mut **rng));
    if let Some(mask) = &attn_mask {
        att *= mask;
    }
    let y = &a + &att;
    let (c, ffn_norm) = layer_norm(&y, &block.ffn_norm);
    let hidden = linear(&c, &block.ffn_in).mapv_into(|v| v.max(0.0));
    let out = linear(&hidden, &block.ffn_out) + &c;

    let cache = BlockCache {
        x,
        a,
        attn_norm,
        q,
        k,
        v,
        probs,
        ctx,
        attn_mask,
        c,
        ffn_norm,
        hidden,
    };
    (out, cache)
}

fn block_backward(
    block: &AttentionBlock,
    n_heads: usize,
    cache: &BlockCache,
    dout: &Array2<f64>,
    grad: &mut AttentionBlock,
) -> Array2<f64> {
    let (len, d) = dout.dim();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // Feed-forward sublayer with its residual.
    let mut dc = dout.clone();
    let mut dhidden = linear_backward(&cache.hidden, dout, &block.ffn_out, &mut grad.ffn_out);
    dhidden.zip_mut_with(&cache.hidden, |g, &h| {
        if h <= 0.0 {
            *g = 0.0
        }
    });
    // `hidden` is relu(c · W_1 + b_1); its pre-activation is only needed for the mask.
    dc += &linear_backward(&cache.c, &dhidden, &block.ffn_in, &mut grad.ffn_in);
    let dy = layer_norm_backward(&dc, &block.ffn_norm, &cache.ffn_norm, &mut grad.ffn_norm);

    // Attention sublayer; the residual branch carries the normalised input `a`.
    let mut da = dy.clone();
    let mut datt = dy;
    if let Some(mask) = &cache.attn_mask {
        datt *= mask;
    }
    let dctx = linear_backward(&cache.ctx, &datt, &block.output, &mut grad.output);

    let mut dq = Array2::<f64>::zeros((len, d));
    let mut dk = Array2::<f64>::zeros((len, d));
    let mut dv = Array2::<f64>::zeros((len, d));
    {
        let (qs, ks, vs) = (
            cache.q.as_slice().unwrap(),
            cache.k.as_slice().unwrap(),
            cache.v.as_slice().unwrap(),
        );
        let dcs = dctx.as_slice().unwrap();
        let (dqs, dks, dvs) = (
            dq.as_slice_mut().unwrap(),
            dk.as_slice_mut().unwrap(),
            dv.as_slice_mut().unwrap(),
        );
        let mut dp = vec![0.0; len];
        for (h, probs) in cache.probs.iter().enumerate() {
            let off = h * dh;
            for t in 0..len {
                let p = &probs[t * len..t * len + len];
                let gt = &dcs[t * d + off..t * d + off + dh];
                let mut weighted = 0.0;
                for j in 0..=t {
                    let vj = &vs[j * d + off..j * d + off + dh];
                    dp[j] = gt.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                    weighted += p[j] * dp[j];
                    let dvj = &mut dvs[j * d + off..j * d + off + dh];
                    for (o, &g) in dvj.iter_mut().zip(gt) {
                        *o += p[j] * g;
                    }
                }
                let qt = &qs[t * d + off..t * d + off + dh];
                for j in 0..=t {
                    let ds = p[j] * (dp[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &ks[j * d + off..j * d + off + dh];
                    let dqt = &mut dqs[t * d + off..t * d + off + dh];
                    for (o, &kv) in dqt.iter_mut().zip(kj) {
                        *o += ds * kv;
                    }
                    let dkj = &mut dks[j * d + off..j * d + off + dh];
                    for (o, &qv) in dkj.iter_mut().zip(qt) {
                        *o += ds * qv;
                    }
                }
            }
        }
    }

    da += &linear_backward(&cache.a, &dq, &block.query, &mut grad.query);
    let mut dx = linear_backward(&cache.x, &dk, &block.key, &mut grad.key);
    dx += &linear_backward(&cache.x, &dv, &block.value, &mut grad.value);
    dx += &layer_norm_backward(&da, &block.attn_norm, &cache.attn_norm, &mut grad.attn_norm);
    dx
}

/// Intermediate values of one forward pass, sufficient for the backward pass.
pub struct EncoderTrace {
    n_heads: usize,
    items: Vec<ItemId>,
    embedding_mask: Option<Array2<f64>>,
    blocks: Vec<BlockCache>,
    final_norm: NormCache,
    output: Array2<f64>,
}

impl EncoderTrace {
    /// Items actually encoded (after truncation to `max_len`).
    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    /// Hidden states, one row per position.
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// The representation of the whole sequence: the last hidden state.
    pub fn last(&self) -> ArrayView1<'_, f64> {
        self.output.row(self.output.nrows() - 1)
    }

    /// Back-propagates `d_output` (one row per position) into `grads`,
    /// including the item embedding rows reached through `embeddings`.
    pub fn backward(
        &self,
        params: &ModelParams,
        embeddings: &InputEmbeddings,
        d_output: &Array2<f64>,
        grads: &mut ModelParams,
    ) {
        let mut dx = layer_norm_backward(
            d_output,
            &params.final_norm,
            &self.final_norm,
            &mut grads.final_norm,
        );
        for ((block, cache), grad) in params
            .blocks
            .iter()
            .zip(&self.blocks)
            .zip(grads.blocks.iter_mut())
            .rev()
        {
            dx = block_backward(block, self.n_heads, cache, &dx, grad);
        }
        if let Some(mask) = &self.embedding_mask {
            dx *= mask;
        }
        let len = self.items.len();
        grads
            .positional
            .slice_mut(s![..len, ..])
            .scaled_add(1.0, &dx);
        let sqrt_d = (params.dim() as f64).sqrt();
        dx.mapv_inplace(|v| v * sqrt_d);
        embeddings.route_gradients(&self.items, &dx, grads);
    }

    /// Back-propagates a gradient on the last hidden state only.
    pub fn backward_last(
        &self,
        params: &ModelParams,
        embeddings: &InputEmbeddings,
        d_last: ArrayView1<'_, f64>,
        grads: &mut ModelParams,
    ) {
        let mut d_output = Array2::zeros(self.output.dim());
        d_output.row_mut(self.output.nrows() - 1).assign(&d_last);
        self.backward(params, embeddings, &d_output, grads);
    }
}

/// Runs the encoder over the most recent `max_len` items of `items`.
/// Dropout is applied only when `dropout` supplies a random stream.
pub fn encode_hidden(
    params: &ModelParams,
    cfg: &EncoderConfig,
    items: &[ItemId],
    embeddings: &InputEmbeddings,
    dropout: Option<&mut dyn RngCore>,
) -> Result<EncoderTrace, ModelError> {
    if items.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if let Some(&item) = items.iter().find(|&&i| i >= params.n_items()) {
        return Err(ModelError::UnknownItem {
            item,
            n_items: params.n_items(),
        });
    }
    let items = &items[items.len().saturating_sub(cfg.max_len)..];
    let len = items.len();
    let sqrt_d = (params.dim() as f64).sqrt();

    let mut x = embeddings.resolve(params, items);
    x.mapv_inplace(|v| v * sqrt_d);
    x += &params.positional.slice(s![..len, ..]);

    let mut dropout = dropout
        .filter(|_| cfg.dropout > 0.0)
        .map(|rng| (rng, cfg.dropout));
    let embedding_mask = dropout
        .as_mut()
        .map(|(rng, rate)| dropout_mask(x.dim(), *rate, &mut **rng));
    if let Some(mask) = &embedding_mask {
        x *= mask;
    }

    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let drop = dropout
            .as_mut()
            .map(|(rng, rate)| (&mut **rng as &mut dyn RngCore, *rate));
        let (out, cache) = block_forward(block, cfg.n_heads, x, drop);
        blocks.push(cache);
        x = out;
    }
    let (output, final_norm) = layer_norm(&x, &params.final_norm);
    Ok(EncoderTrace {
        n_heads: cfg.n_heads,
        items: items.to_vec(),
        embedding_mask,
        blocks,
        final_norm,
        output,
    })
}

/// `f_θ(S)`: the last hidden state of the encoded sequence.
pub fn encode_sequence(
    params: &ModelParams,
    cfg: &EncoderConfig,
    items: &[ItemId],
    embeddings: &InputEmbeddings,
    dropout: Option<&mut dyn RngCore>,
) -> Result<Array1<f64>, ModelError> {
    Ok(encode_hidden(params, cfg, items, embeddings, dropout)?
        .last()
        .to_owned())
}
