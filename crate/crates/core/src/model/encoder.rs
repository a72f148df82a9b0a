//! Building blocks of the set encoder: affine maps, layer norm, and the
//! pre-norm transformer layer.
//!
//! ```text
//! x -> LN -> multi-head self-attention -> dropout -> (+x) = x1
//! x1 -> LN -> W1 -> GELU -> W2 -> dropout -> (+x1) = y
//! ```
//!
//! Tokens are rows of a `[batch * tokens, d_model]` matrix, grouped by
//! sample. Attention only mixes rows of the same sample and carries no
//! positional information, so each layer is permutation-equivariant over a
//! sample's tokens.

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::{
    accumulate_matmul_tn, dropout, gelu, gelu_backward, layer_norm, layer_norm_backward, matmul, matmul_nt,
    softmax_rows, softmax_rows_backward, DropoutMask, LayerNormCache, Parameter, Parameterized, Tensor,
};

/// `y = x W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    /// Weights from `U(-sqrt(1/in), sqrt(1/in))`, bias zero.
    pub fn new(name: &str, input: usize, output: usize, rng: &mut SplitMix64) -> Self {
        let bound = (1.0 / input as f64).sqrt();
        let w = (0..input * output).map(|_| rng.uniform_symmetric(bound)).collect();
        Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                Tensor::new(vec![input, output], w).expect("sized above"),
            ),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[output])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = matmul(x, &self.weight.value)?;
        y.add_row_vector(&self.bias.value)?;
        Ok(y)
    }

    /// Accumulates weight and bias gradients; returns `dX` when asked.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        accumulate_matmul_tn(x, grad_out, &mut self.weight.grad)?;
        grad_out.accumulate_column_sums(&mut self.bias.grad)?;
        if need_input_grad {
            Ok(Some(matmul_nt(grad_out, &self.weight.value)?))
        } else {
            Ok(None)
        }
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Parameter,
    pub bias: Parameter,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize, eps: f64) -> Self {
        Self {
            gain: Parameter::new(format!("{name}.gain"), Tensor::filled(&[dim], 1.0)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[dim])),
            eps,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        layer_norm(x, &self.gain, &self.bias, self.eps)
    }

    pub fn backward(&mut self, grad_out: &Tensor, cache: &LayerNormCache) -> Result<Tensor> {
        layer_norm_backward(grad_out, cache, &mut self.gain, &mut self.bias)
    }
}

impl Parameterized for LayerNorm {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.gain, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gain, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub num_heads: usize,
    pub dropout_rate: f64,
    pub ln_attn: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub ln_ff: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

/// Forward values needed by [`EncoderLayer::backward`].
#[derive(Debug, Clone)]
pub struct LayerCache {
    tokens: usize,
    normed_attn: Tensor,
    ln_attn: LayerNormCache,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// `[batch * heads * tokens, tokens]` attention weights.
    probs: Tensor,
    context: Tensor,
    drop_attn: DropoutMask,
    normed_ff: Tensor,
    ln_ff: LayerNormCache,
    hidden_pre: Tensor,
    hidden: Tensor,
    drop_ff: DropoutMask,
}

impl EncoderLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        d_model: usize,
        num_heads: usize,
        ff_dim: usize,
        dropout_rate: f64,
        eps: f64,
        rng: &mut SplitMix64,
    ) -> Self {
        Self {
            num_heads,
            dropout_rate,
            ln_attn: LayerNorm::new(&format!("{name}.ln_attn"), d_model, eps),
            query: Linear::new(&format!("{name}.attn.query"), d_model, d_model, rng),
            key: Linear::new(&format!("{name}.attn.key"), d_model, d_model, rng),
            value: Linear::new(&format!("{name}.attn.value"), d_model, d_model, rng),
            out: Linear::new(&format!("{name}.attn.out"), d_model, d_model, rng),
            ln_ff: LayerNorm::new(&format!("{name}.ln_ff"), d_model, eps),
            ff_in: Linear::new(&format!("{name}.ff.in"), d_model, ff_dim, rng),
            ff_out: Linear::new(&format!("{name}.ff.out"), ff_dim, d_model, rng),
        }
    }

    fn head_dim(&self) -> usize {
        self.query.output_dim() / self.num_heads
    }

    /// Scaled dot-product scores for every (sample, head, query) row.
    fn attention_scores(&self, q: &Tensor, k: &Tensor, tokens: usize) -> Result<Tensor> {
        let d = q.cols();
        let dh = self.head_dim();
        let heads = self.num_heads;
        let batch = q.rows() / tokens;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut scores = Vec::with_capacity(batch * heads * tokens * tokens);
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..tokens {
                    let qi = &q.data()[(b * tokens + i) * d + off..][..dh];
                    for j in 0..tokens {
                        let kj = &k.data()[(b * tokens + j) * d + off..][..dh];
                        let dot: f64 = qi.iter().zip(kj).map(|(x, y)| x * y).sum();
                        scores.push(dot * scale);
                    }
                }
            }
        }
        Tensor::new(vec![batch * heads * tokens, tokens], scores)
    }

    fn attention_context(&self, probs: &Tensor, v: &Tensor, tokens: usize) -> Tensor {
        let d = v.cols();
        let dh = self.head_dim();
        let batch = v.rows() / tokens;
        let mut ctx = Tensor::zeros(v.shape());
        for b in 0..batch {
            for h in 0..self.num_heads {
                let off = h * dh;
                for i in 0..tokens {
                    let p = probs.row((b * self.num_heads + h) * tokens + i);
                    let row = (b * tokens + i) * d + off;
                    for (j, pj) in p.iter().enumerate() {
                        let vj = (b * tokens + j) * d + off;
                        for c in 0..dh {
                            let add = pj * v.data()[vj + c];
                            ctx.data_mut()[row + c] += add;
                        }
                    }
                }
            }
        }
        ctx
    }

    pub fn forward(
        &self,
        x: &Tensor,
        tokens: usize,
        training: bool,
        rng: &mut SplitMix64,
    ) -> Result<(Tensor, LayerCache)> {
        let (normed_attn, ln_attn) = self.ln_attn.forward(x)?;
        let q = self.query.forward(&normed_attn)?;
        let k = self.key.forward(&normed_attn)?;
        let v = self.value.forward(&normed_attn)?;
        let probs = softmax_rows(&self.attention_scores(&q, &k, tokens)?);
        let context = self.attention_context(&probs, &v, tokens);
        let attn = self.out.forward(&context)?;
        let (attn, drop_attn) = dropout(&attn, self.dropout_rate, rng, training)?;
        let x1 = x.add(&attn)?;

        let (normed_ff, ln_ff) = self.ln_ff.forward(&x1)?;
        let hidden_pre = self.ff_in.forward(&normed_ff)?;
        let hidden = gelu(&hidden_pre);
        let ff = self.ff_out.forward(&hidden)?;
        let (ff, drop_ff) = dropout(&ff, self.dropout_rate, rng, training)?;
        let y = x1.add(&ff)?;

        let cache = LayerCache {
            tokens,
            normed_attn,
            ln_attn,
            q,
            k,
            v,
            probs,
            context,
            drop_attn,
            normed_ff,
            ln_ff,
            hidden_pre,
            hidden,
            drop_ff,
        };
        Ok((y, cache))
    }

    /// Accumulates all parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, grad_out: &Tensor, cache: &LayerCache) -> Result<Tensor> {
        // feed-forward branch
        let d_ff = cache.drop_ff.backward(grad_out);
        let d_hidden = self.ff_out.backward(&cache.hidden, &d_ff, true)?.unwrap();
        let d_hidden_pre = gelu_backward(&cache.hidden_pre, &d_hidden)?;
        let d_normed_ff = self.ff_in.backward(&cache.normed_ff, &d_hidden_pre, true)?.unwrap();
        let mut d_x1 = self.ln_ff.backward(&d_normed_ff, &cache.ln_ff)?;
        d_x1.add_assign(grad_out)?;

        // attention branch
        let d_attn = cache.drop_attn.backward(&d_x1);
        let d_context = self.out.backward(&cache.context, &d_attn, true)?.unwrap();
        let (d_q, d_k, d_v) = self.attention_backward(&d_context, cache)?;
        let mut d_normed = self.query.backward(&cache.normed_attn, &d_q, true)?.unwrap();
        d_normed.add_assign(&self.key.backward(&cache.normed_attn, &d_k, true)?.unwrap())?;
        d_normed.add_assign(&self.value.backward(&cache.normed_attn, &d_v, true)?.unwrap())?;
        let mut d_x = self.ln_attn.backward(&d_normed, &cache.ln_attn)?;
        d_x.add_assign(&d_x1)?;
        Ok(d_x)
    }

    fn attention_backward(&self, d_context: &Tensor, cache: &LayerCache) -> Result<(Tensor, Tensor, Tensor)> {
        let tokens = cache.tokens;
        let d = cache.v.cols();
        let dh = self.head_dim();
        let heads = self.num_heads;
        let batch = cache.v.rows() / tokens;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut d_v = Tensor::zeros(cache.v.shape());
        let mut d_probs = Tensor::zeros(cache.probs.shape());
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..tokens {
                    let prow = (b * heads + h) * tokens + i;
                    let dc = &d_context.data()[(b * tokens + i) * d + off..][..dh];
                    for j in 0..tokens {
                        let vj = (b * tokens + j) * d + off;
                        let vrow = &cache.v.data()[vj..vj + dh];
                        let dp: f64 = dc.iter().zip(vrow).map(|(x, y)| x * y).sum();
                        d_probs.row_mut(prow)[j] = dp;
                        let p = cache.probs.row(prow)[j];
                        for (dv, g) in d_v.data_mut()[vj..vj + dh].iter_mut().zip(dc) {
                            *dv += p * g;
                        }
                    }
                }
            }
        }
        let d_scores = softmax_rows_backward(&cache.probs, &d_probs)?;

        let mut d_q = Tensor::zeros(cache.q.shape());
        let mut d_k = Tensor::zeros(cache.k.shape());
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..tokens {
                    let ds = d_scores.row((b * heads + h) * tokens + i);
                    let qi = (b * tokens + i) * d + off;
                    for (j, s) in ds.iter().enumerate() {
                        let g = s * scale;
                        let kj = (b * tokens + j) * d + off;
                        for c in 0..dh {
                            d_q.data_mut()[qi + c] += g * cache.k.data()[kj + c];
                            d_k.data_mut()[kj + c] += g * cache.q.data()[qi + c];
                        }
                    }
                }
            }
        }
        Ok((d_q, d_k, d_v))
    }
}

impl Parameterized for EncoderLayer {
    fn params(&self) -> Vec<&Parameter> {
        let mut p = self.ln_attn.params();
        p.extend(self.query.params());
        p.extend(self.key.params());
        p.extend(self.value.params());
        p.extend(self.out.params());
        p.extend(self.ln_ff.params());
        p.extend(self.ff_in.params());
        p.extend(self.ff_out.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.ln_attn.params_mut();
        p.extend(self.query.params_mut());
        p.extend(self.key.params_mut());
        p.extend(self.value.params_mut());
        p.extend(self.out.params_mut());
        p.extend(self.ln_ff.params_mut());
        p.extend(self.ff_in.params_mut());
        p.extend(self.ff_out.params_mut());
        p
    }
}
