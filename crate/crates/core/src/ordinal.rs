//! CORAL ordinal regression heads.
//!
//! A head maps a pooled feature vector to a single score `g(x) = <x, w>` and
//! offsets it by `K - 1` threshold biases. Threshold `k` answers "is the rank
//! greater than k?", so labels are extended to a binary prefix code and the
//! loss is the sum of per-threshold binary cross-entropies.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Parameter, Parameterized, Tensor};

/// Binary prefix code of an ordinal rank: `rank` ones followed by zeros.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedLabels {
    bits: Vec<u8>,
}

impl ExtendedLabels {
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn rank(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

/// Extends `rank` on a `num_classes`-level scale. `record` names the source
/// record in the error.
pub fn extend_labels(rank: usize, num_classes: usize, record: &str) -> Result<ExtendedLabels> {
    if num_classes < 2 {
        return Err(Error::config(format!(
            "ordinal scale needs at least 2 classes, got {num_classes}"
        )));
    }
    if rank >= num_classes {
        return Err(Error::label(
            record,
            format!("rank {rank} outside [0, {}]", num_classes - 1),
        ));
    }
    let bits = (0..num_classes - 1).map(|k| u8::from(k < rank)).collect();
    Ok(ExtendedLabels { bits })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoralHead {
    pub weight: Parameter,
    pub bias: Parameter,
    num_classes: usize,
}

impl CoralHead {
    /// Weight drawn from `U(-sqrt(1/d), sqrt(1/d))`. Bias `k` starts at
    /// `K - 2 - 2k`: sorted, two apart and centred on zero.
    pub fn new(name: &str, input_dim: usize, num_classes: usize, rng: &mut SplitMix64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config(format!(
                "head `{name}` needs at least 2 classes, got {num_classes}"
            )));
        }
        let bound = (1.0 / input_dim as f64).sqrt();
        let w: Vec<f64> = (0..input_dim).map(|_| rng.uniform_symmetric(bound)).collect();
        let bias = (0..num_classes - 1)
            .map(|k| (num_classes as f64 - 2.0) - 2.0 * k as f64)
            .collect();
        Ok(Self {
            weight: Parameter::new(format!("{name}.weight"), Tensor::new(vec![input_dim], w)?),
            bias: Parameter::new(format!("{name}.bias"), Tensor::new(vec![num_classes - 1], bias)?),
            num_classes,
        })
    }

    /// Rebuilds a head from stored tensors.
    pub fn from_parts(weight: Parameter, bias: Parameter) -> Result<Self> {
        if weight.value.shape().len() != 1 || bias.value.shape().len() != 1 || bias.is_empty() {
            return Err(Error::Dimension {
                op: "coral_head",
                left: weight.value.shape().to_vec(),
                right: bias.value.shape().to_vec(),
            });
        }
        let num_classes = bias.len() + 1;
        Ok(Self {
            weight,
            bias,
            num_classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.weight.len()
    }

    /// `logit[b, k] = <pooled[b], w> + bias[k]`.
    pub fn forward(&self, pooled: &Tensor) -> Result<Tensor> {
        if pooled.cols() != self.input_dim() {
            return Err(Error::Dimension {
                op: "coral_forward",
                left: pooled.shape().to_vec(),
                right: self.weight.value.shape().to_vec(),
            });
        }
        let thresholds = self.num_classes - 1;
        let rows = pooled.rows();
        let mut out = Vec::with_capacity(rows * thresholds);
        for r in 0..rows {
            let g: f64 = pooled
                .row(r)
                .iter()
                .zip(self.weight.value.data())
                .map(|(a, b)| a * b)
                .sum();
            out.extend(self.bias.value.data().iter().map(|b| g + b));
        }
        Tensor::new(vec![rows, thresholds], out)
    }

    /// Accumulates parameter gradients for `grad_logits` and returns the
    /// gradient with respect to `pooled`.
    pub fn backward(&mut self, pooled: &Tensor, grad_logits: &Tensor) -> Result<Tensor> {
        let rows = pooled.rows();
        let d = self.input_dim();
        if grad_logits.shape() != [rows, self.num_classes - 1] {
            return Err(Error::Dimension {
                op: "coral_backward",
                left: grad_logits.shape().to_vec(),
                right: vec![rows, self.num_classes - 1],
            });
        }
        let mut grad_pooled = Tensor::zeros(&[rows, d]);
        for r in 0..rows {
            let gl = grad_logits.row(r);
            let dg: f64 = gl.iter().sum();
            for (b, g) in self.bias.grad.data_mut().iter_mut().zip(gl) {
                *b += g;
            }
            let x = pooled.row(r);
            for (wg, xv) in self.weight.grad.data_mut().iter_mut().zip(x) {
                *wg += dg * xv;
            }
            for (o, w) in grad_pooled.row_mut(r).iter_mut().zip(self.weight.value.data()) {
                *o = dg * w;
            }
        }
        Ok(grad_pooled)
    }
}

impl Parameterized for CoralHead {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean over the batch of the summed per-threshold binary cross-entropies,
/// plus the gradient with respect to the logits.
pub fn coral_loss(logits: &Tensor, labels: &[ExtendedLabels]) -> Result<(f64, Tensor)> {
    let rows = logits.rows();
    let thresholds = logits.cols();
    if labels.len() != rows || labels.iter().any(|l| l.bits.len() != thresholds) {
        return Err(Error::Dimension {
            op: "coral_loss",
            left: logits.shape().to_vec(),
            right: vec![labels.len(), labels.first().map_or(0, |l| l.bits.len())],
        });
    }
    if rows == 0 {
        return Ok((0.0, Tensor::zeros(logits.shape())));
    }
    let scale = 1.0 / rows as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(logits.shape());
    for (r, label) in labels.iter().enumerate() {
        let z = logits.row(r);
        let g = grad.row_mut(r);
        for k in 0..thresholds {
            let y = f64::from(label.bits[k]);
            // -y ln s(z) - (1-y) ln(1 - s(z)) = softplus(z) - y z
            total += softplus(z[k]) - y * z[k];
            g[k] = (sigmoid(z[k]) - y) * scale;
        }
    }
    Ok((total * scale, grad))
}

/// Rank per row: number of thresholds with `sigmoid(logit) > 0.5`.
pub fn coral_predict(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| logits.row(r).iter().filter(|&&z| z > 0.0).count())
        .collect()
}
