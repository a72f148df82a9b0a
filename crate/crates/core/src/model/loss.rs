//! Summed multi-task ordinal loss and label decoding.

use serde::{Deserialize, Serialize};

use super::HeadOutputs;
use crate::data::{Head, HeadSet, LabelSet};
use crate::error::{Error, Result};
use crate::ordinal::{coral_loss, coral_predict, extend_labels, ExtendedLabels};
use crate::tensor::Tensor;

/// Per-head multipliers on the loss sum. All 1 by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadWeights {
    pub sentiment: f64,
    pub humour: f64,
    pub sarcasm: f64,
    pub offensive: f64,
    pub motivation: f64,
}

impl Default for HeadWeights {
    fn default() -> Self {
        Self {
            sentiment: 1.0,
            humour: 1.0,
            sarcasm: 1.0,
            offensive: 1.0,
            motivation: 1.0,
        }
    }
}

impl HeadWeights {
    pub fn get(&self, head: Head) -> f64 {
        match head {
            Head::Sentiment => self.sentiment,
            Head::Humour => self.humour,
            Head::Sarcasm => self.sarcasm,
            Head::Offensive => self.offensive,
            Head::Motivation => self.motivation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for h in Head::ALL {
            let w = self.get(h);
            if !w.is_finite() || w < 0.0 {
                return Err(Error::config(format!(
                    "loss weight for {h} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Weighted sum over enabled heads.
    pub total: f64,
    /// Unweighted mean loss per head; `None` for a disabled head or one
    /// without labels in the batch.
    pub per_head: [Option<f64>; 5],
}

/// Gradients of the total loss with respect to each head's logits.
#[derive(Debug, Clone, Default)]
pub struct HeadGrads {
    grads: [Option<Tensor>; 5],
}

impl HeadGrads {
    pub fn get(&self, head: Head) -> Option<&Tensor> {
        self.grads[head.index()].as_ref()
    }
}

/// The rank a head with `num_classes` outputs is trained on. Intensity
/// labels collapse to presence for a two-class head.
pub fn head_target(label: u8, head: Head, num_classes: usize) -> u8 {
    if num_classes == 2 && head.has_intensity() {
        u8::from(label > 0)
    } else {
        label
    }
}

/// CORAL loss per enabled head, averaged over the rows that carry that
/// head's label, then summed with `weights`.
pub fn multitask_loss(
    outputs: &HeadOutputs,
    labels: &[LabelSet],
    heads: HeadSet,
    weights: &HeadWeights,
) -> Result<(LossReport, HeadGrads)> {
    if heads.is_empty() {
        return Err(Error::config("head mask is empty"));
    }
    let rows = outputs.batch_size();
    if labels.len() != rows {
        return Err(Error::Dimension {
            op: "multitask_loss",
            left: vec![rows],
            right: vec![labels.len()],
        });
    }
    let mut total = 0.0;
    let mut per_head = [None; 5];
    let mut grads = HeadGrads::default();
    for head in heads.iter() {
        let logits = outputs.logits(head);
        let k = logits.cols() + 1;
        let mut present = Vec::new();
        let mut extended: Vec<ExtendedLabels> = Vec::new();
        for (r, l) in labels.iter().enumerate() {
            if let Some(v) = l.get(head) {
                let target = head_target(v, head, k);
                extended.push(extend_labels(
                    usize::from(target),
                    k,
                    &format!("batch row {r} ({head})"),
                )?);
                present.push(r);
            }
        }
        let mut full_grad = Tensor::zeros(logits.shape());
        if !present.is_empty() {
            let sub = Tensor::from_rows(&present.iter().map(|&r| logits.row(r).to_vec()).collect::<Vec<_>>())?;
            let (loss, g) = coral_loss(&sub, &extended)?;
            let w = weights.get(head);
            total += w * loss;
            per_head[head.index()] = Some(loss);
            for (i, &r) in present.iter().enumerate() {
                for (dst, src) in full_grad.row_mut(r).iter_mut().zip(g.row(i)) {
                    *dst = w * src;
                }
            }
        }
        grads.grads[head.index()] = Some(full_grad);
    }
    Ok((LossReport { total, per_head }, grads))
}

/// Decodes every head's ranks into label sets.
pub fn predict(outputs: &HeadOutputs) -> Vec<LabelSet> {
    let mut out = vec![LabelSet::default(); outputs.batch_size()];
    for head in Head::ALL {
        for (row, rank) in out.iter_mut().zip(coral_predict(outputs.logits(head))) {
            row.set(head, Some(rank as u8));
        }
    }
    out
}
