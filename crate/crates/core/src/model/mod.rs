//! The multi-modal multi-task network.
//!
//! Each enabled modality vector is projected to a common width, mapped to
//! the encoder width by a shared adapter, and becomes one token. The tokens
//! form an unordered set: no positional embedding is added and the encoder
//! output is mean-pooled, so the result does not depend on token order. The
//! pooled vector feeds one ordinal head per task.

mod checkpoint;
mod encoder;
mod loss;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureDims, FeatureRecord, Head, Modality, ModalitySet};
use crate::error::{Error, Result};
use crate::ordinal::CoralHead;
use crate::rng::SplitMix64;
use crate::tensor::{Parameter, Parameterized, Tensor, DEFAULT_LAYER_NORM_EPS};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use encoder::{EncoderLayer, LayerCache, LayerNorm, Linear};
pub use loss::{head_target, multitask_loss, predict, HeadGrads, HeadWeights, LossReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_image: usize,
    pub d_clip: usize,
    pub d_text: usize,
    /// Width every modality is projected to before the adapter.
    pub d_common: usize,
    /// Encoder width.
    pub d_model: usize,
    pub layers: usize,
    pub heads_per_layer: Vec<usize>,
    pub ff_multiplier: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
    pub layer_norm_eps: f64,
    /// Train humour / sarcasm / offensive as presence (K = 2) instead of
    /// 0-3 intensity.
    pub binary_emotion_heads: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_image: 1792,
            d_clip: 512,
            d_text: 768,
            d_common: 512,
            d_model: 64,
            layers: 4,
            heads_per_layer: vec![8, 8, 16, 16],
            ff_multiplier: 4,
            dropout_rate: 0.1,
            activation: Activation::Gelu,
            layer_norm_eps: DEFAULT_LAYER_NORM_EPS,
            binary_emotion_heads: false,
        }
    }
}

impl ModelConfig {
    pub fn feature_dims(&self) -> FeatureDims {
        FeatureDims::new(self.d_image, self.d_clip, self.d_text)
    }

    pub fn with_feature_dims(mut self, dims: FeatureDims) -> Self {
        self.d_image = dims.image;
        self.d_clip = dims.clip;
        self.d_text = dims.text;
        self
    }

    /// Classes predicted by the head for `head`.
    pub fn head_classes(&self, head: Head) -> usize {
        if self.binary_emotion_heads && head.has_intensity() {
            2
        } else {
            head.num_classes()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_image", self.d_image),
            ("d_clip", self.d_clip),
            ("d_text", self.d_text),
            ("d_common", self.d_common),
            ("d_model", self.d_model),
            ("ff_multiplier", self.ff_multiplier),
        ] {
            if v == 0 {
                return Err(Error::config(format!("model.{name} must be positive")));
            }
        }
        if self.heads_per_layer.len() != self.layers {
            return Err(Error::config(format!(
                "model.heads_per_layer has {} entries for {} layers",
                self.heads_per_layer.len(),
                self.layers
            )));
        }
        for (i, &h) in self.heads_per_layer.iter().enumerate() {
            if h == 0 || !self.d_model.is_multiple_of(h) {
                return Err(Error::config(format!(
                    "model.heads_per_layer[{i}] = {h} does not divide d_model = {}",
                    self.d_model
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "model.dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return Err(Error::config("model.layer_norm_eps must be positive"));
        }
        Ok(())
    }

    /// Closed-form trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let c = self.d_common;
        let ff = self.ff_multiplier * d;
        let projections = (self.d_image + self.d_clip + self.d_text) * c + 3 * c;
        let adapter = c * d + d;
        let per_layer = 2 * (2 * d) + 4 * (d * d + d) + (d * ff + ff) + (ff * d + d);
        let heads: usize = Head::ALL.iter().map(|h| d + self.head_classes(*h) - 1).sum();
        projections + adapter + self.layers * per_layer + heads
    }
}

/// Per-head logits, `[batch, K - 1]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    logits: Vec<Tensor>,
}

impl HeadOutputs {
    pub fn new(logits: Vec<Tensor>) -> Result<Self> {
        if logits.len() != Head::ALL.len() {
            return Err(Error::config(format!("expected 5 head outputs, got {}", logits.len())));
        }
        Ok(Self { logits })
    }

    pub fn logits(&self, head: Head) -> &Tensor {
        &self.logits[head.index()]
    }

    pub fn sentiment_logits(&self) -> &Tensor {
        self.logits(Head::Sentiment)
    }

    pub fn motivation_logit(&self) -> &Tensor {
        self.logits(Head::Motivation)
    }

    pub fn batch_size(&self) -> usize {
        self.logits[0].rows()
    }

    /// Row range `[start, end)` of every head.
    pub fn slice_rows(&self, start: usize, end: usize) -> HeadOutputs {
        HeadOutputs {
            logits: self
                .logits
                .iter()
                .map(|t| {
                    let c = t.cols();
                    Tensor::new(vec![end - start, c], t.data()[start * c..end * c].to_vec()).unwrap()
                })
                .collect(),
        }
    }

    /// Concatenates batches row-wise.
    pub fn concat(parts: &[HeadOutputs]) -> Result<HeadOutputs> {
        let mut logits = Vec::with_capacity(5);
        for h in 0..5 {
            let cols = parts.first().map_or(0, |p| p.logits[h].cols());
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                data.extend_from_slice(p.logits[h].data());
                rows += p.logits[h].rows();
            }
            logits.push(Tensor::new(vec![rows, cols], data)?);
        }
        Ok(HeadOutputs { logits })
    }
}

/// Stacked modality inputs for a batch, converted to `f64`.
#[derive(Debug, Clone)]
pub struct Batch {
    inputs: Vec<Option<Tensor>>,
    size: usize,
}

impl Batch {
    /// Gathers the vectors of every modality in `mask`. A record missing an
    /// enabled modality is a data error.
    pub fn assemble(records: &[&FeatureRecord], mask: ModalitySet, dims: &FeatureDims) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::config("modality mask is empty"));
        }
        let mut inputs = vec![None, None, None];
        for m in mask.iter() {
            let d = dims.get(m);
            let mut data = Vec::with_capacity(records.len() * d);
            for rec in records {
                let v = rec
                    .vector(m)
                    .ok_or_else(|| Error::data(format!("record `{}` lacks the {m} vector", rec.id)))?;
                if v.len() != d {
                    return Err(Error::data(format!(
                        "record `{}`: {m} vector has {} values, model expects {d}",
                        rec.id,
                        v.len()
                    )));
                }
                data.extend(v.iter().map(|&x| f64::from(x)));
            }
            inputs[m.index()] = Some(Tensor::new(vec![records.len(), d], data)?);
        }
        Ok(Self {
            inputs,
            size: records.len(),
        })
    }

    pub fn from_tensors(image: Option<Tensor>, clip: Option<Tensor>, text: Option<Tensor>) -> Result<Self> {
        let inputs = vec![image, clip, text];
        let size = inputs
            .iter()
            .flatten()
            .map(Tensor::rows)
            .next()
            .ok_or_else(|| Error::config("batch has no modality"))?;
        if inputs.iter().flatten().any(|t| t.rows() != size) {
            return Err(Error::data("modality tensors disagree on batch size"));
        }
        Ok(Self { inputs, size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn input(&self, m: Modality) -> Option<&Tensor> {
        self.inputs[m.index()].as_ref()
    }

    pub fn input_mut(&mut self, m: Modality) -> Option<&mut Tensor> {
        self.inputs[m.index()].as_mut()
    }

    pub fn modalities(&self) -> ModalitySet {
        let mut s = ModalitySet::empty();
        for m in Modality::ALL {
            if self.inputs[m.index()].is_some() {
                s.insert(m);
            }
        }
        s
    }
}

/// Forward values for [`MmmtModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    order: Vec<Modality>,
    projected: Vec<Tensor>,
    layers: Vec<LayerCache>,
    pooled: Tensor,
}

/// Gradients with respect to the raw modality inputs.
#[derive(Debug, Clone)]
pub struct InputGrads {
    grads: Vec<Option<Tensor>>,
}

impl InputGrads {
    /// `None` for a modality that contributed no token.
    pub fn get(&self, m: Modality) -> Option<&Tensor> {
        self.grads[m.index()].as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmmtModel {
    config: ModelConfig,
    modalities: ModalitySet,
    pub projections: Vec<Linear>,
    pub adapter: Linear,
    pub layers: Vec<EncoderLayer>,
    pub heads: Vec<CoralHead>,
}

impl MmmtModel {
    /// Uniform `+-sqrt(1/fan_in)` weights, zero biases, unit layer-norm gains.
    pub fn new(config: ModelConfig, rng: &mut SplitMix64) -> Result<Self> {
        config.validate()?;
        let dims = config.feature_dims();
        let projections = Modality::ALL
            .iter()
            .map(|m| Linear::new(&format!("proj.{m}"), dims.get(*m), config.d_common, rng))
            .collect();
        let adapter = Linear::new("adapter", config.d_common, config.d_model, rng);
        let layers = config
            .heads_per_layer
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                EncoderLayer::new(
                    &format!("encoder.{i}"),
                    config.d_model,
                    h,
                    config.ff_multiplier * config.d_model,
                    config.dropout_rate,
                    config.layer_norm_eps,
                    rng,
                )
            })
            .collect();
        let heads = Head::ALL
            .iter()
            .map(|h| CoralHead::new(&format!("head.{h}"), config.d_model, config.head_classes(*h), rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            modalities: ModalitySet::all(),
            projections,
            adapter,
            layers,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn feature_dims(&self) -> FeatureDims {
        self.config.feature_dims()
    }

    /// Modalities the model was trained on; the default inference mask.
    pub fn modalities(&self) -> ModalitySet {
        self.modalities
    }

    pub fn set_modalities(&mut self, modalities: ModalitySet) {
        self.modalities = modalities;
    }

    pub fn head(&self, head: Head) -> &CoralHead {
        &self.heads[head.index()]
    }

    /// Forward pass with tokens in canonical image, clip, text order.
    pub fn forward(
        &self,
        batch: &Batch,
        mask: ModalitySet,
        training: bool,
        rng: &mut SplitMix64,
    ) -> Result<(HeadOutputs, ForwardCache)> {
        let order: Vec<Modality> = mask.iter().collect();
        self.forward_ordered(batch, &order, training, rng)
    }

    /// Forward pass with an explicit token order.
    pub fn forward_ordered(
        &self,
        batch: &Batch,
        order: &[Modality],
        training: bool,
        rng: &mut SplitMix64,
    ) -> Result<(HeadOutputs, ForwardCache)> {
        if order.is_empty() {
            return Err(Error::config("modality mask is empty"));
        }
        if ModalitySet::of(order).len() != order.len() {
            return Err(Error::config(format!("duplicate modality in token order {order:?}")));
        }
        let n = batch.size();
        let tokens = order.len();
        let d = self.config.d_model;

        let mut projected = Vec::with_capacity(tokens);
        let mut x = Tensor::zeros(&[n * tokens, d]);
        for (t, m) in order.iter().enumerate() {
            let input = batch
                .input(*m)
                .ok_or_else(|| Error::data(format!("batch lacks the {m} modality")))?;
            let p = self.projections[m.index()].forward(input)?;
            let a = self.adapter.forward(&p)?;
            for b in 0..n {
                x.row_mut(b * tokens + t).copy_from_slice(a.row(b));
            }
            projected.push(p);
        }

        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = layer.forward(&x, tokens, training, rng)?;
            layer_caches.push(cache);
            x = y;
        }

        let mut pooled = Tensor::zeros(&[n, d]);
        let inv = 1.0 / tokens as f64;
        for b in 0..n {
            let out = pooled.row_mut(b);
            for t in 0..tokens {
                for (o, v) in out.iter_mut().zip(x.row(b * tokens + t)) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o *= inv);
        }

        let logits = self
            .heads
            .iter()
            .map(|h| h.forward(&pooled))
            .collect::<Result<Vec<_>>>()?;
        let cache = ForwardCache {
            order: order.to_vec(),
            projected,
            layers: layer_caches,
            pooled,
        };
        Ok((HeadOutputs::new(logits)?, cache))
    }

    /// Eval-mode forward over records, in mini-batches.
    pub fn infer(&self, records: &[FeatureRecord], mask: ModalitySet, batch_size: usize) -> Result<HeadOutputs> {
        let dims = self.feature_dims();
        let mut rng = SplitMix64::new(0);
        let mut parts = Vec::new();
        for chunk in records.chunks(batch_size.max(1)) {
            let refs: Vec<&FeatureRecord> = chunk.iter().collect();
            let batch = Batch::assemble(&refs, mask, &dims)?;
            parts.push(self.forward(&batch, mask, false, &mut rng)?.0);
        }
        if parts.is_empty() {
            return HeadOutputs::new(
                Head::ALL
                    .iter()
                    .map(|h| Tensor::zeros(&[0, self.config.head_classes(*h) - 1]))
                    .collect(),
            );
        }
        HeadOutputs::concat(&parts)
    }

    /// Accumulates parameter gradients for the given logit gradients.
    /// Returns input gradients when `input_grads` is set.
    pub fn backward(
        &mut self,
        batch: &Batch,
        cache: &ForwardCache,
        grads: &HeadGrads,
        input_grads: bool,
    ) -> Result<Option<InputGrads>> {
        let n = batch.size();
        let tokens = cache.order.len();
        let d = self.config.d_model;

        let mut d_pooled = Tensor::zeros(&[n, d]);
        for head in Head::ALL {
            if let Some(g) = grads.get(head) {
                let dp = self.heads[head.index()].backward(&cache.pooled, g)?;
                d_pooled.add_assign(&dp)?;
            }
        }

        let inv = 1.0 / tokens as f64;
        let mut dx = Tensor::zeros(&[n * tokens, d]);
        for b in 0..n {
            for t in 0..tokens {
                for (o, g) in dx.row_mut(b * tokens + t).iter_mut().zip(d_pooled.row(b)) {
                    *o = g * inv;
                }
            }
        }

        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            dx = layer.backward(&dx, lc)?;
        }

        let mut input_out = vec![None, None, None];
        for (t, m) in cache.order.iter().enumerate() {
            let mut d_a = Tensor::zeros(&[n, d]);
            for b in 0..n {
                d_a.row_mut(b).copy_from_slice(dx.row(b * tokens + t));
            }
            let d_p = self.adapter.backward(&cache.projected[t], &d_a, true)?.unwrap();
            let input = batch
                .input(*m)
                .ok_or_else(|| Error::data(format!("batch lacks the {m} modality")))?;
            input_out[m.index()] = self.projections[m.index()].backward(input, &d_p, input_grads)?;
        }
        Ok(input_grads.then_some(InputGrads { grads: input_out }))
    }
}

impl Parameterized for MmmtModel {
    fn params(&self) -> Vec<&Parameter> {
        let mut p = Vec::new();
        for proj in &self.projections {
            p.extend(proj.params());
        }
        p.extend(self.adapter.params());
        for layer in &self.layers {
            p.extend(layer.params());
        }
        for head in &self.heads {
            p.extend(head.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = Vec::new();
        for proj in &mut self.projections {
            p.extend(proj.params_mut());
        }
        p.extend(self.adapter.params_mut());
        for layer in &mut self.layers {
            p.extend(layer.params_mut());
        }
        for head in &mut self.heads {
            p.extend(head.params_mut());
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, HeadSet, LabelSet, SyntheticConfig};
    use crate::gradcheck::{grad_check, Selection};

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_image: 6,
            d_clip: 5,
            d_text: 7,
            d_common: 12,
            d_model: 16,
            layers: 4,
            heads_per_layer: vec![8, 8, 16, 16],
            ff_multiplier: 4,
            ..ModelConfig::default()
        }
    }

    fn records(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<FeatureRecord> {
        generate_synthetic(&SyntheticConfig::new(n, seed, 0.5, cfg.feature_dims())).unwrap()
    }

    #[test]
    fn default_parameter_count() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.parameter_count(), 1_807_500);
        let model = MmmtModel::new(cfg.clone(), &mut SplitMix64::new(0)).unwrap();
        assert_eq!(model.num_parameters(), cfg.parameter_count());
    }

    #[test]
    fn enumerated_count_matches_formula_for_variants() {
        for cfg in [
            tiny_config(),
            ModelConfig {
                binary_emotion_heads: true,
                ..tiny_config()
            },
            ModelConfig {
                layers: 2,
                heads_per_layer: vec![1, 2],
                ff_multiplier: 2,
                ..tiny_config()
            },
        ] {
            let model = MmmtModel::new(cfg.clone(), &mut SplitMix64::new(1)).unwrap();
            assert_eq!(model.num_parameters(), cfg.parameter_count());
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = MmmtModel::new(tiny_config(), &mut SplitMix64::new(5)).unwrap();
        let b = MmmtModel::new(tiny_config(), &mut SplitMix64::new(5)).unwrap();
        assert_eq!(a, b);
        let c = MmmtModel::new(tiny_config(), &mut SplitMix64::new(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = ModelConfig {
            d_model: 65,
            ..ModelConfig::default()
        };
        assert!(matches!(
            MmmtModel::new(cfg, &mut SplitMix64::new(0)),
            Err(Error::Config(_))
        ));
        let cfg = ModelConfig {
            heads_per_layer: vec![8, 8],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            dropout_rate: 1.0,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn head_output_widths() {
        let cfg = tiny_config();
        let model = MmmtModel::new(cfg.clone(), &mut SplitMix64::new(2)).unwrap();
        let recs = records(&cfg, 3, 1);
        let out = model.infer(&recs, ModalitySet::all(), 8).unwrap();
        assert_eq!(out.sentiment_logits().shape(), &[3, 2]);
        assert_eq!(out.logits(Head::Humour).shape(), &[3, 3]);
        assert_eq!(out.logits(Head::Offensive).shape(), &[3, 3]);
        assert_eq!(out.motivation_logit().shape(), &[3, 1]);
    }

    #[test]
    fn token_order_does_not_matter() {
        let cfg = tiny_config();
        let model = MmmtModel::new(cfg.clone(), &mut SplitMix64::new(3)).unwrap();
        let recs = records(&cfg, 4, 2);
        let refs: Vec<&FeatureRecord> = recs.iter().collect();
        let batch = Batch::assemble(&refs, ModalitySet::all(), &cfg.feature_dims()).unwrap();
        let mut rng = SplitMix64::new(0);
        use Modality::*;
        let (a, _) = model
            .forward_ordered(&batch, &[Text, Clip, Image], false, &mut rng)
            .unwrap();
        let (b, _) = model
            .forward_ordered(&batch, &[Image, Clip, Text], false, &mut rng)
            .unwrap();
        for h in Head::ALL {
            for (x, y) in a.logits(h).data().iter().zip(b.logits(h).data()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn masked_modality_has_no_influence() {
        let cfg = tiny_config();
        let model = MmmtModel::new(cfg.clone(), &mut SplitMix64::new(4)).unwrap();
        let mut recs = records(&cfg, 2, 3);
        let mask = ModalitySet::of(&[Modality::Text]);
        let before = model.infer(&recs, mask, 8).unwrap();
        for r in recs.iter_mut() {
            r.image.as_mut().unwrap().iter_mut().for_each(|v| *v += 3.0);
            r.clip = None;
        }
        let after = model.infer(&recs, mask, 8).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn missing_modality_and_empty_mask_errors() {
        let cfg = tiny_config();
        let model = MmmtModel::new(cfg.clone(), &mut SplitMix64::new(4)).unwrap();
        let mut recs = records(&cfg, 2, 3);
        recs[1].clip = None;
        let err = model.infer(&recs, ModalitySet::all(), 8).unwrap_err();
        assert!(matches!(&err, Error::Data(m) if m.contains(&recs[1].id)), "{err}");
        assert!(matches!(
            model.infer(&recs, ModalitySet::empty(), 8),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn identical_records_give_identical_rows() {
        let cfg = tiny_config();
        let model = MmmtModel::new(cfg.clone(), &mut SplitMix64::new(8)).unwrap();
        let rec = records(&cfg, 1, 4).remove(0);
        let out = model.infer(&[rec.clone(), rec], ModalitySet::all(), 8).unwrap();
        for h in Head::ALL {
            let t = out.logits(h);
            assert_eq!(t.row(0), t.row(1));
        }
    }

    #[test]
    fn full_model_gradient_check_with_dropout_masks() {
        let cfg = tiny_config();
        let mut model = MmmtModel::new(cfg.clone(), &mut SplitMix64::new(10)).unwrap();
        let recs = records(&cfg, 2, 5);
        let refs: Vec<&FeatureRecord> = recs.iter().collect();
        let labels: Vec<LabelSet> = recs.iter().map(|r| r.labels).collect();
        let batch = Batch::assemble(&refs, ModalitySet::all(), &cfg.feature_dims()).unwrap();
        let weights = HeadWeights::default();
        let rng = SplitMix64::new(77);
        let loss_of = |m: &MmmtModel| {
            let (out, _) = m.forward(&batch, ModalitySet::all(), true, &mut rng.clone()).unwrap();
            multitask_loss(&out, &labels, HeadSet::all(), &weights).unwrap().0.total
        };
        let (out, cache) = model
            .forward(&batch, ModalitySet::all(), true, &mut rng.clone())
            .unwrap();
        let (_, grads) = multitask_loss(&out, &labels, HeadSet::all(), &weights).unwrap();
        model.zero_grads();
        model.backward(&batch, &cache, &grads, false).unwrap();
        let report = grad_check(&mut model, 1e-5, Selection::All, loss_of);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn input_gradient_is_zero_for_masked_modality() {
        let cfg = tiny_config();
        let mut model = MmmtModel::new(cfg.clone(), &mut SplitMix64::new(12)).unwrap();
        let recs = records(&cfg, 2, 6);
        let refs: Vec<&FeatureRecord> = recs.iter().collect();
        let labels: Vec<LabelSet> = recs.iter().map(|r| r.labels).collect();
        let mask = ModalitySet::of(&[Modality::Image, Modality::Text]);
        let batch = Batch::assemble(&refs, ModalitySet::all(), &cfg.feature_dims()).unwrap();
        let (out, cache) = model.forward(&batch, mask, false, &mut SplitMix64::new(0)).unwrap();
        let (_, grads) = multitask_loss(&out, &labels, HeadSet::all(), &HeadWeights::default()).unwrap();
        let ig = model.backward(&batch, &cache, &grads, true).unwrap().unwrap();
        assert!(ig.get(Modality::Clip).is_none());
        assert!(ig.get(Modality::Text).unwrap().data().iter().any(|v| *v != 0.0));
        let clip_grads = model.projections[Modality::Clip.index()].weight.grad.data();
        assert!(clip_grads.iter().all(|v| *v == 0.0));
    }
}
