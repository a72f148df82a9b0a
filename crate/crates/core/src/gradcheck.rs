//! Central finite-difference verification of analytic gradients.

use crate::data::{generate_synthetic, FeatureRecord, HeadSet, LabelSet, ModalitySet, SyntheticConfig};
use crate::error::Result;
use crate::model::{multitask_loss, Batch, HeadWeights, MmmtModel, ModelConfig};
use crate::rng::SplitMix64;
use crate::tensor::Parameterized;

/// Which parameter elements to perturb.
#[derive(Debug, Clone, Copy)]
pub enum Selection {
    /// Every element of every parameter.
    All,
    /// Up to `per_tensor` randomly chosen elements from each parameter.
    Sampled { per_tensor: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstElement {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<WorstElement>,
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the gradients currently stored in `store` against
/// `(f(theta + eps) - f(theta - eps)) / 2 eps`.
///
/// The caller must have populated every `Parameter::grad` for the current
/// parameter values. Values are restored exactly after each probe.
pub fn grad_check<S, F>(store: &mut S, eps: f64, selection: Selection, mut f: F) -> GradCheckReport
where
    S: Parameterized + ?Sized,
    F: FnMut(&S) -> f64,
{
    let plan: Vec<(usize, Vec<usize>)> = {
        let params = store.params();
        let mut rng = match selection {
            Selection::Sampled { seed, .. } => Some(SplitMix64::new(seed)),
            Selection::All => None,
        };
        params
            .iter()
            .enumerate()
            .map(|(pi, p)| {
                let n = p.len();
                let elems = match (selection, rng.as_mut()) {
                    (Selection::Sampled { per_tensor, .. }, Some(rng)) if n > per_tensor => {
                        let mut idx: Vec<usize> = (0..n).collect();
                        rng.shuffle(&mut idx);
                        idx.truncate(per_tensor);
                        idx.sort_unstable();
                        idx
                    }
                    _ => (0..n).collect(),
                };
                (pi, elems)
            })
            .collect()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (pi, elems) in plan {
        for j in elems {
            let (original, analytic, name) = {
                let params = store.params();
                let p = params[pi];
                (p.value.data()[j], p.grad.data()[j], p.name.clone())
            };
            store.params_mut()[pi].value.data_mut()[j] = original + eps;
            let plus = f(store);
            store.params_mut()[pi].value.data_mut()[j] = original - eps;
            let minus = f(store);
            store.params_mut()[pi].value.data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(WorstElement {
                    param: name,
                    index: j,
                    analytic,
                    numeric,
                });
            }
        }
    }
    report
}

/// Checks the full multitask loss of a freshly initialized model on a
/// synthetic batch of `batch_size` records, in training mode with fixed
/// dropout masks.
pub fn check_model(
    config: &ModelConfig,
    batch_size: usize,
    seed: u64,
    eps: f64,
    selection: Selection,
) -> Result<GradCheckReport> {
    let mut rng = SplitMix64::new(seed);
    let mut model = MmmtModel::new(config.clone(), &mut rng)?;
    let data_seed = rng.next_u64();
    let recs = generate_synthetic(&SyntheticConfig::new(batch_size, data_seed, 0.5, config.feature_dims()))?;
    let refs: Vec<&FeatureRecord> = recs.iter().collect();
    let labels: Vec<LabelSet> = recs.iter().map(|r| r.labels).collect();
    let mask = ModalitySet::all();
    let batch = Batch::assemble(&refs, mask, &config.feature_dims())?;
    let weights = HeadWeights::default();
    let dropout = rng.fork();

    let (out, cache) = model.forward(&batch, mask, true, &mut dropout.clone())?;
    let (_, grads) = multitask_loss(&out, &labels, HeadSet::all(), &weights)?;
    model.zero_grads();
    model.backward(&batch, &cache, &grads, false)?;
    Ok(grad_check(&mut model, eps, selection, |m| {
        let (out, _) = m
            .forward(&batch, mask, true, &mut dropout.clone())
            .expect("shapes were checked by the first pass");
        multitask_loss(&out, &labels, HeadSet::all(), &weights)
            .expect("labels were checked by the first pass")
            .0
            .total
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Parameter, Tensor};

    #[test]
    fn linear_function_is_exact() {
        let coeffs = [3.0, -2.0, 0.5, 7.0];
        let mut params = vec![Parameter::new(
            "x",
            Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        )];
        params[0].grad = Tensor::new(vec![4], coeffs.to_vec()).unwrap();
        let report = grad_check(&mut params, 1e-5, Selection::All, |p| {
            p[0].value.data().iter().zip(coeffs).map(|(x, c)| x * c).sum()
        });
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.checked, 4);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        // f(x) = x^2 at x = 3: true gradient 6, corrupted to 12
        let mut params = vec![Parameter::new("x", Tensor::scalar(3.0))];
        params[0].grad = Tensor::scalar(12.0);
        let report = grad_check(&mut params, 1e-5, Selection::All, |p| p[0].value.data()[0].powi(2));
        assert!((report.max_rel_error - 0.5).abs() < 1e-6, "{report:?}");
        assert_eq!(report.worst.unwrap().param, "x");
    }

    #[test]
    fn values_restored_and_sampling_bounded() {
        let mut params = vec![Parameter::new("w", Tensor::filled(&[100], 0.25))];
        params[0].grad = Tensor::filled(&[100], 1.0);
        let report = grad_check(&mut params, 1e-5, Selection::Sampled { per_tensor: 7, seed: 1 }, |p| {
            p[0].value.sum()
        });
        assert_eq!(report.checked, 7);
        assert!(params[0].value.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn small_model_passes() {
        let cfg = ModelConfig {
            d_image: 4,
            d_clip: 3,
            d_text: 5,
            d_common: 8,
            d_model: 16,
            ..ModelConfig::default()
        };
        let report = check_model(&cfg, 2, 1, 1e-5, Selection::All).unwrap();
        assert_eq!(report.checked, cfg.parameter_count());
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
