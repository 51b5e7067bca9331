//! The trainable part layer.
//!
//! A 1×1 convolution over L2-normalized backbone vectors: each weight row is
//! a part prototype, the last row is background. Logits are cosine scores
//! times a fixed `logit_scale`, followed by a softmax over channels.

mod adagrad;
mod kmeans;

pub use adagrad::AdagradState;
pub use kmeans::{init_from_clusters, sample_backbone_vectors, spherical_kmeans};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, ln, sqrt};
use crate::pseudo_gt::PseudoGT;
use crate::tensor::{FeatureMap, Real};
use crate::{Error, Result};

/// Floor inside the log of the NLL loss.
pub const LOG_EPS: f64 = 1e-8;

/// `c_out × c_in` weights plus the softmax logit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PartLayer {
    c_in: usize,
    c_out: usize,
    weights: Vec<f64>,
    logit_scale: f64,
}

impl PartLayer {
    pub fn new(c_in: usize, c_out: usize, weights: Vec<f64>, logit_scale: f64) -> Result<Self> {
        if c_in == 0 || c_out < 2 {
            return Err(Error::Shape(format!(
                "part layer needs c_in >= 1 and c_out >= 2, got {c_in} and {c_out}"
            )));
        }
        if weights.len() != c_in * c_out {
            return Err(Error::Shape(format!(
                "{} weights for a {c_out}x{c_in} layer",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("part layer weights"));
        }
        if !(logit_scale.is_finite() && logit_scale > 0.0) {
            return Err(Error::InvalidArgument("logit scale must be positive".into()));
        }
        Ok(Self {
            c_in,
            c_out,
            weights,
            logit_scale,
        })
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn background(&self) -> usize {
        self.c_out - 1
    }

    pub fn logit_scale(&self) -> f64 {
        self.logit_scale
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.c_in..(j + 1) * self.c_in]
    }

    /// Copy with one weight replaced; used by finite-difference checks.
    pub fn with_weight(&self, index: usize, value: f64) -> Self {
        let mut out = self.clone();
        out.weights[index] = value;
        out
    }
}

/// Forward pass with the intermediates the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    /// L2-normalized backbone vectors, `(cells, c_in)`.
    normalized: Vec<f64>,
    probs: FeatureMap<f64>,
}

impl ForwardPass {
    pub fn run<T: Real>(backbone: &FeatureMap<T>, layer: &PartLayer) -> Result<Self> {
        if backbone.channels() != layer.c_in {
            return Err(Error::ChannelMismatch {
                expected: layer.c_in,
                found: backbone.channels(),
            });
        }
        let (h, w, _) = backbone.shape();
        let cells = h * w;
        let mut normalized = Vec::with_capacity(cells * layer.c_in);
        let mut probs = vec![0.0; cells * layer.c_out];
        let mut logits = vec![0.0; layer.c_out];
        for i in 0..cells {
            let start = normalized.len();
            normalized.extend(backbone.cell_at(i).iter().map(|v| v.as_f64()));
            let v = &mut normalized[start..];
            let n = sqrt(v.iter().map(|x| x * x).sum());
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
            }
            for (j, l) in logits.iter_mut().enumerate() {
                *l = layer.logit_scale * crate::math::dot(layer.row(j), v);
            }
            softmax_into(&logits, &mut probs[i * layer.c_out..(i + 1) * layer.c_out]);
        }
        Ok(Self {
            normalized,
            probs: FeatureMap::new(h, w, layer.c_out, probs)?,
        })
    }

    pub fn probs(&self) -> &FeatureMap<f64> {
        &self.probs
    }

    pub fn into_probs(self) -> FeatureMap<f64> {
        self.probs
    }

    /// Adds `∂L/∂W` into `weight_grad` given `∂L/∂probs` (same layout as
    /// the probability map).
    pub fn backward(&self, grad_probs: &[f64], layer: &PartLayer, weight_grad: &mut [f64]) {
        let c_out = layer.c_out;
        let c_in = layer.c_in;
        let p = self.probs.data();
        for cell in 0..self.probs.cells() {
            let g = &grad_probs[cell * c_out..(cell + 1) * c_out];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let pc = &p[cell * c_out..(cell + 1) * c_out];
            let inner: f64 = g.iter().zip(pc).map(|(a, b)| a * b).sum();
            let f = &self.normalized[cell * c_in..(cell + 1) * c_in];
            for j in 0..c_out {
                let dlogit = pc[j] * (g[j] - inner) * layer.logit_scale;
                if dlogit == 0.0 {
                    continue;
                }
                for (wg, fv) in weight_grad[j * c_in..(j + 1) * c_in].iter_mut().zip(f) {
                    *wg += dlogit * fv;
                }
            }
        }
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = exp(l - max);
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Part-response map of a backbone map: per-cell softmax over scaled cosine
/// logits.
pub fn forward<T: Real>(backbone: &FeatureMap<T>, layer: &PartLayer) -> Result<FeatureMap<f64>> {
    Ok(ForwardPass::run(backbone, layer)?.into_probs())
}

/// Mean negative log-likelihood of `labels` under `mean_map`, and its
/// gradient with respect to `mean_map`.
///
/// Values are floored at [`LOG_EPS`]; floored entries get zero gradient.
pub fn nll_loss<T: Real>(mean_map: &FeatureMap<T>, labels: &PseudoGT) -> Result<(f64, Vec<f64>)> {
    let (h, w, c) = mean_map.shape();
    if (labels.height(), labels.width()) != (h, w) {
        return Err(Error::Shape("labels do not match the map grid".into()));
    }
    if let Some(bad) = labels.labels().iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {c} channels"
        )));
    }
    let n = (h * w) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; h * w * c];
    for (cell, &label) in labels.labels().iter().enumerate() {
        let v = mean_map.data()[cell * c + label].as_f64();
        if v > LOG_EPS {
            loss -= ln(v);
            grad[cell * c + label] = -1.0 / (n * v);
        } else {
            loss -= ln(LOG_EPS);
        }
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{E, LN_2};

    #[test]
    fn softmax_closed_form() {
        let layer = PartLayer::new(2, 2, vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        let m = FeatureMap::<f32>::new(1, 1, 2, vec![3.0, 0.0]).unwrap();
        let o = forward(&m, &layer).unwrap();
        assert!((o.data()[0] - E / (E + 1.0)).abs() < 1e-12);
        assert!((o.data()[0] - 0.7311).abs() < 1e-4);
        assert!((o.data()[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn matching_row_wins() {
        let layer = PartLayer::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        let m = FeatureMap::<f32>::new(1, 2, 3, vec![0.0, 2.0, 0.0, 5.0, 0.0, 0.0]).unwrap();
        let o = forward(&m, &layer).unwrap();
        assert!(o.data()[1] > o.data()[0] && o.data()[1] > o.data()[2]);
        assert!(o.data()[3] > o.data()[4]);
    }

    #[test]
    fn zero_backbone_vector_gives_uniform() {
        let layer = PartLayer::new(2, 4, vec![0.5; 8], 3.0).unwrap();
        let m = FeatureMap::<f32>::zeros(1, 1, 2).unwrap();
        let o = forward(&m, &layer).unwrap();
        assert!(o.data().iter().all(|p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn channel_mismatch() {
        let layer = PartLayer::new(2, 2, vec![0.0; 4], 1.0).unwrap();
        let m = FeatureMap::<f32>::zeros(1, 1, 3).unwrap();
        assert!(matches!(forward(&m, &layer), Err(Error::ChannelMismatch { .. })));
    }

    #[test]
    fn nll_examples() {
        let m = FeatureMap::new(1, 1, 2, vec![0.5f64, 0.5]).unwrap();
        let (loss, grad) = nll_loss(&m, &PseudoGT::new(1, 1, vec![0]).unwrap()).unwrap();
        assert!((loss - LN_2).abs() < 1e-12);
        assert_eq!(grad, [-2.0, 0.0]);

        let perfect = FeatureMap::new(1, 2, 2, vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        let (loss, _) = nll_loss(&perfect, &PseudoGT::new(1, 2, vec![0, 1]).unwrap()).unwrap();
        assert_eq!(loss, 0.0);

        let two = FeatureMap::new(1, 2, 2, vec![0.5f64, 0.5, 0.75, 0.25]).unwrap();
        let (loss, _) = nll_loss(&two, &PseudoGT::new(1, 2, vec![0, 1]).unwrap()).unwrap();
        assert!((loss - (LN_2 + 4f64.ln()) / 2.0).abs() < 1e-12);
        assert!((loss - 1.039721).abs() < 1e-6);
    }

    #[test]
    fn nll_rejects_out_of_range_label() {
        let m = FeatureMap::new(1, 1, 2, vec![0.5f64, 0.5]).unwrap();
        assert!(nll_loss(&m, &PseudoGT::new(1, 1, vec![2]).unwrap()).is_err());
    }

    #[test]
    fn clamped_entries_have_zero_gradient() {
        let m = FeatureMap::new(1, 1, 2, vec![0.0f64, 1.0]).unwrap();
        let (loss, grad) = nll_loss(&m, &PseudoGT::new(1, 1, vec![0]).unwrap()).unwrap();
        assert!((loss + LOG_EPS.ln()).abs() < 1e-9);
        assert_eq!(grad, [0.0, 0.0]);
    }
}
