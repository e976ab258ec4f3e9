use serde::{Deserialize, Serialize};

use super::{NnError, Scalar};

/// Guard added inside the logarithm of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

/// Number of categories of both classification heads.
pub const N_CLASSES: usize = 3;

/// Softmax via max-subtraction, so any finite logits are safe.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-w[gold] * ln(pred[gold] + 1e-12)`.
pub fn weighted_cross_entropy(pred: &[f64], gold: usize, weights: &[f64; N_CLASSES]) -> Result<f64, NnError> {
    if gold >= N_CLASSES || pred.len() != N_CLASSES {
        return Err(NnError::Label {
            gold,
            classes: pred.len(),
        });
    }
    let sum: f64 = pred.iter().sum();
    if pred.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(NnError::NotADistribution(pred.to_vec()));
    }
    Ok(-weights[gold] * (pred[gold] + LOG_EPS).ln())
}

/// Mean weighted cross-entropy over a batch of predicted distributions.
pub fn mean_weighted_cross_entropy(
    preds: &[Vec<f64>],
    golds: &[usize],
    weights: &[f64; N_CLASSES],
) -> Result<f64, NnError> {
    if preds.len() != golds.len() || preds.is_empty() {
        return Err(NnError::ShapeMismatch {
            expected: vec![preds.len()],
            found: vec![golds.len()],
        });
    }
    let mut total = 0.0;
    for (p, &g) in preds.iter().zip(golds) {
        total += weighted_cross_entropy(p, g, weights)?;
    }
    Ok(total / preds.len() as f64)
}

/// Fused softmax + weighted cross-entropy on raw logits.
///
/// Returns `(loss, probabilities, dloss/dlogits)`. The gradient is exact for
/// the guarded loss `-w ln(p_g + eps)`:
/// `dL/dz_k = -w * p_g / (p_g + eps) * (delta_gk - p_k)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], gold: usize, weight: f64) -> (f64, Vec<T>, Vec<T>) {
    let probs = softmax(logits);
    let pg = probs[gold].to_f64_lossy();
    let loss = -weight * (pg + LOG_EPS).ln();
    let scale = -weight * pg / (pg + LOG_EPS);
    let grad = probs
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let delta = if k == gold { 1.0 } else { 0.0 };
            T::from_f64_lossy(scale * (delta - p.to_f64_lossy()))
        })
        .collect();
    (loss, probs, grad)
}

/// `(1 - lambda) * l_tsr + lambda * l_ctc`.
pub fn multitask_loss(l_tsr: f64, l_ctc: f64, lambda: f64) -> Result<f64, NnError> {
    check_lambda(lambda)?;
    Ok((1.0 - lambda) * l_tsr + lambda * l_ctc)
}

pub fn check_lambda(lambda: f64) -> Result<(), NnError> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(NnError::Lambda(lambda))
    }
}

/// Inverse-frequency weights `total / (3 * max(count_c, 1))`.
pub fn class_weights_from_counts(counts: &[usize; N_CLASSES]) -> Result<[f64; N_CLASSES], NnError> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(NnError::EmptyCounts);
    }
    let mut w = [0.0; N_CLASSES];
    for (w, &c) in w.iter_mut().zip(counts) {
        *w = total as f64 / (N_CLASSES as f64 * c.max(1) as f64);
    }
    Ok(w)
}

/// Cost-sensitive weights of both tasks plus the task-mixing weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tsr_weights: [f64; N_CLASSES],
    pub ctc_weights: [f64; N_CLASSES],
    pub lambda: f64,
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        check_lambda(self.lambda)?;
        let all = self.tsr_weights.iter().chain(&self.ctc_weights);
        if let Some(&w) = all.into_iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(NnError::ClassWeight(w));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tsr_weights: [1.0; N_CLASSES],
            ctc_weights: [1.0; N_CLASSES],
            lambda: 0.3,
        }
    }
}
