use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::{softmax_cross_entropy, N_CLASSES};
use super::{NnError, ParamSet, Sequential, Tensor};

/// Outcome of an analytic-vs-central-difference gradient comparison.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Relative error with a floor on the denominator so that two vanishing
/// gradients compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss` for `samples`
/// randomly chosen scalar parameters (all of them if `samples` covers the set).
pub fn compare_gradients<P, F>(
    params: &P,
    analytic: &P,
    loss: F,
    eps: f64,
    tol: f64,
    samples: usize,
    seed: u64,
) -> GradCheckReport
where
    P: ParamSet<f64> + Clone,
    F: Fn(&P) -> f64,
{
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if samples >= total {
        (0..total).collect()
    } else {
        let mut v = sample(&mut rng, total, samples).into_vec();
        v.sort_unstable();
        v
    };
    let grads: Vec<f64> = analytic.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
    let locate = |flat: usize| {
        let mut rem = flat;
        for (t, &n) in sizes.iter().enumerate() {
            if rem < n {
                return (t, rem);
            }
            rem -= n;
        }
        unreachable!("index within parameter count")
    };

    let mut max_rel: f64 = 0.0;
    let mut probe = params.clone();
    for &flat in &picks {
        let (t, i) = locate(flat);
        let orig = params.tensors()[t].data()[i];
        probe.tensors_mut()[t].data_mut()[i] = orig + eps;
        let up = loss(&probe);
        probe.tensors_mut()[t].data_mut()[i] = orig - eps;
        let down = loss(&probe);
        probe.tensors_mut()[t].data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        max_rel = max_rel.max(relative_error(grads[flat], numeric));
    }
    GradCheckReport {
        checked: picks.len(),
        max_rel_error: max_rel,
        tol,
        passed: max_rel < tol,
    }
}

/// Loss of a network emitting three logits, under softmax + weighted CE.
pub fn network_loss(
    net: &Sequential<f64>,
    input: &Tensor<f64>,
    gold: usize,
    weights: &[f64; N_CLASSES],
) -> Result<f64, NnError> {
    let logits = net.forward(input.clone())?;
    logits.expect_shape(&[N_CLASSES])?;
    Ok(softmax_cross_entropy(logits.data(), gold, weights[gold]).0)
}

/// Analytic parameter gradient of [`network_loss`].
pub fn network_gradient(
    net: &Sequential<f64>,
    input: &Tensor<f64>,
    gold: usize,
    weights: &[f64; N_CLASSES],
) -> Result<Sequential<f64>, NnError> {
    let (logits, caches) = net.forward_cached(input.clone())?;
    logits.expect_shape(&[N_CLASSES])?;
    let (_, _, dz) = softmax_cross_entropy(logits.data(), gold, weights[gold]);
    let mut acc = net.zeros_like();
    net.backward(&caches, Tensor::from_vec(&[N_CLASSES], dz)?, &mut acc, false)?;
    Ok(acc)
}

/// Finite-difference check of a full network + softmax + cross-entropy.
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    net: &Sequential<f64>,
    input: &Tensor<f64>,
    gold: usize,
    weights: &[f64; N_CLASSES],
    eps: f64,
    tol: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport, NnError> {
    let analytic = network_gradient(net, input, gold, weights)?;
    network_loss(net, input, gold, weights)?;
    Ok(compare_gradients(
        net,
        &analytic,
        |n| network_loss(n, input, gold, weights).expect("shapes validated above"),
        eps,
        tol,
        samples,
        seed,
    ))
}
