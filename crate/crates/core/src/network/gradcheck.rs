use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::Nonlinearity;
use super::loss::contrastive_with_grad;
use super::{NetworkError, SiameseParams};
use crate::dataset::InputTensor;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    /// Largest `|g_a − g_fd| / max(1e-8, |g_a| + |g_fd|)` over checked parameters.
    pub max_rel_error: f64,
    /// Parameter holding the largest error, as `tensor[index]`.
    pub worst: Option<String>,
    pub checked: usize,
    /// Parameters skipped because a ±ε step flips a ReLU.
    pub skipped_kinks: usize,
    /// Checked parameters whose analytic gradient is exactly zero, such as a
    /// bias that shifts both embeddings alike. Their finite difference is
    /// rounding noise.
    pub exact_zero: usize,
    /// Largest `|g_a − g_fd|` over checked parameters.
    pub max_abs_error: f64,
    /// Embedding distance of the pair at the unperturbed parameters.
    pub distance: f64,
}

/// Relative error used by the check.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn loss_at(params: &SiameseParams<f64>, input: &[f64], c: u8, margin: f64, relu_conv: bool) -> (f64, Vec<bool>) {
    let (out, cache) = params.forward(input.to_vec(), 2, true);
    let len = params.arch.embedding_len();
    let (loss, _, _) = contrastive_with_grad(&out[..len], &out[len..], c, margin);
    let pattern = cache.expect("training pass").relu_pattern(relu_conv);
    (loss, pattern)
}

/// Checks the backward pass of the two-image training forward on one labelled
/// pair against central differences, for every learnable parameter.
pub fn gradient_check(
    params: &SiameseParams<f64>,
    a: &InputTensor,
    b: &InputTensor,
    c: u8,
    margin: f64,
    epsilon: f64,
) -> Result<GradientCheckReport, NetworkError> {
    check(params, a, b, c, margin, epsilon, None)
}

/// As [`gradient_check`], but tensors with more than `per_tensor` entries are
/// checked on a seeded random subset of that size.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check_sampled(
    params: &SiameseParams<f64>,
    a: &InputTensor,
    b: &InputTensor,
    c: u8,
    margin: f64,
    epsilon: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradientCheckReport, NetworkError> {
    check(params, a, b, c, margin, epsilon, Some((per_tensor, seed)))
}

fn check(
    params: &SiameseParams<f64>,
    a: &InputTensor,
    b: &InputTensor,
    c: u8,
    margin: f64,
    epsilon: f64,
    sample: Option<(usize, u64)>,
) -> Result<GradientCheckReport, NetworkError> {
    let (out, cache) = params.forward_train_raw(&[a, b])?;
    let len = params.arch.embedding_len();
    let (_, distance, grad) = contrastive_with_grad(&out[..len], &out[len..], c, margin);
    let mut d_out = grad.clone();
    d_out.extend(grad.iter().map(|g| -g));
    let analytic = params.backward(&cache, &d_out);

    let relu_conv = params.arch.nonlinearity == Nonlinearity::Relu;
    let base_pattern = cache.relu_pattern(relu_conv);
    let input: Vec<f64> = a.values.iter().chain(&b.values).copied().collect();

    let names: Vec<String> = params
        .tensors()
        .into_iter()
        .filter(|t| t.learnable)
        .map(|t| t.name)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sample.map_or(0, |s| s.1));
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (t, g) in analytic.iter().enumerate() {
        match sample {
            Some((k, _)) if g.len() > k => {
                let mut picked = rand::seq::index::sample(&mut rng, g.len(), k).into_vec();
                picked.sort_unstable();
                coords.extend(picked.into_iter().map(|i| (t, i)));
            }
            _ => coords.extend((0..g.len()).map(|i| (t, i))),
        }
    }

    // (analytic, numeric) per parameter, None where a ReLU flips
    let results: Vec<Option<(f64, f64)>> = coords
        .par_iter()
        .map_init(
            || params.clone(),
            |work, &(t, i)| {
                let original = work.learnable_mut()[t][i];
                work.learnable_mut()[t][i] = original + epsilon;
                let (plus, p_plus) = loss_at(work, &input, c, margin, relu_conv);
                work.learnable_mut()[t][i] = original - epsilon;
                let (minus, p_minus) = loss_at(work, &input, c, margin, relu_conv);
                work.learnable_mut()[t][i] = original;
                if p_plus != base_pattern || p_minus != base_pattern {
                    return None;
                }
                let numeric = (plus - minus) / (2.0 * epsilon);
                Some((analytic[t][i], numeric))
            },
        )
        .collect();

    let mut report = GradientCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
        exact_zero: 0,
        max_abs_error: 0.0,
        distance,
    };
    for (&(t, i), r) in coords.iter().zip(&results) {
        match r {
            None => report.skipped_kinks += 1,
            Some((a, n)) => {
                let e = relative_error(*a, *n);
                report.checked += 1;
                report.exact_zero += usize::from(*a == 0.0);
                report.max_abs_error = report.max_abs_error.max((a - n).abs());
                if e > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = report.max_rel_error.max(e);
                    report.worst = Some(format!("{}[{i}]", names[t]));
                }
            }
        }
    }
    Ok(report)
}
