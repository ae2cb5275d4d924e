use super::{FeatureVector, NetworkError};
use crate::Real;

/// Euclidean distance between two embeddings.
pub fn pair_distance<T: Real>(a: &FeatureVector<T>, b: &FeatureVector<T>) -> Result<T, NetworkError> {
    check_len(a.values(), b.values())?;
    Ok(euclidean(a.values(), b.values()))
}

pub(crate) fn euclidean<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

fn check_len<T>(a: &[T], b: &[T]) -> Result<(), NetworkError> {
    if a.len() != b.len() {
        return Err(NetworkError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Number of components that differ by more than `tolerance`.
pub fn mismatch_count<T: Real>(a: &FeatureVector<T>, b: &FeatureVector<T>, tolerance: T) -> Result<usize, NetworkError> {
    check_len(a.values(), b.values())?;
    Ok(a.values()
        .iter()
        .zip(b.values())
        .filter(|(&x, &y)| (x - y).abs() > tolerance)
        .count())
}

/// `c·d² + (1 − c)·max(m − d, 0)²` for a label `c` in {0, 1}.
pub fn contrastive_loss<T: Real>(d: T, c: u8, margin: T) -> T {
    if c == 1 {
        d * d
    } else {
        let gap = (margin - d).max(T::zero());
        gap * gap
    }
}

/// Loss of one pair together with its gradient with respect to the first embedding.
/// The gradient with respect to the second embedding is the negation.
pub(crate) fn contrastive_with_grad<T: Real>(a: &[T], b: &[T], c: u8, margin: T) -> (T, T, Vec<T>) {
    let d = euclidean(a, b);
    let loss = contrastive_loss(d, c, margin);
    let grad = if c == 1 {
        // d(d²)/da = 2(a − b)
        a.iter().zip(b).map(|(&x, &y)| T::of(2.0) * (x - y)).collect()
    } else if d < margin && d > T::zero() {
        // d/da (m − d)² = −2(m − d)(a − b)/d
        let k = -T::of(2.0) * (margin - d) / d;
        a.iter().zip(b).map(|(&x, &y)| k * (x - y)).collect()
    } else {
        vec![T::zero(); a.len()]
    };
    (loss, d, grad)
}
