//! Non-differentiable K-means style anchor updates, kept as baselines.

use crate::error::{NvcError, Result};
use crate::tensor::{sq_distance, Real, Tensor};

use super::Assignment;

fn check<T: Real>(features: &Tensor<T>, anchors: &Tensor<T>, assignment: &Assignment<T>) -> Result<(usize, usize)> {
    let (n, d) = features.shape().matrix("kmeans features")?;
    let (m, da) = anchors.shape().matrix("kmeans anchors")?;
    if d != da || assignment.labels.len() != n || assignment.labels.iter().any(|&l| l >= m) {
        return Err(NvcError::ShapeMismatch {
            op: "kmeans",
            lhs: vec![n, d],
            rhs: vec![m, da],
        });
    }
    Ok((m, d))
}

/// Moves every anchor to the mean of its assigned features. Empty clusters keep their center.
pub fn kmeans_update<T: Real>(features: &Tensor<T>, anchors: &Tensor<T>, assignment: &Assignment<T>) -> Result<Tensor<T>> {
    let (m, d) = check(features, anchors, assignment)?;
    let mut sums = vec![T::zero(); m * d];
    let mut counts = vec![0usize; m];
    for (k, &l) in assignment.labels.iter().enumerate() {
        counts[l] += 1;
        for (s, &v) in sums[l * d..(l + 1) * d].iter_mut().zip(features.row(k)) {
            *s = *s + v;
        }
    }
    let mut out = anchors.clone();
    for i in 0..m {
        if counts[i] == 0 {
            continue;
        }
        let c = T::from_usize(counts[i]).unwrap_or_else(T::one);
        for (o, &s) in out.data_mut()[i * d..(i + 1) * d].iter_mut().zip(&sums[i * d..(i + 1) * d]) {
            *o = s / c;
        }
    }
    Ok(out)
}

/// `Σ_i Σ_{z ∈ Z_i} ||z − a_i||²`.
pub fn kmeans_loss<T: Real>(features: &Tensor<T>, anchors: &Tensor<T>, assignment: &Assignment<T>) -> Result<T> {
    check(features, anchors, assignment)?;
    Ok(assignment
        .labels
        .iter()
        .enumerate()
        .map(|(k, &l)| sq_distance(features.row(k), anchors.row(l)))
        .fold(T::zero(), |acc, v| acc + v))
}

/// Robbins-Monro step `a_i ← a_i + lr·Σ_{z ∈ Z_i} (z − a_i)`.
pub fn robbins_monro_update<T: Real>(
    anchors: &Tensor<T>,
    features: &Tensor<T>,
    assignment: &Assignment<T>,
    lr: f64,
) -> Result<Tensor<T>> {
    let (_, d) = check(features, anchors, assignment)?;
    let lr = T::from_f64_lossy(lr);
    let mut out = anchors.clone();
    for (k, &l) in assignment.labels.iter().enumerate() {
        let z = features.row(k);
        for j in 0..d {
            let old = anchors.data()[l * d + j];
            let slot = &mut out.data_mut()[l * d + j];
            *slot = *slot + lr * (z[j] - old);
        }
    }
    Ok(out)
}
