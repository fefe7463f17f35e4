//! Self-supervised metric learning on anchor labels.

use crate::error::{NvcError, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

pub use crate::tensor::TRIPLET_MARGIN;

/// `||e_i − e_p||²`.
pub fn siamese_pair<T: Real>(tape: &mut Tape<T>, e_i: Var, e_p: Var) -> Result<Var> {
    let diff = tape.sub(e_i, e_p)?;
    let sq = tape.square(diff);
    Ok(tape.sum(sq))
}

/// `ln(max(1, 2 − ||e_i − e_n||² / (||e_i − e_p||² + 0.01)))`.
pub fn triplet<T: Real>(tape: &mut Tape<T>, e_i: Var, e_p: Var, e_n: Var) -> Result<Var> {
    let pos = siamese_pair(tape, e_i, e_p)?;
    let neg = siamese_pair(tape, e_i, e_n)?;
    let denom = tape.add_scalar(pos, TRIPLET_MARGIN);
    let ratio = tape.div(neg, denom)?;
    let flipped = tape.neg(ratio);
    let shifted = tape.add_scalar(flipped, 2.0);
    let clamped = tape.clamp_min(shifted, 1.0);
    tape.ln(clamped)
}

/// The two metric-learning terms of one batch.
#[derive(Clone, Copy, Debug)]
pub struct MetricTerms {
    pub pair: Var,
    pub triplet: Var,
}

/// Pair and triplet losses over all within-batch permutations.
///
/// The pair term averages `||z_i − z_p||²` over unordered same-label pairs;
/// the triplet term averages [`triplet`] over every `(i, p, n)` with
/// `label(i) = label(p)`, `i ≠ p`, `label(n) ≠ label(i)`. A term with no
/// admissible pair or triplet is zero.
pub fn metric_loss<T: Real>(tape: &mut Tape<T>, features: Var, labels: &[usize]) -> Result<MetricTerms> {
    let (n, _) = tape.value(features).shape().matrix("metric_loss")?;
    if n < 2 {
        return Err(NvcError::InvalidArgument(format!(
            "metric learning needs at least 2 samples, got {n}"
        )));
    }
    if labels.len() != n {
        return Err(NvcError::ShapeMismatch {
            op: "metric_loss",
            lhs: vec![n],
            rhs: vec![labels.len()],
        });
    }
    let dist = tape.sq_dist(features, features)?;

    let pairs = (0..n)
        .flat_map(|i| (i + 1..n).map(move |p| (i, p)))
        .filter(|&(i, p)| labels[i] == labels[p])
        .collect::<Vec<_>>();
    let pair = if pairs.is_empty() {
        tape.constant(Tensor::scalar(T::zero()))
    } else {
        let w = T::one() / T::from_usize(pairs.len()).unwrap_or_else(T::one);
        let mut weights = vec![T::zero(); n * n];
        for (i, p) in pairs {
            weights[i * n + p] = w;
        }
        let weights = tape.constant(Tensor::matrix(n, n, weights)?);
        let weighted = tape.mul(dist, weights)?;
        tape.sum(weighted)
    };

    let triplet = tape.triplet_mean(dist, labels)?;
    Ok(MetricTerms { pair, triplet })
}
