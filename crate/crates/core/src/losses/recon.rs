//! Reconstruction losses and the Chamfer point-set distance.

use crate::error::{NvcError, Result};
use crate::tensor::{Real, Tape, Var};

/// Lower/upper clamp applied to probabilities before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

fn batch_size<T: Real>(tape: &Tape<T>, pred: Var, target: Var, op: &'static str) -> Result<usize> {
    let (p, t) = (tape.value(pred), tape.value(target));
    if p.shape() != t.shape() {
        return Err(NvcError::ShapeMismatch {
            op,
            lhs: p.dims().to_vec(),
            rhs: t.dims().to_vec(),
        });
    }
    Ok(p.rows())
}

/// Mean over the batch of `||target − pred||²`.
pub fn recon_euclidean<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let n = batch_size(tape, pred, target, "recon_euclidean")?;
    let diff = tape.sub(target, pred)?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / n as f64))
}

/// Mean over the batch of the summed binary cross entropy.
///
/// `pred` must lie in `[0, 1]`; it is clamped to `[1e-7, 1 − 1e-7]` before the logs.
pub fn recon_bce<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let n = batch_size(tape, pred, target, "recon_bce")?;
    if let Some(&bad) = tape
        .value(pred)
        .data()
        .iter()
        .find(|&&p| !(p >= T::zero() && p <= T::one()))
    {
        return Err(NvcError::InvalidArgument(format!(
            "recon_bce prediction {bad} outside [0, 1]"
        )));
    }
    let p = tape.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP);
    let log_p = tape.ln(p)?;
    let neg_p = tape.neg(p);
    let one_minus_p = tape.add_scalar(neg_p, 1.0);
    let log_q = tape.ln(one_minus_p)?;

    let t = tape.value(target).clone();
    let complement = t.map(|v| T::one() - v);
    let t = tape.constant(t);
    let complement = tape.constant(complement);

    let pos = tape.mul(t, log_p)?;
    let neg = tape.mul(complement, log_q)?;
    let ll = tape.add(pos, neg)?;
    let total = tape.sum(ll);
    Ok(tape.scale(total, -1.0 / n as f64))
}

/// Symmetric squared-distance Chamfer distance between two point sets
/// (`|A|×k` and `|B|×k`), each direction averaged over its own set.
pub fn chamfer<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d2 = tape.sq_dist(a, b)?;
    let a_to_b = tape.min_axis(d2, 1)?;
    let b_to_a = tape.min_axis(d2, 0)?;
    let ma = tape.mean(a_to_b);
    let mb = tape.mean(b_to_a);
    tape.add(ma, mb)
}
