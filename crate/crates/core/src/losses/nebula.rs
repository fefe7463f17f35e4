//! Gravitational anchor loss.
//!
//! Each anchor carries a mass `M(a) = 1 + Σ ||z − a||²` over the features
//! assigned to it. Anchor pairs interact through the log inverse squared
//! distance `D(a_i, a_j) = −ln(||a_j − a_i||² + ε)`, and the loss sums the
//! force `M(a_i)·M(a_j)·D(a_i, a_j)` over unordered pairs. Gradients reach
//! both the features and the anchors; the assignment itself is fixed.

use crate::error::{NvcError, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

use super::Assignment;

/// Guard inside the logarithm so coincident anchors stay finite.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NebulaMode {
    /// Mass-weighted pairwise force.
    Mass,
    /// Plain squared distance of each feature to its own anchor.
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NebulaOptions {
    pub mode: NebulaMode,
    /// Lower bound applied to `D(a_i, a_j)`; `None` leaves it unbounded.
    pub d_floor: Option<f64>,
}

impl Default for NebulaOptions {
    fn default() -> Self {
        NebulaOptions {
            mode: NebulaMode::Mass,
            d_floor: None,
        }
    }
}

fn check_dims<T: Real>(tape: &Tape<T>, features: Var, anchors: Var, assignment: &Assignment<T>) -> Result<(usize, usize)> {
    let (n, d) = tape.value(features).shape().matrix("nebula features")?;
    let (m, da) = tape.value(anchors).shape().matrix("nebula anchors")?;
    if d != da {
        return Err(NvcError::ShapeMismatch {
            op: "nebula",
            lhs: vec![n, d],
            rhs: vec![m, da],
        });
    }
    if assignment.labels.len() != n || assignment.anchor_count() != m {
        return Err(NvcError::InvalidArgument(format!(
            "assignment covers {} features / {} anchors, expected {n} / {m}",
            assignment.labels.len(),
            assignment.anchor_count()
        )));
    }
    Ok((n, m))
}

/// `||z_k − a_{label(k)}||²` for every feature, as an `n`-vector.
pub fn own_anchor_sq_dist<T: Real>(
    tape: &mut Tape<T>,
    features: Var,
    anchors: Var,
    assignment: &Assignment<T>,
) -> Result<Var> {
    check_dims(tape, features, anchors, assignment)?;
    let own = tape.gather_rows(anchors, &assignment.labels)?;
    let diff = tape.sub(features, own)?;
    let sq = tape.square(diff);
    tape.sum_axis(sq, 1)
}

/// Masses of all anchors as an `m×1` column.
pub fn anchor_masses<T: Real>(
    tape: &mut Tape<T>,
    features: Var,
    anchors: Var,
    assignment: &Assignment<T>,
) -> Result<Var> {
    let (n, _) = check_dims(tape, features, anchors, assignment)?;
    let own = own_anchor_sq_dist(tape, features, anchors, assignment)?;
    let own = tape.reshape(own, vec![n, 1])?;
    let membership = tape.constant(assignment.membership());
    let sums = tape.matmul(membership, own)?;
    Ok(tape.add_scalar(sums, 1.0))
}

/// Mass of anchor `i`: one plus the summed squared distances of its features.
pub fn anchor_mass<T: Real>(
    tape: &mut Tape<T>,
    features: Var,
    anchors: Var,
    assignment: &Assignment<T>,
    i: usize,
) -> Result<Var> {
    let (n, m) = check_dims(tape, features, anchors, assignment)?;
    if i >= m {
        return Err(NvcError::IndexOutOfRange { index: i, len: m });
    }
    let own = own_anchor_sq_dist(tape, features, anchors, assignment)?;
    let indicator = assignment
        .labels
        .iter()
        .map(|&l| if l == i { T::one() } else { T::zero() })
        .collect::<Vec<_>>();
    let indicator = tape.constant(Tensor::new(vec![n], indicator)?);
    let selected = tape.mul(own, indicator)?;
    let total = tape.sum(selected);
    Ok(tape.add_scalar(total, 1.0))
}

/// `−ln(||a_j − a_i||² + ε)` for two equally shaped anchor vectors.
pub fn log_inv_sq_distance<T: Real>(tape: &mut Tape<T>, a_i: Var, a_j: Var) -> Result<Var> {
    let diff = tape.sub(a_j, a_i)?;
    let sq = tape.square(diff);
    let d2 = tape.sum(sq);
    let ln = tape.ln_shifted(d2, LOG_EPS)?;
    Ok(tape.neg(ln))
}

/// `M(a_i)·M(a_j)·D(a_i, a_j)` for anchors `i ≠ j`.
pub fn gravitational_force<T: Real>(
    tape: &mut Tape<T>,
    features: Var,
    anchors: Var,
    assignment: &Assignment<T>,
    i: usize,
    j: usize,
) -> Result<Var> {
    if i == j {
        return Err(NvcError::InvalidArgument(format!("force needs two distinct anchors, got {i} twice")));
    }
    let mi = anchor_mass(tape, features, anchors, assignment, i)?;
    let mj = anchor_mass(tape, features, anchors, assignment, j)?;
    let ai = tape.gather_rows(anchors, &[i])?;
    let aj = tape.gather_rows(anchors, &[j])?;
    let d = log_inv_sq_distance(tape, ai, aj)?;
    let mm = tape.mul(mi, mj)?;
    tape.mul(mm, d)
}

/// Nebula loss over a batch of features under a fixed assignment.
///
/// In mass mode the loss is `Σ_{i<j} M(a_i)·M(a_j)·D(a_i, a_j)`; with a single
/// anchor there is no pair, so it falls back to the attraction term
/// `Σ ||z − a_1||²`. Euclidean mode always uses that attraction term.
pub fn nebula_loss<T: Real>(
    tape: &mut Tape<T>,
    features: Var,
    anchors: Var,
    assignment: &Assignment<T>,
    opts: NebulaOptions,
) -> Result<Var> {
    let (_, m) = check_dims(tape, features, anchors, assignment)?;
    if opts.mode == NebulaMode::Euclidean || m == 1 {
        let own = own_anchor_sq_dist(tape, features, anchors, assignment)?;
        return Ok(tape.sum(own));
    }

    let masses = anchor_masses(tape, features, anchors, assignment)?;
    let masses_t = tape.transpose(masses)?;
    let mass_products = tape.matmul(masses, masses_t)?;

    let anchor_d2 = tape.sq_dist(anchors, anchors)?;
    let ln = tape.ln_shifted(anchor_d2, LOG_EPS)?;
    let mut inv = tape.neg(ln);
    if let Some(floor) = opts.d_floor {
        inv = tape.clamp_min(inv, floor);
    }

    let forces = tape.mul(mass_products, inv)?;
    let mut upper = vec![T::zero(); m * m];
    for i in 0..m {
        for j in i + 1..m {
            upper[i * m + j] = T::one();
        }
    }
    let upper = tape.constant(Tensor::matrix(m, m, upper)?);
    let pairs = tape.mul(forces, upper)?;
    Ok(tape.sum(pairs))
}
