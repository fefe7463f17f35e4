//! Loss terms: nebula anchors, variational KL, reconstruction, metric
//! learning, and the K-means style baselines.

mod anchors;
mod kmeans;
mod metric;
mod nebula;
mod recon;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{NvcError, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

pub use anchors::{assign_anchors, init_anchors, AnchorSet, Assignment};
pub use kmeans::{kmeans_loss, kmeans_update, robbins_monro_update};
pub use metric::{metric_loss, siamese_pair, triplet, MetricTerms};
pub use nebula::{
    anchor_mass, anchor_masses, gravitational_force, log_inv_sq_distance, nebula_loss, own_anchor_sq_dist,
    NebulaMode, NebulaOptions, LOG_EPS,
};
pub use recon::{chamfer, recon_bce, recon_euclidean, BCE_CLAMP};

/// Posterior parameters and sampled codes of one mini-batch.
#[derive(Clone, Copy, Debug)]
pub struct LatentBatch {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
}

/// `z = mu + exp(0.5·logvar) ⊙ η` with `η` drawn from `rng`.
pub fn reparameterize<T: Real, R: Rng>(tape: &mut Tape<T>, mu: Var, logvar: Var, rng: &mut R) -> Result<Var> {
    let shape = tape.value(mu).shape().clone();
    let noise = (0..shape.numel())
        .map(|_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let noise = tape.constant(Tensor::from_shape(shape, noise)?);
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let spread = tape.mul(std, noise)?;
    tape.add(mu, spread)
}

/// Batch mean of the closed-form KL divergence from `N(mu, exp(logvar))` to `N(0, I)`.
pub fn kl_diag_gaussian<T: Real>(tape: &mut Tape<T>, mu: Var, logvar: Var) -> Result<Var> {
    let (mv, lv) = (tape.value(mu), tape.value(logvar));
    if mv.shape() != lv.shape() {
        return Err(NvcError::ShapeMismatch {
            op: "kl_diag_gaussian",
            lhs: mv.dims().to_vec(),
            rhs: lv.dims().to_vec(),
        });
    }
    let n = mv.rows();
    let mu_sq = tape.square(mu);
    let var = tape.exp(logvar);
    let a = tape.add(mu_sq, var)?;
    let b = tape.sub(a, logvar)?;
    let c = tape.add_scalar(b, -1.0);
    let total = tape.sum(c);
    Ok(tape.scale(total, 0.5 / n as f64))
}

/// Non-negative weights of the four terms of the total objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub kl: f64,
    pub nebula: f64,
    pub metric: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            recon: 1.0,
            kl: 1.0,
            nebula: 1.0,
            metric: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("weights.recon", self.recon),
            ("weights.kl", self.kl),
            ("weights.nebula", self.nebula),
            ("weights.metric", self.metric),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(NvcError::Config {
                    key: name.into(),
                    message: format!("weight must be a finite non-negative number, got {w}"),
                });
            }
        }
        Ok(())
    }
}

/// `w_r·recon + w_k·kl + w_n·nebula + w_m·metric`.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    recon: Var,
    kl: Var,
    nebula: Var,
    metric: Var,
    weights: &LossWeights,
) -> Result<Var> {
    weights.validate()?;
    let r = tape.scale(recon, weights.recon);
    let k = tape.scale(kl, weights.kl);
    let n = tape.scale(nebula, weights.nebula);
    let m = tape.scale(metric, weights.metric);
    let rk = tape.add(r, k)?;
    let nm = tape.add(n, m)?;
    tape.add(rk, nm)
}
