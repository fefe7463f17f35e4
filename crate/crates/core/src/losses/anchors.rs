use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NvcError, Result};
use crate::tensor::{sq_dist_matrix, Parameter, Real, Tensor};

/// The `m` trainable anchor vectors living in the `d`-dimensional latent space.
#[derive(Clone, Debug)]
pub struct AnchorSet<T> {
    pub anchors: Parameter<T>,
    pub seed: u64,
}

impl<T: Real> AnchorSet<T> {
    pub fn from_tensor(anchors: Tensor<T>, seed: u64) -> Result<Self> {
        anchors.shape().matrix("anchors")?;
        if !anchors.is_finite() {
            return Err(NvcError::NonFinite("anchor matrix".into()));
        }
        Ok(AnchorSet {
            anchors: Parameter::new("anchors", anchors),
            seed,
        })
    }

    pub fn count(&self) -> usize {
        self.anchors.value.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.anchors.value.dims()[1]
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.anchors.value
    }

    /// Euclidean distance between every pair of anchors, upper triangle row by row.
    pub fn pairwise_distances(&self) -> Vec<f64> {
        let a = self.values();
        let m = self.count();
        let mut out = Vec::with_capacity(m * (m.saturating_sub(1)) / 2);
        for i in 0..m {
            for j in i + 1..m {
                let d2 = crate::tensor::sq_distance(a.row(i), a.row(j));
                out.push(d2.to_f64().unwrap_or(f64::NAN).sqrt());
            }
        }
        out
    }
}

/// Draws an `m×d` anchor matrix with i.i.d. standard normal entries.
pub fn init_anchors<T: Real>(m: usize, d: usize, seed: u64) -> Result<AnchorSet<T>> {
    if m < 1 || d < 1 {
        return Err(NvcError::InvalidArgument(format!(
            "anchor set needs m >= 1 and d >= 1, got m={m}, d={d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..m * d)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::from_f64_lossy(v)
        })
        .collect();
    AnchorSet::from_tensor(Tensor::matrix(m, d, data)?, seed)
}

/// Per-batch nearest-anchor labelling. Never differentiated.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment<T> {
    pub labels: Vec<usize>,
    /// `n×m` squared feature-to-anchor distances.
    pub distances_sq: Tensor<T>,
}

impl<T: Real> Assignment<T> {
    pub fn anchor_count(&self) -> usize {
        self.distances_sq.dims()[1]
    }

    /// Number of features assigned to each anchor.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.anchor_count()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Indicator matrix `m×n` with a one where feature `k` belongs to anchor `i`.
    pub fn membership(&self) -> Tensor<T> {
        let m = self.anchor_count();
        let n = self.labels.len();
        let mut data = vec![T::zero(); m * n];
        for (k, &l) in self.labels.iter().enumerate() {
            data[l * n + k] = T::one();
        }
        Tensor::matrix(m, n, data).expect("non-empty assignment")
    }
}

/// Labels every feature row with the index of its closest anchor.
///
/// Ties go to the lowest anchor index.
pub fn assign_anchors<T: Real>(features: &Tensor<T>, anchors: &Tensor<T>) -> Result<Assignment<T>> {
    let distances_sq = sq_dist_matrix(features, anchors)?;
    let m = anchors.dims()[0];
    let labels = distances_sq
        .data()
        .chunks(m)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v < row[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    Ok(Assignment {
        labels,
        distances_sq,
    })
}
