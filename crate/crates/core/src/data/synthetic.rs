use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DataKind, Dataset, Split};
use crate::error::{NvcError, Result};
use crate::tensor::Tensor;

pub const CENTER_SCALE: f64 = 4.0;

/// Gaussian mixture: centers `N(0, I)·4`, samples `N(center, spread²·I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    pub test_per_cluster: usize,
    pub dim: usize,
    pub spread: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.per_cluster == 0 || self.dim == 0 {
            return Err(NvcError::InvalidArgument(format!(
                "clusters ({}), per-cluster count ({}) and dim ({}) must be positive",
                self.clusters, self.per_cluster, self.dim
            )));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(NvcError::InvalidArgument(format!("spread must be finite and non-negative, got {}", self.spread)));
        }
        Ok(())
    }

    /// Train and (when `test_per_cluster > 0`) test splits sharing the same
    /// centers, plus the centers.
    ///
    /// Centers are drawn first, then training samples, then test samples, so
    /// the training split does not depend on `test_per_cluster`.
    pub fn generate(&self) -> Result<(Dataset, Option<Dataset>, Tensor<f32>)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let centers: Vec<f64> = (0..self.clusters * self.dim).map(|_| normal() * CENTER_SCALE).collect();
        let mut draw = |per: usize, split: Split| -> Result<Option<Dataset>> {
            if per == 0 {
                return Ok(None);
            }
            let mut samples = Vec::with_capacity(self.clusters * per * self.dim);
            let mut labels = Vec::with_capacity(self.clusters * per);
            for k in 0..self.clusters {
                let c = &centers[k * self.dim..(k + 1) * self.dim];
                for _ in 0..per {
                    samples.extend(c.iter().map(|&ci| (ci + self.spread * normal()) as f32));
                    labels.push(k);
                }
            }
            let n = labels.len();
            Dataset::new(Tensor::matrix(n, self.dim, samples)?, Some(labels), split, DataKind::Real).map(Some)
        };
        let train = draw(self.per_cluster, Split::Train)?.expect("per_cluster > 0");
        let test = draw(self.test_per_cluster, Split::Test)?;
        let centers = Tensor::matrix(self.clusters, self.dim, centers.iter().map(|&v| v as f32).collect())?;
        Ok((train, test, centers))
    }
}

/// Single training split of the mixture.
pub fn gen_synthetic(clusters: usize, per_cluster: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    let spec = SyntheticSpec {
        clusters,
        per_cluster,
        test_per_cluster: 0,
        dim,
        spread,
        seed,
    };
    Ok(spec.generate()?.0)
}

pub fn gen_synthetic_split(
    clusters: usize,
    per_cluster: usize,
    test_per_cluster: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let spec = SyntheticSpec {
        clusters,
        per_cluster,
        test_per_cluster,
        dim,
        spread,
        seed,
    };
    if test_per_cluster == 0 {
        return Err(NvcError::InvalidArgument("test split needs at least one sample per cluster".into()));
    }
    let (train, test, _) = spec.generate()?;
    Ok((train, test.expect("test_per_cluster > 0")))
}
