//! Datasets: MNIST IDX ingestion, synthetic Gaussian mixtures, the on-disk
//! dataset file, and seeded mini-batching.
//!
//! Labels ride along with samples for evaluation only; the training losses
//! never read them.

pub mod idx;
mod synthetic;

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::container::Container;
use crate::error::{NvcError, Result};
use crate::tensor::Tensor;

pub use synthetic::{gen_synthetic, gen_synthetic_split, SyntheticSpec};

pub const DATASET_MAGIC: [u8; 4] = *b"NVCD";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Whether samples are pixel intensities in `[0, 1]` or unbounded reals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Image,
    Real,
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataKind::Image => "image",
            DataKind::Real => "real",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Tensor<f32>,
    pub labels: Option<Vec<usize>>,
    pub split: Split,
    pub kind: DataKind,
}

impl Dataset {
    pub fn new(samples: Tensor<f32>, labels: Option<Vec<usize>>, split: Split, kind: DataKind) -> Result<Self> {
        let (n, _) = samples.shape().matrix("dataset")?;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(NvcError::CountMismatch {
                    images: n,
                    labels: l.len(),
                });
            }
        }
        Ok(Dataset {
            samples,
            labels,
            split,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.row_len()
    }

    /// First `n` samples (or all of them when `n` exceeds the size).
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.samples.gather_rows(idx)?,
            self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            self.split,
            self.kind,
        )
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            DATASET_MAGIC,
            format!("kind = {}\nsplit = {}\n", self.kind, self.split.name()),
        );
        c.push("samples", self.samples.clone());
        if let Some(l) = &self.labels {
            c.push("labels", Tensor::vector(l.iter().map(|&v| v as f32).collect()));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Dataset> {
        let mut kind = DataKind::Real;
        let mut split = Split::Train;
        for line in c.text.lines() {
            match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                Some(("kind", "image")) => kind = DataKind::Image,
                Some(("kind", "real")) => kind = DataKind::Real,
                Some(("split", "train")) => split = Split::Train,
                Some(("split", "test")) => split = Split::Test,
                _ if line.trim().is_empty() => {}
                _ => return Err(NvcError::Format(format!("unrecognised dataset header line `{line}`"))),
            }
        }
        let samples = c.require("samples")?.clone();
        let labels = match c.get("labels") {
            Some(t) => Some(
                t.data()
                    .iter()
                    .map(|&v| {
                        if v >= 0.0 && v.fract() == 0.0 {
                            Ok(v as usize)
                        } else {
                            Err(NvcError::Format(format!("invalid label {v}")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Dataset::new(samples, labels, split, kind)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Dataset::from_container(&Container::load(path, DATASET_MAGIC)?)
    }

    /// Seeded mini-batches for one epoch.
    pub fn batches(&self, batch_size: usize, epoch: usize, seed: u64, metric: bool) -> Result<BatchIterator<'_>> {
        BatchIterator::new(self, batch_size, epoch, seed, metric)
    }
}

/// Reads an IDX image/label pair, scaling pixels by `1/255`.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let images = idx::read_images(images_path)?;
    let labels = idx::read_labels(labels_path)?;
    if images.count != labels.len() {
        return Err(NvcError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let dim = images.rows * images.cols;
    let pixels = images.pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new(
        Tensor::matrix(images.count, dim, pixels)?,
        Some(labels.into_iter().map(usize::from).collect()),
        split,
        DataKind::Image,
    )
}

fn first_existing(dir: &Path, names: &[String]) -> Option<PathBuf> {
    names.iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

/// Loads a split from a data directory holding either the MNIST IDX files
/// (`train-images-idx3-ubyte[.gz]`, `t10k-…`) or `train.nvcd` / `test.nvcd`.
pub fn load_split(dir: &Path, split: Split) -> Result<Dataset> {
    let nvcd = dir.join(format!("{}.nvcd", split.name()));
    if nvcd.is_file() {
        return Dataset::load(&nvcd);
    }
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let variants = |stem: &str| vec![stem.to_string(), format!("{stem}.gz")];
    let images = first_existing(dir, &variants(&format!("{prefix}-images-idx3-ubyte")));
    let labels = first_existing(dir, &variants(&format!("{prefix}-labels-idx1-ubyte")));
    match (images, labels) {
        (Some(i), Some(l)) => load_idx(&i, &l, split),
        _ => Err(NvcError::MissingData(format!(
            "no {} split in {}: expected {} or {}-images-idx3-ubyte[.gz] with matching labels",
            split.name(),
            dir.display(),
            nvcd.display(),
            prefix
        ))),
    }
}

/// One mini-batch of samples with their positions in the dataset.
#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub samples: Tensor<f32>,
    pub labels: Option<Vec<usize>>,
}

/// Shuffled batches whose order depends only on `(seed, epoch)`.
#[derive(Debug)]
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

/// Epoch permutation: a ChaCha stream keyed by the seed, one stream per epoch.
pub fn epoch_permutation(n: usize, epoch: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, epoch: usize, seed: u64, metric: bool) -> Result<Self> {
        if batch_size == 0 || (metric && batch_size < 2) {
            return Err(NvcError::InvalidArgument(format!(
                "batch size {batch_size} too small{}",
                if metric { " for metric learning (pairs need at least 2)" } else { "" }
            )));
        }
        Ok(BatchIterator {
            dataset,
            order: epoch_permutation(dataset.len(), epoch, seed),
            batch_size,
            pos: 0,
        })
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let samples = self.dataset.samples.gather_rows(&indices).expect("indices from permutation");
        let labels = self
            .dataset
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Some(Batch {
            indices,
            samples,
            labels,
        })
    }
}
