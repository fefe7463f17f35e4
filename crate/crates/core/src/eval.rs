//! Reconstruction metrics, anchor classification accuracy and latent-space
//! diagnostics. Everything here runs the model in evaluation mode (`z = mu`).

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{NvcError, Result};
use crate::losses::{assign_anchors, AnchorSet};
use crate::model::MlpVae;
use crate::tensor::{Real, Tensor};

/// Absolute relative error and threshold accuracies (percent).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconMetrics {
    pub rel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

/// `rel = mean |ŷ − y| / max(y, ε)`; `δ_i` is the percentage of elements with
/// `max(ŷ'/y', y'/ŷ') < 1.25^i` where both sides are floored at `ε`.
pub fn recon_metrics(pred: &[f32], target: &[f32], epsilon: f64) -> Result<ReconMetrics> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NvcError::ShapeMismatch {
            op: "recon_metrics",
            lhs: vec![pred.len()],
            rhs: vec![target.len()],
        });
    }
    let thresholds = [1.25f64, 1.25f64.powi(2), 1.25f64.powi(3)];
    let mut rel = 0.0;
    let mut hits = [0usize; 3];
    for (&p, &t) in pred.iter().zip(target) {
        let (p, t) = (p as f64, t as f64);
        let y = t.max(epsilon);
        let yh = p.max(epsilon);
        rel += (p - t).abs() / y;
        let ratio = (yh / y).max(y / yh);
        for (h, &th) in hits.iter_mut().zip(&thresholds) {
            if ratio < th {
                *h += 1;
            }
        }
    }
    let n = pred.len() as f64;
    Ok(ReconMetrics {
        rel: rel / n,
        delta1: 100.0 * hits[0] as f64 / n,
        delta2: 100.0 * hits[1] as f64 / n,
        delta3: 100.0 * hits[2] as f64 / n,
    })
}

pub fn eval_reconstruction<T: Real>(model: &MlpVae<T>, dataset: &Dataset, epsilon: f64) -> Result<ReconMetrics> {
    let x: Tensor<T> = dataset.samples.cast();
    let y: Tensor<f32> = model.reconstruct(&x)?.cast();
    recon_metrics(y.data(), dataset.samples.data(), epsilon)
}

fn require_labels(ds: &Dataset) -> Result<&[usize]> {
    ds.labels
        .as_deref()
        .ok_or_else(|| NvcError::MissingData(format!("{} split has no labels", ds.split.name())))
}

/// Majority true label of each anchor's members; `None` for an empty anchor.
/// Ties go to the smallest label.
pub fn anchor_label_map(assigned: &[usize], truth: &[usize], anchors: usize) -> Vec<Option<usize>> {
    let classes = truth.iter().copied().max().map_or(0, |m| m + 1);
    let mut votes = vec![vec![0usize; classes]; anchors];
    for (&a, &t) in assigned.iter().zip(truth) {
        votes[a][t] += 1;
    }
    votes
        .iter()
        .map(|v| {
            let best = v.iter().copied().max().unwrap_or(0);
            (best > 0).then(|| v.iter().position(|&c| c == best).expect("max present"))
        })
        .collect()
}

/// Share of samples whose label equals their anchor's majority label.
pub fn purity(assigned: &[usize], truth: &[usize], anchors: usize) -> f64 {
    if assigned.is_empty() {
        return 0.0;
    }
    let map = anchor_label_map(assigned, truth, anchors);
    let agree = assigned
        .iter()
        .zip(truth)
        .filter(|&(&a, &t)| map[a] == Some(t))
        .count();
    agree as f64 / assigned.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorAccuracy {
    /// Percentage of test samples whose nearest anchor maps to their label.
    pub accuracy: f64,
    /// Label assigned to each anchor from the training split.
    pub mapping: Vec<Option<usize>>,
    /// Training-split purity in `[0, 1]`.
    pub train_purity: f64,
    /// Test samples per anchor.
    pub test_counts: Vec<usize>,
}

pub fn eval_anchor_accuracy<T: Real>(
    model: &MlpVae<T>,
    anchors: &AnchorSet<T>,
    train: &Dataset,
    test: &Dataset,
) -> Result<AnchorAccuracy> {
    let train_truth = require_labels(train)?;
    let test_truth = require_labels(test)?;
    let m = anchors.count();
    let train_assign = assign_anchors(&model.latent_means(&train.samples.cast())?, anchors.values())?;
    let mapping = anchor_label_map(&train_assign.labels, train_truth, m);
    let test_assign = assign_anchors(&model.latent_means(&test.samples.cast())?, anchors.values())?;
    let correct = test_assign
        .labels
        .iter()
        .zip(test_truth)
        .filter(|&(&a, &t)| mapping[a] == Some(t))
        .count();
    Ok(AnchorAccuracy {
        accuracy: 100.0 * correct as f64 / test_truth.len() as f64,
        train_purity: purity(&train_assign.labels, train_truth, m),
        mapping,
        test_counts: test_assign.counts(),
    })
}

/// Sample covariance (`n − 1` denominator) of the rows of an `n×d` matrix.
pub fn covariance(latents: &Tensor<f32>) -> Result<DMatrix<f64>> {
    let (n, d) = latents.shape().matrix("covariance")?;
    let rows = latents.to_f64_vec();
    let x = DMatrix::from_row_slice(n, d, &rows);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let denom = (n.max(2) - 1) as f64;
    Ok(centered.transpose() * centered / denom)
}

/// Covariance matrix and the mean absolute off-diagonal entry.
pub fn covariance_diagnostic(latents: &Tensor<f32>) -> Result<(DMatrix<f64>, f64)> {
    let c = covariance(latents)?;
    let d = c.nrows();
    if d < 2 {
        return Ok((c, 0.0));
    }
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                total += c[(i, j)].abs();
            }
        }
    }
    Ok((c, total / (d * (d - 1)) as f64))
}

pub const ENTROPY_RIDGE: f64 = 1e-6;

/// Gaussian plug-in entropy `0.5·ln((2πe)^d · det(Σ̂ + 1e-6·I))`.
pub fn latent_entropy(latents: &Tensor<f32>) -> Result<f64> {
    let (n, d) = latents.shape().matrix("latent_entropy")?;
    if n < 2 {
        return Err(NvcError::InvalidArgument(format!("entropy needs at least 2 samples, got {n}")));
    }
    let cov = covariance(latents)? + DMatrix::identity(d, d) * ENTROPY_RIDGE;
    let chol = cov
        .cholesky()
        .ok_or_else(|| NvcError::NonFinite("latent covariance is not positive definite".into()))?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    Ok(0.5 * (d as f64 * two_pi_e.ln() + log_det))
}

/// `−(recon + kl)` from per-batch means.
pub fn elbo(recon: f64, kl: f64) -> f64 {
    -(recon + kl)
}

/// Evaluation-mode ELBO of a batch: decode `mu`, Bernoulli log-likelihood.
pub fn elbo_estimate<T: Real>(model: &MlpVae<T>, batch: &Tensor<f32>) -> Result<f64> {
    use crate::losses::{kl_diag_gaussian, recon_bce};
    use crate::tensor::Tape;
    let mut tape = Tape::<T>::new();
    let bound = model.bind(&mut tape, false);
    let x = tape.constant(batch.cast());
    let (mu, logvar) = model.posterior(&mut tape, &bound, x)?;
    let y = model.decode(&mut tape, &bound, mu)?;
    let r = recon_bce(&mut tape, y, x)?;
    let k = kl_diag_gaussian(&mut tape, mu, logvar)?;
    let recon = tape.value(r).item().to_f64().unwrap_or(f64::NAN);
    let kl = tape.value(k).item().to_f64().unwrap_or(f64::NAN);
    Ok(elbo(recon, kl))
}

/// Everything printed by the `eval` command.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub recon: ReconMetrics,
    pub anchor_accuracy: Option<f64>,
    pub covariance_offdiag_mean_abs: f64,
    pub per_anchor_counts: Option<Vec<usize>>,
}

impl EvalReport {
    pub fn evaluate<T: Real>(
        model: &MlpVae<T>,
        anchors: Option<&AnchorSet<T>>,
        train: Option<&Dataset>,
        test: &Dataset,
        epsilon: f64,
    ) -> Result<EvalReport> {
        let recon = eval_reconstruction(model, test, epsilon)?;
        let latents: Tensor<f32> = model.latent_means(&test.samples.cast())?.cast();
        let (_, offdiag) = covariance_diagnostic(&latents)?;
        let (anchor_accuracy, per_anchor_counts) = match (anchors, train) {
            (Some(a), Some(train)) if train.labels.is_some() && test.labels.is_some() => {
                let acc = eval_anchor_accuracy(model, a, train, test)?;
                (Some(acc.accuracy), Some(acc.test_counts))
            }
            (Some(a), _) => {
                let asg = assign_anchors(&latents.cast(), a.values())?;
                (None, Some(asg.counts()))
            }
            (None, _) => (None, None),
        };
        Ok(EvalReport {
            recon,
            anchor_accuracy,
            covariance_offdiag_mean_abs: offdiag,
            per_anchor_counts,
        })
    }

    /// `key=value` lines; accuracy and counts are omitted without anchors.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "rel={}", self.recon.rel);
        let _ = writeln!(s, "delta1={}", self.recon.delta1);
        let _ = writeln!(s, "delta2={}", self.recon.delta2);
        let _ = writeln!(s, "delta3={}", self.recon.delta3);
        if let Some(a) = self.anchor_accuracy {
            let _ = writeln!(s, "anchor_accuracy={a}");
        }
        let _ = writeln!(s, "covariance_offdiag_mean_abs={}", self.covariance_offdiag_mean_abs);
        if let Some(c) = &self.per_anchor_counts {
            let c: Vec<String> = c.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "per_anchor_counts={}", c.join(";"));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let acc = self.anchor_accuracy.map_or(String::new(), |a| a.to_string());
        format!(
            "rel,delta1,delta2,delta3,anchor_accuracy,covariance_offdiag_mean_abs\n{},{},{},{},{},{}\n",
            self.recon.rel, self.recon.delta1, self.recon.delta2, self.recon.delta3, acc, self.covariance_offdiag_mean_abs
        )
    }
}
