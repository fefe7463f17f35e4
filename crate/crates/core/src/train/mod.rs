//! Training loop, metrics records, anchor sweeps and the k-means baseline.

mod config;
mod sweep;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DataKind, Dataset};
use crate::error::{NvcError, Result};
use crate::eval::{elbo, latent_entropy};
use crate::losses::{
    assign_anchors, init_anchors, kl_diag_gaussian, kmeans_loss, kmeans_update, metric_loss, nebula_loss, recon_bce,
    recon_euclidean, robbins_monro_update, total_loss, AnchorSet,
};
use crate::model::{MlpVae, ModelConfig, OutputKind};
use crate::tensor::{Adam, Optimizer, Parameter, Sgd, Tape, Tensor, Var};

pub use config::{Mode, OptimizerKind, TrainConfig, DEFAULT_CLAMP_D, DEFAULT_NEBULA_WEIGHT};
pub use sweep::{anchor_sweep, SweepRow, SWEEP_HEADER};

pub const METRICS_HEADER: &str = "step,epoch,loss_total,loss_recon,loss_kl,loss_nebula,loss_pair,loss_triplet,elbo,latent_entropy,mean_assignment_count";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_recon: f64,
    pub loss_kl: f64,
    pub loss_nebula: f64,
    pub loss_pair: f64,
    pub loss_triplet: f64,
    pub elbo: f64,
    pub latent_entropy: f64,
    pub mean_assignment_count: f64,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.epoch,
            self.loss_total,
            self.loss_recon,
            self.loss_kl,
            self.loss_nebula,
            self.loss_pair,
            self.loss_triplet,
            self.elbo,
            self.latent_entropy,
            self.mean_assignment_count
        )
    }

    pub fn parse_row(line: &str) -> Result<MetricsRecord> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 11 {
            return Err(NvcError::Format(format!("metrics row has {} fields, expected 11", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| NvcError::Format(format!("bad metrics value `{}`", f[i])))
        };
        let int = |i: usize| -> Result<usize> {
            f[i].parse()
                .map_err(|_| NvcError::Format(format!("bad metrics value `{}`", f[i])))
        };
        Ok(MetricsRecord {
            step: int(0)?,
            epoch: int(1)?,
            loss_total: num(2)?,
            loss_recon: num(3)?,
            loss_kl: num(4)?,
            loss_nebula: num(5)?,
            loss_pair: num(6)?,
            loss_triplet: num(7)?,
            elbo: num(8)?,
            latent_entropy: num(9)?,
            mean_assignment_count: num(10)?,
        })
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::with_capacity(records.len() * 120 + METRICS_HEADER.len() + 1);
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(NvcError::Format("metrics CSV header mismatch".into()));
    }
    lines.filter(|l| !l.trim().is_empty()).map(MetricsRecord::parse_row).collect()
}

/// Optimizer together with its persistent state.
#[derive(Clone, Debug)]
pub enum OptimizerState {
    Adam(Adam<f32>),
    Sgd(Sgd),
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => OptimizerState::Adam(Adam::new(lr)),
            OptimizerKind::Sgd => OptimizerState::Sgd(Sgd { lr }),
        }
    }

    fn step(&mut self, params: &mut [&mut Parameter<f32>]) -> Result<()> {
        match self {
            OptimizerState::Adam(a) => a.step(params),
            OptimizerState::Sgd(s) => s.step(params),
        }
    }
}

/// Everything a checkpoint needs to resume or evaluate a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: MlpVae<f32>,
    pub anchors: Option<AnchorSet<f32>>,
    pub optimizer: OptimizerState,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
}

/// Seed offsets of the independent random streams of one run.
const ANCHOR_STREAM: u64 = 0x5eed_a4c0;
const NOISE_STREAM: u64 = 0x5eed_0015e;

pub fn output_kind(kind: DataKind) -> OutputKind {
    match kind {
        DataKind::Image => OutputKind::Sigmoid,
        DataKind::Real => OutputKind::Linear,
    }
}

impl TrainState {
    /// Fresh model and anchors for `input_dim`-wide data.
    pub fn new(config: TrainConfig, input_dim: usize, kind: DataKind) -> Result<TrainState> {
        config.validate()?;
        let model = MlpVae::init(ModelConfig {
            input_dim,
            hidden_dims: config.hidden_dims.clone(),
            latent_dim: config.latent_dim,
            output: output_kind(kind),
            seed: config.seed,
        })?;
        let anchors = if config.effective_mode().uses_anchors() {
            let seed = config.seed ^ ANCHOR_STREAM;
            Some(init_anchors(config.anchors, config.latent_dim, seed)?)
        } else {
            None
        };
        let optimizer = OptimizerState::new(config.optimizer, config.lr);
        Ok(TrainState {
            config,
            model,
            anchors,
            optimizer,
            epoch: 0,
            step: 0,
        })
    }

    pub fn mode(&self) -> Mode {
        self.config.effective_mode()
    }

    fn finished(&self) -> bool {
        self.epoch >= self.config.epochs || self.config.max_steps.is_some_and(|s| self.step >= s)
    }
}

fn scalar(tape: &Tape<f32>, v: Var) -> f64 {
    tape.value(v).item() as f64
}

/// Loss terms of one optimizer step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub nebula: f64,
    pub pair: f64,
    pub triplet: f64,
}

impl StepLosses {
    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("loss_recon", self.recon),
            ("loss_kl", self.kl),
            ("loss_nebula", self.nebula),
            ("loss_pair", self.pair),
            ("loss_triplet", self.triplet),
            ("loss_total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// One forward/backward pass and optimizer update; returns the losses, the
/// sampled latent batch and the per-anchor assignment counts. Frozen anchors
/// enter the losses as constants and are left to the caller.
fn train_step(
    state: &mut TrainState,
    samples: Tensor<f32>,
    kind: DataKind,
    rng: &mut ChaCha8Rng,
    anchors_trainable: bool,
) -> Result<(StepLosses, Tensor<f32>, Vec<usize>)> {
    let step = state.step + 1;
    forward_backward(state, samples, kind, rng, anchors_trainable).map_err(|e| match e {
        NvcError::NonFinite(term) => NvcError::NumericFailure { term, step },
        e => e,
    })
}

fn forward_backward(
    state: &mut TrainState,
    samples: Tensor<f32>,
    kind: DataKind,
    rng: &mut ChaCha8Rng,
    anchors_trainable: bool,
) -> Result<(StepLosses, Tensor<f32>, Vec<usize>)> {
    let mode = state.mode();
    let step = state.step + 1;
    let mut tape = Tape::<f32>::new();
    let bound = state.model.bind(&mut tape, true);
    let anchor_var = state
        .anchors
        .as_ref()
        .map(|a| tape.leaf(a.values().clone(), anchors_trainable));
    let x = tape.constant(samples);
    let lat = state.model.encode(&mut tape, &bound, x, Some(rng))?;
    let y = state.model.decode(&mut tape, &bound, lat.z)?;
    let recon = match kind {
        DataKind::Image => recon_bce(&mut tape, y, x)?,
        DataKind::Real => recon_euclidean(&mut tape, y, x)?,
    };
    let kl = kl_diag_gaussian(&mut tape, lat.mu, lat.logvar)?;
    let z_values = tape.value(lat.z).clone();
    let n = z_values.rows();

    let zero = Tensor::scalar(0.0);
    let (nebula, pair, triplet, counts) = match (&state.anchors, anchor_var) {
        (Some(anchors), Some(av)) => {
            let assignment = assign_anchors(&z_values, anchors.values())?;
            let nebula = nebula_loss(&mut tape, lat.z, av, &assignment, state.config.nebula_options())?;
            let (pair, triplet) = if mode.uses_metric() && n >= 2 {
                let t = metric_loss(&mut tape, lat.z, &assignment.labels)?;
                (t.pair, t.triplet)
            } else {
                (tape.constant(zero.clone()), tape.constant(zero.clone()))
            };
            (nebula, pair, triplet, assignment.counts())
        }
        _ => (tape.constant(zero.clone()), tape.constant(zero.clone()), tape.constant(zero), Vec::new()),
    };
    let metric = tape.add(pair, triplet)?;
    let total = total_loss(&mut tape, recon, kl, nebula, metric, &state.config.weights)?;
    let losses = StepLosses {
        total: scalar(&tape, total),
        recon: scalar(&tape, recon),
        kl: scalar(&tape, kl),
        nebula: scalar(&tape, nebula),
        pair: scalar(&tape, pair),
        triplet: scalar(&tape, triplet),
    };
    if let Some(term) = losses.first_non_finite() {
        return Err(NvcError::NumericFailure { term: term.into(), step });
    }
    tape.backward(total)?;
    state.model.collect_grads(&mut tape, &bound)?;
    let mut params: Vec<&mut Parameter<f32>> = state.model.params.iter_mut().collect();
    if let (Some(anchors), Some(av), true) = (state.anchors.as_mut(), anchor_var, anchors_trainable) {
        anchors.anchors.grad = Some(
            tape.take_grad(av)
                .ok_or_else(|| NvcError::MissingGradient("anchors".into()))?,
        );
        params.push(&mut anchors.anchors);
    }
    state.optimizer.step(&mut params)?;
    if !state.model.is_finite() || state.anchors.as_ref().is_some_and(|a| !a.values().is_finite()) {
        return Err(NvcError::NumericFailure {
            term: "parameters".into(),
            step,
        });
    }
    state.step = step;
    Ok((losses, z_values, counts))
}

fn record(state: &TrainState, losses: &StepLosses, z: &Tensor<f32>, counts: &[usize]) -> Result<MetricsRecord> {
    let entropy = latent_entropy(z)?;
    let occupied = counts.iter().filter(|&&c| c > 0).count();
    let mean_assignment_count = if occupied == 0 {
        0.0
    } else {
        z.rows() as f64 / occupied as f64
    };
    Ok(MetricsRecord {
        step: state.step,
        epoch: state.epoch,
        loss_total: losses.total,
        loss_recon: losses.recon,
        loss_kl: losses.kl,
        loss_nebula: losses.nebula,
        loss_pair: losses.pair,
        loss_triplet: losses.triplet,
        elbo: elbo(losses.recon, losses.kl),
        latent_entropy: entropy,
        mean_assignment_count,
    })
}

/// Trains until the configured epoch (or step) budget is spent.
///
/// Labels in `dataset` are never read. `on_epoch` runs after every completed
/// epoch with the records logged during it; a checkpoint written there stays
/// valid if a later epoch fails.
pub fn train(
    state: &mut TrainState,
    dataset: &Dataset,
    mut on_epoch: impl FnMut(&TrainState, &[MetricsRecord]) -> Result<()>,
) -> Result<Vec<MetricsRecord>> {
    if dataset.is_empty() {
        return Err(NvcError::MissingData("training set is empty".into()));
    }
    if dataset.dim() != state.model.input_dim() {
        return Err(NvcError::ShapeMismatch {
            op: "train",
            lhs: vec![dataset.dim()],
            rhs: vec![state.model.input_dim()],
        });
    }
    let mut all = Vec::new();
    while !state.finished() {
        let epoch = state.epoch;
        let seed = state.config.seed;
        let mut noise = ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM);
        noise.set_stream(epoch as u64);
        let mut epoch_records = Vec::new();
        let batches = dataset.batches(state.config.batch_size, epoch, seed, state.mode().uses_metric())?;
        for batch in batches {
            let (losses, z, counts) = train_step(state, batch.samples, dataset.kind, &mut noise, true)?;
            if state.step % state.config.log_every == 0 && z.rows() >= 2 {
                epoch_records.push(record(state, &losses, &z, &counts)?);
            }
            if state.config.max_steps.is_some_and(|s| state.step >= s) {
                break;
            }
        }
        state.epoch += 1;
        on_epoch(state, &epoch_records)?;
        all.extend(epoch_records);
    }
    Ok(all)
}

/// How the k-means baseline moves its anchors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KmeansRule {
    /// Replace each anchor by the mean of its batch members.
    Batch,
    /// Move each anchor toward its members with the given step size.
    RobbinsMonro(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KmeansRecord {
    pub step: usize,
    pub kmeans_loss: f64,
    /// Frobenius norm of the anchor change made by this step.
    pub anchor_displacement: f64,
}

pub const KMEANS_HEADER: &str = "step,kmeans_loss,anchor_displacement";

pub fn kmeans_csv(records: &[KmeansRecord]) -> String {
    let mut s = format!("{KMEANS_HEADER}\n");
    for r in records {
        let _ = writeln!(s, "{},{},{}", r.step, r.kmeans_loss, r.anchor_displacement);
    }
    s
}

/// Same loop as [`train`], but anchors are constants on the tape and move by a
/// k-means rule after each step instead of by their gradient.
pub fn kmeans_baseline_train(state: &mut TrainState, dataset: &Dataset, rule: KmeansRule) -> Result<Vec<KmeansRecord>> {
    if state.anchors.is_none() {
        return Err(NvcError::InvalidArgument("k-means baseline needs anchors".into()));
    }
    let mut out = Vec::new();
    while !state.finished() {
        let epoch = state.epoch;
        let seed = state.config.seed;
        let mut noise = ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM);
        noise.set_stream(epoch as u64);
        for batch in dataset.batches(state.config.batch_size, epoch, seed, state.mode().uses_metric())? {
            let (_, z, _) = train_step(state, batch.samples, dataset.kind, &mut noise, false)?;
            let frozen = state.anchors.take().expect("checked above");
            let assignment = assign_anchors(&z, frozen.values())?;
            let loss = kmeans_loss(&z, frozen.values(), &assignment)? as f64;
            let updated = match rule {
                KmeansRule::Batch => kmeans_update(&z, frozen.values(), &assignment)?,
                KmeansRule::RobbinsMonro(lr) => robbins_monro_update(frozen.values(), &z, &assignment, lr)?,
            };
            let displacement = frozen
                .values()
                .data()
                .iter()
                .zip(updated.data())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            out.push(KmeansRecord {
                step: state.step,
                kmeans_loss: loss,
                anchor_displacement: displacement,
            });
            state.anchors = Some(AnchorSet::from_tensor(updated, frozen.seed)?);
            if state.config.max_steps.is_some_and(|s| state.step >= s) {
                break;
            }
        }
        state.epoch += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    fn small_config(mode: Mode) -> TrainConfig {
        TrainConfig {
            mode,
            anchors: 3,
            latent_dim: 2,
            hidden_dims: vec![8],
            epochs: 2,
            batch_size: 16,
            log_every: 1,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    fn run(cfg: TrainConfig, ds: &Dataset) -> (TrainState, Vec<MetricsRecord>) {
        let mut state = TrainState::new(cfg, ds.dim(), ds.kind).unwrap();
        let records = train(&mut state, ds, |_, _| Ok(())).unwrap();
        (state, records)
    }

    #[test]
    fn vae_leaves_anchor_terms_zero() {
        let ds = gen_synthetic(3, 20, 4, 0.2, 1).unwrap();
        let (state, records) = run(small_config(Mode::Vae), &ds);
        assert!(state.anchors.is_none());
        assert_eq!(records.len(), 8);
        for r in &records {
            assert_eq!((r.loss_nebula, r.loss_pair, r.loss_triplet), (0.0, 0.0, 0.0));
            assert_eq!(r.mean_assignment_count, 0.0);
        }
    }

    #[test]
    fn total_is_weighted_sum() {
        let ds = gen_synthetic(3, 20, 4, 0.2, 1).unwrap();
        let cfg = small_config(Mode::NvcMl);
        let w = cfg.weights;
        let (_, records) = run(cfg, &ds);
        for r in &records {
            let sum = w.recon * r.loss_recon + w.kl * r.loss_kl + w.nebula * r.loss_nebula + w.metric * (r.loss_pair + r.loss_triplet);
            assert!((r.loss_total - sum).abs() <= 1e-5 * (1.0 + sum.abs()), "{} vs {sum}", r.loss_total);
            assert!((r.elbo + r.loss_recon + r.loss_kl).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_csv() {
        let ds = gen_synthetic(3, 20, 4, 0.2, 1).unwrap();
        let (_, a) = run(small_config(Mode::Nvc), &ds);
        let (_, b) = run(small_config(Mode::Nvc), &ds);
        assert_eq!(metrics_csv(&a), metrics_csv(&b));
        assert_eq!(parse_metrics_csv(&metrics_csv(&a)).unwrap(), a);
    }

    #[test]
    fn max_steps_stops_early() {
        let ds = gen_synthetic(3, 20, 4, 0.2, 1).unwrap();
        let cfg = TrainConfig {
            max_steps: Some(5),
            epochs: 10,
            ..small_config(Mode::Nvc)
        };
        let (state, records) = run(cfg, &ds);
        assert_eq!(state.step, 5);
        assert_eq!(records.last().unwrap().step, 5);
    }

    #[test]
    fn nan_aborts_naming_the_term() {
        let mut ds = gen_synthetic(3, 20, 4, 0.2, 1).unwrap();
        ds.samples.data_mut()[0] = f32::INFINITY;
        let mut state = TrainState::new(small_config(Mode::Nvc), 4, ds.kind).unwrap();
        let err = train(&mut state, &ds, |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, NvcError::NonFinite(_) | NvcError::NumericFailure { .. }), "{err}");

        let ds = gen_synthetic(3, 20, 4, 0.2, 1).unwrap();
        let cfg = TrainConfig {
            lr: 1e30,
            optimizer: OptimizerKind::Sgd,
            ..small_config(Mode::Nvc)
        };
        let mut state = TrainState::new(cfg, 4, ds.kind).unwrap();
        match train(&mut state, &ds, |_, _| Ok(())) {
            Err(NvcError::NumericFailure { term, .. }) => assert!(!term.is_empty()),
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }

    #[test]
    fn on_epoch_sees_progress() {
        let ds = gen_synthetic(3, 20, 4, 0.2, 1).unwrap();
        let mut state = TrainState::new(small_config(Mode::Nvc), 4, ds.kind).unwrap();
        let mut epochs = Vec::new();
        train(&mut state, &ds, |s, _| {
            epochs.push((s.epoch, s.step));
            Ok(())
        })
        .unwrap();
        assert_eq!(epochs, vec![(1, 4), (2, 8)]);
    }

    #[test]
    fn kmeans_fixed_point_on_exact_clusters() {
        let ds = gen_synthetic(2, 10, 2, 0.0, 3).unwrap();
        let cfg = TrainConfig {
            max_steps: Some(3),
            ..small_config(Mode::Nvc)
        };
        let mut state = TrainState::new(cfg, 2, ds.kind).unwrap();
        let before = state.anchors.as_ref().unwrap().values().clone();
        let records = kmeans_baseline_train(&mut state, &ds, KmeansRule::RobbinsMonro(0.0)).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(state.anchors.as_ref().unwrap().values(), &before);
        assert!(records.iter().all(|r| r.anchor_displacement == 0.0));
    }
}
