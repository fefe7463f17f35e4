//! `nvc` command line: train, eval, sweep, export-latents and gen-synth.
//!
//! Exit codes: 0 success, 1 invalid config or checkpoint, 2 missing or
//! unreadable data, 3 numeric failure during training.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::data::{load_split, Dataset, Split, SyntheticSpec};
use crate::error::NvcError;
use crate::eval::EvalReport;
use crate::losses::assign_anchors;
use crate::train::{anchor_sweep, metrics_csv, train, Mode, SweepRow, TrainConfig, TrainState};

#[derive(Debug, Parser)]
#[command(name = "nvc", version, about = "Variational coding with nebula anchors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics.csv, final.ckpt and config.txt.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Train and evaluate one run per (mode, anchor count).
    Sweep(SweepArgs),
    /// Write evaluation-mode latents and anchors as CSV.
    ExportLatents(ExportArgs),
    /// Generate a synthetic Gaussian-mixture dataset.
    GenSynth(GenSynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub anchors: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Comma-separated anchor counts.
    #[arg(long)]
    pub anchors: String,
    /// Comma-separated modes.
    #[arg(long, default_value = "nvc_no_mass,nvc,nvc_ml")]
    pub modes: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub clusters: usize,
    #[arg(long)]
    pub per_cluster: usize,
    /// Test samples per cluster; defaults to a quarter of --per-cluster.
    #[arg(long)]
    pub test_per_cluster: Option<usize>,
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub spread: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// A failed command: message plus process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    fn config(e: NvcError) -> Self {
        Failure::new(1, e.to_string())
    }

    fn data(e: NvcError) -> Self {
        Failure::new(2, e.to_string())
    }

    /// Training errors: numeric failures exit 3, config errors 1, the rest 2.
    fn training(e: NvcError) -> Self {
        match e {
            NvcError::NumericFailure { .. } => Failure::new(3, e.to_string()),
            NvcError::Config { .. } => Failure::config(e),
            e => Failure::data(e),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure::new(2, format!("{}: {e}", path.display()))
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn write_file(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

fn load_config(path: Option<&Path>) -> std::result::Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| Failure::new(1, format!("config {}: {e}", p.display())))?;
        cfg.apply_text(&text).map_err(Failure::config)?;
    }
    Ok(cfg)
}

fn load_train_state(path: &Path) -> std::result::Result<TrainState, Failure> {
    checkpoint::load(path).map_err(|e| match e {
        NvcError::Io(io) => Failure::new(1, format!("checkpoint {}: {io}", path.display())),
        e => Failure::new(1, format!("checkpoint {}: {e}", path.display())),
    })
}

pub fn cmd_train(args: &TrainArgs) -> CmdResult {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(m) = &args.mode {
        cfg.set("mode", m).map_err(Failure::config)?;
    }
    if let Some(a) = args.anchors {
        cfg.anchors = a;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(Failure::config)?;
    if cfg.mode == Mode::Vae && cfg.anchors > 0 {
        eprintln!("warning: mode vae ignores anchors = {}", cfg.anchors);
    }

    let train_set = load_split(&args.data_dir, Split::Train).map_err(Failure::data)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::io(&args.out, e))?;
    write_file(&args.out.join("config.txt"), &cfg.render())?;

    let mut state = TrainState::new(cfg, train_set.dim(), train_set.kind).map_err(Failure::config)?;
    let ckpt = args.out.join("checkpoint.ckpt");
    let metrics_path = args.out.join("metrics.csv");
    let mut logged = Vec::new();
    let result = train(&mut state, &train_set, |s, records| {
        logged.extend_from_slice(records);
        checkpoint::save(s, &ckpt)?;
        fs::write(&metrics_path, metrics_csv(&logged))?;
        if let Some(r) = records.last() {
            eprintln!(
                "epoch {}/{} step {} loss {:.4} recon {:.4} kl {:.4}",
                s.epoch, s.config.epochs, s.step, r.loss_total, r.loss_recon, r.loss_kl
            );
        }
        Ok(())
    });
    result.map_err(Failure::training)?;
    write_file(&metrics_path, &metrics_csv(&logged))?;
    checkpoint::save(&state, &args.out.join("final.ckpt")).map_err(|e| Failure::io(&args.out, e))?;
    Ok(())
}

fn eval_report(state: &TrainState, data_dir: &Path) -> std::result::Result<EvalReport, Failure> {
    let test = load_split(data_dir, Split::Test).map_err(Failure::data)?;
    let train_set = match &state.anchors {
        Some(_) => Some(load_split(data_dir, Split::Train).map_err(Failure::data)?),
        None => None,
    };
    check_width(state, &test)?;
    EvalReport::evaluate(
        &state.model,
        state.anchors.as_ref(),
        train_set.as_ref(),
        &test,
        state.config.eval_epsilon,
    )
    .map_err(Failure::data)
}

fn check_width(state: &TrainState, ds: &Dataset) -> CmdResult {
    if ds.dim() != state.model.input_dim() {
        return Err(Failure::new(
            2,
            format!(
                "data has {} features but the checkpoint expects {}",
                ds.dim(),
                state.model.input_dim()
            ),
        ));
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let state = load_train_state(&args.checkpoint)?;
    let report = eval_report(&state, &args.data_dir)?;
    print!("{}", report.to_key_values());
    if let Some(p) = &args.csv {
        write_file(p, &report.to_csv())?;
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(flag: &str, raw: &str) -> std::result::Result<Vec<T>, Failure>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Failure::new(1, format!("--{flag}: cannot parse `{s}`: {e}")))
        })
        .collect()
}

pub fn cmd_sweep(args: &SweepArgs) -> CmdResult {
    let base = load_config(args.config.as_deref())?;
    base.validate().map_err(Failure::config)?;
    let raw_counts: Vec<usize> = parse_list("anchors", &args.anchors)?;
    let mut seen = BTreeSet::new();
    let mut counts = Vec::new();
    for c in raw_counts {
        if c == 0 {
            return Err(Failure::new(1, "--anchors: counts must be at least 1"));
        }
        if seen.insert(c) {
            counts.push(c);
        } else {
            eprintln!("warning: duplicate anchor count {c} ignored");
        }
    }
    let modes: Vec<Mode> = parse_list("modes", &args.modes)?;
    if counts.is_empty() || modes.is_empty() {
        return Err(Failure::new(1, "sweep needs at least one anchor count and one mode"));
    }
    let train_set = load_split(&args.data_dir, Split::Train).map_err(Failure::data)?;
    let test_set = load_split(&args.data_dir, Split::Test).map_err(Failure::data)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::io(&args.out, e))?;
    let rows = anchor_sweep(&base, &modes, &counts, &train_set, &test_set, |row| match &row.outcome {
        Ok((r, acc)) => eprintln!("{} m={} rel={:.4} accuracy={:?}", row.mode, row.anchors, r.rel, acc),
        Err(e) => eprintln!("{} m={} failed: {e}", row.mode, row.anchors),
    });
    write_file(&args.out.join("sweep.csv"), &SweepRow::csv(&rows))?;
    if rows.iter().all(|r| r.outcome.is_err()) {
        return Err(Failure::new(3, "every sweep cell failed"));
    }
    Ok(())
}

pub fn cmd_export_latents(args: &ExportArgs) -> CmdResult {
    let state = load_train_state(&args.checkpoint)?;
    let test = load_split(&args.data_dir, Split::Test).map_err(Failure::data)?;
    check_width(&state, &test)?;
    let latents = state.model.latent_means(&test.samples).map_err(Failure::data)?;
    let d = state.model.latent_dim();
    let assigned = match &state.anchors {
        Some(a) => Some(assign_anchors(&latents, a.values()).map_err(Failure::data)?.labels),
        None => None,
    };
    let mut s = String::from("sample_index,true_label,assigned_anchor,anchor_index");
    for j in 0..d {
        let _ = write!(s, ",z_{j}");
    }
    s.push('\n');
    let write_row = |s: &mut String, prefix: String, z: &[f32]| {
        s.push_str(&prefix);
        for v in z {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    };
    for i in 0..test.len() {
        let label = test.labels.as_ref().map_or(-1, |l| l[i] as i64);
        let anchor = assigned.as_ref().map_or(-1, |a| a[i] as i64);
        write_row(&mut s, format!("{i},{label},{anchor},-1"), latents.row(i));
    }
    if let Some(a) = &state.anchors {
        for k in 0..a.count() {
            write_row(&mut s, format!("-1,-1,{k},{k}"), a.values().row(k));
        }
    }
    write_file(&args.out, &s)
}

pub fn cmd_gen_synth(args: &GenSynthArgs) -> CmdResult {
    let spec = SyntheticSpec {
        clusters: args.clusters,
        per_cluster: args.per_cluster,
        test_per_cluster: args.test_per_cluster.unwrap_or((args.per_cluster / 4).max(1)),
        dim: args.dim,
        spread: args.spread,
        seed: args.seed,
    };
    let (train_set, test_set, _) = spec.generate().map_err(|e| Failure::new(1, e.to_string()))?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::io(&args.out, e))?;
    train_set
        .save(&args.out.join("train.nvcd"))
        .map_err(|e| Failure::io(&args.out, e))?;
    if let Some(t) = test_set {
        t.save(&args.out.join("test.nvcd")).map_err(|e| Failure::io(&args.out, e))?;
    }
    Ok(())
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::ExportLatents(a) => cmd_export_latents(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
