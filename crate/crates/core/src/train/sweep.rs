use std::fmt::Write as _;

use super::{train, Mode, TrainConfig, TrainState};
use crate::data::Dataset;
use crate::error::Result;
use crate::eval::{eval_anchor_accuracy, eval_reconstruction, ReconMetrics};

pub const SWEEP_HEADER: &str = "mode,anchors,rel,delta1,delta2,delta3,accuracy";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub mode: Mode,
    pub anchors: usize,
    /// Metrics of the cell, or the error message of a failed run.
    pub outcome: std::result::Result<(ReconMetrics, Option<f64>), String>,
}

impl SweepRow {
    /// CSV row; a failed cell keeps its key columns and leaves the rest empty.
    pub fn csv_row(&self) -> String {
        match &self.outcome {
            Ok((r, acc)) => format!(
                "{},{},{},{},{},{},{}",
                self.mode,
                self.anchors,
                r.rel,
                r.delta1,
                r.delta2,
                r.delta3,
                acc.map_or(String::new(), |a| a.to_string())
            ),
            Err(_) => format!("{},{},,,,,", self.mode, self.anchors),
        }
    }

    pub fn csv(rows: &[SweepRow]) -> String {
        let mut s = format!("{SWEEP_HEADER}\n");
        for r in rows {
            let _ = writeln!(s, "{}", r.csv_row());
        }
        s
    }
}

/// Trains and evaluates one cell.
pub fn run_cell(config: &TrainConfig, train_set: &Dataset, test_set: &Dataset) -> Result<(ReconMetrics, Option<f64>)> {
    let mut state = TrainState::new(config.clone(), train_set.dim(), train_set.kind)?;
    train(&mut state, train_set, |_, _| Ok(()))?;
    let recon = eval_reconstruction(&state.model, test_set, config.eval_epsilon)?;
    let accuracy = match &state.anchors {
        Some(a) if train_set.labels.is_some() && test_set.labels.is_some() => {
            Some(eval_anchor_accuracy(&state.model, a, train_set, test_set)?.accuracy)
        }
        _ => None,
    };
    Ok((recon, accuracy))
}

/// One independent run per `(mode, anchor count)`, identical otherwise.
/// A failing cell is recorded and the sweep moves on.
pub fn anchor_sweep(
    base: &TrainConfig,
    modes: &[Mode],
    counts: &[usize],
    train_set: &Dataset,
    test_set: &Dataset,
    mut on_cell: impl FnMut(&SweepRow),
) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &mode in modes {
        for &anchors in counts {
            let cfg = TrainConfig {
                mode,
                anchors,
                ..base.clone()
            };
            let outcome = run_cell(&cfg, train_set, test_set).map_err(|e| e.to_string());
            let row = SweepRow { mode, anchors, outcome };
            on_cell(&row);
            rows.push(row);
        }
    }
    rows
}
