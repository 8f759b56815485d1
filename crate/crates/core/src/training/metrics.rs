use std::fmt::{self, Write};

use serde::Serialize;

pub const METRICS_HEADER: &str = "epoch,phase,em_round,l_exp,l_precor,l_tot,val_acc";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Phase {
    Expectation,
    Maximization,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Expectation => "E",
            Phase::Maximization => "M",
        })
    }
}

/// One row of the metrics CSV. Losses are means over the epoch's batches.
/// `epoch` counts epochs of the same phase across EM rounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub em_round: usize,
    pub l_exp: f64,
    pub l_precor: Option<f64>,
    pub l_tot: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    /// Mean |pre-cor error| over the training set before any training.
    pub initial_precor_error: Option<f64>,
    /// Same quantity after each EM round's maximization phase.
    pub precor_errors: Vec<f64>,
    /// Mean signed pre-cor loss after each EM round.
    pub precor_signed: Vec<f64>,
    /// Validation accuracy after each EM round.
    pub round_val_acc: Vec<f64>,
    pub best_round: Option<usize>,
    pub test_accuracy: Option<f64>,
    /// Kept out of [`RunMetrics::to_csv`] so the CSV stays reproducible.
    pub wall_clock_secs: f64,
}

impl RunMetrics {
    pub fn em_rounds(&self) -> usize {
        self.precor_errors.len()
    }

    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.phase,
                r.em_round,
                r.l_exp,
                opt(r.l_precor),
                opt(r.l_tot),
                opt(r.val_acc)
            )
            .expect("string write");
        }
        out
    }
}
