use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// One row of training metrics. Fields a trainer does not produce stay `None`
/// and are written as empty CSV cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsRow {
    /// Epoch (reward/DPO/SFT training) or step (alignment), 1-based.
    pub step: usize,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub mean_margin: Option<f64>,
    /// Fraction of pairs with margin above Δ*/2, where the constraint pushes
    /// the margin down.
    pub constraint_active_fraction: Option<f64>,
    pub mean_kl: Option<f64>,
    pub mean_reward: Option<f64>,
    pub mean_true_reward: Option<f64>,
    pub mean_length: Option<f64>,
}

pub const METRICS_HEADER: &str = "step,loss,accuracy,val_accuracy,mean_margin,\
constraint_active_fraction,mean_kl,mean_reward,mean_true_reward,mean_length";

fn cell(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(v) = v {
        write!(out, "{v}").unwrap();
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        write!(out, "{}", r.step).unwrap();
        for v in [
            r.loss,
            r.accuracy,
            r.val_accuracy,
            r.mean_margin,
            r.constraint_active_fraction,
            r.mean_kl,
            r.mean_reward,
            r.mean_true_reward,
            r.mean_length,
        ] {
            cell(&mut out, v);
        }
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}
