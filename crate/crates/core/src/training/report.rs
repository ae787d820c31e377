use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::trainer::{EpochMetrics, TrainReport};

pub const METRICS_HEADER: &str = "epoch,phase,lambda,train_ce,train_attn,val_acc,val_attn,optim_value,lr";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.8e}"))
}

pub fn metrics_row(m: &EpochMetrics) -> String {
    format!(
        "{},{},{},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
        m.epoch,
        m.phase,
        opt(m.lambda),
        opt(m.train_ce),
        m.train_attn,
        m.val_acc,
        m.val_attn,
        m.optim_value,
        m.lr
    )
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        out.push_str(&metrics_row(m));
        out.push('\n');
    }
    out
}

/// Human-readable run summary.
pub fn summary_text(r: &TrainReport) -> String {
    let c = &r.config;
    let mut s = String::new();
    writeln!(s, "dataset = {}", c.dataset).unwrap();
    writeln!(s, "seed = {}", c.seed).unwrap();
    writeln!(s, "lambda0 = {}", c.lambda0).unwrap();
    writeln!(s, "e_attn = {}", c.e_attn).unwrap();
    writeln!(s, "epochs = {}", c.epochs).unwrap();
    writeln!(s, "final_test_acc = {}", r.final_test_acc).unwrap();
    if let Some(a) = r.final_test_attn {
        writeln!(s, "final_test_attn = {a}").unwrap();
    }
    writeln!(s, "best_optim_value = {}", r.best_optim_value).unwrap();
    s
}

pub fn write_report(r: &TrainReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metrics = dir.join("metrics.csv");
    fs::write(&metrics, metrics_csv(&r.per_epoch)).map_err(|e| Error::io(&metrics, e))?;
    let summary = dir.join("summary.txt");
    fs::write(&summary, summary_text(r)).map_err(|e| Error::io(&summary, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Phase;

    #[test]
    fn attention_rows_leave_fields_empty() {
        let m = EpochMetrics {
            epoch: 3,
            phase: Phase::Attention,
            lambda: None,
            train_ce: None,
            train_attn: 0.25,
            val_acc: 0.5,
            val_attn: 0.2,
            optim_value: 0.4,
            lr: 1e-3,
        };
        let row = metrics_row(&m);
        assert!(row.starts_with("3,attention,,,2.50000000e-1,"), "{row}");
        assert_eq!(row.split(',').count(), METRICS_HEADER.split(',').count());
    }
}
