use std::fmt::Write as _;

use crate::distill::LossBreakdown;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "epoch,mini_gen,lr,loss_total,loss_ce,loss_kl_long,loss_kl_short,train_acc,test_acc";

/// One training epoch. `epoch` is 1-based; losses are means over the epoch's steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mini_gen: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// Fraction of training samples whose loss-time prediction was correct.
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub best_test_acc: f64,
    pub final_test_acc: f64,
    pub wall_clock_secs: f64,
    pub seed: u64,
    pub config_echo: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub epochs: Vec<EpochRecord>,
    pub summary: RunSummary,
}

/// Accuracy as written to the metrics CSV.
pub fn format_acc(acc: f64) -> String {
    format!("{acc:.4}")
}

impl RunReport {
    pub(crate) fn from_epochs(
        epochs: Vec<EpochRecord>,
        wall_clock_secs: f64,
        seed: u64,
        config_echo: String,
    ) -> Self {
        let best = epochs.iter().map(|r| r.test_acc).fold(f64::NEG_INFINITY, f64::max);
        let last = epochs.last().map_or(0.0, |r| r.test_acc);
        RunReport {
            summary: RunSummary {
                best_test_acc: if epochs.is_empty() { 0.0 } else { best },
                final_test_acc: last,
                wall_clock_secs,
                seed,
                config_echo,
            },
            epochs,
        }
    }

    /// Metrics CSV: header plus one row per epoch. Contains no timing, so it
    /// is byte-identical across reruns with the same configuration and seed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.mini_gen,
                r.lr,
                r.loss.total,
                r.loss.ce,
                r.loss.kl_long,
                r.loss.kl_short,
                format_acc(r.train_acc),
                format_acc(r.test_acc)
            )
            .expect("write to string");
        }
        out
    }

    /// `key = value` footer followed by the configuration echo.
    pub fn summary_text(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        writeln!(out, "best_test_acc = {}", format_acc(s.best_test_acc)).expect("write");
        writeln!(out, "final_test_acc = {}", format_acc(s.final_test_acc)).expect("write");
        writeln!(out, "epochs = {}", self.epochs.len()).expect("write");
        writeln!(out, "seed = {}", s.seed).expect("write");
        writeln!(out, "wall_clock_secs = {:.3}", s.wall_clock_secs).expect("write");
        out.push_str("\n[config]\n");
        out.push_str(&s.config_echo);
        if !s.config_echo.ends_with('\n') {
            out.push('\n');
        }
        out
    }

    /// Final and best test accuracy as read back from a metrics CSV.
    pub fn accuracies_from_csv(csv: &str) -> Result<(f64, f64)> {
        let mut lines = csv.lines();
        if lines.next() != Some(METRICS_HEADER) {
            return Err(Error::Format("metrics CSV has an unexpected header".into()));
        }
        let mut best = f64::NEG_INFINITY;
        let mut last = None;
        for (i, line) in lines.enumerate() {
            let acc: f64 = line
                .rsplit(',')
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("metrics CSV row {} has no test accuracy", i + 1)))?;
            best = best.max(acc);
            last = Some(acc);
        }
        let last = last.ok_or_else(|| Error::Format("metrics CSV has no rows".into()))?;
        Ok((last, best))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize, acc: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            mini_gen: 1,
            lr: 0.1,
            loss: LossBreakdown::ce_only(0.5, 0.0, 0.0),
            train_acc: 0.5,
            test_acc: acc,
        }
    }

    #[test]
    fn csv_and_summary() {
        let r = RunReport::from_epochs(vec![record(1, 0.61234), record(2, 0.5)], 1.5, 7, "a = 1".into());
        assert_eq!(r.summary.best_test_acc, 0.61234);
        assert_eq!(r.summary.final_test_acc, 0.5);
        let csv = r.to_csv();
        assert_eq!(
            csv,
            format!("{METRICS_HEADER}\n1,1,0.1,0.5,0.5,0,0,0.5000,0.6123\n2,1,0.1,0.5,0.5,0,0,0.5000,0.5000\n")
        );
        assert_eq!(RunReport::accuracies_from_csv(&csv).unwrap(), (0.5, 0.6123));
        assert!(r.summary_text().contains("seed = 7\n"));
        assert!(r.summary_text().ends_with("[config]\na = 1\n"));
    }
}
