//! Side-by-side summary of two finished runs.

use std::fmt::Write as _;
use std::path::Path;

use super::checkpoint;
use super::report::read_report_field;
use super::run::{read_metrics, MetricsRow};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub final_accuracy: Option<f64>,
    /// Rounds completed when the evaluated accuracy first reached the threshold.
    pub rounds_to_threshold: Option<u64>,
    pub rho: f64,
    pub rounds: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub threshold: f64,
    pub a: RunSummary,
    pub b: RunSummary,
}

/// First evaluation at or above `threshold`, as a count of completed rounds.
pub fn rounds_to_threshold(metrics: &[MetricsRow], threshold: f64) -> Option<u64> {
    metrics
        .iter()
        .find(|m| m.eval_acc.is_some_and(|a| a >= threshold))
        .map(|m| m.round + 1)
}

pub fn final_accuracy(metrics: &[MetricsRow]) -> Option<f64> {
    metrics.iter().rev().find_map(|m| m.eval_acc)
}

fn summarize(metrics: &[MetricsRow], rho: f64, threshold: f64) -> RunSummary {
    RunSummary {
        final_accuracy: final_accuracy(metrics),
        rounds_to_threshold: rounds_to_threshold(metrics, threshold),
        rho,
        rounds: metrics.len() as u64,
    }
}

/// Compares two run directories. The threshold defaults to run A's final accuracy.
pub fn compare(a: &Path, b: &Path, threshold: Option<f64>) -> Result<Comparison, HarnessError> {
    let dim_a = checkpoint::read_dim(&a.join("checkpoint.bin"))?;
    let dim_b = checkpoint::read_dim(&b.join("checkpoint.bin"))?;
    if dim_a != dim_b {
        return Err(HarnessError::Compare(format!("model dimensions differ: {dim_a} vs {dim_b}")));
    }
    let ma = read_metrics(&a.join("metrics.csv"))?;
    let mb = read_metrics(&b.join("metrics.csv"))?;
    let rho = |dir: &Path| -> Result<f64, HarnessError> {
        let v = read_report_field(&dir.join("privacy_report.csv"), "rho")?;
        v.parse().map_err(|_| HarnessError::Compare(format!("bad rho `{v}`")))
    };
    let threshold = threshold
        .or_else(|| final_accuracy(&ma))
        .ok_or_else(|| HarnessError::Compare("run A has no evaluated accuracy".into()))?;
    Ok(Comparison { threshold, a: summarize(&ma, rho(a)?, threshold), b: summarize(&mb, rho(b)?, threshold) })
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

fn delta(a: Option<f64>, b: Option<f64>) -> String {
    match (a, b) {
        (Some(a), Some(b)) => (b - a).to_string(),
        _ => "-".into(),
    }
}

impl Comparison {
    pub fn accuracy_gap(&self) -> Option<f64> {
        Some(self.b.final_accuracy? - self.a.final_accuracy?)
    }

    /// Whether the final accuracies differ by at most `band`.
    pub fn within_band(&self, band: f64) -> bool {
        self.accuracy_gap().is_some_and(|g| g.abs() <= band)
    }

    pub fn to_table(&self) -> String {
        let (a, b) = (&self.a, &self.b);
        let mut t = String::from("metric,run_a,run_b,delta\n");
        let _ = writeln!(
            t,
            "final_accuracy,{},{},{}",
            cell(a.final_accuracy),
            cell(b.final_accuracy),
            delta(a.final_accuracy, b.final_accuracy)
        );
        let _ = writeln!(
            t,
            "rounds_to_{},{},{},{}",
            self.threshold,
            cell(a.rounds_to_threshold),
            cell(b.rounds_to_threshold),
            delta(a.rounds_to_threshold.map(|r| r as f64), b.rounds_to_threshold.map(|r| r as f64))
        );
        let _ = writeln!(t, "rho,{},{},{}", a.rho, b.rho, delta(Some(a.rho), Some(b.rho)));
        let _ = writeln!(t, "rounds,{},{},{}", a.rounds, b.rounds, delta(Some(a.rounds as f64), Some(b.rounds as f64)));
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(round: u64, acc: Option<f64>) -> MetricsRow {
        MetricsRow {
            round,
            eval_acc: acc,
            train_loss: 1.0,
            active_clip: 1.0,
            quantile_estimate: None,
            cohort_size: 1,
            cumulative_zcdp: 0.0,
            bits_per_update: None,
        }
    }

    #[test]
    fn threshold_is_first_crossing() {
        let m = vec![row(0, Some(0.1)), row(1, None), row(2, Some(0.5)), row(3, Some(0.4)), row(4, Some(0.6))];
        assert_eq!(rounds_to_threshold(&m, 0.45), Some(3));
        assert_eq!(rounds_to_threshold(&m, 0.9), None);
        assert_eq!(final_accuracy(&m), Some(0.6));
    }
}
