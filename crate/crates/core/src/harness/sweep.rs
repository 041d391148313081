//! Privacy sweeps over population, rounds and report goal.

use std::path::Path;

use super::config::KeyValues;
use super::HarnessError;
use crate::accountant::{sweep, SweepGrid, SweepRow, REPORT_DELTA};

/// Parses a grid file with keys `noise_multiplier`, `report_goal`,
/// `populations`, `rounds`, `scales` and optionally `delta`.
pub fn parse_grid(text: &str) -> Result<SweepGrid, HarnessError> {
    let mut kv = KeyValues::parse(text)?;
    let missing = |key: &str| HarnessError::Config { key: key.into(), msg: "required".into() };
    let grid = SweepGrid {
        noise_multiplier: kv.take("noise_multiplier")?.ok_or_else(|| missing("noise_multiplier"))?,
        report_goal: kv.take("report_goal")?.ok_or_else(|| missing("report_goal"))?,
        populations: kv.take_list("populations")?.ok_or_else(|| missing("populations"))?,
        rounds: kv.take_list("rounds")?.ok_or_else(|| missing("rounds"))?,
        scales: kv.take_list("scales")?.unwrap_or_else(|| vec![1.0]),
        delta: kv.take_or("delta", REPORT_DELTA)?,
    };
    kv.finish()?;
    Ok(grid)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SweepRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Runs the grid in `grid_path` and writes the table to `out`.
pub fn sweep_privacy(grid_path: &Path, out: &Path) -> Result<Vec<SweepRow>, HarnessError> {
    let text = std::fs::read_to_string(grid_path).map_err(|e| HarnessError::io(grid_path, e))?;
    let rows = sweep(&parse_grid(&text)?)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(out, sweep_csv(&rows)).map_err(|e| HarnessError::io(out, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_file() {
        let g = parse_grid("noise_multiplier = 7\nreport_goal = 6500\npopulations = 1e6, 3e6\nrounds = 1000, 2000").unwrap();
        assert_eq!(g.populations, vec![1_000_000, 3_000_000]);
        assert_eq!(g.scales, vec![1.0]);
        assert_eq!(g.delta, 1e-10);
        assert!(parse_grid("noise_multiplier = 7").is_err());
        assert!(parse_grid("noise_multiplier = 7\nreport_goal = 1\npopulations = 5\nrounds = 3\nextra = 1").is_err());
    }

    #[test]
    fn writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let grid = dir.path().join("grid.txt");
        std::fs::write(&grid, "noise_multiplier = 1\nreport_goal = 10\npopulations = 100, 200\nrounds = 16, 32\n").unwrap();
        let out = dir.path().join("sub/sweep.csv");
        let rows = sweep_privacy(&grid, &out).unwrap();
        let text = std::fs::read_to_string(out).unwrap();
        assert_eq!(text.lines().count(), rows.len() + 1);
        assert!(text.starts_with(SweepRow::CSV_HEADER));
    }
}
