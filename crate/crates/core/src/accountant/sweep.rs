//! Privacy as a function of population, rounds and report goal.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{rho_from_sensitivity, sensitivity_profile, zcdp_to_eps, AccountantError, ParticipationSchema};
use crate::tree::RestartSchedule;

/// Grid of accounting scenarios. Report goal and noise multiplier are scaled
/// together by each factor in `scales`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub noise_multiplier: f64,
    pub report_goal: u64,
    pub populations: Vec<u64>,
    pub rounds: Vec<u64>,
    pub scales: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub population: u64,
    pub rounds: u64,
    pub report_goal: u64,
    pub noise_multiplier: f64,
    pub min_separation: u64,
    pub max_participations: u64,
    pub rho: f64,
    pub epsilon: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str =
        "population,rounds,report_goal,noise_multiplier,min_separation,max_participations,rho,epsilon";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.population,
            self.rounds,
            self.report_goal,
            self.noise_multiplier,
            self.min_separation,
            self.max_participations,
            self.rho,
            self.epsilon
        )
    }
}

/// One row per (scale, population, rounds), with `MinS = floor(population /
/// report_goal)` and the worst-case `MaxP = ceil(T / MinS)`, single tree.
pub fn sweep(grid: &SweepGrid) -> Result<Vec<SweepRow>, AccountantError> {
    if !(grid.noise_multiplier > 0.0) || grid.report_goal == 0 {
        return Err(AccountantError::InvalidParameter(
            "sweep needs a positive noise multiplier and report goal".into(),
        ));
    }
    if grid.scales.iter().any(|s| !(*s > 0.0)) || grid.rounds.contains(&0) {
        return Err(AccountantError::InvalidParameter("scales and rounds must be positive".into()));
    }
    let max_rounds = grid.rounds.iter().copied().max().unwrap_or(0);
    let mut specs = Vec::new();
    for &scale in &grid.scales {
        let report_goal = ((grid.report_goal as f64 * scale).round() as u64).max(1);
        for &population in &grid.populations {
            if population < report_goal {
                return Err(AccountantError::InvalidParameter(format!(
                    "population {population} is below report goal {report_goal}"
                )));
            }
            for &rounds in &grid.rounds {
                specs.push((population, rounds, report_goal, grid.noise_multiplier * scale));
            }
        }
    }

    // One profile per MinS covers every horizon up to the longest.
    let separations: Vec<u64> = {
        let mut v: Vec<u64> = specs.iter().map(|&(p, _, m, _)| p / m).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let profiles: BTreeMap<u64, Vec<u64>> = separations
        .par_iter()
        .map(|&min_sep| {
            let schema = ParticipationSchema::worst_case(max_rounds, min_sep, RestartSchedule::none())?;
            Ok((min_sep, sensitivity_profile(&schema)?))
        })
        .collect::<Result<_, AccountantError>>()?;

    specs
        .par_iter()
        .map(|&(population, rounds, report_goal, z)| {
            let min_separation = population / report_goal;
            let sens = profiles[&min_separation][rounds as usize - 1];
            let rho = rho_from_sensitivity(sens as f64, z);
            Ok(SweepRow {
                population,
                rounds,
                report_goal,
                noise_multiplier: z,
                min_separation,
                max_participations: rounds.div_ceil(min_separation),
                rho,
                epsilon: zcdp_to_eps(rho, grid.delta)?,
            })
        })
        .collect()
}
