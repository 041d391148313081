//! Participation-aware zCDP accounting for restarted tree aggregation.

pub mod conversion;
pub mod oracle;
pub mod solver;
pub mod sweep;

pub use conversion::{loose_epsilon_bound, zcdp_to_eps};
pub use oracle::{brute_force_sensitivity_sq, released_blocks};
pub use solver::{sensitivity_profile, worst_case_sensitivity_sq};
pub use sweep::{sweep, SweepGrid, SweepRow};

use crate::tree::RestartSchedule;

/// δ used for every reported ε.
pub const REPORT_DELTA: f64 = 1e-10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AccountantError {
    #[error("invalid participation schema: {0}")]
    InvalidSchema(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("instance too large: {0}")]
    TooLarge(String),
}

/// Worst-case participation pattern of one client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticipationSchema {
    pub rounds: u64,
    pub min_separation: u64,
    pub max_participations: u64,
    pub restarts: RestartSchedule,
}

impl ParticipationSchema {
    pub fn new(
        rounds: u64,
        min_separation: u64,
        max_participations: u64,
        restarts: RestartSchedule,
    ) -> Result<Self, AccountantError> {
        if rounds == 0 {
            return Err(AccountantError::InvalidSchema("at least one round is required".into()));
        }
        if min_separation == 0 || max_participations == 0 {
            return Err(AccountantError::InvalidSchema(format!(
                "min separation and max participations must be at least 1, got {min_separation} and {max_participations}"
            )));
        }
        let cap = rounds.div_ceil(min_separation);
        if max_participations > cap {
            return Err(AccountantError::InvalidSchema(format!(
                "max participations {max_participations} exceeds ceil({rounds}/{min_separation}) = {cap}"
            )));
        }
        Ok(ParticipationSchema { rounds, min_separation, max_participations, restarts })
    }

    /// Schema with the worst-case `MaxP = ceil(T / MinS)`.
    pub fn worst_case(rounds: u64, min_separation: u64, restarts: RestartSchedule) -> Result<Self, AccountantError> {
        let max_p = if min_separation == 0 { 0 } else { rounds.div_ceil(min_separation) };
        Self::new(rounds, min_separation, max_p, restarts)
    }
}

/// ρ of the tree release for `sensitivity_sq` (in units of C²) at noise
/// multiplier `z`. Infinite when `z == 0`.
pub fn rho_from_sensitivity(sensitivity_sq: f64, z: f64) -> f64 {
    if z == 0.0 {
        return f64::INFINITY;
    }
    sensitivity_sq / (2.0 * z * z)
}

/// zCDP parameter of a run with node noise `z·C` under `schema`.
pub fn zcdp(z: f64, schema: &ParticipationSchema) -> Result<f64, AccountantError> {
    if !(z >= 0.0) || !z.is_finite() {
        return Err(AccountantError::InvalidParameter(format!("noise multiplier must be finite and >= 0, got {z}")));
    }
    let sens = worst_case_sensitivity_sq(schema)?;
    Ok(rho_from_sensitivity(sens as f64, z))
}

/// A schema with its accounted ρ and cached ε conversions.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLedger {
    pub schema: ParticipationSchema,
    /// Equivalent non-adaptive noise multiplier.
    pub z: f64,
    /// Ratio of the accounted sensitivity norm to the clip norm; above 1 for
    /// quantized SecAgg runs.
    pub sensitivity_scale: f64,
    pub sensitivity_sq: u64,
    pub rho: f64,
    conversions: Vec<(f64, f64)>,
}

impl PrivacyLedger {
    pub fn new(schema: ParticipationSchema, z: f64, sensitivity_scale: f64) -> Result<Self, AccountantError> {
        if !(sensitivity_scale >= 1.0) || !sensitivity_scale.is_finite() {
            return Err(AccountantError::InvalidParameter(format!(
                "sensitivity scale must be finite and >= 1, got {sensitivity_scale}"
            )));
        }
        let sensitivity_sq = worst_case_sensitivity_sq(&schema)?;
        let rho = zcdp(z, &schema)? * sensitivity_scale * sensitivity_scale;
        Ok(PrivacyLedger { schema, z, sensitivity_scale, sensitivity_sq, rho, conversions: Vec::new() })
    }

    pub fn is_private(&self) -> bool {
        self.rho.is_finite()
    }

    /// ε at `delta`, memoized.
    pub fn epsilon(&mut self, delta: f64) -> Result<f64, AccountantError> {
        if let Some(&(_, eps)) = self.conversions.iter().find(|(d, _)| *d == delta) {
            return Ok(eps);
        }
        let eps = zcdp_to_eps(self.rho, delta)?;
        self.conversions.push((delta, eps));
        Ok(eps)
    }

    pub fn conversions(&self) -> &[(f64, f64)] {
        &self.conversions
    }
}
