//! Privacy reports for finished runs and standalone schemas.

use std::fmt::Write as _;
use std::path::Path;

use super::config::{ClipSpec, ExperimentConfig};
use super::HarnessError;
use crate::accountant::{zcdp_to_eps, ParticipationSchema, PrivacyLedger, REPORT_DELTA};
use crate::clip::combined_multiplier;
use crate::federation::{observed_limits, ParticipationLimits};
use crate::secagg::{derive_config, inflated_clip_norm};
use crate::tree::RestartSchedule;

/// Where the participation limits came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitSource {
    /// Scanned from the participation log.
    Observed,
    /// `MinS` from the timer and `MaxP = ceil(T / MinS)`.
    WorstCase,
    /// Given explicitly.
    Given,
}

impl LimitSource {
    fn as_str(self) -> &'static str {
        match self {
            LimitSource::Observed => "observed",
            LimitSource::WorstCase => "worst-case",
            LimitSource::Given => "given",
        }
    }
}

/// Noise parameters entering the accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// Multiplier of the model-delta tree.
    pub z_delta: f64,
    /// Count-tree stddev for adaptive clipping.
    pub sigma_b: Option<f64>,
    /// `C_inflated / C` for quantized aggregation, else 1.
    pub sensitivity_scale: f64,
}

impl NoiseSpec {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let sensitivity_scale = match (cfg.secagg_scale, &cfg.clip) {
            (Some(s), ClipSpec::Fixed { norm }) => {
                let sa = derive_config(*norm, s, cfg.model.dim(), cfg.cohort.report_goal)?;
                inflated_clip_norm(&sa) / norm
            }
            _ => 1.0,
        };
        Ok(NoiseSpec { z_delta: cfg.training.noise_multiplier, sigma_b: cfg.sigma_b(), sensitivity_scale })
    }

    /// Equivalent non-adaptive multiplier.
    pub fn equivalent_z(&self) -> f64 {
        match self.sigma_b {
            Some(sb) if sb > 0.0 && self.z_delta > 0.0 => combined_multiplier(self.z_delta, sb),
            // Noiseless counts leak the quantile bits.
            Some(_) => 0.0,
            None => self.z_delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyReport {
    pub config_hash: Option<String>,
    pub rounds: u64,
    pub min_separation: u64,
    pub max_participations: u64,
    pub limit_source: LimitSource,
    pub restarts: RestartSchedule,
    pub noise: NoiseSpec,
    pub equivalent_z: f64,
    pub sensitivity_sq: u64,
    pub rho: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl PrivacyReport {
    pub fn new(
        schema: ParticipationSchema,
        noise: NoiseSpec,
        limit_source: LimitSource,
        config_hash: Option<String>,
    ) -> Result<Self, HarnessError> {
        let equivalent_z = noise.equivalent_z();
        let mut ledger = PrivacyLedger::new(schema.clone(), equivalent_z, noise.sensitivity_scale)?;
        let epsilon = ledger.epsilon(REPORT_DELTA)?;
        Ok(PrivacyReport {
            config_hash,
            rounds: schema.rounds,
            min_separation: schema.min_separation,
            max_participations: schema.max_participations,
            limit_source,
            restarts: schema.restarts,
            noise,
            equivalent_z,
            sensitivity_sq: ledger.sensitivity_sq,
            rho: ledger.rho,
            delta: REPORT_DELTA,
            epsilon,
        })
    }

    /// Report for a finished run from its participation logs.
    pub fn for_run<'a, I>(cfg: &ExperimentConfig, logs: I) -> Result<Self, HarnessError>
    where
        I: IntoIterator<Item = &'a [u64]>,
    {
        let ParticipationLimits { max_participations, min_separation } = observed_limits(logs, cfg.rounds);
        let (schema, source) = if max_participations == 0 {
            (
                ParticipationSchema::worst_case(cfg.rounds, cfg.cohort.timer_rounds, cfg.training.restarts.clone())?,
                LimitSource::WorstCase,
            )
        } else {
            (
                ParticipationSchema::new(
                    cfg.rounds,
                    min_separation.max(1),
                    max_participations,
                    cfg.training.restarts.clone(),
                )?,
                LimitSource::Observed,
            )
        };
        Self::new(schema, NoiseSpec::from_config(cfg)?, source, Some(cfg.hash()))
    }

    fn restarts_str(&self) -> String {
        if self.restarts.is_empty() {
            "none".into()
        } else {
            self.restarts.rounds().map(|r| r.to_string()).collect::<Vec<_>>().join(";")
        }
    }

    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(&str, String)> = vec![
            ("config_hash", self.config_hash.clone().unwrap_or_default()),
            ("rounds", self.rounds.to_string()),
            ("min_separation", self.min_separation.to_string()),
            ("max_participations", self.max_participations.to_string()),
            ("limit_source", self.limit_source.as_str().into()),
            ("restarts", self.restarts_str()),
            ("noise_multiplier_delta", self.noise.z_delta.to_string()),
            ("sigma_b", self.noise.sigma_b.map(|s| s.to_string()).unwrap_or_default()),
            ("sensitivity_scale", self.noise.sensitivity_scale.to_string()),
            ("equivalent_noise_multiplier", self.equivalent_z.to_string()),
            ("sensitivity_sq", self.sensitivity_sq.to_string()),
            ("rho", self.rho.to_string()),
            ("delta", self.delta.to_string()),
            ("epsilon", self.epsilon.to_string()),
        ];
        rows.push(("hyperparameter_tuning_accounted", "false".into()));
        let mut out = String::from("field,value\n");
        for (k, v) in rows {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(t, "Privacy report");
        if let Some(h) = &self.config_hash {
            let _ = writeln!(t, "config hash: {h}");
        }
        let _ = writeln!(t, "\nDP setting");
        let _ = writeln!(t, "  Central DP on the released model sequence; the server adds tree-correlated Gaussian noise.");
        let _ = writeln!(t, "\nDP definition");
        let _ = writeln!(t, "  Device-level privacy under zero-out adjacency: one client's updates replaced by zeros.");
        let _ = writeln!(t, "  Every round's model is released.");
        let _ = writeln!(t, "\nAccounting");
        let _ = writeln!(t, "  mechanism: binary-tree aggregation of clipped updates (DP-FTRL)");
        let _ = writeln!(t, "  rounds: {}", self.rounds);
        let _ = writeln!(t, "  restarts after rounds: {}", self.restarts_str());
        let _ = writeln!(t, "  noise multiplier (model deltas): {}", self.noise.z_delta);
        if let Some(sb) = self.noise.sigma_b {
            let _ = writeln!(t, "  count-tree stddev (adaptive clipping): {sb}");
        }
        let _ = writeln!(t, "  equivalent noise multiplier: {}", self.equivalent_z);
        if self.noise.sensitivity_scale != 1.0 {
            let _ = writeln!(t, "  quantization sensitivity scale: {}", self.noise.sensitivity_scale);
        }
        let _ = writeln!(t, "  worst-case squared sensitivity (units of C^2): {}", self.sensitivity_sq);
        let _ = writeln!(t, "\nAssumptions");
        let _ = writeln!(
            t,
            "  MinS = {}, MaxP = {} ({}); participation is limited by a client-side timer.",
            self.min_separation,
            self.max_participations,
            self.limit_source.as_str()
        );
        let _ = writeln!(t, "\nFormal guarantee");
        if self.rho.is_finite() {
            let _ = writeln!(t, "  rho-zCDP with rho = {:.6}", self.rho);
            let _ = writeln!(t, "  (epsilon, delta)-DP with epsilon = {:.4} at delta = {:e}", self.epsilon, self.delta);
        } else {
            let _ = writeln!(t, "  none: the run is not private (zero noise)");
        }
        let _ = writeln!(t, "\nCaveats");
        let _ = writeln!(t, "  The privacy cost of hyperparameter tuning is not accounted.");
        t
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let csv = dir.join("privacy_report.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| HarnessError::io(&csv, e))?;
        let txt = dir.join("privacy_report.txt");
        std::fs::write(&txt, self.to_text()).map_err(|e| HarnessError::io(&txt, e))
    }
}

/// Reads one field of a `privacy_report.csv`.
pub fn read_report_field(path: &Path, field: &str) -> Result<String, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .skip(1)
        .filter_map(|l| l.split_once(','))
        .find(|(k, _)| *k == field)
        .map(|(_, v)| v.to_string())
        .ok_or_else(|| HarnessError::Compare(format!("{} has no field {field}", path.display())))
}

/// ε at `delta` for a bare ρ, for the CLI.
pub fn epsilon_at(rho: f64, delta: f64) -> Result<f64, HarnessError> {
    Ok(zcdp_to_eps(rho, delta)?)
}
