//! Quantile-tracking adaptive clipping for tree-aggregated training.
//!
//! The quantile estimate `Cᵗ` is updated every round from a privately summed
//! count of unclipped clients, but only becomes the active clip `C_θ` when
//! the trees restart.

use crate::tree::{TreeError, TreeState};
use crate::vector::{ParamVector, SeedPath};

/// Estimates never drop below this fraction of `C⁰`.
pub const ESTIMATE_FLOOR_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClipError {
    #[error("clip-count noise too small to absorb: need 2·sigma_b > z (z = {z}, sigma_b = {sigma_b})")]
    CountNoiseTooSmall { z: f64, sigma_b: f64 },
    #[error("invalid clip parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Noise multiplier for the model-delta tree such that, together with count
/// noise `sigma_b`, one step is as private as a non-adaptive step at `z`:
/// `z_Δ = (z⁻² − (2σ_b)⁻²)^(−1/2)`.
pub fn noise_split(z: f64, sigma_b: f64) -> Result<f64, ClipError> {
    if !(z > 0.0) || !(sigma_b > 0.0) || 2.0 * sigma_b <= z {
        return Err(ClipError::CountNoiseTooSmall { z, sigma_b });
    }
    let two_sb = 2.0 * sigma_b;
    // z⁻² − (2σ_b)⁻² = (2σ_b − z)(2σ_b + z) / (z·2σ_b)², written to avoid cancellation.
    let inv_sq = (two_sb - z) * (two_sb + z) / (z * two_sb).powi(2);
    Ok(inv_sq.sqrt().recip())
}

/// Inverse of [`noise_split`]: the equivalent non-adaptive multiplier
/// `z = (z_Δ⁻² + (2σ_b)⁻²)^(−1/2)`. An infinite `sigma_b` returns `z_delta`.
pub fn combined_multiplier(z_delta: f64, sigma_b: f64) -> f64 {
    let two_sb = 2.0 * sigma_b;
    (z_delta.powi(-2) + two_sb.powi(-2)).sqrt().recip()
}

/// Hyperparameters of the quantile tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipConfig {
    /// Reference clip `C⁰` anchoring the geometric update.
    pub initial: f64,
    /// Active clip before the first restart. Usually `C⁰`; a smaller value
    /// makes early rounds less noisy.
    pub initial_active: f64,
    /// Target quantile `γ`.
    pub gamma: f64,
    /// Step size `η_γ`.
    pub eta_gamma: f64,
    /// Per-node stddev `σ_b` of the count tree; 0 gives noiseless counts.
    pub sigma_b: f64,
}

impl ClipConfig {
    pub fn validate(&self) -> Result<(), ClipError> {
        let bad = |what: &str, v: f64| Err(ClipError::InvalidParameter(format!("{what} = {v}")));
        if !(self.initial > 0.0) || !self.initial.is_finite() {
            return bad("C0", self.initial);
        }
        if !(self.initial_active > 0.0) || !self.initial_active.is_finite() {
            return bad("initial active clip", self.initial_active);
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", self.gamma);
        }
        if !(self.eta_gamma > 0.0) {
            return bad("eta_gamma", self.eta_gamma);
        }
        if !(self.sigma_b >= 0.0) || !self.sigma_b.is_finite() {
            return bad("sigma_b", self.sigma_b);
        }
        Ok(())
    }
}

/// Running state of the quantile tracker.
#[derive(Debug, Clone)]
pub struct ClipState {
    config: ClipConfig,
    estimate: f64,
    active: f64,
    b_tree: TreeState,
}

impl ClipState {
    pub fn new(config: ClipConfig, seed: SeedPath) -> Result<Self, ClipError> {
        config.validate()?;
        // σ_b is the stddev per node on a sensitivity-1 count: z = σ_b, clip = 1.
        let b_tree = TreeState::new(config.sigma_b, 1.0, 1, seed)?;
        Ok(ClipState {
            estimate: config.initial,
            active: config.initial_active,
            config,
            b_tree,
        })
    }

    pub fn config(&self) -> &ClipConfig {
        &self.config
    }

    /// Current quantile estimate `Cᵗ`.
    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    /// Clip applied to model deltas, `C_θ`.
    pub fn active(&self) -> f64 {
        self.active
    }

    /// Feeds this round's raw count of unclipped clients through the count
    /// tree and returns the private cumulative count `Σ_k Σ_i b_i^k`.
    pub fn add_count(&mut self, unclipped: f64) -> f64 {
        self.b_tree.add_round(&ParamVector::from_vec(vec![unclipped]))[0]
    }

    /// `Cᵗ⁺¹ ← C⁰ · exp(−η_γ (b̃ᵗ − tγ))`, where `b̃ᵗ` is the normalized
    /// private cumulative count over rounds `0..=t`.
    pub fn update_estimate(&mut self, b_noised_cumulative: f64, t: u64) {
        let c = &self.config;
        let exponent = -c.eta_gamma * (b_noised_cumulative - t as f64 * c.gamma);
        let floor = ESTIMATE_FLOOR_FRACTION * c.initial;
        let next = c.initial * exponent.exp();
        // Overflow to +inf is possible for long streaks of b̃ = 0; cap it.
        self.estimate = if next.is_finite() { next.max(floor) } else { f64::MAX };
    }

    /// Promotes the estimate to the active clip. Call only at restart rounds.
    pub fn activate(&mut self) {
        self.active = self.estimate;
    }

    /// Restarts the count tree (its sensitivity is 1 regardless of `C_θ`).
    pub fn restart_counts(&mut self) -> Result<(), ClipError> {
        self.b_tree.restart(1.0)?;
        Ok(())
    }
}
