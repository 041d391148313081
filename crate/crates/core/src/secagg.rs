//! Integer encoding of client updates for secure aggregation.
//!
//! A client scales and ℓ₂-clips its delta, rotates it with a random sign flip
//! followed by a normalized Hadamard transform, clips the ℓ∞ norm to `C∞`,
//! rounds stochastically (retrying until the rounded norm is within a
//! high-probability bound), and shifts by `C∞` into `ℤ_M`. The aggregator only
//! ever sees the modular sum, modeled here as exact integer addition mod `M`.
//! `M = 2·C∞·m + 1` guarantees the sum of `m` shifted vectors never wraps.

use rand::Rng;

use crate::vector::{inverse_rotation, randomized_hadamard, ParamVector, SeedPath, SignVector, VectorError};

/// Default failure probability of a single rounding attempt, `α = e^(−1/2)`.
pub const DEFAULT_ALPHA: f64 = 0.606_530_659_712_633_4;

/// Default number of rounding attempts before giving up.
pub const DEFAULT_RETRY_CAP: u32 = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SecAggError {
    #[error("invalid secure aggregation parameter: {0}")]
    InvalidParameter(String),
    #[error("expected a vector of length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("conditional rounding failed {0} times in a row")]
    RoundingExhausted(u32),
    #[error("{got} updates exceed the configured cohort size {max}")]
    TooManyUpdates { got: usize, max: usize },
    #[error(transparent)]
    Vector(#[from] VectorError),
}

/// Parameters of the encoding, derived from `(C, s, d_model, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecAggConfig {
    /// ℓ₂ clip norm `C`.
    pub clip: f64,
    /// Scale `s` applied before rounding.
    pub scale: f64,
    pub d_model: usize,
    /// `d_model` padded to a power of two.
    pub d: usize,
    /// ℓ∞ bound `C∞ = ceil(2·s·C·ln(d)/√d)`, at least 1.
    pub c_inf: u64,
    /// Group modulus `M = 2·C∞·m + 1`.
    pub modulus: u64,
    /// Maximum number of summed clients.
    pub m: usize,
    pub alpha: f64,
    pub retry_cap: u32,
}

/// Derives the encoding parameters.
pub fn derive_config(clip: f64, scale: f64, d_model: usize, m: usize) -> Result<SecAggConfig, SecAggError> {
    if !(clip > 0.0) || !clip.is_finite() {
        return Err(SecAggError::InvalidParameter(format!("clip = {clip}")));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(SecAggError::InvalidParameter(format!("scale = {scale}")));
    }
    if d_model == 0 || m == 0 {
        return Err(SecAggError::InvalidParameter("d_model and m must be positive".into()));
    }
    let d = d_model.next_power_of_two();
    let df = d as f64;
    // ln(1) = 0 would give C∞ = 0 at d = 1.
    let c_inf = ((2.0 * scale * clip * df.ln() / df.sqrt()).ceil() as u64).max(1);
    let modulus = c_inf
        .checked_mul(2 * m as u64)
        .and_then(|v| v.checked_add(1))
        .ok_or_else(|| SecAggError::InvalidParameter("modulus overflows 64 bits".into()))?;
    Ok(SecAggConfig {
        clip,
        scale,
        d_model,
        d,
        c_inf,
        modulus,
        m,
        alpha: DEFAULT_ALPHA,
        retry_cap: DEFAULT_RETRY_CAP,
    })
}

impl SecAggConfig {
    /// `ceil(log₂ M)`.
    pub fn bits_per_parameter(&self) -> u32 {
        u64::BITS - (self.modulus - 1).leading_zeros()
    }

    /// `d · ceil(log₂ M)`.
    pub fn bits_per_update(&self) -> u64 {
        self.d as u64 * u64::from(self.bits_per_parameter())
    }

    /// Upper bound on `‖Δ'‖₂²` accepted by conditional rounding:
    /// `s²C² + d/4 + √(2 ln(1/α))·(sC + √d/2)`.
    pub fn rounding_bound(&self) -> f64 {
        let sc = self.scale * self.clip;
        let df = self.d as f64;
        sc * sc + df / 4.0 + (2.0 * (1.0 / self.alpha).ln()).sqrt() * (sc + df.sqrt() / 2.0)
    }
}

/// A client's vector in `ℤ_M^d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedUpdate {
    pub entries: Vec<u64>,
}

/// Side information from one encoding.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EncodeStats {
    /// Rotated coordinates whose magnitude exceeded `C∞` before the ℓ∞ clip.
    pub linf_clipped: usize,
    /// Rounding attempts, including the accepted one.
    pub attempts: u32,
    /// `‖Δ'‖₂²` of the accepted rounding.
    pub rounded_norm_sq: i128,
}

/// Encodes a client delta; see [`encode_client_with_stats`].
pub fn encode_client(
    delta: &ParamVector,
    cfg: &SecAggConfig,
    signs: &SignVector,
    seed: &SeedPath,
) -> Result<EncodedUpdate, SecAggError> {
    encode_client_with_stats(delta, cfg, signs, seed).map(|(u, _)| u)
}

/// Scale and clip, rotate, clip ℓ∞, conditionally round, shift.
pub fn encode_client_with_stats(
    delta: &ParamVector,
    cfg: &SecAggConfig,
    signs: &SignVector,
    seed: &SeedPath,
) -> Result<(EncodedUpdate, EncodeStats), SecAggError> {
    if delta.len() != cfg.d_model {
        return Err(SecAggError::DimensionMismatch { expected: cfg.d_model, actual: delta.len() });
    }
    if signs.len() != cfg.d {
        return Err(SecAggError::DimensionMismatch { expected: cfg.d, actual: signs.len() });
    }
    delta.check_finite()?;

    let mut x = delta.resized(cfg.d);
    let norm = x.norm_l2();
    let l2_factor = if norm > cfg.clip { cfg.clip / norm } else { 1.0 };
    x.scale(cfg.scale * l2_factor);

    let mut x = randomized_hadamard(&x, signs)?;

    let c_inf = cfg.c_inf as f64;
    let linf_clipped = x.iter().filter(|v| v.abs() > c_inf).count();
    let linf = x.norm_inf();
    if linf > c_inf {
        x.scale(c_inf / linf);
    }

    let bound = cfg.rounding_bound();
    let mut rng = seed.rng();
    let mut rounded = vec![0i64; cfg.d];
    for attempt in 1..=cfg.retry_cap {
        let mut norm_sq: i128 = 0;
        for (r, &v) in rounded.iter_mut().zip(x.iter()) {
            let lo = v.floor();
            let up = rng.random::<f64>() < v - lo;
            // |v| ≤ C∞ and C∞ is an integer, so the rounded value stays in [−C∞, C∞].
            *r = (lo as i64 + i64::from(up)).clamp(-(cfg.c_inf as i64), cfg.c_inf as i64);
            norm_sq += i128::from(*r) * i128::from(*r);
        }
        if (norm_sq as f64) <= bound {
            let entries = rounded
                .iter()
                .map(|&r| (r + cfg.c_inf as i64) as u64 % cfg.modulus)
                .collect();
            let stats = EncodeStats { linf_clipped, attempts: attempt, rounded_norm_sq: norm_sq };
            return Ok((EncodedUpdate { entries }, stats));
        }
    }
    Err(SecAggError::RoundingExhausted(cfg.retry_cap))
}

fn check_batch(updates: &[EncodedUpdate], cfg: &SecAggConfig) -> Result<(), SecAggError> {
    if updates.len() > cfg.m {
        return Err(SecAggError::TooManyUpdates { got: updates.len(), max: cfg.m });
    }
    for u in updates {
        if u.entries.len() != cfg.d {
            return Err(SecAggError::DimensionMismatch { expected: cfg.d, actual: u.entries.len() });
        }
    }
    Ok(())
}

/// Coordinate-wise integer sum before reduction mod `M`, in client order.
pub fn pre_modulo_sum(updates: &[EncodedUpdate], cfg: &SecAggConfig) -> Result<Vec<u64>, SecAggError> {
    check_batch(updates, cfg)?;
    let mut sum = vec![0u64; cfg.d];
    for u in updates {
        for (s, &e) in sum.iter_mut().zip(&u.entries) {
            *s += e;
        }
    }
    Ok(sum)
}

/// What the aggregator learns: `Σ_i Δ'_i mod M`.
pub fn modular_sum(updates: &[EncodedUpdate], cfg: &SecAggConfig) -> Result<EncodedUpdate, SecAggError> {
    check_batch(updates, cfg)?;
    let mut sum = vec![0u64; cfg.d];
    for u in updates {
        for (s, &e) in sum.iter_mut().zip(&u.entries) {
            *s = (*s + e) % cfg.modulus;
        }
    }
    Ok(EncodedUpdate { entries: sum })
}

/// Unshifts by `n_clients·C∞`, inverse-rotates, unscales and drops padding.
pub fn decode(
    sum: &EncodedUpdate,
    cfg: &SecAggConfig,
    signs: &SignVector,
    n_clients: usize,
) -> Result<ParamVector, SecAggError> {
    if sum.entries.len() != cfg.d {
        return Err(SecAggError::DimensionMismatch { expected: cfg.d, actual: sum.entries.len() });
    }
    let shift = n_clients as i64 * cfg.c_inf as i64;
    let centered = ParamVector::from_vec(
        sum.entries
            .iter()
            .map(|&v| (v as i64 - shift) as f64)
            .collect(),
    );
    let mut out = inverse_rotation(&centered, signs)?;
    out.scale(1.0 / cfg.scale);
    Ok(out.resized(cfg.d_model))
}

/// Effective ℓ₂ sensitivity after discretization:
/// `C_inflated² = C² + d/(4s²) + √(2 ln(1/α))·(C/s + √d/(2s²))`.
pub fn inflated_clip_norm(cfg: &SecAggConfig) -> f64 {
    let (c, s, d) = (cfg.clip, cfg.scale, cfg.d as f64);
    let sq = c * c + d / (4.0 * s * s) + (2.0 * (1.0 / cfg.alpha).ln()).sqrt() * (c / s + d.sqrt() / (2.0 * s * s));
    sq.sqrt()
}
