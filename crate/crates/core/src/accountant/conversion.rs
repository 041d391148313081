//! ρ-zCDP to (ε, δ)-DP.

use super::AccountantError;

/// ε at a fixed Rényi order `alpha > 1` from the optimal conversion
/// `δ = exp((α−1)(αρ−ε))·(1−1/α)^α/(α−1)`, solved for ε.
fn epsilon_at_order(rho: f64, log_inv_delta: f64, alpha: f64) -> f64 {
    let am1 = alpha - 1.0;
    alpha * rho + (alpha * (-1.0 / alpha).ln_1p() - am1.ln() + log_inv_delta) / am1
}

/// Smallest ε such that a ρ-zCDP mechanism is (ε, δ)-DP, minimizing over the
/// Rényi order numerically.
pub fn zcdp_to_eps(rho: f64, delta: f64) -> Result<f64, AccountantError> {
    if !(rho >= 0.0) {
        return Err(AccountantError::InvalidParameter(format!("rho must be >= 0, got {rho}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(AccountantError::InvalidParameter(format!("delta must be in (0, 1), got {delta}")));
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    if rho.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let log_inv_delta = -delta.ln();
    // Search over x = ln(α − 1): coarse grid, then golden section around the best point.
    let f = |x: f64| epsilon_at_order(rho, log_inv_delta, 1.0 + x.exp());
    let (lo, hi, steps) = (-20.0f64, 40.0f64, 6000);
    let h = (hi - lo) / steps as f64;
    let mut best = (lo, f(lo));
    for i in 1..=steps {
        let x = lo + h * i as f64;
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let (mut a, mut b) = (best.0 - h, best.0 + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    Ok(best.1.min(fc).min(fd).max(0.0))
}

/// The closed form `ρ + 2√(ρ·ln(1/δ))`, never tighter than [`zcdp_to_eps`].
pub fn loose_epsilon_bound(rho: f64, delta: f64) -> f64 {
    rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt()
}
