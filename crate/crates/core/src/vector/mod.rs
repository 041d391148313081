//! Flat parameter vectors, ℓ₂ clipping and the randomized Hadamard rotation.
//!
//! Everything on the real-valued path is `f64`. Reductions run in index order
//! so that results never depend on how work was scheduled.

mod seed;

pub use seed::{gaussian_vector, SeedPath};

use std::ops::Index;

/// Errors raised by vector operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VectorError {
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("clip norm must be positive, got {0}")]
    InvalidClip(f64),
    #[error("dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

/// A flat vector of model parameters or model deltas.
///
/// The length is fixed at construction. Arithmetic between vectors of
/// different lengths is a programming error and panics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        ParamVector(vec![0.0; d])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Index of the first NaN or infinite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|x| !x.is_finite())
    }

    pub fn check_finite(&self) -> Result<(), VectorError> {
        match self.first_non_finite() {
            Some(index) => Err(VectorError::NonFinite { index }),
            None => Ok(()),
        }
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &ParamVector) {
        self.axpy(1.0, other);
    }

    /// `self -= other`.
    pub fn sub_assign(&mut self, other: &ParamVector) {
        self.axpy(-1.0, other);
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &ParamVector) {
        assert_eq!(self.len(), other.len(), "vector length mismatch");
        for (x, y) in self.0.iter_mut().zip(&other.0) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in &mut self.0 {
            *x *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> ParamVector {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self - other` as a new vector.
    pub fn diff(&self, other: &ParamVector) -> ParamVector {
        let mut out = self.clone();
        out.sub_assign(other);
        out
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.len(), other.len(), "vector length mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Zero-pads (or truncates) to length `d`.
    pub fn resized(&self, d: usize) -> ParamVector {
        let mut v = self.0.clone();
        v.resize(d, 0.0);
        ParamVector(v)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// A vector of ±1 entries, the diagonal of the random sign flip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignVector(Vec<i8>);

impl SignVector {
    /// All `+1`.
    pub fn ones(d: usize) -> Self {
        SignVector(vec![1; d])
    }

    /// Builds from explicit signs; any entry other than ±1 is rejected.
    pub fn from_signs(signs: Vec<i8>) -> Option<Self> {
        signs
            .iter()
            .all(|&s| s == 1 || s == -1)
            .then_some(SignVector(signs))
    }

    /// Uniform random signs drawn from `seed`.
    pub fn random(seed: &SeedPath, d: usize) -> Self {
        use rand::Rng;
        let mut rng = seed.rng();
        SignVector((0..d).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }
}

/// Scales `v` by `min(1, c / ‖v‖₂)`.
pub fn clip_l2(v: &ParamVector, c: f64) -> Result<ParamVector, VectorError> {
    if !(c > 0.0) {
        return Err(VectorError::InvalidClip(c));
    }
    v.check_finite()?;
    let norm = v.norm_l2();
    if norm <= c {
        return Ok(v.clone());
    }
    Ok(v.scaled(c / norm))
}

/// In-place unnormalized fast Walsh–Hadamard transform (Sylvester ordering).
fn fwht(values: &mut [f64]) {
    let n = values.len();
    let mut h = 1;
    while h < n {
        for block in (0..n).step_by(2 * h) {
            for i in block..block + h {
                let a = values[i];
                let b = values[i + h];
                values[i] = a + b;
                values[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

fn check_rotation_args(v: &ParamVector, s: &SignVector) -> Result<(), VectorError> {
    let d = v.len();
    if !d.is_power_of_two() {
        return Err(VectorError::NotPowerOfTwo(d));
    }
    if s.len() != d {
        return Err(VectorError::LengthMismatch { left: d, right: s.len() });
    }
    Ok(())
}

/// Computes `(1/√d) · H_d · diag(s) · v`.
pub fn randomized_hadamard(v: &ParamVector, s: &SignVector) -> Result<ParamVector, VectorError> {
    check_rotation_args(v, s)?;
    let mut out: Vec<f64> = v
        .iter()
        .zip(s.as_slice())
        .map(|(x, &sign)| x * f64::from(sign))
        .collect();
    fwht(&mut out);
    let norm = 1.0 / (v.len() as f64).sqrt();
    out.iter_mut().for_each(|x| *x *= norm);
    Ok(ParamVector(out))
}

/// Computes `diag(s) · (1/√d) · H_dᵀ · v`, the inverse of [`randomized_hadamard`].
pub fn inverse_rotation(v: &ParamVector, s: &SignVector) -> Result<ParamVector, VectorError> {
    check_rotation_args(v, s)?;
    // H_d is symmetric, so the transpose is the same transform.
    let mut out = v.0.clone();
    fwht(&mut out);
    let norm = 1.0 / (v.len() as f64).sqrt();
    for (x, &sign) in out.iter_mut().zip(s.as_slice()) {
        *x *= norm * f64::from(sign);
    }
    Ok(ParamVector(out))
}
