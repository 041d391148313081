use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::ParamVector;

/// A labelled path from a master seed to an independent random stream.
///
/// The same `(master_seed, labels)` always yields the same stream; any change
/// to the path yields an unrelated one. Labels are hashed length-prefixed, so
/// `("ab", 1)` and `("a", 1), ("b", 1)` never collide.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeedPath {
    master_seed: u64,
    labels: Vec<(String, u64)>,
}

impl SeedPath {
    pub fn new(master_seed: u64) -> Self {
        SeedPath { master_seed, labels: Vec::new() }
    }

    /// Extends the path by one `(label, index)` pair.
    pub fn child(&self, label: &str, index: u64) -> Self {
        let mut labels = self.labels.clone();
        labels.push((label.to_owned(), index));
        SeedPath { master_seed: self.master_seed, labels }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn labels(&self) -> &[(String, u64)] {
        &self.labels
    }

    fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"fpsim-seed-path");
        h.update(self.master_seed.to_le_bytes());
        for (label, index) in &self.labels {
            h.update((label.len() as u64).to_le_bytes());
            h.update(label.as_bytes());
            h.update(index.to_le_bytes());
        }
        h.finalize().into()
    }

    /// A fresh generator positioned at the start of this path's stream.
    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.digest())
    }
}

/// `d` i.i.d. `N(0, sigma²)` samples drawn from the stream at `seed`.
pub fn gaussian_vector(seed: &SeedPath, sigma: f64, d: usize) -> ParamVector {
    if sigma == 0.0 {
        return ParamVector::zeros(d);
    }
    let mut rng = seed.rng();
    ParamVector::from_vec(
        (0..d)
            .map(|_| sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_gives_zeros() {
        assert_eq!(gaussian_vector(&SeedPath::new(1), 0.0, 4), ParamVector::zeros(4));
    }

    #[test]
    fn same_path_same_stream() {
        let p = SeedPath::new(7).child("round", 3).child("client", 11);
        assert_eq!(gaussian_vector(&p, 1.5, 32), gaussian_vector(&p.clone(), 1.5, 32));
        let q = SeedPath::new(7).child("round", 3).child("client", 12);
        assert_ne!(gaussian_vector(&p, 1.5, 32), gaussian_vector(&q, 1.5, 32));
    }

    #[test]
    fn labels_are_length_prefixed() {
        let a = SeedPath::new(0).child("ab", 1);
        let b = SeedPath::new(0).child("a", 1).child("b", 1);
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn sample_variance_matches_sigma() {
        // 10^5 draws of N(0, 4): the sample variance must land within 5% of 4.
        let n = 100_000;
        let v = gaussian_vector(&SeedPath::new(2024).child("var", 0), 2.0, n);
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 4.0).abs() < 0.2, "variance {var}");
    }

    #[test]
    fn distinct_labels_are_uncorrelated() {
        let n = 100_000;
        let a = gaussian_vector(&SeedPath::new(5).child("stream", 0), 1.0, n);
        let b = gaussian_vector(&SeedPath::new(5).child("stream", 1), 1.0, n);
        let (ma, mb) = (a.iter().sum::<f64>() / n as f64, b.iter().sum::<f64>() / n as f64);
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for i in 0..n {
            let (x, y) = (a[i] - ma, b[i] - mb);
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        let r = sab / (saa * sbb).sqrt();
        assert!(r.abs() < 0.02, "correlation {r}");
    }
}
