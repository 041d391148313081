//! Synthetic federated datasets.
//!
//! Both generators share a "language" fixed by a seed (token transitions or
//! class centroids) and give every client its own preference distribution.
//! `heterogeneity` is the mixture weight on the client-specific part.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::model::{LabeledExample, TokenExample};
use crate::vector::SeedPath;

fn sample_categorical<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// A Markov "language" over a small vocabulary.
///
/// Each token has a handful of likely successors; the rest of the mass is
/// spread uniformly. Client streams mix these transitions with a per-client
/// unigram preference.
#[derive(Debug, Clone)]
pub struct SyntheticLanguage {
    pub vocab: usize,
    pub context: usize,
    transitions: Vec<Vec<f64>>,
}

/// Successors per token in the shared transition table.
const SUCCESSORS: usize = 3;
/// Probability mass spread uniformly over the vocabulary.
const SMOOTHING: f64 = 0.1;
/// Favourite tokens per client.
const CLIENT_FAVOURITES: usize = 3;

impl SyntheticLanguage {
    pub fn new(vocab: usize, context: usize, language_seed: u64) -> Self {
        assert!(vocab >= 2, "vocabulary needs at least two tokens");
        let mut rng = SeedPath::new(language_seed).child("transitions", 0).rng();
        let transitions = (0..vocab)
            .map(|_| {
                let mut row = vec![SMOOTHING / vocab as f64; vocab];
                let weights: Vec<f64> = (0..SUCCESSORS).map(|i| 1.0 / (i + 1) as f64).collect();
                let total: f64 = weights.iter().sum();
                for w in weights {
                    let next = rng.random_range(0..vocab);
                    row[next] += (1.0 - SMOOTHING) * w / total;
                }
                row
            })
            .collect();
        SyntheticLanguage { vocab, context, transitions }
    }

    fn client_preference(&self, seed: &SeedPath) -> Vec<f64> {
        let mut rng = seed.child("preference", 0).rng();
        let mut pref = vec![0.0; self.vocab];
        for _ in 0..CLIENT_FAVOURITES {
            pref[rng.random_range(0..self.vocab)] += 1.0 / CLIENT_FAVOURITES as f64;
        }
        pref
    }

    /// Next-token examples from one client's stream of `n_tokens` tokens.
    pub fn client_examples(&self, seed: &SeedPath, heterogeneity: f64, n_tokens: usize) -> Vec<TokenExample> {
        let pref = self.client_preference(seed);
        let mut rng = seed.child("stream", 0).rng();
        let mut tokens: Vec<u32> = Vec::with_capacity(n_tokens);
        let mut mixed = vec![0.0; self.vocab];
        for i in 0..n_tokens {
            let next = if i == 0 {
                rng.random_range(0..self.vocab)
            } else {
                let prev = tokens[i - 1] as usize;
                for ((m, g), p) in mixed.iter_mut().zip(&self.transitions[prev]).zip(&pref) {
                    *m = (1.0 - heterogeneity) * g + heterogeneity * p;
                }
                sample_categorical(&mut rng, &mixed)
            };
            tokens.push(next as u32);
        }
        (1..tokens.len())
            .map(|i| TokenExample {
                context: tokens[i.saturating_sub(self.context)..i].to_vec(),
                target: tokens[i],
            })
            .collect()
    }
}

/// Gaussian class clusters with per-client label skew.
#[derive(Debug, Clone)]
pub struct SyntheticClusters {
    pub features: usize,
    pub classes: usize,
    centroids: Vec<Vec<f64>>,
}

/// Stddev of centroid coordinates.
const CENTROID_SPREAD: f64 = 1.0;

impl SyntheticClusters {
    pub fn new(features: usize, classes: usize, language_seed: u64) -> Self {
        let mut rng = SeedPath::new(language_seed).child("centroids", 0).rng();
        let normal = Normal::new(0.0, CENTROID_SPREAD).expect("valid stddev");
        let centroids = (0..classes)
            .map(|_| (0..features).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        SyntheticClusters { features, classes, centroids }
    }

    pub fn client_examples(&self, seed: &SeedPath, heterogeneity: f64, n: usize) -> Vec<LabeledExample> {
        let mut rng = seed.child("labels", 0).rng();
        let favourite = rng.random_range(0..self.classes);
        let mut label_weights = vec![(1.0 - heterogeneity) / self.classes as f64; self.classes];
        label_weights[favourite] += heterogeneity;
        let noise = Normal::new(0.0, 1.0).expect("valid stddev");
        (0..n)
            .map(|_| {
                let label = sample_categorical(&mut rng, &label_weights);
                let features = self.centroids[label]
                    .iter()
                    .map(|c| c + noise.sample(&mut rng))
                    .collect();
                LabeledExample { features, label: label as u32 }
            })
            .collect()
    }
}
