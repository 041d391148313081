//! Tree-aggregated private prefix sums.
//!
//! Within a segment, the prefix `[0, t]` is covered by the dyadic blocks of the
//! binary representation of `t + 1`, and the reported sum carries one Gaussian
//! draw per block. Block noise is a pure function of the seed, so the tree only
//! keeps the current noise total and patches it with the residual between
//! consecutive rounds: going from `t` to `t + 1` retires the blocks below the
//! lowest set bit of `t + 2` and opens one new block.
//!
//! A restart freezes the segment's last reported total and opens an
//! independent tree, possibly with a new clip scale.

pub mod oracle;

use std::collections::BTreeSet;

use crate::vector::{gaussian_vector, ParamVector, SeedPath};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TreeError {
    #[error("restart rounds must be strictly increasing and start at 1 or later")]
    InvalidSchedule,
    #[error("invalid tree parameter: {0}")]
    InvalidParameter(String),
}

/// Rounds after which the trees are restarted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RestartSchedule {
    rounds: BTreeSet<u64>,
}

impl RestartSchedule {
    pub fn none() -> Self {
        RestartSchedule::default()
    }

    /// Explicit rounds; must be strictly increasing with the first ≥ 1.
    pub fn new(rounds: Vec<u64>) -> Result<Self, TreeError> {
        if rounds.first().is_some_and(|&r| r < 1) || rounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TreeError::InvalidSchedule);
        }
        Ok(RestartSchedule { rounds: rounds.into_iter().collect() })
    }

    /// `{first + period·i : i ≥ 0}` truncated below `horizon`.
    pub fn periodic(first: u64, period: u64, horizon: u64) -> Result<Self, TreeError> {
        if period == 0 {
            return Err(TreeError::InvalidSchedule);
        }
        let rounds: Vec<u64> = (0..)
            .map(|i| first + period * i)
            .take_while(|&r| r < horizon)
            .collect();
        Self::new(rounds)
    }

    pub fn contains(&self, round: u64) -> bool {
        self.rounds.contains(&round)
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn rounds(&self) -> impl Iterator<Item = u64> + '_ {
        self.rounds.iter().copied()
    }

    /// Lengths of the segments covering rounds `0..horizon`.
    pub fn segment_lengths(&self, horizon: u64) -> Vec<u64> {
        let mut lengths = Vec::new();
        let mut start = 0;
        for r in self.rounds.iter().copied().filter(|&r| r + 1 < horizon) {
            lengths.push(r + 1 - start);
            start = r + 1;
        }
        if horizon > start {
            lengths.push(horizon - start);
        }
        lengths
    }
}

/// Noise of the dyadic block `(level, index)` in segment `segment`, covering
/// local rounds `[index·2^level, (index+1)·2^level)`.
pub fn node_noise(
    seed: &SeedPath,
    segment: u64,
    level: u32,
    index: u64,
    sigma: f64,
    d: usize,
) -> ParamVector {
    let path = seed
        .child("segment", segment)
        .child("level", u64::from(level))
        .child("index", index);
    gaussian_vector(&path, sigma, d)
}

/// One tree-aggregation noise structure, possibly spanning several segments.
#[derive(Debug, Clone)]
pub struct TreeState {
    z: f64,
    clip: f64,
    d: usize,
    seed: SeedPath,
    segment_index: u64,
    round_in_segment: u64,
    total_rounds: u64,
    finalized_totals: ParamVector,
    running_true_prefix: ParamVector,
    last_noise: ParamVector,
}

impl TreeState {
    /// An empty tree with node stddev `z · clip`.
    pub fn new(z: f64, clip: f64, d: usize, seed: SeedPath) -> Result<Self, TreeError> {
        if !(z >= 0.0) || !z.is_finite() {
            return Err(TreeError::InvalidParameter(format!("noise multiplier {z}")));
        }
        if !(clip > 0.0) {
            return Err(TreeError::InvalidParameter(format!("clip {clip}")));
        }
        if d == 0 {
            return Err(TreeError::InvalidParameter("dimension 0".into()));
        }
        Ok(TreeState {
            z,
            clip,
            d,
            seed,
            segment_index: 0,
            round_in_segment: 0,
            total_rounds: 0,
            finalized_totals: ParamVector::zeros(d),
            running_true_prefix: ParamVector::zeros(d),
            last_noise: ParamVector::zeros(d),
        })
    }

    /// Per-node noise standard deviation for the active segment.
    pub fn node_stddev(&self) -> f64 {
        // z = 0 with an unbounded clip is "no noise", not NaN.
        if self.z == 0.0 {
            0.0
        } else {
            self.z * self.clip
        }
    }

    pub fn noise_multiplier(&self) -> f64 {
        self.z
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn segment_index(&self) -> u64 {
        self.segment_index
    }

    pub fn round_in_segment(&self) -> u64 {
        self.round_in_segment
    }

    pub fn total_rounds(&self) -> u64 {
        self.total_rounds
    }

    fn node(&self, level: u32, index: u64) -> ParamVector {
        node_noise(&self.seed, self.segment_index, level, index, self.node_stddev(), self.d)
    }

    /// Adds this round's (already clipped) contribution and returns the
    /// cumulative private sum over every round so far, across segments.
    pub fn add_round(&mut self, x: &ParamVector) -> ParamVector {
        assert_eq!(x.len(), self.d, "tree input has wrong dimension");
        let n = self.round_in_segment + 1;
        let level = n.trailing_zeros();
        if self.node_stddev() > 0.0 {
            let prev = n - 1;
            for l in 0..level {
                let start = (prev >> (l + 1)) << (l + 1);
                let retired = self.node(l, start >> l);
                self.last_noise.sub_assign(&retired);
            }
            let start = (n >> (level + 1)) << (level + 1);
            let opened = self.node(level, start >> level);
            self.last_noise.add_assign(&opened);
        }
        self.running_true_prefix.add_assign(x);
        self.round_in_segment = n;
        self.total_rounds += 1;
        self.current()
    }

    /// The most recently reported cumulative sum.
    pub fn current(&self) -> ParamVector {
        let mut out = self.finalized_totals.clone();
        out.add_assign(&self.running_true_prefix);
        out.add_assign(&self.last_noise);
        out
    }

    /// Freezes the active segment's reported total and starts a fresh tree
    /// with clip scale `clip`. Restarting an empty segment only changes the clip.
    pub fn restart(&mut self, clip: f64) -> Result<(), TreeError> {
        if !(clip > 0.0) {
            return Err(TreeError::InvalidParameter(format!("clip {clip}")));
        }
        if self.round_in_segment > 0 {
            self.finalized_totals.add_assign(&self.running_true_prefix);
            self.finalized_totals.add_assign(&self.last_noise);
            self.running_true_prefix = ParamVector::zeros(self.d);
            self.last_noise = ParamVector::zeros(self.d);
            self.round_in_segment = 0;
            self.segment_index += 1;
        }
        self.clip = clip;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> ParamVector {
        ParamVector::from_vec(vec![x])
    }

    #[test]
    fn schedule_validation() {
        assert!(RestartSchedule::new(vec![0, 5]).is_err());
        assert!(RestartSchedule::new(vec![5, 5]).is_err());
        assert!(RestartSchedule::new(vec![3, 9]).is_ok());
        let s = RestartSchedule::periodic(128, 1024, 3000).unwrap();
        assert_eq!(s.rounds().collect::<Vec<_>>(), vec![128, 1152, 2176]);
    }

    #[test]
    fn segment_lengths_cover_horizon() {
        let s = RestartSchedule::new(vec![3, 7]).unwrap();
        assert_eq!(s.segment_lengths(10), vec![4, 4, 2]);
        assert_eq!(s.segment_lengths(8), vec![4, 4]);
        assert_eq!(s.segment_lengths(4), vec![4]);
        assert_eq!(RestartSchedule::none().segment_lengths(5), vec![5]);
    }

    #[test]
    fn zero_noise_gives_exact_prefix_sums() {
        let mut t = TreeState::new(0.0, 1.0, 1, SeedPath::new(1)).unwrap();
        assert_eq!(t.add_round(&scalar(1.0)), scalar(1.0));
        assert_eq!(t.add_round(&scalar(2.0)), scalar(3.0));
        assert_eq!(t.add_round(&scalar(4.0)), scalar(7.0));
        t.restart(2.0).unwrap();
        assert_eq!(t.current(), scalar(7.0));
        assert_eq!(t.add_round(&scalar(1.0)), scalar(8.0));
    }

    #[test]
    fn zero_noise_with_unbounded_clip() {
        let mut t = TreeState::new(0.0, f64::INFINITY, 2, SeedPath::new(1)).unwrap();
        let out = t.add_round(&ParamVector::from_vec(vec![1.0, -1.0]));
        assert_eq!(out, ParamVector::from_vec(vec![1.0, -1.0]));
    }

    #[test]
    fn same_seed_same_noise_different_labels_differ() {
        let seed = SeedPath::new(42).child("tree", 0);
        let mut a = TreeState::new(1.0, 1.0, 4, seed.clone()).unwrap();
        let mut b = TreeState::new(1.0, 1.0, 4, seed).unwrap();
        let mut c = TreeState::new(1.0, 1.0, 4, SeedPath::new(42).child("tree", 1)).unwrap();
        let x = ParamVector::zeros(4);
        for _ in 0..5 {
            let (oa, ob, oc) = (a.add_round(&x), b.add_round(&x), c.add_round(&x));
            assert_eq!(oa, ob);
            assert_ne!(oa, oc);
        }
    }

    #[test]
    fn first_round_is_single_node() {
        let seed = SeedPath::new(9);
        let mut t = TreeState::new(2.0, 1.5, 3, seed.clone()).unwrap();
        let x = ParamVector::from_vec(vec![1.0, 2.0, 3.0]);
        let out = t.add_round(&x);
        let mut expected = x.clone();
        expected.add_assign(&node_noise(&seed, 0, 0, 0, 3.0, 3));
        assert!(out.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn restart_then_round_adds_fresh_leaf() {
        let seed = SeedPath::new(11);
        let mut t = TreeState::new(1.0, 1.0, 2, seed.clone()).unwrap();
        let x = ParamVector::from_vec(vec![0.5, -0.5]);
        t.add_round(&x);
        let frozen = t.add_round(&x);
        t.restart(3.0).unwrap();
        assert_eq!(t.segment_index(), 1);
        let out = t.add_round(&x);
        let mut expected = frozen;
        expected.add_assign(&x);
        expected.add_assign(&node_noise(&seed, 1, 0, 0, 3.0, 2));
        assert!(out.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn restart_on_empty_segment_only_changes_clip() {
        let mut t = TreeState::new(1.0, 1.0, 1, SeedPath::new(1)).unwrap();
        t.restart(4.0).unwrap();
        assert_eq!(t.segment_index(), 0);
        assert_eq!(t.clip(), 4.0);
    }

    #[test]
    fn reported_increments_are_noise_only() {
        // reported(t) - reported(t-1) - x_t is independent of the data.
        let seed = SeedPath::new(5);
        let mut with_data = TreeState::new(1.0, 1.0, 2, seed.clone()).unwrap();
        let mut zeros = TreeState::new(1.0, 1.0, 2, seed).unwrap();
        let mut prev_a = ParamVector::zeros(2);
        let mut prev_b = ParamVector::zeros(2);
        for i in 0..20 {
            let x = ParamVector::from_vec(vec![i as f64, -(i as f64) * 0.5]);
            let a = with_data.add_round(&x);
            let b = zeros.add_round(&ParamVector::zeros(2));
            let inc_a = a.diff(&prev_a).diff(&x);
            let inc_b = b.diff(&prev_b);
            assert!(inc_a.max_abs_diff(&inc_b) < 1e-9);
            prev_a = a;
            prev_b = b;
        }
    }

    #[test]
    fn noise_variance_follows_popcount() {
        // Monte-Carlo over independent seeds: Var[noise at round t] = popcount(t + 1)·(zC)².
        let replays = 100_000;
        let (z, c) = (1.5, 2.0);
        let rounds = 7;
        let mut sums = vec![0.0f64; rounds];
        let zero = scalar(0.0);
        for r in 0..replays {
            let mut t = TreeState::new(z, c, 1, SeedPath::new(r)).unwrap();
            for slot in sums.iter_mut() {
                *slot += t.add_round(&zero)[0].powi(2);
            }
        }
        for (t, s) in sums.iter().enumerate() {
            let var = s / replays as f64;
            let expected = f64::from((t as u32 + 1).count_ones()) * (z * c).powi(2);
            assert!((var / expected - 1.0).abs() < 0.05, "t={t}: {var} vs {expected}");
        }
    }
}
