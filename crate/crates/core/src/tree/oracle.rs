//! Reference tree aggregation that materializes every block explicitly.
//!
//! Used to check [`TreeState`](super::TreeState): it computes each block's
//! noisy sum up front and assembles prefixes from the binary decomposition,
//! without any residual bookkeeping.

use super::{node_noise, RestartSchedule};
use crate::vector::{ParamVector, SeedPath};

/// Dyadic blocks `(level, index)` covering `[0, n)`, largest first.
pub fn decomposition(n: u64) -> Vec<(u32, u64)> {
    let mut blocks = Vec::new();
    let mut start = 0u64;
    for level in (0..64u32).rev() {
        if (n >> level) & 1 == 1 {
            blocks.push((level, start >> level));
            start += 1 << level;
        }
    }
    blocks
}

/// Every private prefix sum produced by replaying `history` through a tree
/// with constant clip `clip`, restarting after each round in `schedule`.
pub fn naive_private_sums(
    history: &[ParamVector],
    z: f64,
    clip: f64,
    seed: &SeedPath,
    schedule: &RestartSchedule,
) -> Vec<ParamVector> {
    let Some(first) = history.first() else {
        return Vec::new();
    };
    let d = first.len();
    let sigma = if z == 0.0 { 0.0 } else { z * clip };
    let mut outputs = Vec::with_capacity(history.len());
    let mut carried = ParamVector::zeros(d);
    let mut start = 0usize;
    for (segment, len) in schedule
        .segment_lengths(history.len() as u64)
        .into_iter()
        .enumerate()
    {
        let len = len as usize;
        let rounds = &history[start..start + len];
        // Materialize all completed blocks: noisy_blocks[level][index].
        let mut noisy_blocks: Vec<Vec<ParamVector>> = Vec::new();
        let mut level = 0u32;
        while (1usize << level) <= len {
            let width = 1usize << level;
            let blocks = (0..len / width)
                .map(|index| {
                    let mut v = node_noise(seed, segment as u64, level, index as u64, sigma, d);
                    for x in &rounds[index * width..(index + 1) * width] {
                        v.add_assign(x);
                    }
                    v
                })
                .collect();
            noisy_blocks.push(blocks);
            level += 1;
        }
        let mut last = carried.clone();
        for t in 0..len {
            let mut out = carried.clone();
            for (level, index) in decomposition(t as u64 + 1) {
                out.add_assign(&noisy_blocks[level as usize][index as usize]);
            }
            outputs.push(out.clone());
            last = out;
        }
        carried = last;
        start += len;
    }
    outputs
}

/// The final private sum of [`naive_private_sums`].
pub fn naive_private_sum(
    history: &[ParamVector],
    z: f64,
    clip: f64,
    seed: &SeedPath,
    schedule: &RestartSchedule,
) -> Option<ParamVector> {
    naive_private_sums(history, z, clip, seed, schedule).pop()
}
