//! Worst-case tree sensitivity by dynamic programming over rounds.
//!
//! Only blocks the tree actually releases matter: within a segment, block
//! `(level, index)` is released iff `index` is even and the block completes
//! inside the segment. Exactly one such block closes per round, at level
//! `trailing_zeros(local_round + 1)`. The state is (rounds since the last
//! participation capped at MinS, participations so far, participation counts
//! of the open released blocks); the value is Σ counts² over closed blocks.

use std::collections::HashMap;

use super::{AccountantError, ParticipationSchema};

fn bits_for(n: u64) -> u32 {
    64 - n.leading_zeros()
}

/// Per-level bit fields of the packed counts.
struct Layout {
    offsets: Vec<u32>,
    masks: Vec<u128>,
}

impl Layout {
    fn new(levels: usize, min_sep: u64, max_p: u64) -> Result<Self, AccountantError> {
        let mut offsets = Vec::with_capacity(levels);
        let mut masks = Vec::with_capacity(levels);
        let mut used = 0u32;
        for l in 0..levels {
            let cap = (1u64 << l).div_ceil(min_sep).min(max_p).max(1);
            let width = bits_for(cap);
            offsets.push(used);
            masks.push((1u128 << width) - 1);
            used += width;
        }
        if used > 128 {
            return Err(AccountantError::TooLarge(format!(
                "participation counts need {used} bits of state; at most 128 are supported"
            )));
        }
        Ok(Layout { offsets, masks })
    }

    /// Whether every per-level count in `a` is at least the one in `b`.
    fn covers(&self, a: u128, b: u128) -> bool {
        self.offsets
            .iter()
            .zip(&self.masks)
            .all(|(&off, &mask)| (a >> off) & mask >= (b >> off) & mask)
    }

    fn take(&self, counts: &mut u128, level: usize) -> u64 {
        let off = self.offsets[level];
        let c = (*counts >> off) & self.masks[level];
        *counts &= !(self.masks[level] << off);
        c as u64
    }
}

/// State count above which dominated states are discarded.
const PRUNE_THRESHOLD: usize = 2048;

/// Drops states dominated by another with at least the value, at least the
/// gap, no more participations and at least every open count. The future
/// gain is monotone in each of these, so the maximum is unchanged.
fn prune(states: &mut HashMap<(u32, u32, u128), u64>, layout: &Layout) {
    let mut all: Vec<((u32, u32, u128), u64)> = states.drain().collect();
    all.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(b.0 .0.cmp(&a.0 .0)).then(a.0 .1.cmp(&b.0 .1)));
    let mut kept: Vec<((u32, u32, u128), u64)> = Vec::new();
    for (key, value) in all {
        let dominated = kept.iter().any(|&((g, k, c), _)| {
            g >= key.0 && k <= key.1 && layout.covers(c, key.2)
        });
        if !dominated {
            kept.push((key, value));
        }
    }
    states.extend(kept);
}

/// Worst-case `max_S Σ_v |S ∩ span(v)|²` at every horizon `1..=T`, in units of
/// the squared clip norm. Entry `h−1` is the sensitivity of the first `h`
/// releases under the schema's MinS and MaxP.
pub fn sensitivity_profile(schema: &ParticipationSchema) -> Result<Vec<u64>, AccountantError> {
    profile_with_pruning(schema, PRUNE_THRESHOLD)
}

fn profile_with_pruning(schema: &ParticipationSchema, prune_above: usize) -> Result<Vec<u64>, AccountantError> {
    let min_sep = schema.min_separation;
    let max_p = schema.max_participations;
    let segments = schema.restarts.segment_lengths(schema.rounds);
    let longest = segments.iter().copied().max().unwrap_or(0);
    let levels = bits_for(longest) as usize;
    let layout = Layout::new(levels, min_sep, max_p)?;

    // When the budget cannot bind, the participation count is irrelevant.
    let feasible = (schema.rounds - 1) / min_sep + 1;
    let track_k = max_p < feasible;

    let gap_cap = u32::try_from(min_sep).unwrap_or(u32::MAX);
    let mut states: HashMap<(u32, u32, u128), u64> = HashMap::new();
    states.insert((gap_cap, 0, 0), 0);
    let mut profile = Vec::with_capacity(schema.rounds as usize);
    let mut next: HashMap<(u32, u32, u128), u64> = HashMap::new();

    for &len in &segments {
        for tau in 0..len {
            let mut inc = 0u128;
            for l in 0..levels {
                let j = tau >> l;
                if j % 2 == 0 && (j + 1) << l <= len {
                    inc += 1u128 << layout.offsets[l];
                }
            }
            let closing = (tau + 1).trailing_zeros() as usize;
            next.clear();
            let mut insert = |key: (u32, u32, u128), value: u64| {
                let slot = next.entry(key).or_insert(value);
                if *slot < value {
                    *slot = value;
                }
            };
            for (&(gap, k, counts), &value) in &states {
                let mut skip = counts;
                let c = layout.take(&mut skip, closing);
                insert(((gap + 1).min(gap_cap), k, skip), value + c * c);
                if gap >= gap_cap && (k as u64) < max_p {
                    let mut placed = counts + inc;
                    let c = layout.take(&mut placed, closing);
                    let k2 = if track_k { k + 1 } else { 0 };
                    insert((1u32.min(gap_cap), k2, placed), value + c * c);
                }
            }
            std::mem::swap(&mut states, &mut next);
            if states.len() > prune_above {
                prune(&mut states, &layout);
            }
            profile.push(states.values().copied().max().unwrap_or(0));
        }
    }
    Ok(profile)
}

/// Worst-case sensitivity² over the whole horizon.
pub fn worst_case_sensitivity_sq(schema: &ParticipationSchema) -> Result<u64, AccountantError> {
    Ok(sensitivity_profile(schema)?.last().copied().unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accountant::brute_force_sensitivity_sq;
    use crate::tree::RestartSchedule;
    use proptest::prelude::*;

    fn schema(t: u64, min_sep: u64, max_p: u64, restarts: RestartSchedule) -> ParticipationSchema {
        ParticipationSchema::new(t, min_sep, max_p, restarts).unwrap()
    }

    #[test]
    fn small_examples() {
        let none = RestartSchedule::none;
        assert_eq!(worst_case_sensitivity_sq(&schema(2, 1, 1, none())).unwrap(), 2);
        assert_eq!(worst_case_sensitivity_sq(&schema(4, 1, 1, none())).unwrap(), 3);
        assert_eq!(worst_case_sensitivity_sq(&schema(4, 1, 4, none())).unwrap(), 22);
    }

    #[test]
    fn single_participation_is_root_path_depth() {
        for log_t in 0..=11u32 {
            let t = 1u64 << log_t;
            let s = schema(t, 1, 1, RestartSchedule::none());
            assert_eq!(worst_case_sensitivity_sq(&s).unwrap(), log_t as u64 + 1);
        }
    }

    #[test]
    fn matches_enumeration_exhaustively() {
        for t in 1..=12u64 {
            for min_sep in 1..=4 {
                for max_p in 1..=t.div_ceil(min_sep).min(4) {
                    for restarts in [RestartSchedule::none(), RestartSchedule::new(vec![t / 2]).unwrap_or_default()] {
                        let s = schema(t, min_sep, max_p, restarts);
                        assert_eq!(
                            worst_case_sensitivity_sq(&s).unwrap(),
                            brute_force_sensitivity_sq(&s).unwrap(),
                            "{s:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn pruning_preserves_the_maximum() {
        for t in [6u64, 11, 16, 20] {
            for min_sep in 1..=3 {
                for max_p in 1..=t.div_ceil(min_sep).min(6) {
                    let s = schema(t, min_sep, max_p, RestartSchedule::new(vec![t / 3]).unwrap());
                    assert_eq!(
                        profile_with_pruning(&s, 0).unwrap(),
                        profile_with_pruning(&s, usize::MAX).unwrap(),
                        "{s:?}"
                    );
                    assert_eq!(
                        *profile_with_pruning(&s, 0).unwrap().last().unwrap(),
                        brute_force_sensitivity_sq(&s).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn profile_matches_truncated_horizons() {
        let full = schema(12, 2, 6, RestartSchedule::new(vec![4]).unwrap());
        let profile = sensitivity_profile(&full).unwrap();
        for h in 1..=12u64 {
            let s = schema(h, 2, h.div_ceil(2), RestartSchedule::new(vec![4]).unwrap());
            assert_eq!(profile[h as usize - 1], brute_force_sensitivity_sq(&s).unwrap(), "horizon {h}");
        }
    }

    #[test]
    fn restart_additivity_with_one_segment_per_client() {
        // MinS at least the segment length keeps a client inside one segment
        // per participation; with MaxP 1 the total is the larger segment's.
        let s = schema(16, 16, 1, RestartSchedule::new(vec![7]).unwrap());
        let a = worst_case_sensitivity_sq(&schema(8, 8, 1, RestartSchedule::none())).unwrap();
        assert_eq!(worst_case_sensitivity_sq(&s).unwrap(), a);
        // One participation per segment: the segment sensitivities add.
        let s = schema(16, 8, 2, RestartSchedule::new(vec![7]).unwrap());
        assert_eq!(worst_case_sensitivity_sq(&s).unwrap(), 2 * a);
        assert_eq!(brute_force_sensitivity_sq(&s).unwrap(), 2 * a);
    }

    #[test]
    fn production_scale_is_fast_and_sane() {
        let s = ParticipationSchema::worst_case(2048, 313, RestartSchedule::none()).unwrap();
        let sens = worst_case_sensitivity_sq(&s).unwrap();
        // Never below one participation's root path, never above all nodes fully hit.
        assert!((12..=7 * 7 * 12).contains(&sens), "{sens}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn monotone_in_separation_and_budget(t in 2u64..40, min_sep in 1u64..6, max_p in 1u64..5) {
            let cap = |m: u64| t.div_ceil(m);
            let p = max_p.min(cap(min_sep));
            let base = worst_case_sensitivity_sq(&schema(t, min_sep, p, RestartSchedule::none())).unwrap();
            let wider = worst_case_sensitivity_sq(&schema(t, 2 * min_sep, p.min(cap(2 * min_sep)), RestartSchedule::none())).unwrap();
            prop_assert!(wider <= base);
            if p < cap(min_sep) {
                let more = worst_case_sensitivity_sq(&schema(t, min_sep, p + 1, RestartSchedule::none())).unwrap();
                prop_assert!(more >= base);
            }
            let longer = worst_case_sensitivity_sq(&schema(t + 1, min_sep, p, RestartSchedule::none())).unwrap();
            prop_assert!(longer >= base);
        }
    }
}
