//! Exhaustive worst-case sensitivity, for checking the dynamic program.
//!
//! Materializes every released tree block and enumerates every feasible
//! participation pattern.

use super::{AccountantError, ParticipationSchema};

/// Largest horizon the enumeration accepts.
pub const MAX_ORACLE_ROUNDS: u64 = 24;

/// Global round spans `[start, end)` of every block the tree releases within
/// the schema's horizon: per segment, blocks `(level, index)` with an even
/// index that complete inside the segment.
pub fn released_blocks(schema: &ParticipationSchema) -> Vec<(u64, u64)> {
    let mut spans = Vec::new();
    let mut seg_start = 0;
    for len in schema.restarts.segment_lengths(schema.rounds) {
        let mut width = 1u64;
        while width <= len {
            let mut index = 0;
            while (index + 1) * width <= len {
                spans.push((seg_start + index * width, seg_start + (index + 1) * width));
                index += 2;
            }
            width *= 2;
        }
        seg_start += len;
    }
    spans
}

/// `max_S Σ_v |S ∩ span(v)|²` over all participation sets `S` allowed by the
/// schema, in units of the squared clip norm.
pub fn brute_force_sensitivity_sq(schema: &ParticipationSchema) -> Result<u64, AccountantError> {
    if schema.rounds > MAX_ORACLE_ROUNDS {
        return Err(AccountantError::TooLarge(format!(
            "enumeration is limited to {MAX_ORACLE_ROUNDS} rounds, got {}",
            schema.rounds
        )));
    }
    let spans = released_blocks(schema);
    let mut chosen = Vec::new();
    let mut best = 0;
    search(schema, &spans, 0, &mut chosen, &mut best);
    Ok(best)
}

fn score(spans: &[(u64, u64)], chosen: &[u64]) -> u64 {
    spans
        .iter()
        .map(|&(a, b)| {
            let c = chosen.iter().filter(|&&p| a <= p && p < b).count() as u64;
            c * c
        })
        .sum()
}

fn search(schema: &ParticipationSchema, spans: &[(u64, u64)], from: u64, chosen: &mut Vec<u64>, best: &mut u64) {
    *best = (*best).max(score(spans, chosen));
    if chosen.len() as u64 >= schema.max_participations {
        return;
    }
    for p in from..schema.rounds {
        chosen.push(p);
        search(schema, spans, p + schema.min_separation, chosen, best);
        chosen.pop();
    }
}
