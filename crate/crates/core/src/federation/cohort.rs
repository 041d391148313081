//! Timer-gated client eligibility, cohort selection and participation statistics.

use rand::Rng;

use super::FederationError;
use crate::vector::SeedPath;

/// A simulated device.
#[derive(Debug, Clone)]
pub struct ClientRecord<E> {
    pub id: usize,
    pub dataset: Vec<E>,
    /// First round at which the client's timer allows it to train again.
    pub next_eligible_round: u64,
    pub participation_rounds: Vec<u64>,
}

impl<E> ClientRecord<E> {
    pub fn new(id: usize, dataset: Vec<E>) -> Self {
        ClientRecord { id, dataset, next_eligible_round: 0, participation_rounds: Vec::new() }
    }

    pub fn is_eligible(&self, round: u64) -> bool {
        self.next_eligible_round <= round && !self.dataset.is_empty()
    }
}

/// How likely an eligible client is to check in on a given round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Availability {
    Uniform,
    /// Sinusoidal check-in weight `1 + amplitude·sin(2π(round/period + phase))`
    /// with a fixed per-client phase.
    Diurnal { period: f64, amplitude: f64 },
}

impl Availability {
    fn weight(&self, client: usize, round: u64) -> f64 {
        match *self {
            Availability::Uniform => 1.0,
            Availability::Diurnal { period, amplitude } => {
                // Golden-ratio spacing spreads client phases evenly over [0, 1).
                let phase = (client as f64 * 0.618_033_988_749_894_9).fract();
                let angle = 2.0 * std::f64::consts::PI * (round as f64 / period + phase);
                (1.0 + amplitude * angle.sin()).max(1e-9)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortConfig {
    pub population: usize,
    /// Report goal `m`; every round trains exactly this many clients.
    pub report_goal: usize,
    /// Rounds a client waits after training before it is eligible again.
    pub timer_rounds: u64,
    pub availability: Availability,
}

impl CohortConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        if self.report_goal == 0 || self.report_goal > self.population {
            return Err(FederationError::InvalidConfig(format!(
                "report goal {} must be in 1..={}",
                self.report_goal, self.population
            )));
        }
        if self.timer_rounds == 0 {
            return Err(FederationError::InvalidConfig("timer must be at least one round".into()));
        }
        if let Availability::Diurnal { period, amplitude } = self.availability {
            if !(period > 0.0) || !(0.0..=1.0).contains(&amplitude) {
                return Err(FederationError::InvalidConfig(format!(
                    "diurnal availability needs period > 0 and amplitude in [0, 1], got {period}, {amplitude}"
                )));
            }
        }
        Ok(())
    }
}

/// Draws exactly `report_goal` eligible clients (weighted sampling without
/// replacement), starts their timers and logs the participation. Returns the
/// selected ids in ascending order.
pub fn select_cohort<E>(
    clients: &mut [ClientRecord<E>],
    cfg: &CohortConfig,
    round: u64,
    seed: &SeedPath,
) -> Result<Vec<usize>, FederationError> {
    let mut rng = seed.child("cohort", round).rng();
    // Efraimidis–Spirakis: keep the m largest ln(u)/w.
    let mut keyed: Vec<(f64, usize)> = clients
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_eligible(round))
        .map(|(pos, c)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.ln() / cfg.availability.weight(c.id, round), pos)
        })
        .collect();
    if keyed.len() < cfg.report_goal {
        return Err(FederationError::PopulationExhausted {
            round,
            eligible: keyed.len(),
            report_goal: cfg.report_goal,
        });
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keyed[..cfg.report_goal].iter().map(|&(_, pos)| pos).collect();
    chosen.sort_unstable();
    for &pos in &chosen {
        let c = &mut clients[pos];
        c.next_eligible_round = round + cfg.timer_rounds;
        c.participation_rounds.push(round);
    }
    Ok(chosen.into_iter().map(|pos| clients[pos].id).collect())
}

/// Observed participation limits after training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParticipationLimits {
    pub max_participations: u64,
    /// Smallest gap between two participations of one client; `rounds` if
    /// no client participated twice.
    pub min_separation: u64,
}

/// Computes `(MaxP, MinS)` from participation logs over a run of `rounds` rounds.
pub fn observed_limits<'a, I>(logs: I, rounds: u64) -> ParticipationLimits
where
    I: IntoIterator<Item = &'a [u64]>,
{
    let mut max_participations = 0u64;
    let mut min_separation = rounds;
    for log in logs {
        max_participations = max_participations.max(log.len() as u64);
        for w in log.windows(2) {
            min_separation = min_separation.min(w[1] - w[0]);
        }
    }
    ParticipationLimits { max_participations, min_separation }
}

/// [`observed_limits`] over client records.
pub fn observed_client_limits<E>(clients: &[ClientRecord<E>], rounds: u64) -> ParticipationLimits {
    observed_limits(clients.iter().map(|c| c.participation_rounds.as_slice()), rounds)
}
