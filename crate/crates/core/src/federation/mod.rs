//! The federated round loop: local training, aggregation (plain or through the
//! secure-aggregation encoding), tree-noised cumulative sums, and the server
//! momentum step anchored at the initial model.

pub mod cohort;
pub mod data;
pub mod model;

use rayon::prelude::*;

pub use cohort::{
    observed_client_limits, observed_limits, select_cohort, Availability, ClientRecord, CohortConfig,
    ParticipationLimits,
};
pub use model::{accuracy, mean_loss, BagOfWordsNextToken, LabeledExample, LogisticRegression, Model, TokenExample};

use crate::clip::{ClipError, ClipState};
use crate::secagg::{self, SecAggConfig, SecAggError};
use crate::tree::{RestartSchedule, TreeError, TreeState};
use crate::vector::{clip_l2, ParamVector, SeedPath, SignVector, VectorError};

#[derive(Debug, thiserror::Error)]
pub enum FederationError {
    #[error("population exhausted at round {round}: {eligible} eligible clients for report goal {report_goal}; shorten the timer or raise the population")]
    PopulationExhausted { round: u64, eligible: usize, report_goal: usize },
    #[error("client {0} has no local data")]
    EmptyDataset(usize),
    #[error("cohort has {got} clients, expected {expected}")]
    CohortSize { got: usize, expected: usize },
    #[error("model parameters became non-finite at round {0}")]
    NonFinite(u64),
    #[error("invalid federation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error(transparent)]
    SecAgg(#[from] SecAggError),
}

/// Local and server optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Client learning rate `η_c`.
    pub client_lr: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    /// Server learning rate `η_s`.
    pub server_lr: f64,
    /// Server momentum `β`.
    pub momentum: f64,
    /// Noise multiplier `z_Δ` of the model-delta tree.
    pub noise_multiplier: f64,
    pub restarts: RestartSchedule,
}

/// Result of local training on one client.
#[derive(Debug, Clone)]
pub struct ClientOutput {
    /// `Δ' = clip(Δ, C_active)`.
    pub delta: ParamVector,
    /// `‖Δ‖₂ ≤ C_quantile`.
    pub unclipped: bool,
    /// `‖Δ‖₂` before clipping.
    pub raw_norm: f64,
    /// Mean batch loss over local training.
    pub loss: f64,
}

/// Runs local SGD from `theta` and clips the resulting delta.
///
/// `clip_active` bounds the returned delta; `clip_quantile` only sets the
/// indicator bit used by the quantile tracker.
pub fn client_update<M: Model>(
    model: &M,
    theta: &ParamVector,
    dataset: &[M::Example],
    cfg: &TrainingConfig,
    clip_active: f64,
    clip_quantile: f64,
) -> Result<ClientOutput, VectorError> {
    let mut params = theta.clone();
    let batch = cfg.batch_size.max(1);
    let mut loss = 0.0;
    let mut steps = 0usize;
    for _ in 0..cfg.local_epochs {
        for chunk in dataset.chunks(batch) {
            loss += model.sgd_step(params.as_mut_slice(), chunk, cfg.client_lr);
            steps += 1;
        }
    }
    let delta = params.diff(theta);
    delta.check_finite()?;
    let raw_norm = delta.norm_l2();
    Ok(ClientOutput {
        delta: clip_l2(&delta, clip_active)?,
        unclipped: raw_norm <= clip_quantile,
        raw_norm,
        loss: if steps == 0 { 0.0 } else { loss / steps as f64 },
    })
}

/// Fixed or adaptive clipping.
#[derive(Debug, Clone)]
pub enum ClipMode {
    Fixed(f64),
    Adaptive(ClipState),
}

impl ClipMode {
    pub fn active(&self) -> f64 {
        match self {
            ClipMode::Fixed(c) => *c,
            ClipMode::Adaptive(s) => s.active(),
        }
    }

    /// The quantile estimate `Cᵗ`, for adaptive runs.
    pub fn estimate(&self) -> Option<f64> {
        match self {
            ClipMode::Fixed(_) => None,
            ClipMode::Adaptive(s) => Some(s.estimate()),
        }
    }
}

/// Server-side training state.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub theta0: ParamVector,
    pub theta: ParamVector,
    /// Momentum buffer `Δ̄ᵗ` over noised cumulative averages.
    pub momentum: ParamVector,
    pub beta: f64,
    pub server_lr: f64,
    /// Rounds completed so far.
    pub round: u64,
    pub delta_tree: TreeState,
    pub clip: ClipMode,
}

impl ServerState {
    pub fn new(
        theta0: ParamVector,
        cfg: &TrainingConfig,
        clip: ClipMode,
        seed: &SeedPath,
    ) -> Result<Self, FederationError> {
        let d = theta0.len();
        let delta_tree = TreeState::new(cfg.noise_multiplier, clip.active(), d, seed.child("delta-tree", 0))?;
        Ok(ServerState {
            theta: theta0.clone(),
            momentum: ParamVector::zeros(d),
            theta0,
            beta: cfg.momentum,
            server_lr: cfg.server_lr,
            round: 0,
            delta_tree,
            clip,
        })
    }
}

/// Per-round observations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundReport {
    pub round: u64,
    pub cohort_size: usize,
    pub train_loss: f64,
    /// Clients with `‖Δ‖ ≤ Cᵗ`.
    pub unclipped: usize,
    /// Clip in force during this round.
    pub active_clip: f64,
    /// Quantile estimate after this round's update (adaptive runs only).
    pub quantile_estimate: Option<f64>,
    /// Rotated coordinates that hit the ℓ∞ clip (SecAgg runs only).
    pub linf_clipped: usize,
    /// `‖decoded − Σ Δ'_i‖₂` (SecAgg runs only).
    pub secagg_residual: Option<f64>,
    pub restarted: bool,
}

/// Runs one round of DP-FTRL for `cohort` (client indices into `clients`).
#[allow(clippy::too_many_arguments)]
pub fn run_round<M: Model>(
    server: &mut ServerState,
    model: &M,
    clients: &[ClientRecord<M::Example>],
    cohort: &[usize],
    cfg: &TrainingConfig,
    report_goal: usize,
    secagg: Option<&SecAggConfig>,
    seed: &SeedPath,
) -> Result<RoundReport, FederationError> {
    if cohort.len() != report_goal {
        return Err(FederationError::CohortSize { got: cohort.len(), expected: report_goal });
    }
    let t = server.round;
    let clip_active = server.clip.active();
    let clip_quantile = server.clip.estimate().unwrap_or(clip_active);

    // Clients train independently; collect() keeps cohort order.
    let outputs: Vec<ClientOutput> = cohort
        .par_iter()
        .map(|&i| {
            let client = &clients[i];
            if client.dataset.is_empty() {
                return Err(FederationError::EmptyDataset(client.id));
            }
            Ok(client_update(model, &server.theta, &client.dataset, cfg, clip_active, clip_quantile)?)
        })
        .collect::<Result<_, _>>()?;

    let d = server.theta.len();
    let mut plain_sum = ParamVector::zeros(d);
    for out in &outputs {
        plain_sum.add_assign(&out.delta);
    }

    let mut report = RoundReport {
        round: t,
        cohort_size: cohort.len(),
        train_loss: outputs.iter().map(|o| o.loss).sum::<f64>() / outputs.len() as f64,
        unclipped: outputs.iter().filter(|o| o.unclipped).count(),
        active_clip: clip_active,
        ..RoundReport::default()
    };

    let aggregate = match secagg {
        None => plain_sum,
        Some(sa) => {
            let round_seed = seed.child("secagg", t);
            let signs = SignVector::random(&round_seed.child("signs", 0), sa.d);
            let encoded: Vec<_> = outputs
                .par_iter()
                .zip(cohort.par_iter())
                .map(|(out, &i)| {
                    secagg::encode_client_with_stats(&out.delta, sa, &signs, &round_seed.child("client", i as u64))
                })
                .collect::<Result<_, _>>()?;
            report.linf_clipped = encoded.iter().map(|(_, s)| s.linf_clipped).sum();
            let updates: Vec<_> = encoded.into_iter().map(|(u, _)| u).collect();
            let sum = secagg::modular_sum(&updates, sa)?;
            let decoded = secagg::decode(&sum, sa, &signs, updates.len())?;
            report.secagg_residual = Some(decoded.diff(&plain_sum).norm_l2());
            decoded
        }
    };

    // Δ̃ᵗ = PrivateSum / m;  Δ̄ᵗ = βΔ̄ᵗ⁻¹ + Δ̃ᵗ;  θᵗ⁺¹ = θ⁰ + η_s Δ̄ᵗ.
    let mut noised = server.delta_tree.add_round(&aggregate);
    noised.scale(1.0 / report_goal as f64);
    server.momentum.scale(server.beta);
    server.momentum.add_assign(&noised);
    let mut theta = server.theta0.clone();
    theta.axpy(server.server_lr, &server.momentum);
    if theta.first_non_finite().is_some() {
        return Err(FederationError::NonFinite(t));
    }
    server.theta = theta;

    if let ClipMode::Adaptive(state) = &mut server.clip {
        let cumulative = state.add_count(report.unclipped as f64);
        state.update_estimate(cumulative / report_goal as f64, t);
        report.quantile_estimate = Some(state.estimate());
    }

    if cfg.restarts.contains(t) {
        if let ClipMode::Adaptive(state) = &mut server.clip {
            state.activate();
            state.restart_counts()?;
        }
        server.delta_tree.restart(server.clip.active())?;
        report.restarted = true;
    }

    server.round += 1;
    Ok(report)
}

/// A population, a model and a server, advanced one round at a time.
pub struct Simulation<M: Model> {
    pub model: M,
    pub clients: Vec<ClientRecord<M::Example>>,
    pub cohort: CohortConfig,
    pub training: TrainingConfig,
    pub secagg: Option<SecAggConfig>,
    pub server: ServerState,
    pub seed: SeedPath,
}

impl<M: Model> Simulation<M> {
    /// Selects a cohort and runs one round.
    pub fn step(&mut self) -> Result<RoundReport, FederationError> {
        let round = self.server.round;
        let ids = select_cohort(&mut self.clients, &self.cohort, round, &self.seed)?;
        // Client ids equal their positions in `clients`.
        run_round(
            &mut self.server,
            &self.model,
            &self.clients,
            &ids,
            &self.training,
            self.cohort.report_goal,
            self.secagg.as_ref(),
            &self.seed,
        )
    }

    pub fn limits(&self) -> ParticipationLimits {
        observed_client_limits(&self.clients, self.server.round)
    }
}
