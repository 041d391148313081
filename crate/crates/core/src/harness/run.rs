//! Executes an experiment and writes its run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::checkpoint;
use super::config::{ClipSpec, ExperimentConfig, ModelSpec};
use super::report::{NoiseSpec, PrivacyReport};
use super::HarnessError;
use crate::accountant::{rho_from_sensitivity, sensitivity_profile, ParticipationSchema};
use crate::clip::ClipState;
use crate::federation::data::{SyntheticClusters, SyntheticLanguage};
use crate::federation::{
    accuracy, BagOfWordsNextToken, ClientRecord, ClipMode, LogisticRegression, Model, ServerState, Simulation,
};
use crate::secagg::{derive_config, SecAggConfig};
use crate::vector::{ParamVector, SeedPath};

pub const METRICS_HEADER: &str =
    "round,eval_acc,train_loss,active_clip,quantile_estimate,cohort_size,cumulative_zcdp,bits_per_update";

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: u64,
    /// Held-out top-1 accuracy, on evaluation rounds only.
    pub eval_acc: Option<f64>,
    pub train_loss: f64,
    pub active_clip: f64,
    pub quantile_estimate: Option<f64>,
    pub cohort_size: usize,
    /// Worst-case ρ of the models released so far.
    pub cumulative_zcdp: f64,
    pub bits_per_update: Option<u64>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.round,
            opt(self.eval_acc),
            self.train_loss,
            self.active_clip,
            opt(self.quantile_estimate),
            self.cohort_size,
            self.cumulative_zcdp,
            opt(self.bits_per_update)
        )
    }

    pub fn parse(line: &str) -> Result<Self, HarnessError> {
        let bad = || HarnessError::Compare(format!("malformed metrics line `{line}`"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let opt_num = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        Ok(MetricsRow {
            round: f[0].parse().map_err(|_| bad())?,
            eval_acc: opt_num(f[1])?,
            train_loss: num(f[2])?,
            active_clip: num(f[3])?,
            quantile_estimate: opt_num(f[4])?,
            cohort_size: f[5].parse().map_err(|_| bad())?,
            cumulative_zcdp: num(f[6])?,
            bits_per_update: if f[7].is_empty() { None } else { Some(f[7].parse().map_err(|_| bad())?) },
        })
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(HarnessError::Compare(format!("{} has an unexpected header", path.display())));
    }
    lines.map(MetricsRow::parse).collect()
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub metrics: Vec<MetricsRow>,
    pub final_params: ParamVector,
    pub report: PrivacyReport,
}

/// Directory for a run named `name` under the output root.
pub fn run_dir(name: &str) -> PathBuf {
    super::output_root().join(name)
}

/// Runs `cfg` and writes `config.txt`, `metrics.csv`, `checkpoint.bin`,
/// `participation.csv` and the privacy report into `dir`. On a failure the
/// metrics of completed rounds are still written.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let config_path = dir.join("config.txt");
    let record = format!("# config hash {}\n{}", cfg.hash(), cfg.canonical());
    std::fs::write(&config_path, record).map_err(|e| HarnessError::io(&config_path, e))?;

    match cfg.model {
        ModelSpec::NextToken { vocab, context } => {
            let lang = SyntheticLanguage::new(vocab, context, cfg.data.language_seed);
            let (clients, eval) = build_data(cfg, |seed| {
                lang.client_examples(seed, cfg.data.heterogeneity, cfg.data.examples_per_client)
            });
            execute(cfg, dir, BagOfWordsNextToken::new(vocab), clients, eval)
        }
        ModelSpec::Logistic { features, classes } => {
            let task = SyntheticClusters::new(features, classes, cfg.data.language_seed);
            let (clients, eval) = build_data(cfg, |seed| {
                task.client_examples(seed, cfg.data.heterogeneity, cfg.data.examples_per_client)
            });
            execute(cfg, dir, LogisticRegression::new(features, classes), clients, eval)
        }
    }
}

/// Training clients from the population seed; evaluation clients from the
/// language seed, so runs on different populations share a test set.
fn build_data<E, F>(cfg: &ExperimentConfig, gen: F) -> (Vec<ClientRecord<E>>, Vec<E>)
where
    E: Send,
    F: Fn(&SeedPath) -> Vec<E> + Sync,
{
    let pop_seed = SeedPath::new(cfg.data.population_seed);
    let clients = (0..cfg.cohort.population)
        .into_par_iter()
        .map(|i| ClientRecord::new(i, gen(&pop_seed.child("client", i as u64))))
        .collect();
    let eval_seed = SeedPath::new(cfg.data.language_seed);
    let eval = (0..cfg.data.eval_clients)
        .into_par_iter()
        .flat_map_iter(|i| gen(&eval_seed.child("eval-client", i as u64)))
        .collect();
    (clients, eval)
}

fn initial_params<M: Model>(cfg: &ExperimentConfig, model: &M, seed: &SeedPath) -> Result<ParamVector, HarnessError> {
    match &cfg.warm_start {
        None => Ok(model.init_params(&seed.child("init", 0))),
        Some(path) => {
            let params = checkpoint::read(path)?;
            if params.len() != model.dim() {
                return Err(HarnessError::Checkpoint(format!(
                    "{} holds {} parameters but the model has {}",
                    path.display(),
                    params.len(),
                    model.dim()
                )));
            }
            params.check_finite()?;
            Ok(params)
        }
    }
}

fn execute<M: Model>(
    cfg: &ExperimentConfig,
    dir: &Path,
    model: M,
    clients: Vec<ClientRecord<M::Example>>,
    eval: Vec<M::Example>,
) -> Result<RunOutcome, HarnessError> {
    let seed = SeedPath::new(cfg.seed);
    let theta0 = initial_params(cfg, &model, &seed)?;
    let clip = match &cfg.clip {
        ClipSpec::Fixed { norm } => ClipMode::Fixed(*norm),
        ClipSpec::Adaptive { .. } => ClipMode::Adaptive(ClipState::new(
            cfg.clip_config().expect("adaptive config"),
            seed.child("count-tree", 0),
        )?),
    };
    let secagg: Option<SecAggConfig> = match (cfg.secagg_scale, &cfg.clip) {
        (Some(s), ClipSpec::Fixed { norm }) => Some(derive_config(*norm, s, model.dim(), cfg.cohort.report_goal)?),
        _ => None,
    };

    // Per-round ρ under the schema the timer enforces.
    let noise = NoiseSpec::from_config(cfg)?;
    let z = noise.equivalent_z();
    let worst = ParticipationSchema::worst_case(
        cfg.rounds,
        cfg.cohort.timer_rounds.min(cfg.rounds),
        cfg.training.restarts.clone(),
    )?;
    let profile = sensitivity_profile(&worst)?;
    let scale_sq = noise.sensitivity_scale * noise.sensitivity_scale;

    let server = ServerState::new(theta0, &cfg.training, clip, &seed)?;
    let mut sim = Simulation {
        model,
        clients,
        cohort: cfg.cohort.clone(),
        training: cfg.training.clone(),
        secagg,
        server,
        seed,
    };

    let mut metrics = Vec::with_capacity(cfg.rounds as usize);
    let metrics_path = dir.join("metrics.csv");
    for t in 0..cfg.rounds {
        let report = match sim.step() {
            Ok(r) => r,
            Err(e) => {
                let _ = std::fs::write(&metrics_path, metrics_csv(&metrics));
                return Err(e.into());
            }
        };
        let eval_round = (t + 1) % cfg.eval_every == 0 || t + 1 == cfg.rounds;
        metrics.push(MetricsRow {
            round: t,
            eval_acc: eval_round.then(|| accuracy(&sim.model, &sim.server.theta, &eval)),
            train_loss: report.train_loss,
            active_clip: report.active_clip,
            quantile_estimate: report.quantile_estimate,
            cohort_size: report.cohort_size,
            cumulative_zcdp: rho_from_sensitivity(profile[t as usize] as f64, z) * scale_sq,
            bits_per_update: sim.secagg.as_ref().map(|s| s.bits_per_update()),
        });
    }

    std::fs::write(&metrics_path, metrics_csv(&metrics)).map_err(|e| HarnessError::io(&metrics_path, e))?;
    checkpoint::write(&dir.join("checkpoint.bin"), &sim.server.theta)?;
    write_participation(&dir.join("participation.csv"), &sim.clients)?;
    let report = PrivacyReport::for_run(cfg, sim.clients.iter().map(|c| c.participation_rounds.as_slice()))?;
    report.write(dir)?;

    Ok(RunOutcome { dir: dir.to_path_buf(), metrics, final_params: sim.server.theta, report })
}

fn write_participation<E>(path: &Path, clients: &[ClientRecord<E>]) -> Result<(), HarnessError> {
    let mut out = String::from("client_id,round\n");
    for c in clients {
        for r in &c.participation_rounds {
            let _ = writeln!(out, "{},{}", c.id, r);
        }
    }
    std::fs::write(path, out).map_err(|e| HarnessError::io(path, e))
}

/// Per-client participation rounds from a `participation.csv`.
pub fn read_participation(path: &Path) -> Result<Vec<Vec<u64>>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut by_client: std::collections::BTreeMap<u64, Vec<u64>> = Default::default();
    for line in text.lines().skip(1) {
        let parsed = line
            .split_once(',')
            .and_then(|(c, r)| Some((c.trim().parse::<u64>().ok()?, r.trim().parse::<u64>().ok()?)));
        let (client, round) = parsed.ok_or_else(|| {
            HarnessError::Compare(format!("malformed participation line `{line}` in {}", path.display()))
        })?;
        by_client.entry(client).or_default().push(round);
    }
    let mut logs: Vec<Vec<u64>> = by_client.into_values().collect();
    for log in &mut logs {
        log.sort_unstable();
    }
    Ok(logs)
}

/// Recomputes the privacy report of a finished run from its config record and
/// participation log.
pub fn account_run(dir: &Path) -> Result<PrivacyReport, HarnessError> {
    let cfg = ExperimentConfig::from_file(&dir.join("config.txt"))?;
    let logs = read_participation(&dir.join("participation.csv"))?;
    PrivacyReport::for_run(&cfg, logs.iter().map(|l| l.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(extra: &str) -> ExperimentConfig {
        ExperimentConfig::parse(&format!(
            "rounds = 12\neval_every = 4\ncohort.population = 60\ncohort.report_goal = 6\n\
             model.vocab = 8\ndata.eval_clients = 5\ndata.examples_per_client = 12\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn writes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small("dp.noise_multiplier = 0.5\nclip.norm = 0.3\ncohort.timer_rounds = 3");
        let out = run(&cfg, dir.path()).unwrap();
        for f in ["config.txt", "metrics.csv", "checkpoint.bin", "participation.csv", "privacy_report.txt", "privacy_report.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(out.metrics.len(), 12);
        assert_eq!(out.metrics.iter().filter(|m| m.eval_acc.is_some()).count(), 3);
        assert!(out.metrics.windows(2).all(|w| w[0].cumulative_zcdp <= w[1].cumulative_zcdp));
        assert_eq!(read_metrics(&dir.path().join("metrics.csv")).unwrap(), out.metrics);
        assert_eq!(checkpoint::read(&dir.path().join("checkpoint.bin")).unwrap(), out.final_params);
        assert_eq!(account_run(dir.path()).unwrap(), out.report);
        // Worst case bounds the observed accounting.
        assert!(out.report.rho <= out.metrics.last().unwrap().cumulative_zcdp);
    }

    #[test]
    fn adaptive_and_secagg_columns() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&small("clip.mode = adaptive\ndp.noise_multiplier = 0.5\ndp.restarts = 4"), dir.path()).unwrap();
        assert!(out.metrics.iter().all(|m| m.quantile_estimate.is_some() && m.bits_per_update.is_none()));
        let dir = tempfile::tempdir().unwrap();
        let out = run(&small("secagg.enabled = true\nclip.norm = 0.5"), dir.path()).unwrap();
        assert!(out.metrics.iter().all(|m| m.bits_per_update == Some(128 * 10)));
    }

    #[test]
    fn warm_start_dimension_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.bin");
        checkpoint::write(&bad, &ParamVector::zeros(3)).unwrap();
        let cfg = small(&format!("warm_start = {}", bad.display()));
        let err = run(&cfg, &dir.path().join("r")).unwrap_err();
        assert!(err.to_string().contains("3 parameters"));
    }

    #[test]
    fn starvation_is_an_error_with_partial_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small("cohort.timer_rounds = 20");
        let err = run(&cfg, dir.path()).unwrap_err();
        assert!(err.to_string().contains("population exhausted"));
        let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
        assert_eq!(rows.len(), 10);
    }
}
