//! Experiment configuration.
//!
//! Grammar: one `key = value` per line, keys may be dotted (`clip.mode`),
//! `#` starts a comment, blank lines are ignored. Unknown or repeated keys are
//! errors. Values are plain scalars; lists are comma separated.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::clip::ClipConfig;
use crate::federation::{Availability, CohortConfig, TrainingConfig};
use crate::tree::RestartSchedule;

/// Parsed `key = value` pairs with their line numbers.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, usize)>,
}

fn config_err(key: &str, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config { key: key.to_string(), msg: msg.into() }
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(&format!("line {}", n + 1), format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                return Err(config_err(&format!("line {}", n + 1), format!("invalid key `{key}`")));
            }
            if entries.insert(key.to_string(), (value.trim().to_string(), n + 1)).is_some() {
                return Err(config_err(key, "given more than once"));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    pub fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, HarnessError> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| config_err(key, format!("cannot parse `{v}` (line {line})"))),
        }
    }

    pub fn take_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, HarnessError> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list; numbers may use exponent notation (`1e6`).
    pub fn take_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, HarnessError> {
        let Some((v, line)) = self.entries.remove(key) else { return Ok(None) };
        v.split(',')
            .map(|item| {
                let item = item.trim();
                item.parse::<T>()
                    .ok()
                    .or_else(|| {
                        // Integers written as 1e6.
                        item.parse::<f64>().ok().filter(|f| f.fract() == 0.0).and_then(|f| format!("{f:.0}").parse().ok())
                    })
                    .ok_or_else(|| config_err(key, format!("cannot parse list item `{item}` (line {line})")))
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    /// Errors on any key not consumed yet.
    pub fn finish(self) -> Result<(), HarnessError> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (_, line))) => Err(config_err(&key, format!("unknown key (line {line})"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// Bag-of-words next-token softmax over a synthetic vocabulary.
    NextToken { vocab: usize, context: usize },
    /// Multinomial logistic regression on Gaussian clusters.
    Logistic { features: usize, classes: usize },
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match *self {
            ModelSpec::NextToken { vocab, .. } => vocab * vocab + vocab,
            ModelSpec::Logistic { features, classes } => classes * (features + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    /// Seed of the shared language (transitions or centroids) and of the evaluation clients.
    pub language_seed: u64,
    /// Seed of the training clients' local data.
    pub population_seed: u64,
    pub heterogeneity: f64,
    /// Tokens (next-token) or examples (logistic) per client.
    pub examples_per_client: usize,
    pub eval_clients: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClipSpec {
    Fixed { norm: f64 },
    Adaptive { initial: f64, initial_active: f64, gamma: f64, eta_gamma: f64, sigma_b_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub rounds: u64,
    pub eval_every: u64,
    pub cohort: CohortConfig,
    pub training: TrainingConfig,
    pub clip: ClipSpec,
    pub model: ModelSpec,
    pub data: DataSpec,
    /// SecAgg scale `s` when quantized aggregation is enabled.
    pub secagg_scale: Option<f64>,
    pub warm_start: Option<PathBuf>,
}

/// Parses `none`, `periodic:FIRST:PERIOD` or a comma-separated list of rounds.
pub fn parse_restarts(value: &str, rounds: u64) -> Result<RestartSchedule, HarnessError> {
    let bad = |msg: String| config_err("dp.restarts", msg);
    let value = value.trim();
    if value == "none" {
        return Ok(RestartSchedule::none());
    }
    if let Some(spec) = value.strip_prefix("periodic:") {
        let parts: Vec<&str> = spec.split(':').collect();
        let [first, period] = parts.as_slice() else {
            return Err(bad(format!("expected `periodic:FIRST:PERIOD`, got `{value}`")));
        };
        let first: u64 = first.trim().parse().map_err(|_| bad(format!("bad first round `{first}`")))?;
        let period: u64 = period.trim().parse().map_err(|_| bad(format!("bad period `{period}`")))?;
        return RestartSchedule::periodic(first, period, rounds).map_err(|e| bad(e.to_string()));
    }
    let list = value
        .split(',')
        .map(|r| r.trim().parse::<u64>().map_err(|_| bad(format!("bad round `{r}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    RestartSchedule::new(list).map_err(|e| bad(e.to_string()))
}

fn restarts_to_string(r: &RestartSchedule) -> String {
    if r.is_empty() {
        "none".into()
    } else {
        r.rounds().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // Relative checkpoint paths are resolved against the config's directory.
        if let (Some(ws), Some(dir)) = (&cfg.warm_start, path.parent()) {
            if ws.is_relative() {
                cfg.warm_start = Some(dir.join(ws));
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut kv = KeyValues::parse(text)?;
        let name = kv.take_str("name").unwrap_or_else(|| "run".into());
        let seed = kv.take_or("seed", 0u64)?;
        let rounds = kv.take_or("rounds", 500u64)?;
        let eval_every = kv.take_or("eval_every", 10u64)?;

        let population = kv.take_or("cohort.population", 10_000usize)?;
        let report_goal = kv.take_or("cohort.report_goal", 100usize)?;
        let timer_rounds = match (kv.take::<u64>("cohort.timer_rounds")?, kv.take::<f64>("cohort.timer_hours")?) {
            (Some(_), Some(_)) => {
                return Err(config_err("cohort.timer_hours", "give either cohort.timer_rounds or cohort.timer_hours"))
            }
            (Some(r), None) => {
                kv.take_str("cohort.rounds_per_day");
                r
            }
            (None, Some(hours)) => {
                let per_day: f64 = kv
                    .take("cohort.rounds_per_day")?
                    .ok_or_else(|| config_err("cohort.rounds_per_day", "required with cohort.timer_hours"))?;
                if !(hours > 0.0 && per_day > 0.0) {
                    return Err(config_err("cohort.timer_hours", "timer hours and rounds per day must be positive"));
                }
                (hours / 24.0 * per_day).ceil() as u64
            }
            (None, None) => {
                kv.take_str("cohort.rounds_per_day");
                1
            }
        };
        let availability = match kv.take_str("cohort.availability").as_deref() {
            None | Some("uniform") => Availability::Uniform,
            Some("diurnal") => Availability::Diurnal {
                period: kv.take_or("cohort.diurnal_period", 24.0)?,
                amplitude: kv.take_or("cohort.diurnal_amplitude", 0.5)?,
            },
            Some(other) => {
                return Err(config_err("cohort.availability", format!("expected uniform or diurnal, got `{other}`")))
            }
        };

        let clip = match kv.take_str("clip.mode").as_deref() {
            None | Some("fixed") => {
                let norm = match kv.take_str("clip.norm") {
                    None => 1.0,
                    Some(v) if v == "inf" => f64::INFINITY,
                    Some(v) => v.parse().map_err(|_| config_err("clip.norm", format!("cannot parse `{v}`")))?,
                };
                ClipSpec::Fixed { norm }
            }
            Some("adaptive") => {
                let initial = kv.take_or("clip.C0", 1.0)?;
                ClipSpec::Adaptive {
                    initial,
                    initial_active: kv.take_or("clip.initial_active", initial)?,
                    gamma: kv.take_or("clip.gamma", 0.5)?,
                    eta_gamma: kv.take_or("clip.eta_gamma", 0.2)?,
                    sigma_b_fraction: kv.take_or("clip.sigma_b_fraction", 0.05)?,
                }
            }
            Some(other) => return Err(config_err("clip.mode", format!("expected fixed or adaptive, got `{other}`"))),
        };

        let restarts = match kv.take_str("dp.restarts") {
            Some(v) => parse_restarts(&v, rounds)?,
            None if matches!(clip, ClipSpec::Adaptive { .. }) => {
                RestartSchedule::periodic(128, 1024, rounds).map_err(|e| config_err("dp.restarts", e.to_string()))?
            }
            None => RestartSchedule::none(),
        };
        let training = TrainingConfig {
            client_lr: kv.take_or("training.client_lr", 0.5)?,
            batch_size: kv.take_or("training.batch_size", 16)?,
            local_epochs: kv.take_or("training.local_epochs", 1)?,
            server_lr: kv.take_or("training.server_lr", 1.0)?,
            momentum: kv.take_or("training.momentum", 0.9)?,
            noise_multiplier: kv.take_or("dp.noise_multiplier", 0.0)?,
            restarts,
        };

        let model = match kv.take_str("model.kind").as_deref() {
            None | Some("next_token") => ModelSpec::NextToken {
                vocab: kv.take_or("model.vocab", 100)?,
                context: kv.take_or("model.context", 2)?,
            },
            Some("logistic") => ModelSpec::Logistic {
                features: kv.take_or("model.features", 20)?,
                classes: kv.take_or("model.classes", 10)?,
            },
            Some(other) => {
                return Err(config_err("model.kind", format!("expected next_token or logistic, got `{other}`")))
            }
        };
        let data = DataSpec {
            language_seed: kv.take_or("data.language_seed", 0)?,
            population_seed: kv.take_or("data.population_seed", seed)?,
            heterogeneity: kv.take_or("data.heterogeneity", 0.3)?,
            examples_per_client: kv.take_or("data.examples_per_client", 32)?,
            eval_clients: kv.take_or("data.eval_clients", 200)?,
        };
        let secagg_scale = if kv.take_or("secagg.enabled", false)? {
            Some(kv.take_or("secagg.scale", 100.0)?)
        } else {
            kv.take_str("secagg.scale");
            None
        };
        let warm_start = kv.take_str("warm_start").filter(|s| !s.is_empty()).map(PathBuf::from);
        kv.finish()?;

        let cfg = ExperimentConfig {
            name,
            seed,
            rounds,
            eval_every,
            cohort: CohortConfig { population, report_goal, timer_rounds, availability },
            training,
            clip,
            model,
            data,
            secagg_scale,
            warm_start,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Field-level checks, run before any work starts.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(key, format!("must be positive and finite, got {v}")))
            }
        };
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(config_err("name", "must be a plain directory name"));
        }
        if self.rounds == 0 {
            return Err(config_err("rounds", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(config_err("eval_every", "must be at least 1"));
        }
        self.cohort.validate().map_err(|e| config_err("cohort", e.to_string()))?;
        positive("training.client_lr", self.training.client_lr)?;
        positive("training.server_lr", self.training.server_lr)?;
        if self.training.batch_size == 0 || self.training.local_epochs == 0 {
            return Err(config_err("training", "batch_size and local_epochs must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.training.momentum) {
            return Err(config_err("training.momentum", "must be in [0, 1)"));
        }
        let z = self.training.noise_multiplier;
        if !(z >= 0.0) || !z.is_finite() {
            return Err(config_err("dp.noise_multiplier", format!("must be finite and >= 0, got {z}")));
        }
        match &self.clip {
            ClipSpec::Fixed { norm } => {
                if !(*norm > 0.0) {
                    return Err(config_err("clip.norm", format!("must be positive, got {norm}")));
                }
                if norm.is_infinite() && z > 0.0 {
                    return Err(config_err("clip.norm", "an unbounded clip needs dp.noise_multiplier = 0"));
                }
            }
            ClipSpec::Adaptive { sigma_b_fraction, .. } => {
                self.clip_config().unwrap().validate().map_err(|e| config_err("clip", e.to_string()))?;
                positive("clip.sigma_b_fraction", *sigma_b_fraction)?;
                if self.secagg_scale.is_some() {
                    return Err(config_err("secagg.enabled", "SecAgg runs need clip.mode = fixed"));
                }
            }
        }
        if let Some(s) = self.secagg_scale {
            positive("secagg.scale", s)?;
            if let ClipSpec::Fixed { norm } = self.clip {
                if norm.is_infinite() {
                    return Err(config_err("clip.norm", "SecAgg needs a finite clip"));
                }
            }
        }
        match self.model {
            ModelSpec::NextToken { vocab, context } => {
                if vocab < 2 || context == 0 {
                    return Err(config_err("model", "next-token model needs vocab >= 2 and context >= 1"));
                }
            }
            ModelSpec::Logistic { features, classes } => {
                if features == 0 || classes < 2 {
                    return Err(config_err("model", "logistic model needs features >= 1 and classes >= 2"));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.data.heterogeneity) {
            return Err(config_err("data.heterogeneity", "must be in [0, 1]"));
        }
        if self.data.examples_per_client < 2 {
            return Err(config_err("data.examples_per_client", "must be at least 2"));
        }
        if self.data.eval_clients == 0 {
            return Err(config_err("data.eval_clients", "must be at least 1"));
        }
        Ok(())
    }

    /// Count-tree stddev `σ_b`, for adaptive runs.
    pub fn sigma_b(&self) -> Option<f64> {
        match self.clip {
            ClipSpec::Adaptive { sigma_b_fraction, .. } => Some(sigma_b_fraction * self.cohort.report_goal as f64),
            ClipSpec::Fixed { .. } => None,
        }
    }

    pub fn clip_config(&self) -> Option<ClipConfig> {
        match self.clip {
            ClipSpec::Adaptive { initial, initial_active, gamma, eta_gamma, .. } => Some(ClipConfig {
                initial,
                initial_active,
                gamma,
                eta_gamma,
                sigma_b: self.sigma_b().unwrap_or(0.0),
            }),
            ClipSpec::Fixed { .. } => None,
        }
    }

    /// Every field, resolved defaults included, in a fixed order. Parsing this
    /// text gives back the same config.
    pub fn canonical(&self) -> String {
        let mut lines = vec![
            format!("name = {}", self.name),
            format!("seed = {}", self.seed),
            format!("rounds = {}", self.rounds),
            format!("eval_every = {}", self.eval_every),
            format!("cohort.population = {}", self.cohort.population),
            format!("cohort.report_goal = {}", self.cohort.report_goal),
            format!("cohort.timer_rounds = {}", self.cohort.timer_rounds),
        ];
        match self.cohort.availability {
            Availability::Uniform => lines.push("cohort.availability = uniform".into()),
            Availability::Diurnal { period, amplitude } => {
                lines.push("cohort.availability = diurnal".into());
                lines.push(format!("cohort.diurnal_period = {period:?}"));
                lines.push(format!("cohort.diurnal_amplitude = {amplitude:?}"));
            }
        }
        let t = &self.training;
        lines.extend([
            format!("training.client_lr = {:?}", t.client_lr),
            format!("training.batch_size = {}", t.batch_size),
            format!("training.local_epochs = {}", t.local_epochs),
            format!("training.server_lr = {:?}", t.server_lr),
            format!("training.momentum = {:?}", t.momentum),
            format!("dp.noise_multiplier = {:?}", t.noise_multiplier),
            format!("dp.restarts = {}", restarts_to_string(&t.restarts)),
        ]);
        match self.clip {
            ClipSpec::Fixed { norm } => {
                lines.push("clip.mode = fixed".into());
                lines.push(if norm.is_infinite() { "clip.norm = inf".into() } else { format!("clip.norm = {norm:?}") });
            }
            ClipSpec::Adaptive { initial, initial_active, gamma, eta_gamma, sigma_b_fraction } => {
                lines.push("clip.mode = adaptive".into());
                lines.push(format!("clip.C0 = {initial:?}"));
                lines.push(format!("clip.initial_active = {initial_active:?}"));
                lines.push(format!("clip.gamma = {gamma:?}"));
                lines.push(format!("clip.eta_gamma = {eta_gamma:?}"));
                lines.push(format!("clip.sigma_b_fraction = {sigma_b_fraction:?}"));
            }
        }
        match self.model {
            ModelSpec::NextToken { vocab, context } => {
                lines.push("model.kind = next_token".into());
                lines.push(format!("model.vocab = {vocab}"));
                lines.push(format!("model.context = {context}"));
            }
            ModelSpec::Logistic { features, classes } => {
                lines.push("model.kind = logistic".into());
                lines.push(format!("model.features = {features}"));
                lines.push(format!("model.classes = {classes}"));
            }
        }
        let d = &self.data;
        lines.extend([
            format!("data.language_seed = {}", d.language_seed),
            format!("data.population_seed = {}", d.population_seed),
            format!("data.heterogeneity = {:?}", d.heterogeneity),
            format!("data.examples_per_client = {}", d.examples_per_client),
            format!("data.eval_clients = {}", d.eval_clients),
        ]);
        match self.secagg_scale {
            Some(s) => {
                lines.push("secagg.enabled = true".into());
                lines.push(format!("secagg.scale = {s:?}"));
            }
            None => lines.push("secagg.enabled = false".into()),
        }
        if let Some(ws) = &self.warm_start {
            lines.push(format!("warm_start = {}", ws.display()));
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// Hex SHA-256 of [`Self::canonical`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
        # desk-scale run
        name = demo
        seed = 3
        rounds = 50
        cohort.population = 500
        cohort.report_goal = 20
        cohort.timer_hours = 48   # two days
        cohort.rounds_per_day = 5
        clip.mode = adaptive
        clip.C0 = 0.5
        dp.noise_multiplier = 1.5
        model.vocab = 12
    ";

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.name, "demo");
        assert_eq!(cfg.cohort.timer_rounds, 10);
        assert_eq!(cfg.training.batch_size, 16);
        assert_eq!(cfg.training.local_epochs, 1);
        assert_eq!(cfg.sigma_b(), Some(1.0));
        assert_eq!(cfg.model.dim(), 156);
        assert_eq!(cfg.data.population_seed, 3);
        // Default adaptive schedule within 50 rounds is empty.
        assert!(cfg.training.restarts.is_empty());
    }

    #[test]
    fn canonical_round_trips() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        let again = ExperimentConfig::parse(&cfg.canonical()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
    }

    #[test]
    fn any_field_change_changes_hash() {
        let base = ExperimentConfig::parse(SAMPLE).unwrap();
        for line in base.canonical().lines() {
            let (key, _) = line.split_once(" = ").unwrap();
            let mutated: String = base
                .canonical()
                .lines()
                .map(|l| {
                    if l == line {
                        let v = l.split_once(" = ").unwrap().1;
                        let new = match v {
                            "true" => "false".to_string(),
                            "false" => "true".to_string(),
                            "adaptive" => "fixed".to_string(),
                            "uniform" => "diurnal".to_string(),
                            "next_token" => "logistic".to_string(),
                            "none" => "7".to_string(),
                            _ if v.parse::<f64>().is_ok() => {
                                let x: f64 = v.parse().unwrap();
                                if x < 1.0 && x > 0.0 { format!("{:?}", x / 2.0) } else { format!("{}", x + 1.0) }
                            }
                            _ => format!("{v}x"),
                        };
                        format!("{key} = {new}")
                    } else {
                        l.to_string()
                    }
                })
                .collect::<Vec<_>>()
                .join("\n");
            if let Ok(cfg) = ExperimentConfig::parse(&mutated) {
                assert_ne!(cfg.hash(), base.hash(), "changing {key}");
            }
        }
    }

    #[test]
    fn field_level_errors() {
        let err = |text: &str| ExperimentConfig::parse(text).unwrap_err().to_string();
        assert!(err("bogus = 1").contains("bogus"));
        assert!(err("rounds = ten").contains("rounds"));
        assert!(err("rounds = 1\nrounds = 2").contains("more than once"));
        assert!(err("cohort.report_goal = 0").contains("cohort"));
        assert!(err("clip.mode = adaptive\nsecagg.enabled = true").contains("secagg.enabled"));
        assert!(err("clip.norm = inf\ndp.noise_multiplier = 1").contains("clip.norm"));
        assert!(err("cohort.timer_hours = 24").contains("rounds_per_day"));
        assert!(err("dp.restarts = 0").contains("dp.restarts"));
        assert!(err("clip.mode = adaptive\nclip.gamma = 2").contains("clip"));
        assert!(err("name = a/b").contains("name"));
        assert!(err("just text").contains("line 1"));
    }

    #[test]
    fn restart_forms() {
        let cfg = ExperimentConfig::parse("rounds = 100\ndp.restarts = periodic:10:30").unwrap();
        assert_eq!(cfg.training.restarts.rounds().collect::<Vec<_>>(), vec![10, 40, 70]);
        let cfg = ExperimentConfig::parse("dp.restarts = 5, 9").unwrap();
        assert_eq!(cfg.training.restarts.rounds().collect::<Vec<_>>(), vec![5, 9]);
        let cfg = ExperimentConfig::parse("rounds = 2000\nclip.mode = adaptive").unwrap();
        assert_eq!(cfg.training.restarts.rounds().collect::<Vec<_>>(), vec![128, 1152]);
    }

    #[test]
    fn lists_accept_exponents() {
        let mut kv = KeyValues::parse("p = 1e6, 3000000").unwrap();
        assert_eq!(kv.take_list::<u64>("p").unwrap(), Some(vec![1_000_000, 3_000_000]));
        kv.finish().unwrap();
    }
}
