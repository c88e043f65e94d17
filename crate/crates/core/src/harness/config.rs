//! Flat `key = value` experiment configuration.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::acer::AcerConfig;
use crate::dqn::DqnConfig;
use crate::env::DomainSpec;
use crate::expert::ExpertThresholds;
use crate::exploration::{ExplorationSchedule, ExploreMode};
use crate::guidance::{GuidanceKind, GuidanceMode};
use crate::nn::{HeadKind, NetworkSpec, DEFAULT_DROPOUT, DEFAULT_HIDDEN};
use crate::replay::{DEFAULT_BATCH, DEFAULT_CAPACITY};

pub const SEED_ENV: &str = "DILUTE_RL_SEED";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: cannot parse `{value}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing required config key `{0}`")]
    Missing(&'static str),
    #[error("config key `{key}`: {reason}")]
    OutOfRange { key: &'static str, reason: String },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Hdc,
    StocDqn,
    StocAcer,
    HardDqn,
}

impl Algorithm {
    pub fn head_kind(self) -> Option<HeadKind> {
        match self {
            Algorithm::Hdc => None,
            Algorithm::StocDqn | Algorithm::HardDqn => Some(HeadKind::DuelingQ),
            Algorithm::StocAcer => Some(HeadKind::ActorCritic),
        }
    }

    pub fn default_explore_mode(self) -> ExploreMode {
        match self {
            Algorithm::HardDqn => ExploreMode::EpsGreedy,
            _ => ExploreMode::EpsBoltzmann,
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hdc" => Ok(Self::Hdc),
            "stoc-dqn" => Ok(Self::StocDqn),
            "stoc-acer" => Ok(Self::StocAcer),
            "hard-dqn" => Ok(Self::HardDqn),
            other => Err(format!("unknown algorithm `{other}` (hdc, stoc-dqn, stoc-acer, hard-dqn)")),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hdc => "hdc",
            Self::StocDqn => "stoc-dqn",
            Self::StocAcer => "stoc-acer",
            Self::HardDqn => "hard-dqn",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub domain: DomainSpec,
    pub ser: f64,
    pub seeds: Vec<u64>,
    pub train_dialogues: usize,
    pub eval_dialogues: usize,
    pub checkpoint_every: usize,
    pub guidance: GuidanceMode,
    /// `None` means the algorithm's own mode.
    pub explore_mode: Option<ExploreMode>,
    pub schedule: ExplorationSchedule,
    pub eval_eps: f64,
    pub expert: ExpertThresholds,
    pub dqn: DqnConfig,
    pub acer: AcerConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub trace: bool,
}

impl ExperimentConfig {
    pub fn new(algorithm: Algorithm, domain: DomainSpec) -> Self {
        Self {
            algorithm,
            domain,
            ser: 0.0,
            seeds: (0..5).collect(),
            train_dialogues: 1_000,
            eval_dialogues: 1_000,
            checkpoint_every: 1_000,
            guidance: GuidanceMode::default(),
            explore_mode: None,
            schedule: ExplorationSchedule::default(),
            eval_eps: 0.05,
            expert: ExpertThresholds::default(),
            dqn: DqnConfig::default(),
            acer: AcerConfig::default(),
            learning_rate: 1e-4,
            batch_size: DEFAULT_BATCH,
            gamma: 0.9,
            buffer_capacity: DEFAULT_CAPACITY,
            hidden: DEFAULT_HIDDEN.to_vec(),
            dropout: DEFAULT_DROPOUT,
            trace: false,
        }
    }

    /// Short name used in result tables, e.g. `stoc-dqn-bc`.
    pub fn label(&self) -> String {
        match self.guidance.kind {
            GuidanceKind::None => self.algorithm.to_string(),
            kind => format!("{}-{kind}", self.algorithm),
        }
    }

    /// Exploration schedule with the effective mode filled in.
    pub fn effective_schedule(&self) -> ExplorationSchedule {
        ExplorationSchedule {
            mode: self.explore_mode.unwrap_or_else(|| self.algorithm.default_explore_mode()),
            ..self.schedule.clone()
        }
    }

    /// Frozen-policy schedule: epsilon pinned at `eval_eps`.
    pub fn eval_schedule(&self) -> ExplorationSchedule {
        ExplorationSchedule {
            eps_start: self.eval_eps,
            eps_end: self.eval_eps,
            ..self.effective_schedule()
        }
    }

    pub fn network_spec(&self) -> Option<NetworkSpec> {
        self.algorithm.head_kind().map(|kind| {
            NetworkSpec::new(self.domain.belief_dim(), self.domain.n_actions(), kind)
                .with_hidden(self.hidden.clone())
                .with_dropout(self.dropout)
        })
    }

    pub fn dqn_config(&self) -> DqnConfig {
        DqnConfig {
            gamma: self.gamma,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            ..self.dqn.clone()
        }
    }

    pub fn acer_config(&self) -> AcerConfig {
        AcerConfig {
            gamma: self.gamma,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            ..self.acer.clone()
        }
    }

    /// Dialogue indices (1-based counts) at which checkpoints are taken.
    pub fn checkpoint_indices(&self) -> Vec<usize> {
        (1..=self.train_dialogues / self.checkpoint_every)
            .map(|k| k * self.checkpoint_every)
            .collect()
    }

    /// Replaces the seed list with `DILUTE_RL_SEED` when it is set.
    pub fn apply_seed_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v.trim().parse::<u64>().map_err(|e| ConfigError::BadValue {
                key: SEED_ENV.into(),
                value: v.clone(),
                reason: e.to_string(),
            })?;
            self.seeds = vec![seed];
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let range = |key: &'static str, reason: String| Err(ConfigError::OutOfRange { key, reason });
        if !(0.0..1.0).contains(&self.ser) {
            return range("ser", format!("{} outside [0, 1)", self.ser));
        }
        if self.seeds.is_empty() {
            return range("seeds", "at least one seed needed".into());
        }
        for (key, v) in [
            ("train_dialogues", self.train_dialogues),
            ("eval_dialogues", self.eval_dialogues),
            ("checkpoint_every", self.checkpoint_every),
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("dqn.sync_period", self.dqn.sync_period),
        ] {
            if v == 0 {
                return range(key, "must be positive".into());
            }
        }
        if self.checkpoint_every > self.train_dialogues {
            return range("checkpoint_every", "larger than train_dialogues".into());
        }
        if self.buffer_capacity < crate::env::MAX_TURNS {
            return range("buffer_capacity", "must hold at least one full dialogue".into());
        }
        if let Err(e) = self.guidance.validate() {
            return range("guidance.beta", e.to_string());
        }
        if self.algorithm == Algorithm::Hdc && self.guidance.kind != GuidanceKind::None {
            return range("guidance.mode", "the handcrafted policy takes no guidance".into());
        }
        if let Err(e) = self.effective_schedule().validate() {
            return range("explore", e.to_string());
        }
        if !(0.0..=1.0).contains(&self.eval_eps) {
            return range("explore.eval_eps", format!("{} outside [0, 1]", self.eval_eps));
        }
        if let Err(e) = self.expert.validate() {
            return range("expert", e);
        }
        if !(self.learning_rate > 0.0) {
            return range("learning_rate", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return range("gamma", format!("{} outside [0, 1]", self.gamma));
        }
        if let Err(e) = self.acer_config().validate() {
            return range("acer", e.to_string());
        }
        if let Some(spec) = self.network_spec() {
            if let Err(e) = spec.validate() {
                return range("net", e.to_string());
            }
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.parse::<T>().map_err(|e| ConfigError::BadValue {
                key: key.into(),
                value: value.into(),
                reason: e.to_string(),
            })
        }
        fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse(key, s))
                .collect()
        }

        match key {
            "algorithm" => self.algorithm = parse(key, value)?,
            "domain" => {
                self.domain = DomainSpec::preset(value).ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    reason: "expected CR, SFR or LAP".into(),
                })?
            }
            "ser" => self.ser = parse(key, value)?,
            "seeds" => self.seeds = list(key, value)?,
            "train_dialogues" => self.train_dialogues = parse(key, value)?,
            "eval_dialogues" => self.eval_dialogues = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "guidance.mode" => self.guidance.kind = parse(key, value)?,
            "guidance.beta" => self.guidance.beta = parse(key, value)?,
            "explore.mode" => {
                self.explore_mode = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "explore.eps_start" => self.schedule.eps_start = parse(key, value)?,
            "explore.eps_end" => self.schedule.eps_end = parse(key, value)?,
            "explore.decay_horizon" => self.schedule.decay_horizon = parse(key, value)?,
            "explore.tau" => self.schedule.tau = parse(key, value)?,
            "explore.eval_eps" => self.eval_eps = parse(key, value)?,
            "expert.theta_known" => self.expert.theta_known = parse(key, value)?,
            "expert.theta_confirm" => self.expert.theta_confirm = parse(key, value)?,
            "dqn.sync_period" => self.dqn.sync_period = parse(key, value)?,
            "acer.lambda" => self.acer.lambda = parse(key, value)?,
            "acer.c" => self.acer.c = parse(key, value)?,
            "acer.delta" => self.acer.delta = parse(key, value)?,
            "acer.avg_rate" => self.acer.avg_rate = parse(key, value)?,
            "acer.entropy_coef" => self.acer.entropy_coef = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse(key, value)?,
            "net.hidden" => self.hidden = list(key, value)?,
            "net.dropout" => self.dropout = parse(key, value)?,
            "trace" => self.trace = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Parses config text, then applies `overrides` (`key=value`) in order.
    /// `algorithm` and `domain` must appear in one of the two.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.into(),
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: 0,
                text: o.clone(),
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }

        let find = |key: &'static str| {
            pairs
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .ok_or(ConfigError::Missing(key))
        };
        let mut config = ExperimentConfig::new(Algorithm::Hdc, DomainSpec::cambridge_restaurants());
        config.set("algorithm", &find("algorithm")?)?;
        config.set("domain", &find("domain")?)?;
        for (k, v) in &pairs {
            config.set(k, v)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text, overrides)
    }

    /// Every key with its effective value; parses back to an equal config.
    pub fn echo(&self) -> String {
        let join = |xs: &[String]| xs.join(",");
        let lines: Vec<(&str, String)> = vec![
            ("algorithm", self.algorithm.to_string()),
            ("domain", self.domain.name.clone()),
            ("ser", self.ser.to_string()),
            ("seeds", join(&self.seeds.iter().map(u64::to_string).collect::<Vec<_>>())),
            ("train_dialogues", self.train_dialogues.to_string()),
            ("eval_dialogues", self.eval_dialogues.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("guidance.mode", self.guidance.kind.to_string()),
            ("guidance.beta", self.guidance.beta.to_string()),
            (
                "explore.mode",
                self.explore_mode.map_or_else(|| "auto".to_string(), |m| m.to_string()),
            ),
            ("explore.eps_start", self.schedule.eps_start.to_string()),
            ("explore.eps_end", self.schedule.eps_end.to_string()),
            ("explore.decay_horizon", self.schedule.decay_horizon.to_string()),
            ("explore.tau", self.schedule.tau.to_string()),
            ("explore.eval_eps", self.eval_eps.to_string()),
            ("expert.theta_known", self.expert.theta_known.to_string()),
            ("expert.theta_confirm", self.expert.theta_confirm.to_string()),
            ("dqn.sync_period", self.dqn.sync_period.to_string()),
            ("acer.lambda", self.acer.lambda.to_string()),
            ("acer.c", self.acer.c.to_string()),
            ("acer.delta", self.acer.delta.to_string()),
            ("acer.avg_rate", self.acer.avg_rate.to_string()),
            ("acer.entropy_coef", self.acer.entropy_coef.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("gamma", self.gamma.to_string()),
            ("buffer_capacity", self.buffer_capacity.to_string()),
            ("net.hidden", join(&self.hidden.iter().map(usize::to_string).collect::<Vec<_>>())),
            ("net.dropout", self.dropout.to_string()),
            ("trace", self.trace.to_string()),
        ];
        lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
