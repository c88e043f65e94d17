//! Action selection: greedy, epsilon-greedy, Boltzmann and the epsilon-Boltzmann
//! mixture, plus the exact behaviour distribution each strategy samples from.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::argmax;

#[derive(Debug, Error, PartialEq)]
pub enum ExploreError {
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("malformed probability vector: {0}")]
    BadProbabilities(String),
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExploreMode {
    Greedy,
    EpsGreedy,
    Boltzmann,
    EpsBoltzmann,
}

impl FromStr for ExploreMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "eps-greedy" => Ok(Self::EpsGreedy),
            "boltzmann" => Ok(Self::Boltzmann),
            "eps-boltzmann" => Ok(Self::EpsBoltzmann),
            other => Err(format!(
                "unknown exploration mode `{other}` (greedy, eps-greedy, boltzmann, eps-boltzmann)"
            )),
        }
    }
}

impl fmt::Display for ExploreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Greedy => "greedy",
            Self::EpsGreedy => "eps-greedy",
            Self::Boltzmann => "boltzmann",
            Self::EpsBoltzmann => "eps-boltzmann",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    /// Training dialogues over which epsilon decays linearly.
    pub decay_horizon: usize,
    pub tau: f64,
    pub mode: ExploreMode,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self {
            eps_start: 0.55,
            eps_end: 0.05,
            decay_horizon: 1_000,
            tau: 100.0,
            mode: ExploreMode::EpsBoltzmann,
        }
    }
}

impl ExplorationSchedule {
    pub fn validate(&self) -> Result<(), ExploreError> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(ExploreError::BadTemperature(self.tau));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.eps_start) || !unit.contains(&self.eps_end) || self.eps_end > self.eps_start {
            return Err(ExploreError::BadSchedule(format!(
                "need 0 <= eps_end ({}) <= eps_start ({}) <= 1",
                self.eps_end, self.eps_start
            )));
        }
        Ok(())
    }

    /// Epsilon used at test time, once the schedule has fully decayed.
    pub fn eval_epsilon(&self) -> f64 {
        self.eps_end
    }
}

/// Linear decay from `eps_start` at dialogue 0 to `eps_end` at the horizon,
/// constant afterwards.
pub fn epsilon_at(schedule: &ExplorationSchedule, dialogue_index: usize) -> f64 {
    if schedule.decay_horizon == 0 || dialogue_index >= schedule.decay_horizon {
        return schedule.eps_end;
    }
    let frac = dialogue_index as f64 / schedule.decay_horizon as f64;
    schedule.eps_start + (schedule.eps_end - schedule.eps_start) * frac
}

/// `softmax(scores / tau)` with max subtraction.
pub fn boltzmann_probs(scores: &[f64], tau: f64) -> Result<Vec<f64>, ExploreError> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(ExploreError::BadTemperature(tau));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&s| ((s - max) / tau).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    Ok(out)
}

/// `(1 - eps) * policy + eps * uniform`.
pub fn mixture_probs(policy: &[f64], eps: f64) -> Vec<f64> {
    let uniform = eps / policy.len() as f64;
    policy.iter().map(|&p| (1.0 - eps) * p + uniform).collect()
}

pub fn one_hot(n: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[index] = 1.0;
    v
}

/// Behaviour distribution for the given mode.
///
/// `scores` are Q-values when `policy` is `None` (value-based learners) and are
/// then turned into a Boltzmann policy; an actor-critic passes its policy head
/// output directly and the temperature is not used.
pub fn behaviour_probs(
    schedule: &ExplorationSchedule,
    scores: &[f64],
    policy: Option<&[f64]>,
    eps: f64,
) -> Result<Vec<f64>, ExploreError> {
    let n = scores.len();
    let probs = match schedule.mode {
        ExploreMode::Greedy => one_hot(n, argmax(policy.unwrap_or(scores))),
        ExploreMode::EpsGreedy => mixture_probs(&one_hot(n, argmax(policy.unwrap_or(scores))), eps),
        ExploreMode::Boltzmann => match policy {
            Some(p) => p.to_vec(),
            None => boltzmann_probs(scores, schedule.tau)?,
        },
        ExploreMode::EpsBoltzmann => {
            let pi = match policy {
                Some(p) => p.to_vec(),
                None => boltzmann_probs(scores, schedule.tau)?,
            };
            mixture_probs(&pi, eps)
        }
    };
    Ok(probs)
}

/// Categorical draw by inverse CDF.
pub fn sample_action(probs: &[f64], rng: &mut impl Rng) -> Result<usize, ExploreError> {
    if probs.is_empty() {
        return Err(ExploreError::BadProbabilities("empty".into()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(ExploreError::BadProbabilities(format!("{probs:?}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(ExploreError::BadProbabilities(format!("sums to {total}")));
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return Ok(i);
            }
        }
    }
    Ok(last_positive)
}
