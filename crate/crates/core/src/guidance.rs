//! Mixing the handcrafted expert into data collection, either as whole
//! demonstration dialogues or as per-turn action substitutions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exploration::one_hot;

#[derive(Debug, Error, PartialEq)]
pub enum GuidanceError {
    #[error("{op} requires guidance mode {expected}, found {found}")]
    WrongMode {
        op: &'static str,
        expected: GuidanceKind,
        found: GuidanceKind,
    },
    #[error("beta {0} outside [0, 1]")]
    BadBeta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuidanceKind {
    None,
    Demonstrations,
    Feedbacks,
}

impl FromStr for GuidanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "bc" => Ok(Self::Demonstrations),
            "fb" => Ok(Self::Feedbacks),
            other => Err(format!("unknown guidance mode `{other}` (none, bc, fb)")),
        }
    }
}

impl fmt::Display for GuidanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Demonstrations => "bc",
            Self::Feedbacks => "fb",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceMode {
    pub kind: GuidanceKind,
    /// Probability that the agent, not the expert, is in control.
    pub beta: f64,
}

impl Default for GuidanceMode {
    fn default() -> Self {
        Self {
            kind: GuidanceKind::None,
            beta: 0.5,
        }
    }
}

impl GuidanceMode {
    pub fn new(kind: GuidanceKind, beta: f64) -> Result<Self, GuidanceError> {
        let mode = Self { kind, beta };
        mode.validate()?;
        Ok(mode)
    }

    pub fn validate(&self) -> Result<(), GuidanceError> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(GuidanceError::BadBeta(self.beta));
        }
        Ok(())
    }

    fn require(&self, op: &'static str, expected: GuidanceKind) -> Result<(), GuidanceError> {
        if self.kind != expected {
            return Err(GuidanceError::WrongMode {
                op,
                expected,
                found: self.kind,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Controller {
    Agent,
    Expert,
}

fn bernoulli_agent(beta: f64, rng: &mut impl Rng) -> Controller {
    if rng.random::<f64>() < beta {
        Controller::Agent
    } else {
        Controller::Expert
    }
}

/// Who plays the whole next dialogue.
pub fn select_episode_controller(mode: &GuidanceMode, rng: &mut impl Rng) -> Result<Controller, GuidanceError> {
    mode.require("select_episode_controller", GuidanceKind::Demonstrations)?;
    Ok(bernoulli_agent(mode.beta, rng))
}

/// Who picks the next turn's action.
pub fn select_turn_controller(mode: &GuidanceMode, rng: &mut impl Rng) -> Result<Controller, GuidanceError> {
    mode.require("select_turn_controller", GuidanceKind::Feedbacks)?;
    Ok(bernoulli_agent(mode.beta, rng))
}

/// Distribution that actually generated a stored action.
///
/// Feedbacks: `beta * agent_mu + (1 - beta) * onehot(expert)`. Demonstration
/// episodes played by the expert: `onehot(expert)`. Otherwise `agent_mu`.
pub fn behavior_probs_with_expert(
    agent_mu: &[f64],
    expert_action: usize,
    mode: &GuidanceMode,
    controller: Controller,
) -> Vec<f64> {
    match (mode.kind, controller) {
        (GuidanceKind::Feedbacks, _) => agent_mu
            .iter()
            .enumerate()
            .map(|(a, &p)| {
                let e = if a == expert_action { 1.0 } else { 0.0 };
                mode.beta * p + (1.0 - mode.beta) * e
            })
            .collect(),
        (GuidanceKind::Demonstrations, Controller::Expert) => one_hot(agent_mu.len(), expert_action),
        _ => agent_mu.to_vec(),
    }
}
