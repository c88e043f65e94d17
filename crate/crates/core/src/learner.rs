//! Common error type and a tagged union over the two learner families.

use rand::Rng;
use thiserror::Error;

use crate::acer::{act_acer, acer_train_step, AcerLearner};
use crate::dqn::{act_dqn, dqn_train_step, DqnLearner};
use crate::exploration::{behaviour_probs, ExplorationSchedule, ExploreError};
use crate::nn::{forward_actor_critic, forward_dueling, HeadKind, Mode, NnError, ParameterSet};
use crate::replay::{ReplayBuffer, ReplayError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("replay buffer not ready")]
    NotReady,
    #[error("data integrity: {0}")]
    DataIntegrity(String),
    #[error("invalid learner config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
}

impl From<ReplayError> for TrainError {
    fn from(e: ReplayError) -> Self {
        match e {
            ReplayError::NotReady => TrainError::NotReady,
            other => TrainError::DataIntegrity(other.to_string()),
        }
    }
}

/// Scalar summary of one training iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub loss: f64,
    pub policy_objective: f64,
    pub mean_rho: f64,
    pub kl: f64,
    /// Largest `k . z` seen across projected steps.
    pub max_constraint: f64,
}

pub enum Learner {
    Dqn(DqnLearner),
    Acer(AcerLearner),
}

impl Learner {
    pub fn act(
        &self,
        belief: &[f64],
        schedule: &ExplorationSchedule,
        dialogue_index: usize,
        rng: &mut impl Rng,
    ) -> Result<(usize, Vec<f64>), TrainError> {
        match self {
            Learner::Dqn(l) => act_dqn(l, belief, schedule, dialogue_index, rng),
            Learner::Acer(l) => act_acer(l, belief, schedule, dialogue_index, rng),
        }
    }

    pub fn train_step(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut impl Rng,
    ) -> Result<StepReport, TrainError> {
        match self {
            Learner::Dqn(l) => dqn_train_step(l, buffer, rng),
            Learner::Acer(l) => acer_train_step(l, buffer, rng),
        }
    }

    /// Network used for acting; what gets checkpointed.
    pub fn online(&self) -> &ParameterSet {
        match self {
            Learner::Dqn(l) => &l.online,
            Learner::Acer(l) => &l.online,
        }
    }
}

/// Exploration distribution of a network at exploration level `eps`: built on
/// `Q` for a dueling network, on the policy head for an actor-critic.
pub fn network_behaviour(
    params: &ParameterSet,
    belief: &[f64],
    schedule: &ExplorationSchedule,
    eps: f64,
) -> Result<Vec<f64>, TrainError> {
    let mu = match params.spec().head_kind {
        HeadKind::DuelingQ => {
            let out = forward_dueling(params, belief, Mode::Eval)?;
            behaviour_probs(schedule, &out.q, None, eps)?
        }
        HeadKind::ActorCritic => {
            let out = forward_actor_critic(params, belief, Mode::Eval)?;
            behaviour_probs(schedule, &out.policy, Some(&out.policy), eps)?
        }
    };
    Ok(mu)
}
