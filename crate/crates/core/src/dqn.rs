//! Double dueling DQN over the replay buffer.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::exploration::{epsilon_at, sample_action, ExplorationSchedule};
use crate::learner::{network_behaviour, StepReport, TrainError};
use crate::nn::{
    adam_step, argmax, dueling_cotangent, dueling_q, forward_dueling, stack_rows, AdamState,
    GradientVector, HeadKind, Mode, NetworkSpec, ParameterSet, Tape,
};
use crate::replay::{ReplayBuffer, Transition, DEFAULT_BATCH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub gamma: f64,
    /// Training iterations between hard target copies.
    pub sync_period: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            sync_period: 100,
            batch_size: DEFAULT_BATCH,
            learning_rate: 1e-4,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(TrainError::InvalidConfig(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.sync_period == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("sync_period and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DqnLearner {
    pub online: ParameterSet,
    pub target: ParameterSet,
    pub adam: AdamState,
    pub iterations_since_sync: usize,
    pub config: DqnConfig,
}

impl DqnLearner {
    pub fn new(spec: NetworkSpec, config: DqnConfig, rng: &mut dyn RngCore) -> Result<Self, TrainError> {
        let online = ParameterSet::init(spec, rng)?;
        Self::from_online(online, config)
    }

    /// Target starts as a copy of `online`.
    pub fn from_online(online: ParameterSet, config: DqnConfig) -> Result<Self, TrainError> {
        config.validate()?;
        if online.spec().head_kind != HeadKind::DuelingQ {
            return Err(TrainError::InvalidConfig("DQN needs a dueling network".into()));
        }
        Ok(Self {
            target: online.clone(),
            adam: AdamState::new(online.len(), config.learning_rate),
            online,
            iterations_since_sync: 0,
            config,
        })
    }
}

/// `r + gamma * Q_target(b', argmax_a Q_online(b', a))`, or `r` at a terminal step.
pub fn double_q_target(t: &Transition, learner: &DqnLearner) -> Result<f64, TrainError> {
    if t.done {
        return Ok(t.reward);
    }
    let on = forward_dueling(&learner.online, &t.next_belief, Mode::Eval)?;
    let tg = forward_dueling(&learner.target, &t.next_belief, Mode::Eval)?;
    Ok(t.reward + learner.config.gamma * tg.q[argmax(&on.q)])
}

fn batch_targets(learner: &DqnLearner, batch: &[&Transition]) -> Result<Vec<f64>, TrainError> {
    let width = learner.online.spec().input_dim;
    let next = stack_rows(batch.iter().map(|t| t.next_belief.as_slice()), width);
    let on = learner.online.forward(next.view(), Mode::Eval, None)?;
    let tg = learner.target.forward(next.view(), Mode::Eval, None)?;
    let q_on = dueling_q(on.heads[0].view(), on.heads[1].view());
    let q_tg = dueling_q(tg.heads[0].view(), tg.heads[1].view());
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.done {
                t.reward
            } else {
                let a = argmax(q_on.row(i).as_slice().expect("contiguous"));
                t.reward + learner.config.gamma * q_tg[[i, a]]
            }
        })
        .collect())
}

/// Mean squared error between `targets` and `Q(b, a)` plus its exact gradient.
/// Targets are constants.
pub fn dqn_loss_grad(
    online: &ParameterSet,
    beliefs: ArrayView2<'_, f64>,
    actions: &[usize],
    targets: &[f64],
    mode: Mode<'_>,
) -> Result<(f64, GradientVector), TrainError> {
    let n = beliefs.nrows();
    let mut tape = Tape::default();
    let out = online.forward(beliefs, mode, Some(&mut tape))?;
    let q = dueling_q(out.heads[0].view(), out.heads[1].view());
    let mut dq = Array2::<f64>::zeros(q.dim());
    let mut loss = 0.0;
    for i in 0..n {
        let err = q[[i, actions[i]]] - targets[i];
        loss += err * err;
        dq[[i, actions[i]]] = 2.0 * err / n as f64;
    }
    let grad = online.backprop(&tape, &dueling_cotangent(&dq))?;
    Ok((loss / n as f64, grad))
}

/// Loss only, no dropout.
pub fn dqn_loss(
    online: &ParameterSet,
    beliefs: ArrayView2<'_, f64>,
    actions: &[usize],
    targets: &[f64],
) -> Result<f64, TrainError> {
    let out = online.forward(beliefs, Mode::Eval, None)?;
    let q = dueling_q(out.heads[0].view(), out.heads[1].view());
    let n = beliefs.nrows();
    Ok((0..n).map(|i| (q[[i, actions[i]]] - targets[i]).powi(2)).sum::<f64>() / n as f64)
}

/// One iteration: sample a batch, fit the double-Q targets, one Adam step,
/// hard-copy the target network every `sync_period` iterations.
pub fn dqn_train_step<R: Rng>(
    learner: &mut DqnLearner,
    buffer: &ReplayBuffer,
    rng: &mut R,
) -> Result<StepReport, TrainError> {
    let batch = buffer.sample_transitions(learner.config.batch_size, rng)?;
    let targets = batch_targets(learner, &batch)?;
    let width = learner.online.spec().input_dim;
    let beliefs = stack_rows(batch.iter().map(|t| t.belief.as_slice()), width);
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let (loss, grad) = dqn_loss_grad(
        &learner.online,
        beliefs.view(),
        &actions,
        &targets,
        Mode::Train(rng),
    )?;
    adam_step(&mut learner.online, &mut learner.adam, &grad)?;
    learner.iterations_since_sync += 1;
    if learner.iterations_since_sync >= learner.config.sync_period {
        learner.target.copy_from(&learner.online)?;
        learner.iterations_since_sync = 0;
    }
    Ok(StepReport {
        loss,
        ..StepReport::default()
    })
}

/// Samples an action from the exploration distribution built on `Q(b, .)`.
/// Returns the action and the full behaviour distribution.
pub fn act_dqn<R: Rng>(
    learner: &DqnLearner,
    belief: &[f64],
    schedule: &ExplorationSchedule,
    dialogue_index: usize,
    rng: &mut R,
) -> Result<(usize, Vec<f64>), TrainError> {
    let mu = network_behaviour(&learner.online, belief, schedule, epsilon_at(schedule, dialogue_index))?;
    let action = sample_action(&mu, rng)?;
    Ok((action, mu))
}
