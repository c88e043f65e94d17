//! Actor-critic with experience replay: Retrace targets, truncated importance
//! weights with bias correction, entropy bonus and a trust region against a
//! softly updated average policy.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::exploration::{epsilon_at, sample_action, ExplorationSchedule};
use crate::learner::{network_behaviour, StepReport, TrainError};
use crate::nn::{
    adam_step, softmax_rows, soft_update_in_place, stack_rows, AdamState,
    GradientVector, HeadKind, Mode, NetworkSpec, ParameterSet, Tape,
};
use crate::replay::{Episode, ReplayBuffer, DEFAULT_BATCH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcerConfig {
    pub gamma: f64,
    /// Trace decay.
    pub lambda: f64,
    /// Importance-weight truncation constant.
    pub c: f64,
    /// Trust-region radius.
    pub delta: f64,
    /// Weight kept by the average network on each soft update.
    pub avg_rate: f64,
    pub entropy_coef: f64,
    /// Transitions per iteration; episodes are drawn until this is met on average.
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for AcerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            lambda: 1.0,
            c: 10.0,
            delta: 1.0,
            avg_rate: 0.99,
            entropy_coef: 0.01,
            batch_size: DEFAULT_BATCH,
            learning_rate: 1e-4,
        }
    }
}

impl AcerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let unit = 0.0..=1.0;
        let problem = if !unit.contains(&self.gamma) {
            Some("gamma must lie in [0, 1]")
        } else if !unit.contains(&self.lambda) {
            Some("lambda must lie in [0, 1]")
        } else if !unit.contains(&self.avg_rate) {
            Some("avg_rate must lie in [0, 1]")
        } else if !(self.c > 0.0) {
            Some("c must be positive")
        } else if !(self.delta > 0.0) {
            Some("delta must be positive")
        } else if !(self.entropy_coef >= 0.0) {
            Some("entropy_coef must be non-negative")
        } else if self.batch_size == 0 {
            Some("batch_size must be positive")
        } else if !(self.learning_rate > 0.0) {
            Some("learning rate must be positive")
        } else {
            None
        };
        match problem {
            Some(p) => Err(TrainError::InvalidConfig(p.into())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AcerLearner {
    pub online: ParameterSet,
    pub average: ParameterSet,
    pub adam: AdamState,
    pub config: AcerConfig,
}

impl AcerLearner {
    pub fn new(spec: NetworkSpec, config: AcerConfig, rng: &mut dyn RngCore) -> Result<Self, TrainError> {
        let online = ParameterSet::init(spec, rng)?;
        Self::from_online(online, config)
    }

    /// Average network starts as a copy of `online`.
    pub fn from_online(online: ParameterSet, config: AcerConfig) -> Result<Self, TrainError> {
        config.validate()?;
        if online.spec().head_kind != HeadKind::ActorCritic {
            return Err(TrainError::InvalidConfig("ACER needs an actor-critic network".into()));
        }
        Ok(Self {
            average: online.clone(),
            adam: AdamState::new(online.len(), config.learning_rate),
            online,
            config,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetraceResult {
    pub q_ret: Vec<f64>,
    pub a_ret: Vec<f64>,
    pub v: Vec<f64>,
}

/// `sum_a policy[a] * q[a]`.
pub fn state_value(policy: &[f64], q: &[f64]) -> f64 {
    policy.iter().zip(q).map(|(p, q)| p * q).sum()
}

/// `(min(c, rho), max(0, (rho - c) / rho))`.
pub fn truncate_weight(rho: f64, c: f64) -> (f64, f64) {
    let hat = if rho > c { (rho - c) / rho } else { 0.0 };
    (rho.min(c), hat)
}

/// Backward Retrace recursion over one episode ending in a terminal step.
///
/// `values[t] = V(b_t)`, `q_taken[t] = Q(b_t, a_t)`, `traces[t] = c_t`. The last
/// step bootstraps from nothing: `Q_ret(T) = r_T`.
pub fn retrace_recursion(
    rewards: &[f64],
    values: &[f64],
    q_taken: &[f64],
    traces: &[f64],
    gamma: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let mut q_ret = vec![0.0; n];
    if n == 0 {
        return q_ret;
    }
    q_ret[n - 1] = rewards[n - 1];
    for t in (0..n - 1).rev() {
        q_ret[t] = rewards[t]
            + gamma * values[t + 1]
            + gamma * traces[t + 1] * (q_ret[t + 1] - q_taken[t + 1]);
    }
    q_ret
}

/// Per-step importance ratio `pi(a_t) / mu(a_t)`.
fn taken_ratio(pi: &[f64], mu: &[f64], action: usize) -> Result<f64, TrainError> {
    let m = mu[action];
    if !(m > 0.0) {
        return Err(TrainError::DataIntegrity(format!(
            "behaviour probability of taken action {action} is {m}"
        )));
    }
    Ok(pi[action] / m)
}

struct EpisodeEval {
    pi: Array2<f64>,
    q: Array2<f64>,
}

fn evaluate_rows(params: &ParameterSet, beliefs: ArrayView2<'_, f64>) -> Result<EpisodeEval, TrainError> {
    let out = params.forward(beliefs, Mode::Eval, None)?;
    Ok(EpisodeEval {
        pi: softmax_rows(out.heads[0].view()),
        q: out.heads[1].clone(),
    })
}

fn retrace_from_eval(
    episode: &Episode,
    eval: &EpisodeEval,
    offset: usize,
    config: &AcerConfig,
) -> Result<RetraceResult, TrainError> {
    let n = episode.len();
    let mut values = Vec::with_capacity(n);
    let mut q_taken = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for (i, t) in episode.transitions.iter().enumerate() {
        let pi = eval.pi.row(offset + i);
        let q = eval.q.row(offset + i);
        let pi = pi.as_slice().expect("contiguous");
        let q = q.as_slice().expect("contiguous");
        let rho = taken_ratio(pi, &t.behavior_probs, t.action)?;
        values.push(state_value(pi, q));
        q_taken.push(q[t.action]);
        traces.push(config.lambda * rho.min(1.0));
        rewards.push(t.reward);
    }
    let q_ret = retrace_recursion(&rewards, &values, &q_taken, &traces, config.gamma);
    let a_ret = q_ret.iter().zip(&values).map(|(q, v)| q - v).collect();
    Ok(RetraceResult { q_ret, a_ret, v: values })
}

fn episode_rows<'a>(episodes: impl IntoIterator<Item = &'a Episode>, width: usize) -> Array2<f64> {
    stack_rows(
        episodes
            .into_iter()
            .flat_map(|e| e.transitions.iter().map(|t| t.belief.as_slice())),
        width,
    )
}

/// Retrace targets for one episode with the online network (no dropout).
pub fn retrace_targets(episode: &Episode, learner: &AcerLearner) -> Result<RetraceResult, TrainError> {
    let rows = episode_rows([episode], learner.online.spec().input_dim);
    let eval = evaluate_rows(&learner.online, rows.view())?;
    retrace_from_eval(episode, &eval, 0, &learner.config)
}

/// Constant coefficients of the policy surrogate. Row `t` holds the weight on
/// `log pi(a | b_t)` for every action `a`.
#[derive(Debug, Clone)]
pub struct PolicyTerms {
    pub beliefs: Array2<f64>,
    pub log_weights: Array2<f64>,
}

/// Critic regression data: `Q(b_t, a_t)` is pulled towards `q_ret[t]`.
#[derive(Debug, Clone)]
pub struct CriticTerms {
    pub beliefs: Array2<f64>,
    pub actions: Vec<usize>,
    pub q_ret: Vec<f64>,
}

struct BatchTerms {
    policy: PolicyTerms,
    critic: CriticTerms,
    mean_rho: f64,
}

fn build_terms(episodes: &[&Episode], learner: &AcerLearner) -> Result<BatchTerms, TrainError> {
    let width = learner.online.spec().input_dim;
    let n_actions = learner.online.spec().n_actions;
    let rows = episode_rows(episodes.iter().copied(), width);
    let eval = evaluate_rows(&learner.online, rows.view())?;
    let c = learner.config.c;

    let n = rows.nrows();
    let mut log_weights = Array2::<f64>::zeros((n, n_actions));
    let mut actions = Vec::with_capacity(n);
    let mut q_ret_all = Vec::with_capacity(n);
    let mut rho_sum = 0.0;
    let mut offset = 0;
    for episode in episodes {
        let ret = retrace_from_eval(episode, &eval, offset, &learner.config)?;
        for (i, t) in episode.transitions.iter().enumerate() {
            let row = offset + i;
            let pi = eval.pi.row(row);
            let q = eval.q.row(row);
            let rho = taken_ratio(pi.as_slice().expect("contiguous"), &t.behavior_probs, t.action)?;
            rho_sum += rho;
            let (rho_bar, _) = truncate_weight(rho, c);
            log_weights[[row, t.action]] += rho_bar * ret.a_ret[i];
            // bias correction over all actions; rho_hat = [1 - c mu / pi]+
            for a in 0..n_actions {
                if pi[a] <= 0.0 {
                    continue;
                }
                let rho_hat = (1.0 - c * t.behavior_probs[a] / pi[a]).max(0.0);
                log_weights[[row, a]] += pi[a] * rho_hat * (q[a] - ret.v[i]);
            }
            actions.push(t.action);
            q_ret_all.push(ret.q_ret[i]);
        }
        offset += episode.len();
    }
    Ok(BatchTerms {
        policy: PolicyTerms {
            beliefs: rows.clone(),
            log_weights,
        },
        critic: CriticTerms {
            beliefs: rows,
            actions,
            q_ret: q_ret_all,
        },
        mean_rho: rho_sum / n as f64,
    })
}

fn entropy(pi: &[f64]) -> f64 {
    -pi.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Gradient of `sum_a w[a] log pi(a) + eta H(pi)` with respect to the logits.
fn policy_logit_gradient(pi: &[f64], w: &[f64], eta: f64) -> Vec<f64> {
    let w_sum: f64 = w.iter().sum();
    let h = entropy(pi);
    pi.iter()
        .zip(w)
        .map(|(&p, &wa)| {
            let ent = if p > 0.0 { -p * (p.ln() + h) } else { 0.0 };
            wa - w_sum * p + eta * ent
        })
        .collect()
}

/// Mean over rows of `sum_a w[a] log pi(a|b) + eta H(pi(.|b))`, no dropout.
pub fn policy_objective(params: &ParameterSet, terms: &PolicyTerms, eta: f64) -> Result<f64, TrainError> {
    let out = params.forward(terms.beliefs.view(), Mode::Eval, None)?;
    let pi = softmax_rows(out.heads[0].view());
    let n = pi.nrows();
    let mut total = 0.0;
    for (p, w) in pi.rows().into_iter().zip(terms.log_weights.rows()) {
        let p = p.as_slice().expect("contiguous");
        total += p
            .iter()
            .zip(w)
            .filter(|(&pa, _)| pa > 0.0)
            .map(|(pa, wa)| wa * pa.ln())
            .sum::<f64>()
            + eta * entropy(p);
    }
    Ok(total / n as f64)
}

/// Ascent gradient of [`policy_objective`].
pub fn policy_objective_grad(
    params: &ParameterSet,
    terms: &PolicyTerms,
    eta: f64,
    mode: Mode<'_>,
) -> Result<GradientVector, TrainError> {
    let mut tape = Tape::default();
    let out = params.forward(terms.beliefs.view(), mode, Some(&mut tape))?;
    let pi = softmax_rows(out.heads[0].view());
    let n = pi.nrows();
    let mut cot = crate::nn::zeros_like_heads(params.spec(), n);
    for (t, (p, w)) in pi.rows().into_iter().zip(terms.log_weights.rows()).enumerate() {
        let g = policy_logit_gradient(p.as_slice().expect("contiguous"), w.as_slice().expect("contiguous"), eta);
        for (a, ga) in g.into_iter().enumerate() {
            cot[0][[t, a]] = ga / n as f64;
        }
    }
    Ok(params.backprop(&tape, &cot)?)
}

/// `0.5 * mean_t (q_ret[t] - Q(b_t, a_t))^2`, no dropout.
pub fn critic_loss(params: &ParameterSet, terms: &CriticTerms) -> Result<f64, TrainError> {
    let out = params.forward(terms.beliefs.view(), Mode::Eval, None)?;
    let n = terms.actions.len();
    Ok(terms
        .actions
        .iter()
        .zip(&terms.q_ret)
        .enumerate()
        .map(|(t, (&a, &y))| 0.5 * (y - out.heads[1][[t, a]]).powi(2))
        .sum::<f64>()
        / n as f64)
}

/// Descent gradient of [`critic_loss`]; targets are constants.
pub fn critic_loss_grad(
    params: &ParameterSet,
    terms: &CriticTerms,
    mode: Mode<'_>,
) -> Result<GradientVector, TrainError> {
    let mut tape = Tape::default();
    let out = params.forward(terms.beliefs.view(), mode, Some(&mut tape))?;
    let n = terms.actions.len();
    let mut cot = crate::nn::zeros_like_heads(params.spec(), n);
    for (t, (&a, &y)) in terms.actions.iter().zip(&terms.q_ret).enumerate() {
        cot[1][[t, a]] = (out.heads[1][[t, a]] - y) / n as f64;
    }
    Ok(params.backprop(&tape, &cot)?)
}

/// Ascent direction of the truncated, bias-corrected policy objective with the
/// entropy bonus, over the given episodes.
pub fn acer_policy_gradient(episodes: &[&Episode], learner: &AcerLearner) -> Result<GradientVector, TrainError> {
    let terms = build_terms(episodes, learner)?;
    policy_objective_grad(&learner.online, &terms.policy, learner.config.entropy_coef, Mode::Eval)
}

/// Descent direction of the critic regression onto the Retrace targets.
pub fn acer_critic_gradient(episodes: &[&Episode], learner: &AcerLearner) -> Result<GradientVector, TrainError> {
    let terms = build_terms(episodes, learner)?;
    critic_loss_grad(&learner.online, &terms.critic, Mode::Eval)
}

/// Closed-form solution of the linearised trust region:
/// `z = g - max(0, (k.g - delta) / |k|^2) k`.
pub fn trpo_project(g: &[f64], k: &[f64], delta: f64) -> Vec<f64> {
    let kk: f64 = k.iter().map(|x| x * x).sum();
    if kk == 0.0 {
        return g.to_vec();
    }
    let kg: f64 = k.iter().zip(g).map(|(a, b)| a * b).sum();
    let scale = ((kg - delta) / kk).max(0.0);
    g.iter().zip(k).map(|(gi, ki)| gi - scale * ki).collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// Number of episodes sampled per iteration: `ceil(batch / mean episode length)`.
pub fn episodes_per_step(batch_size: usize, mean_len: f64) -> usize {
    if mean_len <= 0.0 {
        return 1;
    }
    ((batch_size as f64 / mean_len).ceil() as usize).max(1)
}

/// One iteration: sample episodes, Retrace, project the per-step policy
/// gradient onto the trust region, add the critic gradient, one Adam step,
/// then soft-update the average network.
pub fn acer_train_step<R: Rng>(
    learner: &mut AcerLearner,
    buffer: &ReplayBuffer,
    rng: &mut R,
) -> Result<StepReport, TrainError> {
    let k = episodes_per_step(learner.config.batch_size, buffer.mean_episode_len());
    let episodes = buffer.sample_episodes(k, rng)?;
    let terms = build_terms(&episodes, learner)?;
    let cfg = learner.config.clone();

    let avg = evaluate_rows(&learner.average, terms.policy.beliefs.view())?;
    let mut tape = Tape::default();
    let out = learner
        .online
        .forward(terms.policy.beliefs.view(), Mode::Train(rng), Some(&mut tape))?;
    let pi = softmax_rows(out.heads[0].view());
    let n = pi.nrows();

    let mut cot = crate::nn::zeros_like_heads(learner.online.spec(), n);
    let mut report = StepReport {
        mean_rho: terms.mean_rho,
        max_constraint: f64::NEG_INFINITY,
        ..StepReport::default()
    };
    for t in 0..n {
        let p = pi.row(t);
        let p = p.as_slice().expect("contiguous");
        let p_avg = avg.pi.row(t);
        let p_avg = p_avg.as_slice().expect("contiguous");
        let w = terms.policy.log_weights.row(t);
        let g = policy_logit_gradient(p, w.as_slice().expect("contiguous"), cfg.entropy_coef);
        let kvec: Vec<f64> = p.iter().zip(p_avg).map(|(a, b)| a - b).collect();
        let z = trpo_project(&g, &kvec, cfg.delta);
        let kz: f64 = kvec.iter().zip(&z).map(|(a, b)| a * b).sum();
        report.max_constraint = report.max_constraint.max(kz);
        report.kl += kl(p_avg, p) / n as f64;
        report.policy_objective += (w.iter().zip(p).filter(|(_, &pa)| pa > 0.0).map(|(wa, pa)| wa * pa.ln()).sum::<f64>()
            + cfg.entropy_coef * entropy(p))
            / n as f64;
        for (a, za) in z.into_iter().enumerate() {
            cot[0][[t, a]] = -za / n as f64;
        }
        let a = terms.critic.actions[t];
        let err = out.heads[1][[t, a]] - terms.critic.q_ret[t];
        cot[1][[t, a]] = err / n as f64;
        report.loss += 0.5 * err * err / n as f64;
    }

    let grad = learner.online.backprop(&tape, &cot)?;
    adam_step(&mut learner.online, &mut learner.adam, &grad)?;
    soft_update_in_place(&mut learner.average, &learner.online, cfg.avg_rate)?;
    Ok(report)
}

/// Samples from the exploration mixture around the policy head.
pub fn act_acer<R: Rng>(
    learner: &AcerLearner,
    belief: &[f64],
    schedule: &ExplorationSchedule,
    dialogue_index: usize,
    rng: &mut R,
) -> Result<(usize, Vec<f64>), TrainError> {
    let mu = network_behaviour(&learner.online, belief, schedule, epsilon_at(schedule, dialogue_index))?;
    let action = sample_action(&mu, rng)?;
    Ok((action, mu))
}
