//! Dialogue collection, training loop and frozen-policy evaluation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig};
use super::results::{write_atomic, write_results, MetricsRow};
use super::RunError;
use crate::acer::AcerLearner;
use crate::dqn::DqnLearner;
use crate::env::{DialogueEnv, MAX_TURNS, SUCCESS_REWARD, TURN_PENALTY};
use crate::expert::{expert_act, ExpertThresholds};
use crate::exploration::{epsilon_at, one_hot, sample_action, ExplorationSchedule};
use crate::guidance::{
    behavior_probs_with_expert, select_episode_controller, select_turn_controller, Controller,
    GuidanceKind, GuidanceMode,
};
use crate::learner::{network_behaviour, Learner, TrainError};
use crate::nn::ParameterSet;
use crate::replay::{Episode, ReplayBuffer, Source, Transition};

const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_ACT: u64 = 2;
const STREAM_LEARN: u64 = 3;
const STREAM_GUIDE: u64 = 4;
const STREAM_EVAL: u64 = 1_000;

/// Independent generator for one purpose within a seeded run.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub success: bool,
    pub turns: usize,
    pub reward: f64,
}

impl EpisodeStats {
    /// `20 * success - turns`.
    pub fn satisfies_reward_identity(&self) -> bool {
        let expected = if self.success { SUCCESS_REWARD } else { 0.0 } - TURN_PENALTY * self.turns as f64;
        self.reward == expected
    }
}

/// Who chooses actions during one dialogue.
pub enum Actor<'a> {
    Expert(&'a ExpertThresholds),
    Network {
        params: &'a ParameterSet,
        schedule: &'a ExplorationSchedule,
        eps: f64,
    },
    /// Per-turn coin between the network and the expert.
    Feedback {
        params: &'a ParameterSet,
        schedule: &'a ExplorationSchedule,
        eps: f64,
        guidance: &'a GuidanceMode,
        thresholds: &'a ExpertThresholds,
    },
}

pub struct Generators<'a> {
    pub env: &'a mut ChaCha8Rng,
    pub act: &'a mut ChaCha8Rng,
    pub guide: &'a mut ChaCha8Rng,
}

/// Plays one dialogue to the end and records every transition with the
/// distribution its action was drawn from.
pub fn run_episode(
    env: &mut DialogueEnv,
    actor: &Actor<'_>,
    rngs: &mut Generators<'_>,
) -> Result<(Episode, EpisodeStats), RunError> {
    let n_actions = env.n_actions();
    let n_slots = env.domain().n_constraint_slots;
    let mut belief = env.reset(rngs.env);
    let mut transitions = Vec::with_capacity(MAX_TURNS);
    let mut stats = EpisodeStats {
        success: false,
        turns: 0,
        reward: 0.0,
    };
    loop {
        let x = belief.to_vector(n_actions);
        let (action, mu, source) = match actor {
            Actor::Expert(t) => {
                let a = expert_act(&belief, t).index(n_slots);
                (a, one_hot(n_actions, a), Source::ExpertDemo)
            }
            Actor::Network { params, schedule, eps } => {
                let mu = network_behaviour(params, &x, schedule, *eps)?;
                let a = sample_action(&mu, rngs.act).map_err(TrainError::from)?;
                (a, mu, Source::SelfPlay)
            }
            Actor::Feedback {
                params,
                schedule,
                eps,
                guidance,
                thresholds,
            } => {
                let agent_mu = network_behaviour(params, &x, schedule, *eps)?;
                let expert = expert_act(&belief, thresholds).index(n_slots);
                let controller = select_turn_controller(guidance, rngs.guide)?;
                let (a, source) = match controller {
                    Controller::Agent => (
                        sample_action(&agent_mu, rngs.act).map_err(TrainError::from)?,
                        Source::SelfPlay,
                    ),
                    Controller::Expert => (expert, Source::ExpertFeedback),
                };
                let mu = behavior_probs_with_expert(&agent_mu, expert, guidance, controller);
                (a, mu, source)
            }
        };
        let out = env.step_index(action, rngs.env)?;
        stats.turns += 1;
        stats.reward += out.reward;
        let next = out.belief.to_vector(n_actions);
        transitions.push(Transition {
            belief: x,
            action,
            reward: out.reward,
            next_belief: next,
            done: out.done,
            behavior_probs: mu,
            source,
        });
        belief = out.belief;
        if out.done {
            stats.success = out.success;
            break;
        }
    }
    Ok((Episode { transitions }, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub dialogue: usize,
    /// `agent`, `expert` or `mixed`.
    pub controller: String,
    pub success: bool,
    pub turns: usize,
    pub reward: f64,
    pub loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SeedTraining {
    pub seed: u64,
    /// `(dialogue count, online parameters)` at every checkpoint boundary.
    pub checkpoints: Vec<(usize, ParameterSet)>,
    pub log: Vec<TrainLogRow>,
}

fn build_learner(config: &ExperimentConfig, rng: &mut dyn RngCore) -> Result<Option<Learner>, RunError> {
    let Some(spec) = config.network_spec() else {
        return Ok(None);
    };
    Ok(Some(match config.algorithm {
        Algorithm::StocAcer => Learner::Acer(AcerLearner::new(spec, config.acer_config(), rng)?),
        _ => Learner::Dqn(DqnLearner::new(spec, config.dqn_config(), rng)?),
    }))
}

/// Trains one seed: one dialogue, one push, one learner iteration, repeated.
/// Returns parameter snapshots at each checkpoint and the per-dialogue log.
pub fn train_seed(
    config: &ExperimentConfig,
    seed: u64,
    mut trace: Option<&mut dyn Write>,
) -> Result<SeedTraining, RunError> {
    config.validate()?;
    let mut result = SeedTraining {
        seed,
        checkpoints: Vec::new(),
        log: Vec::new(),
    };
    let mut init_rng = rng_stream(seed, STREAM_INIT);
    let Some(mut learner) = build_learner(config, &mut init_rng)? else {
        return Ok(result);
    };
    let mut env = DialogueEnv::new(config.domain.clone(), config.ser)?;
    let mut env_rng = rng_stream(seed, STREAM_ENV);
    let mut act_rng = rng_stream(seed, STREAM_ACT);
    let mut learn_rng = rng_stream(seed, STREAM_LEARN);
    let mut guide_rng = rng_stream(seed, STREAM_GUIDE);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let schedule = config.effective_schedule();

    for d in 0..config.train_dialogues {
        let eps = epsilon_at(&schedule, d);
        let params = learner.online();
        let (actor, controller) = match config.guidance.kind {
            GuidanceKind::None => (Actor::Network { params, schedule: &schedule, eps }, "agent"),
            GuidanceKind::Demonstrations => match select_episode_controller(&config.guidance, &mut guide_rng)? {
                Controller::Agent => (Actor::Network { params, schedule: &schedule, eps }, "agent"),
                Controller::Expert => (Actor::Expert(&config.expert), "expert"),
            },
            GuidanceKind::Feedbacks => (
                Actor::Feedback {
                    params,
                    schedule: &schedule,
                    eps,
                    guidance: &config.guidance,
                    thresholds: &config.expert,
                },
                "mixed",
            ),
        };
        let mut rngs = Generators {
            env: &mut env_rng,
            act: &mut act_rng,
            guide: &mut guide_rng,
        };
        let (episode, stats) = run_episode(&mut env, &actor, &mut rngs)?;
        if let Some(w) = trace.as_deref_mut() {
            #[derive(Serialize)]
            struct Line<'a> {
                dialogue: usize,
                controller: &'a str,
                stats: &'a EpisodeStats,
                actions: Vec<usize>,
            }
            let line = Line {
                dialogue: d,
                controller,
                stats: &stats,
                actions: episode.transitions.iter().map(|t| t.action).collect(),
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
        }
        buffer.push_episode(episode)?;
        let loss = match learner.train_step(&buffer, &mut learn_rng) {
            Ok(r) => Some(r.loss),
            Err(TrainError::NotReady) => None,
            Err(e) => return Err(e.into()),
        };
        result.log.push(TrainLogRow {
            dialogue: d,
            controller: controller.into(),
            success: stats.success,
            turns: stats.turns,
            reward: stats.reward,
            loss,
        });
        if (d + 1) % config.checkpoint_every == 0 {
            result.checkpoints.push((d + 1, learner.online().clone()));
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub episodes: usize,
    pub success_rate: f64,
    pub avg_reward: f64,
    pub mean_turns: f64,
    /// Every evaluated episode satisfied the reward identity.
    pub reward_identity_holds: bool,
}

/// Frozen-policy evaluation over `config.eval_dialogues` dialogues. `None`
/// evaluates the handcrafted expert, which acts without exploration; a network
/// acts through the exploration mixture at `eval_eps` without dropout.
pub fn evaluate(
    config: &ExperimentConfig,
    params: Option<&ParameterSet>,
    seed: u64,
    checkpoint: usize,
) -> Result<EvalResult, RunError> {
    if let Some(p) = params {
        let expected = config.network_spec();
        if expected.as_ref() != Some(p.spec()) {
            return Err(RunError::SpecMismatch(format!(
                "checkpoint network {:?} does not match configured {:?}",
                p.spec(),
                expected
            )));
        }
    }
    let mut env = DialogueEnv::new(config.domain.clone(), config.ser)?;
    let stream = STREAM_EVAL + 2 * checkpoint as u64;
    let mut env_rng = rng_stream(seed, stream);
    let mut act_rng = rng_stream(seed, stream + 1);
    let mut guide_rng = rng_stream(seed, STREAM_GUIDE);
    let schedule = config.eval_schedule();
    let actor = match params {
        None => Actor::Expert(&config.expert),
        Some(params) => Actor::Network {
            params,
            schedule: &schedule,
            eps: config.eval_eps,
        },
    };
    let mut successes = 0usize;
    let mut reward = 0.0;
    let mut turns = 0usize;
    let mut identity = true;
    for _ in 0..config.eval_dialogues {
        let mut rngs = Generators {
            env: &mut env_rng,
            act: &mut act_rng,
            guide: &mut guide_rng,
        };
        let (_, stats) = run_episode(&mut env, &actor, &mut rngs)?;
        successes += stats.success as usize;
        reward += stats.reward;
        turns += stats.turns;
        identity &= stats.satisfies_reward_identity();
    }
    let n = config.eval_dialogues as f64;
    Ok(EvalResult {
        episodes: config.eval_dialogues,
        success_rate: successes as f64 / n,
        avg_reward: reward / n,
        mean_turns: turns as f64 / n,
        reward_identity_holds: identity,
    })
}

/// Loads a checkpoint file and evaluates it under `config`.
pub fn evaluate_policy(
    checkpoint: impl AsRef<Path>,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<EvalResult, RunError> {
    let params = ParameterSet::load(checkpoint)?;
    evaluate(config, Some(&params), seed, 0)
}

pub fn checkpoint_path(out: &Path, seed: u64, dialogue: usize) -> PathBuf {
    out.join(format!("seed-{seed}")).join(format!("checkpoint-{dialogue}.net"))
}

/// Trains and evaluates one seed; one metrics row per checkpoint. With `out`,
/// checkpoints, the training log and the optional trace are written below it.
pub fn run_seed(config: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<(Vec<MetricsRow>, SeedTraining), RunError> {
    let seed_dir = out.map(|o| o.join(format!("seed-{seed}")));
    if let Some(dir) = &seed_dir {
        fs::create_dir_all(dir)?;
    }
    let training = match (&seed_dir, config.trace) {
        (Some(dir), true) => {
            let mut w = BufWriter::new(File::create(dir.join("trace.jsonl"))?);
            let t = train_seed(config, seed, Some(&mut w))?;
            w.flush()?;
            t
        }
        _ => train_seed(config, seed, None)?,
    };
    if let Some(dir) = &seed_dir {
        for (d, params) in &training.checkpoints {
            params.save(checkpoint_path(out.expect("seed dir implies out"), seed, *d))?;
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &training.log {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| RunError::Io(e.into_error()))?;
        write_atomic(&dir.join("train_log.csv"), &bytes)?;
    }

    let mut rows = Vec::new();
    for d in config.checkpoint_indices() {
        let params = training.checkpoints.iter().find(|(i, _)| *i == d).map(|(_, p)| p);
        let eval = evaluate(config, params, seed, d)?;
        rows.push(MetricsRow {
            algorithm: config.algorithm.to_string(),
            guidance: config.guidance.kind.to_string(),
            domain: config.domain.name.clone(),
            ser: config.ser,
            seed,
            checkpoint: d,
            success_rate: eval.success_rate,
            avg_reward: eval.avg_reward,
        });
    }
    Ok((rows, training))
}

/// Full run over every configured seed. Writes `config.echo`, per-seed
/// artifacts and `metrics.csv` into `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Vec<MetricsRow>, RunError> {
    config.validate()?;
    fs::create_dir_all(out)?;
    write_atomic(&out.join("config.echo"), config.echo().as_bytes())?;
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let (r, _) = run_seed(config, seed, Some(out))?;
        rows.extend(r);
    }
    write_results(&rows, out.join("metrics.csv"))?;
    Ok(rows)
}
