//! Simulated slot-filling dialogue environment.
//!
//! A goal-driven user answers requests, affirms or corrects confirmations,
//! rejects offers that violate its constraints and asks for extra attributes
//! once a matching entity is offered. Every user act goes through the
//! semantic-error channel in [`noise`] before the tracker in [`belief`] sees it.
//!
//! Rewards: -1 per turn, +20 on the final turn of a successful dialogue.
//! A dialogue succeeds once a matching entity has been offered and every
//! attribute the user wanted has been answered.

mod acts;
mod belief;
mod domain;
mod noise;

pub use acts::{MachineAct, NBestList, UserAct};
pub use belief::{update_belief, BeliefState};
pub use domain::{Database, DomainSpec, MAX_BUCKETS};
pub use noise::{corrupt_user_act, MAX_NBEST};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_TURNS: usize = 25;
pub const SUCCESS_REWARD: f64 = 20.0;
pub const TURN_PENALTY: f64 = 1.0;
/// Consecutive unhelpful turns the user tolerates before hanging up.
pub const PATIENCE: usize = 5;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("semantic error rate {0} outside [0, 1)")]
    InvalidSer(f64),
    #[error("step called on a finished dialogue")]
    EpisodeFinished,
    #[error("step called before reset")]
    NotStarted,
    #[error("action {0} is out of range for this domain")]
    InvalidAction(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserGoal {
    /// Bucketed value per constraint slot.
    pub constraints: Vec<usize>,
    /// Requestable slots the user wants answered.
    pub requests: Vec<usize>,
    pub patience: usize,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub belief: BeliefState,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub user_act: UserAct,
    pub observation: NBestList,
}

#[derive(Debug, Clone)]
struct DialogueState {
    goal: UserGoal,
    belief: BeliefState,
    /// Constraint slots the user has already stated.
    told: Vec<bool>,
    /// Goal requests already asked / answered for a matching offer.
    asked: Vec<bool>,
    answered: Vec<bool>,
    offer_matches: bool,
    unhelpful_streak: usize,
    last_user_act: UserAct,
    done: bool,
}

pub struct DialogueEnv {
    domain: DomainSpec,
    database: Database,
    ser: f64,
    state: Option<DialogueState>,
}

impl DialogueEnv {
    pub fn new(domain: DomainSpec, ser: f64) -> Result<Self, EnvError> {
        domain.validate()?;
        if !(0.0..1.0).contains(&ser) {
            return Err(EnvError::InvalidSer(ser));
        }
        let database = domain.database();
        Ok(Self {
            domain,
            database,
            ser,
            state: None,
        })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn ser(&self) -> f64 {
        self.ser
    }

    pub fn n_actions(&self) -> usize {
        self.domain.n_actions()
    }

    pub fn belief(&self) -> Option<&BeliefState> {
        self.state.as_ref().map(|s| &s.belief)
    }

    pub fn goal(&self) -> Option<&UserGoal> {
        self.state.as_ref().map(|s| &s.goal)
    }

    pub fn is_done(&self) -> bool {
        self.state.as_ref().is_none_or(|s| s.done)
    }

    /// Draws a fresh satisfiable goal and returns the all-unknown initial belief.
    pub fn reset(&mut self, rng: &mut impl Rng) -> BeliefState {
        let entity = rng.random_range(0..self.database.entities.len());
        let constraints = self.database.entities[entity].clone();
        let n_req = rng.random_range(1..=2).min(self.domain.n_requests);
        let requests = sample(rng, self.domain.n_requests, n_req).into_vec();
        let belief = BeliefState::initial(&self.domain);
        self.state = Some(DialogueState {
            goal: UserGoal {
                constraints,
                requests: requests.clone(),
                patience: PATIENCE,
            },
            belief: belief.clone(),
            told: vec![false; self.domain.n_constraint_slots],
            asked: vec![false; requests.len()],
            answered: vec![false; requests.len()],
            offer_matches: false,
            unhelpful_streak: 0,
            last_user_act: UserAct::Null,
            done: false,
        });
        belief
    }

    pub fn step_index(&mut self, action: usize, rng: &mut impl Rng) -> Result<StepOutcome, EnvError> {
        let act = MachineAct::from_index(action, self.domain.n_constraint_slots)
            .ok_or(EnvError::InvalidAction(action))?;
        self.step(act, rng)
    }

    pub fn step(&mut self, act: MachineAct, rng: &mut impl Rng) -> Result<StepOutcome, EnvError> {
        let n_slots = self.domain.n_constraint_slots;
        if let MachineAct::Request(s) | MachineAct::Confirm(s) = act {
            if s >= n_slots {
                return Err(EnvError::InvalidAction(act.index(n_slots)));
            }
        }
        let st = self.state.as_mut().ok_or(EnvError::NotStarted)?;
        if st.done {
            return Err(EnvError::EpisodeFinished);
        }

        st.belief.turn += 1;
        st.belief.last_act = Some(act.index(n_slots));
        let mut unhelpful = false;
        let mut hung_up = false;

        let user_act = match act {
            MachineAct::Request(s) => {
                unhelpful = st.told[s];
                st.told[s] = true;
                UserAct::Inform {
                    slot: s,
                    value: st.goal.constraints[s],
                }
            }
            MachineAct::Confirm(s) => {
                let (shown, _) = st.belief.top_value(s);
                st.told[s] = true;
                let wanted = st.goal.constraints[s];
                if shown == wanted {
                    UserAct::Affirm {
                        slot: s,
                        value: shown,
                    }
                } else {
                    UserAct::Negate {
                        slot: s,
                        wrong: shown,
                        correct: wanted,
                    }
                }
            }
            MachineAct::Inform => {
                let entity = self.database.best_match(&st.belief.value_masses());
                let values = &self.database.entities[entity];
                st.offer_matches = values == &st.goal.constraints;
                st.belief.offer_made = true;
                if st.offer_matches {
                    for (i, &r) in st.goal.requests.iter().enumerate() {
                        if st.asked[i] && st.belief.requested[r] {
                            st.answered[i] = true;
                        }
                    }
                }
                st.belief.requested.iter_mut().for_each(|f| *f = false);

                if st.offer_matches {
                    match st.answered.iter().position(|a| !a) {
                        Some(i) => {
                            st.asked[i] = true;
                            UserAct::Request {
                                slot: st.goal.requests[i],
                            }
                        }
                        None => UserAct::Bye,
                    }
                } else {
                    let s = (0..n_slots)
                        .find(|&s| values[s] != st.goal.constraints[s])
                        .expect("non-matching entity differs somewhere");
                    st.told[s] = true;
                    UserAct::Negate {
                        slot: s,
                        wrong: values[s],
                        correct: st.goal.constraints[s],
                    }
                }
            }
            MachineAct::Repeat => {
                unhelpful = true;
                st.last_user_act.clone()
            }
            MachineAct::Bye => UserAct::Bye,
        };

        st.unhelpful_streak = if unhelpful { st.unhelpful_streak + 1 } else { 0 };
        st.goal.patience = PATIENCE.saturating_sub(st.unhelpful_streak);
        if st.unhelpful_streak >= PATIENCE {
            hung_up = true;
        }

        let served = st.offer_matches && st.answered.iter().all(|&a| a);
        let observation = corrupt_user_act(&user_act, self.ser, &self.domain, rng);
        st.belief = update_belief(&st.belief, &observation);
        if act == MachineAct::Inform
            && matches!(
                observation.top(),
                Some(UserAct::Inform { .. } | UserAct::Negate { .. } | UserAct::Affirm { .. })
            )
        {
            st.belief.offer_made = false;
        }
        if !matches!(act, MachineAct::Repeat) {
            st.last_user_act = user_act.clone();
        }

        let done = served || hung_up || act == MachineAct::Bye || st.belief.turn >= MAX_TURNS;
        let success = served;
        st.done = done;
        let mut reward = -TURN_PENALTY;
        if done && success {
            reward += SUCCESS_REWARD;
        }
        Ok(StepOutcome {
            belief: st.belief.clone(),
            reward,
            done,
            success: done && success,
            user_act,
            observation,
        })
    }
}
