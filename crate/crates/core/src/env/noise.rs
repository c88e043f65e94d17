//! Semantic-error channel between the simulated user and the belief tracker.
//!
//! With probability `1 - ser` the top hypothesis is the true act. Otherwise a
//! confusion takes the top slot and the true act lands lower in the list
//! (half the time, when there is room) or disappears. List length is uniform
//! in `1..=3`; confidences are a symmetric Dirichlet(1) draw sorted descending.

use rand::Rng;
use rand_distr::Exp1;

use super::acts::{NBestList, UserAct};
use super::domain::DomainSpec;

pub const MAX_NBEST: usize = 3;

pub fn corrupt_user_act(
    true_act: &UserAct,
    ser: f64,
    domain: &DomainSpec,
    rng: &mut impl Rng,
) -> NBestList {
    if ser <= 0.0 {
        return NBestList::certain(true_act.clone());
    }
    let n = rng.random_range(1..=MAX_NBEST);
    let top_correct = rng.random::<f64>() >= ser;

    let mut acts: Vec<UserAct> = Vec::with_capacity(n);
    if top_correct {
        acts.push(true_act.clone());
        while acts.len() < n {
            let c = confusion(true_act, domain, &acts, rng);
            acts.push(c);
        }
    } else {
        let c = confusion(true_act, domain, &acts, rng);
        acts.push(c);
        let keep_true = n > 1 && rng.random_bool(0.5);
        let true_pos = if keep_true { rng.random_range(1..n) } else { usize::MAX };
        for pos in 1..n {
            if pos == true_pos {
                acts.push(true_act.clone());
            } else {
                let c = confusion(true_act, domain, &acts, rng);
                acts.push(c);
            }
        }
    }

    let mut conf: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = conf.iter().sum();
    conf.iter_mut().for_each(|c| *c /= total);
    conf.sort_by(|a, b| b.total_cmp(a));

    NBestList {
        hypotheses: acts.into_iter().zip(conf).collect(),
    }
}

/// A plausible misrecognition of `true_act`, distinct from it and from `taken`.
fn confusion(
    true_act: &UserAct,
    domain: &DomainSpec,
    taken: &[UserAct],
    rng: &mut impl Rng,
) -> UserAct {
    for _ in 0..64 {
        let candidate = if rng.random_bool(0.5) {
            perturb(true_act, domain, rng)
        } else {
            random_act(domain, rng)
        };
        if &candidate != true_act && !taken.contains(&candidate) {
            return candidate;
        }
    }
    // Tiny domains can exhaust the random draws; enumerate instead.
    (0..domain.n_requests)
        .map(|slot| UserAct::Request { slot })
        .chain(std::iter::once(UserAct::Null))
        .find(|c| c != true_act && !taken.contains(c))
        .unwrap_or(UserAct::Null)
}

fn other_value(domain: &DomainSpec, slot: usize, value: usize, rng: &mut impl Rng) -> usize {
    let b = domain.buckets(slot);
    if b < 2 {
        return value;
    }
    let shift = rng.random_range(1..b);
    (value + shift) % b
}

/// Same act type with a corrupted argument.
fn perturb(act: &UserAct, domain: &DomainSpec, rng: &mut impl Rng) -> UserAct {
    match *act {
        UserAct::Inform { slot, value } => UserAct::Inform {
            slot,
            value: other_value(domain, slot, value, rng),
        },
        UserAct::Affirm { slot, value } => UserAct::Affirm {
            slot,
            value: other_value(domain, slot, value, rng),
        },
        UserAct::Negate {
            slot,
            wrong,
            correct,
        } => UserAct::Negate {
            slot,
            wrong,
            correct: other_value(domain, slot, correct, rng),
        },
        UserAct::Request { .. } => UserAct::Request {
            slot: rng.random_range(0..domain.n_requests.max(1)),
        },
        UserAct::Null | UserAct::Bye => random_act(domain, rng),
    }
}

fn random_act(domain: &DomainSpec, rng: &mut impl Rng) -> UserAct {
    match rng.random_range(0..3) {
        0 => {
            let slot = rng.random_range(0..domain.n_constraint_slots);
            UserAct::Inform {
                slot,
                value: rng.random_range(0..domain.buckets(slot)),
            }
        }
        1 if domain.n_requests > 0 => UserAct::Request {
            slot: rng.random_range(0..domain.n_requests),
        },
        _ => UserAct::Null,
    }
}
