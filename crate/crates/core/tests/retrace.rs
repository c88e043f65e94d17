mod common;

use common::*;
use dilute_core::acer::{retrace_recursion, retrace_targets, AcerConfig, AcerLearner};
use dilute_core::nn::{forward_actor_critic, HeadKind, Mode, NetworkSpec};
use dilute_core::replay::{Episode, Source, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn backward_recursion_equals_forward_unroll() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let c = random_retrace_case(&mut rng);
        let got = retrace_recursion(&c.rewards, &c.values, &c.q_taken, &c.traces, c.gamma);
        let want = retrace_forward(&c.rewards, &c.values, &c.q_taken, &c.traces, c.gamma);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-10, "{got:?} vs {want:?}");
        }
        assert_eq!(got.last(), c.rewards.last());
    }
}

fn random_episode(n_in: usize, n_act: usize, rng: &mut ChaCha8Rng) -> Episode {
    let len = rng.random_range(1..=5);
    let transitions = (0..len)
        .map(|t| {
            let raw: Vec<f64> = (0..n_act).map(|_| rng.random::<f64>() + 0.05).collect();
            let s: f64 = raw.iter().sum();
            Transition {
                belief: (0..n_in).map(|_| rng.random()).collect(),
                action: rng.random_range(0..n_act),
                reward: if t + 1 == len { 19.0 } else { -1.0 },
                next_belief: (0..n_in).map(|_| rng.random()).collect(),
                done: t + 1 == len,
                behavior_probs: raw.iter().map(|r| r / s).collect(),
                source: Source::SelfPlay,
            }
        })
        .collect();
    Episode { transitions }
}

#[test]
fn learner_targets_match_oracle_on_network_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let spec = NetworkSpec::new(6, 4, HeadKind::ActorCritic).with_hidden(vec![8, 8]);
    let config = AcerConfig { lambda: 0.8, ..AcerConfig::default() };
    let learner = AcerLearner::new(spec, config.clone(), &mut rng).unwrap();
    for _ in 0..1000 {
        let ep = random_episode(6, 4, &mut rng);
        let mut rewards = Vec::new();
        let mut values = Vec::new();
        let mut q_taken = Vec::new();
        let mut traces = Vec::new();
        for t in &ep.transitions {
            let out = forward_actor_critic(&learner.online, &t.belief, Mode::Eval).unwrap();
            rewards.push(t.reward);
            values.push(out.policy.iter().zip(&out.q).map(|(p, q)| p * q).sum());
            q_taken.push(out.q[t.action]);
            traces.push(config.lambda * (out.policy[t.action] / t.behavior_probs[t.action]).min(1.0));
        }
        let want = retrace_forward(&rewards, &values, &q_taken, &traces, config.gamma);
        let got = retrace_targets(&ep, &learner).unwrap();
        for (g, w) in got.q_ret.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-10);
        }
        assert_eq!(*got.q_ret.last().unwrap(), 19.0);
    }
}
