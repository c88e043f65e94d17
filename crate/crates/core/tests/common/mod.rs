//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use dilute_core::acer::{critic_loss, critic_loss_grad, policy_objective, policy_objective_grad, CriticTerms, PolicyTerms};
use dilute_core::dqn::{dqn_loss, dqn_loss_grad};
use dilute_core::nn::{HeadKind, Mode, NetworkSpec, ParameterSet};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn small_net(kind: HeadKind, rng: &mut ChaCha8Rng) -> ParameterSet {
    let input = rng.random_range(2..7);
    let actions = rng.random_range(2..6);
    let hidden = vec![rng.random_range(2..7), rng.random_range(2..6)];
    let spec = NetworkSpec::new(input, actions, kind).with_hidden(hidden).with_dropout(0.0);
    let mut p = ParameterSet::init(spec, rng).unwrap();
    // init biases are zero; perturb so ReLU kinks are not hit exactly
    for v in p.values_mut() {
        *v += 0.1 * (rng.random::<f64>() - 0.5);
    }
    p
}

pub fn random_inputs(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>())
}

/// Central differences of `f` with respect to every parameter.
pub fn finite_difference(params: &ParameterSet, f: impl Fn(&ParameterSet) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut p = params.clone();
    (0..params.len())
        .map(|i| {
            let x = p.values()[i];
            p.values_mut()[i] = x + h;
            let up = f(&p);
            p.values_mut()[i] = x - h;
            let down = f(&p);
            p.values_mut()[i] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` on vector norms; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn dqn_grad_error(rng: &mut ChaCha8Rng) -> f64 {
    let net = small_net(HeadKind::DuelingQ, rng);
    let n = rng.random_range(1..9);
    let spec = net.spec().clone();
    let x = random_inputs(n, spec.input_dim, rng);
    let actions: Vec<usize> = (0..n).map(|_| rng.random_range(0..spec.n_actions)).collect();
    let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let (_, g) = dqn_loss_grad(&net, x.view(), &actions, &targets, Mode::Eval).unwrap();
    let fd = finite_difference(&net, |p| dqn_loss(p, x.view(), &actions, &targets).unwrap());
    relative_error(&g.values, &fd)
}

/// Weights built the way the learner builds them: truncated ratio on the taken
/// action plus the bias correction over every action, with random critic values.
pub fn acer_policy_terms(net: &ParameterSet, n: usize, c: f64, rng: &mut ChaCha8Rng) -> PolicyTerms {
    let spec = net.spec();
    let x = random_inputs(n, spec.input_dim, rng);
    let logits = net.forward(x.view(), Mode::Eval, None).unwrap().heads[0].clone();
    let mut w = Array2::zeros((n, spec.n_actions));
    for t in 0..n {
        let pi = softmax(logits.row(t).as_slice().unwrap());
        let raw: Vec<f64> = (0..spec.n_actions).map(|_| rng.random::<f64>() + 0.01).collect();
        let total: f64 = raw.iter().sum();
        let mu: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let q: Vec<f64> = (0..spec.n_actions).map(|_| rng.random_range(-10.0..10.0)).collect();
        let v: f64 = pi.iter().zip(&q).map(|(p, q)| p * q).sum();
        let a = rng.random_range(0..spec.n_actions);
        let q_ret = rng.random_range(-10.0..10.0);
        w[[t, a]] += (pi[a] / mu[a]).min(c) * (q_ret - v);
        for b in 0..spec.n_actions {
            let hat = (1.0 - c * mu[b] / pi[b]).max(0.0);
            w[[t, b]] += pi[b] * hat * (q[b] - v);
        }
    }
    PolicyTerms { beliefs: x, log_weights: w }
}

pub fn acer_policy_grad_error(rng: &mut ChaCha8Rng) -> f64 {
    let net = small_net(HeadKind::ActorCritic, rng);
    let n = rng.random_range(1..9);
    // small c so the correction term is active
    let terms = acer_policy_terms(&net, n, rng.random_range(0.2..2.0), rng);
    let eta = rng.random_range(0.0..0.5);
    let g = policy_objective_grad(&net, &terms, eta, Mode::Eval).unwrap();
    let fd = finite_difference(&net, |p| policy_objective(p, &terms, eta).unwrap());
    relative_error(&g.values, &fd)
}

pub fn acer_critic_grad_error(rng: &mut ChaCha8Rng) -> f64 {
    let net = small_net(HeadKind::ActorCritic, rng);
    let n = rng.random_range(1..9);
    let spec = net.spec().clone();
    let terms = CriticTerms {
        beliefs: random_inputs(n, spec.input_dim, rng),
        actions: (0..n).map(|_| rng.random_range(0..spec.n_actions)).collect(),
        q_ret: (0..n).map(|_| rng.random_range(-10.0..10.0)).collect(),
    };
    let g = critic_loss_grad(&net, &terms, Mode::Eval).unwrap();
    let fd = finite_difference(&net, |p| critic_loss(p, &terms).unwrap());
    relative_error(&g.values, &fd)
}

/// Forward-unrolled Retrace: `Q_ret(t) = Q_t + sum_k gamma^(k-t) (prod_{j=t+1..k} c_j) delta_k`
/// with `delta_k = r_k + gamma V_{k+1} - Q_k` and `V_{T+1} = 0`.
pub fn retrace_forward(rewards: &[f64], values: &[f64], q_taken: &[f64], traces: &[f64], gamma: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta: Vec<f64> = (0..n)
        .map(|k| {
            let next_v = if k + 1 < n { values[k + 1] } else { 0.0 };
            rewards[k] + gamma * next_v - q_taken[k]
        })
        .collect();
    (0..n)
        .map(|t| {
            let mut acc = q_taken[t];
            let mut coef = 1.0;
            for k in t..n {
                if k > t {
                    coef *= gamma * traces[k];
                }
                acc += coef * delta[k];
            }
            acc
        })
        .collect()
}

pub struct RetraceCase {
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub q_taken: Vec<f64>,
    pub traces: Vec<f64>,
    pub gamma: f64,
}

pub fn random_retrace_case(rng: &mut ChaCha8Rng) -> RetraceCase {
    let n = rng.random_range(1..=5);
    let mut v = |lo: f64, hi: f64| (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>();
    RetraceCase {
        rewards: v(-1.0, 20.0),
        values: v(-20.0, 20.0),
        q_taken: v(-20.0, 20.0),
        traces: v(0.0, 1.0),
        gamma: rng.random_range(0.0..1.0),
    }
}
