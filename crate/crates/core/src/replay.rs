//! Episode-structured experience replay.
//!
//! Whole episodes are stored and evicted oldest-first, so every stored
//! trajectory stays contiguous for the Retrace recursion. Transition sampling is
//! uniform over all stored transitions; episode sampling is uniform over episodes.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::MAX_TURNS;

pub const DEFAULT_CAPACITY: usize = 10_000;
pub const DEFAULT_BATCH: usize = 128;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay buffer is empty")]
    NotReady,
    #[error("malformed episode: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    SelfPlay,
    ExpertDemo,
    ExpertFeedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub belief: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_belief: Vec<f64>,
    pub done: bool,
    /// Full behaviour distribution the action was drawn from.
    pub behavior_probs: Vec<f64>,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Episode {
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn validate(&self) -> Result<(), ReplayError> {
        let bad = |msg: String| Err(ReplayError::Malformed(msg));
        let Some(first) = self.transitions.first() else {
            return bad("no transitions".into());
        };
        if self.len() > MAX_TURNS {
            return bad(format!("{} transitions exceed the {MAX_TURNS}-turn cap", self.len()));
        }
        let (dim, n_actions) = (first.belief.len(), first.behavior_probs.len());
        for (i, t) in self.transitions.iter().enumerate() {
            let last = i + 1 == self.len();
            if t.done != last {
                return bad(format!("done flag {} at step {i} of {}", t.done, self.len()));
            }
            if t.belief.len() != dim || t.next_belief.len() != dim {
                return bad(format!("belief width changes at step {i}"));
            }
            if t.behavior_probs.len() != n_actions || t.action >= n_actions {
                return bad(format!("action {} / behaviour width mismatch at step {i}", t.action));
            }
            let sum: f64 = t.behavior_probs.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || t.behavior_probs.iter().any(|p| !(*p >= 0.0)) {
                return bad(format!("behaviour probabilities sum to {sum} at step {i}"));
            }
            if t.behavior_probs[t.action] <= 0.0 {
                return bad(format!("taken action {} has zero behaviour probability", t.action));
            }
            if !t.reward.is_finite() {
                return bad(format!("non-finite reward at step {i}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
    n_transitions: usize,
    /// `starts[i]` = global index of the first transition of episode `i`.
    starts: Vec<usize>,
    total_pushed: u64,
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            episodes: VecDeque::new(),
            n_transitions: 0,
            starts: Vec::new(),
            total_pushed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions.
    pub fn len(&self) -> usize {
        self.n_transitions
    }

    pub fn is_empty(&self) -> bool {
        self.n_transitions == 0
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Transitions pushed over the buffer's lifetime, evicted or not.
    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn mean_episode_len(&self) -> f64 {
        if self.episodes.is_empty() {
            0.0
        } else {
            self.n_transitions as f64 / self.episodes.len() as f64
        }
    }

    pub fn push_episode(&mut self, episode: Episode) -> Result<(), ReplayError> {
        episode.validate()?;
        if episode.len() > self.capacity {
            return Err(ReplayError::Malformed(format!(
                "episode of {} transitions cannot fit capacity {}",
                episode.len(),
                self.capacity
            )));
        }
        self.n_transitions += episode.len();
        self.total_pushed += episode.len() as u64;
        self.episodes.push_back(episode);
        while self.n_transitions > self.capacity {
            let old = self.episodes.pop_front().expect("over capacity implies non-empty");
            self.n_transitions -= old.len();
        }
        self.starts.clear();
        let mut acc = 0;
        for e in &self.episodes {
            self.starts.push(acc);
            acc += e.len();
        }
        Ok(())
    }

    fn transition_at(&self, global: usize) -> &Transition {
        let ep = self.starts.partition_point(|&s| s <= global) - 1;
        &self.episodes[ep].transitions[global - self.starts[ep]]
    }

    /// `n` uniform draws with replacement over stored transitions.
    pub fn sample_transitions(
        &self,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<&Transition>, ReplayError> {
        if self.is_empty() {
            return Err(ReplayError::NotReady);
        }
        Ok((0..n)
            .map(|_| self.transition_at(rng.random_range(0..self.n_transitions)))
            .collect())
    }

    /// `k` uniform draws with replacement over stored episodes.
    pub fn sample_episodes(&self, k: usize, rng: &mut impl Rng) -> Result<Vec<&Episode>, ReplayError> {
        if self.episodes.is_empty() {
            return Err(ReplayError::NotReady);
        }
        Ok((0..k)
            .map(|_| &self.episodes[rng.random_range(0..self.episodes.len())])
            .collect())
    }

    /// One JSON object per stored transition, tagged with its episode index.
    pub fn dump_jsonl(&self, path: impl AsRef<Path>) -> Result<(), ReplayError> {
        #[derive(Serialize)]
        struct Line<'a> {
            episode: usize,
            step: usize,
            #[serde(flatten)]
            transition: &'a Transition,
        }
        let mut w = BufWriter::new(File::create(path)?);
        for (episode, e) in self.episodes.iter().enumerate() {
            for (step, transition) in e.transitions.iter().enumerate() {
                serde_json::to_writer(&mut w, &Line { episode, step, transition })?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn episode(len: usize, tag: f64, source: Source) -> Episode {
        Episode {
            transitions: (0..len)
                .map(|i| Transition {
                    belief: vec![tag, i as f64],
                    action: i % 2,
                    reward: -1.0,
                    next_belief: vec![tag, i as f64 + 1.0],
                    done: i + 1 == len,
                    behavior_probs: vec![0.5, 0.5],
                    source,
                })
                .collect(),
        }
    }

    #[test]
    fn push_counts_transitions() {
        let mut b = ReplayBuffer::default();
        b.push_episode(episode(6, 0.0, Source::SelfPlay)).unwrap();
        assert_eq!(b.len(), 6);
        assert_eq!(b.n_episodes(), 1);
    }

    #[test]
    fn eviction_is_whole_episode_and_oldest_first() {
        let mut b = ReplayBuffer::default();
        let mut tag = 0.0;
        while b.total_pushed() <= 10_000 {
            b.push_episode(episode(7, tag, Source::SelfPlay)).unwrap();
            tag += 1.0;
        }
        assert!(b.len() <= 10_000);
        assert!(b.episodes().all(|e| e.len() == 7));
        assert!(b.episodes().all(|e| e.transitions[0].belief[0] != 0.0));
        assert_eq!(b.episodes().next().unwrap().transitions[0].belief[0], tag - b.n_episodes() as f64);
    }

    #[test]
    fn malformed_episodes_rejected() {
        let mut b = ReplayBuffer::default();
        assert!(b.push_episode(Episode::default()).is_err());
        let mut e = episode(3, 0.0, Source::SelfPlay);
        e.transitions[1].done = true;
        assert!(b.push_episode(e).is_err());
        let mut e = episode(3, 0.0, Source::SelfPlay);
        e.transitions[0].behavior_probs = vec![1.0, 0.0];
        e.transitions[0].action = 1;
        assert!(b.push_episode(e).is_err());
        let mut e = episode(3, 0.0, Source::SelfPlay);
        e.transitions[2].behavior_probs = vec![0.6, 0.6];
        assert!(b.push_episode(e).is_err());
        assert!(b.push_episode(episode(26, 0.0, Source::SelfPlay)).is_err());
        assert!(b.is_empty());
    }

    #[test]
    fn empty_buffer_not_ready() {
        let b = ReplayBuffer::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.sample_transitions(128, &mut rng), Err(ReplayError::NotReady)));
        assert!(matches!(b.sample_episodes(2, &mut rng), Err(ReplayError::NotReady)));
    }

    #[test]
    fn single_transition_buffer() {
        let mut b = ReplayBuffer::default();
        b.push_episode(episode(1, 3.0, Source::SelfPlay)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = b.sample_transitions(128, &mut rng).unwrap();
        assert!(s.iter().all(|t| *t == s[0]));
        let eps = b.sample_episodes(1, &mut rng).unwrap();
        assert_eq!(eps[0], b.episodes().next().unwrap());
    }

    #[test]
    fn sampled_episodes_keep_order_and_terminal() {
        let mut b = ReplayBuffer::default();
        for i in 0..20 {
            b.push_episode(episode(1 + i % 5, i as f64, Source::ExpertDemo)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for e in b.sample_episodes(50, &mut rng).unwrap() {
            assert!(e.transitions.last().unwrap().done);
            for (i, t) in e.transitions.iter().enumerate() {
                assert_eq!(t.belief[1], i as f64);
            }
        }
    }

    /// Chi-square oracle: 100 transitions, 100k draws, 99 degrees of freedom.
    /// The 0.99 quantile of chi2(99) is 134.64.
    #[test]
    fn transition_sampling_is_uniform() {
        let mut b = ReplayBuffer::default();
        for i in 0..20 {
            b.push_episode(episode(5, i as f64, Source::SelfPlay)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = vec![0usize; 100];
        for t in b.sample_transitions(100_000, &mut rng).unwrap() {
            counts[t.belief[0] as usize * 5 + t.belief[1] as usize] += 1;
        }
        let expected = 1000.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 134.64, "chi2 = {chi2}");
    }

    #[test]
    fn demonstrations_replay_like_self_play() {
        let mut b = ReplayBuffer::default();
        let demo = episode(4, 1.0, Source::ExpertDemo);
        b.push_episode(demo.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(b.sample_episodes(1, &mut rng).unwrap()[0], &demo);
    }

    #[test]
    fn dump_writes_one_line_per_transition() {
        let mut b = ReplayBuffer::default();
        b.push_episode(episode(3, 0.0, Source::SelfPlay)).unwrap();
        b.push_episode(episode(2, 1.0, Source::ExpertFeedback)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("buffer.jsonl");
        b.dump_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 5);
        let v: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
        assert_eq!(v["episode"], 1);
        assert_eq!(v["source"], "ExpertFeedback");
    }

    proptest! {
        #[test]
        fn capacity_and_probability_invariants(lens in prop::collection::vec(1usize..=25, 1..60), cap in 25usize..200) {
            let mut b = ReplayBuffer::new(cap);
            for (i, len) in lens.into_iter().enumerate() {
                let mut e = episode(len, i as f64, Source::SelfPlay);
                for t in &mut e.transitions {
                    let p = (i as f64 * 0.37).fract().clamp(0.05, 0.95);
                    t.behavior_probs = vec![p, 1.0 - p];
                }
                b.push_episode(e).unwrap();
                prop_assert!(b.len() <= cap);
                prop_assert_eq!(b.len(), b.episodes().map(|e| e.len()).sum::<usize>());
            }
            for e in b.episodes() {
                for t in &e.transitions {
                    prop_assert!((t.behavior_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
