use serde::{Deserialize, Serialize};

use super::acts::{NBestList, UserAct};
use super::domain::DomainSpec;
use super::MAX_TURNS;

/// Tracked dialogue state. Each slot distribution covers the slot's value
/// buckets followed by a final "unknown" entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub slots: Vec<Vec<f64>>,
    /// Requestable slots the user asked about and the system has not yet answered.
    pub requested: Vec<bool>,
    pub turn: usize,
    /// An entity is on the table and the user has not pushed back on it.
    pub offer_made: bool,
    pub last_act: Option<usize>,
}

impl BeliefState {
    pub fn initial(domain: &DomainSpec) -> Self {
        let slots = (0..domain.n_constraint_slots)
            .map(|s| {
                let mut p = vec![0.0; domain.buckets(s) + 1];
                *p.last_mut().expect("non-empty") = 1.0;
                p
            })
            .collect();
        Self {
            slots,
            requested: vec![false; domain.n_requests],
            turn: 0,
            offer_made: false,
            last_act: None,
        }
    }

    pub fn unknown_mass(&self, slot: usize) -> f64 {
        *self.slots[slot].last().expect("non-empty")
    }

    /// Most likely concrete value of `slot` and its mass (lowest index on ties).
    pub fn top_value(&self, slot: usize) -> (usize, f64) {
        let dist = &self.slots[slot];
        let values = &dist[..dist.len() - 1];
        let mut best = (0, values[0]);
        for (v, &p) in values.iter().enumerate().skip(1) {
            if p > best.1 {
                best = (v, p);
            }
        }
        best
    }

    /// Value masses without the unknown entry, one vector per slot.
    pub fn value_masses(&self) -> Vec<Vec<f64>> {
        self.slots
            .iter()
            .map(|d| d[..d.len() - 1].to_vec())
            .collect()
    }

    /// Flat learner input: slot distributions, request flags, turn / 25,
    /// offer flag, one-hot of the last machine act.
    pub fn to_vector(&self, n_actions: usize) -> Vec<f64> {
        let mut out: Vec<f64> = self.slots.iter().flatten().copied().collect();
        out.extend(self.requested.iter().map(|&r| if r { 1.0 } else { 0.0 }));
        out.push(self.turn as f64 / MAX_TURNS as f64);
        out.push(if self.offer_made { 1.0 } else { 0.0 });
        let mut onehot = vec![0.0; n_actions];
        if let Some(a) = self.last_act {
            onehot[a] = 1.0;
        }
        out.extend(onehot);
        out
    }

    pub fn distributions_valid(&self, tol: f64) -> bool {
        self.slots.iter().all(|d| {
            d.iter().all(|&p| p.is_finite() && p >= 0.0) && (d.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }
}

/// Confidence-weighted tracker update.
///
/// For every slot mentioned in the N-best list, hypothesised values collect
/// evidence `e[v]` (sum of confidences) and denied values collect `d[v]`. The
/// posterior is `prior * (1 - sum(e)) + e`, denied entries are scaled by
/// `1 - d[v]`, and the result is renormalised. A request in the top hypothesis
/// raises that slot's request flag.
pub fn update_belief(belief: &BeliefState, obs: &NBestList) -> BeliefState {
    let mut next = belief.clone();
    let n_slots = next.slots.len();
    let mut evidence: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; n_slots];
    fn touch(ev: &mut [Option<(Vec<f64>, Vec<f64>)>], slot: usize, len: usize) -> &mut (Vec<f64>, Vec<f64>) {
        ev[slot].get_or_insert_with(|| (vec![0.0; len], vec![0.0; len]))
    }

    for (act, conf) in &obs.hypotheses {
        match *act {
            UserAct::Inform { slot, value } | UserAct::Affirm { slot, value } if slot < n_slots => {
                let len = next.slots[slot].len();
                if value + 1 < len {
                    touch(&mut evidence, slot, len).0[value] += conf;
                }
            }
            UserAct::Negate {
                slot,
                wrong,
                correct,
            } if slot < n_slots => {
                let len = next.slots[slot].len();
                let (e, d) = touch(&mut evidence, slot, len);
                if correct + 1 < len {
                    e[correct] += conf;
                }
                if wrong + 1 < len {
                    d[wrong] += conf;
                }
            }
            _ => {}
        }
    }

    for (dist, ev) in next.slots.iter_mut().zip(evidence) {
        let Some((e, d)) = ev else { continue };
        let total: f64 = e.iter().sum::<f64>().min(1.0);
        for ((p, &ev), &dv) in dist.iter_mut().zip(&e).zip(&d) {
            *p = (*p * (1.0 - total) + ev) * (1.0 - dv.min(1.0));
        }
        let sum: f64 = dist.iter().sum();
        if sum > 0.0 {
            dist.iter_mut().for_each(|p| *p /= sum);
        } else {
            dist.iter_mut().for_each(|p| *p = 0.0);
            *dist.last_mut().expect("non-empty") = 1.0;
        }
    }

    if let Some(UserAct::Request { slot }) = obs.top() {
        if let Some(flag) = next.requested.get_mut(*slot) {
            *flag = true;
        }
    }
    next
}
