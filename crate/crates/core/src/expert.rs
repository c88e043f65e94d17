//! Handcrafted request/confirm/inform controller. Sees only the belief state.

use serde::{Deserialize, Serialize};

use crate::env::{BeliefState, MachineAct};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertThresholds {
    /// Below this top-value mass a slot counts as unknown and gets requested.
    pub theta_known: f64,
    /// Below this (and at least `theta_known`) a slot gets confirmed.
    pub theta_confirm: f64,
}

impl Default for ExpertThresholds {
    fn default() -> Self {
        Self {
            theta_known: 0.3,
            theta_confirm: 0.8,
        }
    }
}

impl ExpertThresholds {
    pub fn validate(&self) -> Result<(), String> {
        let ok = 0.0 < self.theta_known
            && self.theta_known < self.theta_confirm
            && self.theta_confirm < 1.0;
        if ok {
            Ok(())
        } else {
            Err(format!(
                "expert thresholds must satisfy 0 < theta_known ({}) < theta_confirm ({}) < 1",
                self.theta_known, self.theta_confirm
            ))
        }
    }
}

/// Lowest-mass slot whose top value mass falls in `[lo, hi)`; lowest index on ties.
fn weakest_slot(belief: &BeliefState, lo: f64, hi: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for s in 0..belief.slots.len() {
        let (_, mass) = belief.top_value(s);
        if mass >= lo && mass < hi && best.is_none_or(|(_, m)| mass < m) {
            best = Some((s, mass));
        }
    }
    best.map(|(s, _)| s)
}

/// Priority rules: request unknown slots, confirm shaky ones, offer an entity,
/// answer pending requests, otherwise close.
pub fn expert_act(belief: &BeliefState, thresholds: &ExpertThresholds) -> MachineAct {
    if let Some(s) = weakest_slot(belief, f64::NEG_INFINITY, thresholds.theta_known) {
        return MachineAct::Request(s);
    }
    if let Some(s) = weakest_slot(belief, thresholds.theta_known, thresholds.theta_confirm) {
        return MachineAct::Confirm(s);
    }
    if !belief.offer_made {
        return MachineAct::Inform;
    }
    if belief.requested.iter().any(|&r| r) {
        return MachineAct::Inform;
    }
    MachineAct::Bye
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::DomainSpec;

    fn cr_belief() -> BeliefState {
        BeliefState::initial(&DomainSpec::cambridge_restaurants())
    }

    fn set_top(b: &mut BeliefState, slot: usize, mass: f64) {
        let d = &mut b.slots[slot];
        d.iter_mut().for_each(|p| *p = 0.0);
        d[0] = mass;
        *d.last_mut().unwrap() = 1.0 - mass;
    }

    #[test]
    fn initial_belief_requests_first_slot() {
        assert_eq!(
            expert_act(&cr_belief(), &ExpertThresholds::default()),
            MachineAct::Request(0)
        );
    }

    #[test]
    fn lowest_mass_slot_first() {
        let mut b = cr_belief();
        set_top(&mut b, 0, 0.2);
        set_top(&mut b, 1, 0.1);
        set_top(&mut b, 2, 1.0);
        assert_eq!(expert_act(&b, &ExpertThresholds::default()), MachineAct::Request(1));
    }

    #[test]
    fn confirm_then_inform_then_answer_then_bye() {
        let t = ExpertThresholds::default();
        let mut b = cr_belief();
        for s in 0..3 {
            set_top(&mut b, s, 1.0);
        }
        set_top(&mut b, 2, 0.5);
        assert_eq!(expert_act(&b, &t), MachineAct::Confirm(2));
        set_top(&mut b, 2, 1.0);
        assert_eq!(expert_act(&b, &t), MachineAct::Inform);
        b.offer_made = true;
        b.requested[3] = true;
        assert_eq!(expert_act(&b, &t), MachineAct::Inform);
        b.requested[3] = false;
        assert_eq!(expert_act(&b, &t), MachineAct::Bye);
    }

    #[test]
    fn threshold_validation() {
        assert!(ExpertThresholds::default().validate().is_ok());
        let bad = ExpertThresholds {
            theta_known: 0.9,
            theta_confirm: 0.8,
        };
        assert!(bad.validate().is_err());
    }
}
