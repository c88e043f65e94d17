use serde::{Deserialize, Serialize};

/// Summary machine act. Flat indices: `Request(0..n)`, `Confirm(0..n)`, then
/// `Inform`, `Repeat`, `Bye`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MachineAct {
    Request(usize),
    Confirm(usize),
    Inform,
    Repeat,
    Bye,
}

impl MachineAct {
    pub fn index(self, n_slots: usize) -> usize {
        match self {
            MachineAct::Request(s) => s,
            MachineAct::Confirm(s) => n_slots + s,
            MachineAct::Inform => 2 * n_slots,
            MachineAct::Repeat => 2 * n_slots + 1,
            MachineAct::Bye => 2 * n_slots + 2,
        }
    }

    pub fn from_index(index: usize, n_slots: usize) -> Option<Self> {
        let act = match index {
            i if i < n_slots => MachineAct::Request(i),
            i if i < 2 * n_slots => MachineAct::Confirm(i - n_slots),
            i if i == 2 * n_slots => MachineAct::Inform,
            i if i == 2 * n_slots + 1 => MachineAct::Repeat,
            i if i == 2 * n_slots + 2 => MachineAct::Bye,
            _ => return None,
        };
        Some(act)
    }
}

/// Semantic user act, as produced by the simulator and heard through the noisy channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "act", rename_all = "snake_case")]
pub enum UserAct {
    Inform { slot: usize, value: usize },
    Affirm { slot: usize, value: usize },
    /// "Not `wrong`, I want `correct`".
    Negate { slot: usize, wrong: usize, correct: usize },
    Request { slot: usize },
    Null,
    Bye,
}

/// Ranked recognition hypotheses with confidences summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    pub hypotheses: Vec<(UserAct, f64)>,
}

impl NBestList {
    pub fn certain(act: UserAct) -> Self {
        Self {
            hypotheses: vec![(act, 1.0)],
        }
    }

    pub fn top(&self) -> Option<&UserAct> {
        self.hypotheses.first().map(|(a, _)| a)
    }

    pub fn total_confidence(&self) -> f64 {
        self.hypotheses.iter().map(|(_, c)| c).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        for n in [3, 6, 11] {
            for i in 0..2 * n + 3 {
                let act = MachineAct::from_index(i, n).unwrap();
                assert_eq!(act.index(n), i);
            }
            assert!(MachineAct::from_index(2 * n + 3, n).is_none());
        }
        assert_eq!(MachineAct::from_index(6, 3), Some(MachineAct::Inform));
        assert_eq!(MachineAct::from_index(8, 3), Some(MachineAct::Bye));
    }
}
