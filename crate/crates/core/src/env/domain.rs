use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnvError;

/// Number of value buckets tracked per constraint slot.
pub const MAX_BUCKETS: usize = 10;

/// Ontology sizes for one slot-filling domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub n_constraint_slots: usize,
    pub n_requests: usize,
    pub values_per_slot: Vec<usize>,
    pub n_entities: usize,
}

impl DomainSpec {
    /// Cambridge Restaurants: 3 constraint slots, 9 requestables, 268 values.
    pub fn cambridge_restaurants() -> Self {
        Self {
            name: "CR".into(),
            n_constraint_slots: 3,
            n_requests: 9,
            values_per_slot: vec![5, 3, 260],
            n_entities: 110,
        }
    }

    /// San Francisco Restaurants: 6 constraint slots, 11 requestables, 636 values.
    pub fn sf_restaurants() -> Self {
        Self {
            name: "SFR".into(),
            n_constraint_slots: 6,
            n_requests: 11,
            values_per_slot: vec![155, 4, 245, 5, 2, 225],
            n_entities: 271,
        }
    }

    /// Laptops: 11 constraint slots, 21 requestables, 257 values.
    pub fn laptops() -> Self {
        Self {
            name: "LAP".into(),
            n_constraint_slots: 11,
            n_requests: 21,
            values_per_slot: vec![5, 3, 3, 3, 2, 90, 60, 40, 21, 20, 10],
            n_entities: 123,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "cr" => Some(Self::cambridge_restaurants()),
            "sfr" => Some(Self::sf_restaurants()),
            "lap" => Some(Self::laptops()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n_constraint_slots == 0 || self.values_per_slot.len() != self.n_constraint_slots {
            return Err(EnvError::InvalidDomain(format!(
                "{}: values_per_slot has {} entries for {} constraint slots",
                self.name,
                self.values_per_slot.len(),
                self.n_constraint_slots
            )));
        }
        if self.values_per_slot.iter().any(|&v| v == 0) {
            return Err(EnvError::InvalidDomain(format!("{}: empty slot", self.name)));
        }
        if self.n_entities == 0 {
            return Err(EnvError::InvalidDomain(format!("{}: empty database", self.name)));
        }
        Ok(())
    }

    pub fn total_values(&self) -> usize {
        self.values_per_slot.iter().sum()
    }

    /// Value buckets tracked for `slot` (the "unknown" entry comes on top).
    pub fn buckets(&self, slot: usize) -> usize {
        self.values_per_slot[slot].min(MAX_BUCKETS)
    }

    /// `|A| = 2 * constraint slots + 3`.
    pub fn n_actions(&self) -> usize {
        2 * self.n_constraint_slots + 3
    }

    /// Length of the flat belief vector fed to the learners.
    pub fn belief_dim(&self) -> usize {
        let slots: usize = (0..self.n_constraint_slots).map(|s| self.buckets(s) + 1).sum();
        slots + self.n_requests + 2 + self.n_actions()
    }

    /// Generates the entity table. Fixed per domain name so every run sees the
    /// same database.
    pub fn database(&self) -> Database {
        let seed = self
            .name
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entities = (0..self.n_entities)
            .map(|_| {
                (0..self.n_constraint_slots)
                    .map(|s| rng.random_range(0..self.buckets(s)))
                    .collect()
            })
            .collect();
        Database { entities }
    }
}

#[derive(Debug, Clone)]
pub struct Database {
    /// Bucketed constraint values of every entity.
    pub entities: Vec<Vec<usize>>,
}

impl Database {
    /// Entity maximising the summed belief mass of its values; lowest index wins ties.
    pub fn best_match(&self, slot_beliefs: &[Vec<f64>]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, e) in self.entities.iter().enumerate() {
            let score: f64 = e.iter().zip(slot_beliefs).map(|(&v, b)| b[v]).sum();
            if score > best.1 {
                best = (i, score);
            }
        }
        best.0
    }
}
