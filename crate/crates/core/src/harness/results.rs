//! Metrics rows, checkpoint aggregation and result tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunError;

/// Checkpoints averaged for the long-run protocol.
pub const LONG_RUN_WINDOW: (usize, usize, usize) = (6_000, 10_000, 1_000);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub algorithm: String,
    pub guidance: String,
    pub domain: String,
    pub ser: f64,
    pub seed: u64,
    pub checkpoint: usize,
    pub success_rate: f64,
    pub avg_reward: f64,
}

impl MetricsRow {
    pub fn label(&self) -> String {
        if self.guidance == "none" {
            self.algorithm.clone()
        } else {
            format!("{}-{}", self.algorithm, self.guidance)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedMetrics {
    pub seed: u64,
    pub success_rate: f64,
    pub avg_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMetrics {
    pub dialogue_index: usize,
    pub success_rate: f64,
    pub avg_reward: f64,
    pub per_seed: Vec<SeedMetrics>,
    /// Checkpoints averaged, e.g. `[6000, .., 10000]`.
    pub checkpoints: Vec<usize>,
}

/// Mean over seeds and over the checkpoints `from..=to` in steps of `step`.
/// Every seed present in `rows` must have every checkpoint in the window.
pub fn aggregate_checkpoints(
    rows: &[MetricsRow],
    from: usize,
    to: usize,
    step: usize,
) -> Result<CheckpointMetrics, RunError> {
    let wanted: Vec<usize> = (from..=to).step_by(step.max(1)).collect();
    let seeds: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
    if seeds.is_empty() {
        return Err(RunError::MissingCheckpoints("no metrics rows".into()));
    }
    let mut missing = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in &seeds {
        let mut s = 0.0;
        let mut r = 0.0;
        for &c in &wanted {
            match rows.iter().find(|x| x.seed == seed && x.checkpoint == c) {
                Some(row) => {
                    s += row.success_rate;
                    r += row.avg_reward;
                }
                None => missing.push(format!("seed {seed} checkpoint {c}")),
            }
        }
        let k = wanted.len() as f64;
        per_seed.push(SeedMetrics {
            seed,
            success_rate: s / k,
            avg_reward: r / k,
        });
    }
    if !missing.is_empty() {
        return Err(RunError::MissingCheckpoints(missing.join(", ")));
    }
    let n = per_seed.len() as f64;
    Ok(CheckpointMetrics {
        dialogue_index: to,
        success_rate: per_seed.iter().map(|s| s.success_rate).sum::<f64>() / n,
        avg_reward: per_seed.iter().map(|s| s.avg_reward).sum::<f64>() / n,
        per_seed,
        checkpoints: wanted,
    })
}

/// Mean over seeds of the rows at the latest checkpoint.
pub fn final_checkpoint(rows: &[MetricsRow]) -> Option<CheckpointMetrics> {
    let last = rows.iter().map(|r| r.checkpoint).max()?;
    aggregate_checkpoints(rows, last, last, 1).ok()
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// CSV with columns algorithm, guidance, domain, ser, seed, checkpoint,
/// success_rate, avg_reward.
pub fn write_results(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<(), RunError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record([
        "algorithm",
        "guidance",
        "domain",
        "ser",
        "seed",
        "checkpoint",
        "success_rate",
        "avg_reward",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| RunError::Io(e.into_error()))?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>, RunError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub domain: String,
    pub ser: f64,
    /// `(success_rate, avg_reward)` per learner label.
    pub cells: BTreeMap<String, (f64, f64)>,
}

/// One row per (domain, ser). Each cell averages the long-run window when all
/// of its checkpoints are present, otherwise the final checkpoint.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, u64), BTreeMap<String, Vec<MetricsRow>>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.domain.clone(), r.ser.to_bits()))
            .or_default()
            .entry(r.label())
            .or_default()
            .push(r.clone());
    }
    let (from, to, step) = LONG_RUN_WINDOW;
    groups
        .into_iter()
        .map(|((domain, ser_bits), labels)| SummaryRow {
            domain,
            ser: f64::from_bits(ser_bits),
            cells: labels
                .into_iter()
                .filter_map(|(label, rs)| {
                    let m = aggregate_checkpoints(&rs, from, to, step).ok().or_else(|| final_checkpoint(&rs))?;
                    Some((label, (m.success_rate, m.avg_reward)))
                })
                .collect(),
        })
        .collect()
}

/// Pivot table: domain, ser, then `<label> success` / `<label> reward` columns.
pub fn write_summary(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<(), RunError> {
    let summary = summarize(rows);
    let labels: BTreeSet<String> = summary.iter().flat_map(|s| s.cells.keys().cloned()).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["domain".to_string(), "ser".to_string()];
    for l in &labels {
        header.push(format!("{l} success"));
        header.push(format!("{l} reward"));
    }
    w.write_record(&header)?;
    for s in &summary {
        let mut rec = vec![s.domain.clone(), s.ser.to_string()];
        for l in &labels {
            match s.cells.get(l) {
                Some((succ, rew)) => {
                    rec.push(format!("{:.4}", succ));
                    rec.push(format!("{:.3}", rew));
                }
                None => {
                    rec.push(String::new());
                    rec.push(String::new());
                }
            }
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| RunError::Io(e.into_error()))?;
    write_atomic(path.as_ref(), &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, checkpoint: usize, success: f64) -> MetricsRow {
        MetricsRow {
            algorithm: "stoc-dqn".into(),
            guidance: "bc".into(),
            domain: "LAP".into(),
            ser: 0.3,
            seed,
            checkpoint,
            success_rate: success,
            avg_reward: 20.0 * success - 8.0,
        }
    }

    #[test]
    fn arithmetic_mean_over_five_checkpoints() {
        let rows: Vec<_> = [0.8, 0.85, 0.9, 0.95, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &s)| row(0, 6_000 + 1_000 * i, s))
            .collect();
        let m = aggregate_checkpoints(&rows, 6_000, 10_000, 1_000).unwrap();
        assert!((m.success_rate - 0.9).abs() < 1e-12);
        assert_eq!(m.checkpoints, vec![6_000, 7_000, 8_000, 9_000, 10_000]);
    }

    #[test]
    fn earlier_checkpoints_ignored() {
        let mut rows: Vec<_> = (1..=10).map(|k| row(0, k * 1_000, 0.9)).collect();
        rows[0].success_rate = 0.0;
        rows[4].success_rate = 0.0;
        let m = aggregate_checkpoints(&rows, 6_000, 10_000, 1_000).unwrap();
        assert!((m.success_rate - 0.9).abs() < 1e-12);
    }

    #[test]
    fn missing_checkpoints_listed() {
        let rows: Vec<_> = [6_000, 7_000, 9_000].iter().map(|&c| row(2, c, 0.5)).collect();
        let e = aggregate_checkpoints(&rows, 6_000, 10_000, 1_000).unwrap_err().to_string();
        assert!(e.contains("seed 2 checkpoint 8000") && e.contains("seed 2 checkpoint 10000"), "{e}");
    }

    #[test]
    fn csv_round_trip_and_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_results(&[], &path).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap().trim(),
            "algorithm,guidance,domain,ser,seed,checkpoint,success_rate,avg_reward"
        );
        let rows = vec![row(0, 1_000, 0.123456789), row(1, 1_000, 1.0 / 3.0)];
        write_results(&rows, &path).unwrap();
        assert_eq!(read_results(&path).unwrap(), rows);
    }

    #[test]
    fn summary_one_row_per_domain_and_ser() {
        let mut rows = Vec::new();
        for d in ["CR", "SFR", "LAP"] {
            for ser in [0.0, 0.15, 0.3] {
                for alg in ["hdc", "stoc-acer"] {
                    rows.push(MetricsRow {
                        algorithm: alg.into(),
                        guidance: "none".into(),
                        domain: d.into(),
                        ser,
                        ..row(0, 1_000, 0.5)
                    });
                }
            }
        }
        let s = summarize(&rows);
        assert_eq!(s.len(), 9);
        assert!(s.iter().all(|r| r.cells.len() == 2));
        let dir = tempfile::tempdir().unwrap();
        write_summary(&rows, dir.path().join("summary.csv")).unwrap();
        let text = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(text.lines().count(), 10);
    }
}
