//! Per-run metrics and per-group summaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::PhaseAccount;
use crate::protocols::RunOutcome;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub steps: u64,
    pub channels_opened: u64,
    pub packets_sent: u64,
    pub avg_packets_per_node: f64,
    pub max_packets_per_node: u64,
    pub per_phase: Vec<PhaseAccount>,
    /// `(step, informed fraction)` over tracked origins and all nodes.
    pub informed_fraction_timeline: Vec<(u64, f64)>,
    pub additional_lost: Option<u64>,
    pub completed: bool,
}

pub fn record(out: &RunOutcome) -> RunMetrics {
    RunMetrics {
        steps: out.steps_used,
        channels_opened: out.account.channels_opened,
        packets_sent: out.account.packets_sent,
        avg_packets_per_node: out.account.packets_sent as f64 / out.n.max(1) as f64,
        max_packets_per_node: out.max_packets_per_node,
        per_phase: out.phases.clone(),
        informed_fraction_timeline: out.coverage_timeline.clone(),
        additional_lost: out.additional_lost,
        completed: out.completed,
    }
}

/// `additional_lost / F`, zero when nothing failed.
pub fn loss_ratio(additional_lost: u64, failures: usize) -> f64 {
    if failures == 0 {
        0.0
    } else {
        additional_lost as f64 / failures as f64
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot summarize an empty group")]
pub struct EmptyGroup;

/// Mean, sample standard deviation, minimum and maximum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Result<Stat, EmptyGroup> {
        if xs.is_empty() {
            return Err(EmptyGroup);
        }
        let k = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / k;
        let stddev =
            if xs.len() < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt() };
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Stat { mean, stddev, min, max })
    }
}

/// Identifies the runs that are aggregated together.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub algorithm: String,
    pub n: usize,
    pub failures: usize,
    pub constants_hash: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub key: GroupKey,
    pub runs: usize,
    pub steps: Stat,
    pub packets_per_node: Stat,
    pub max_packets_per_node: Stat,
    pub additional_lost: Option<Stat>,
    pub completed_fraction: f64,
    /// Whether the step counts of the group span at most two adjacent
    /// values, so that the minimum plus one step covers every run.
    pub steps_plus_one_sufficient: bool,
}

pub fn summarize(key: GroupKey, runs: &[RunMetrics]) -> Result<SweepSummary, EmptyGroup> {
    let col = |f: &dyn Fn(&RunMetrics) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
    let steps = Stat::of(&col(&|r| r.steps as f64))?;
    let lost: Vec<f64> = runs.iter().filter_map(|r| r.additional_lost.map(|x| x as f64)).collect();
    Ok(SweepSummary {
        key,
        runs: runs.len(),
        steps,
        packets_per_node: Stat::of(&col(&|r| r.avg_packets_per_node))?,
        max_packets_per_node: Stat::of(&col(&|r| r.max_packets_per_node as f64))?,
        additional_lost: Stat::of(&lost).ok(),
        completed_fraction: runs.iter().filter(|r| r.completed).count() as f64 / runs.len() as f64,
        steps_plus_one_sufficient: steps.max - steps.min <= 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(steps: u64, packets: u64) -> RunMetrics {
        RunMetrics {
            steps,
            channels_opened: 0,
            packets_sent: packets,
            avg_packets_per_node: packets as f64 / 10.0,
            max_packets_per_node: 0,
            per_phase: vec![],
            informed_fraction_timeline: vec![],
            additional_lost: None,
            completed: true,
        }
    }

    fn key() -> GroupKey {
        GroupKey { algorithm: "push_pull".into(), n: 10, failures: 0, constants_hash: 0 }
    }

    #[test]
    fn sample_stddev() {
        let s = Stat::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(s.mean, 5.0);
        assert!((s.stddev - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!((s.min, s.max), (2.0, 9.0));
    }

    #[test]
    fn empty_group_is_an_error() {
        assert_eq!(summarize(key(), &[]), Err(EmptyGroup));
    }

    #[test]
    fn plus_one_rule() {
        let s = summarize(key(), &[m(12, 10), m(13, 10), m(12, 10)]).unwrap();
        assert!(s.steps_plus_one_sufficient);
        let s = summarize(key(), &[m(12, 10), m(14, 10)]).unwrap();
        assert!(!s.steps_plus_one_sufficient);
    }

    #[test]
    fn ratio_with_no_failures_is_zero() {
        assert_eq!(loss_ratio(0, 0), 0.0);
        assert_eq!(loss_ratio(30, 1000), 0.03);
    }
}
