//! Uniform, non-malicious node failures.
//!
//! A failed node stops communicating entirely: it opens no channels, sends
//! nothing and stores nothing it would have received.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Engine;
use crate::graph::NodeId;
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureInstant {
    /// After the first phase, before the second (or before the first step
    /// for protocols with a single phase).
    BeforePhase2,
    /// At the beginning of the given step.
    AtStep(u64),
    /// Each victim at an independent uniform step in `[0, horizon)`.
    UniformOverRun { horizon: u64 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FailureError {
    #[error("cannot fail {count} of {available} eligible nodes")]
    TooMany { count: usize, available: usize },
    #[error("uniform failure horizon must be positive")]
    EmptyHorizon,
}

/// A resolved failure plan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailurePlan {
    pub n: usize,
    pub instant: FailureInstant,
    /// Sorted, without duplicates.
    pub victims: Vec<NodeId>,
    /// Failure step per victim (same order) for `UniformOverRun`.
    pub fail_steps: Vec<u64>,
}

impl FailurePlan {
    /// Samples `count` victims uniformly without replacement. With
    /// `exclude`, that node is never a victim.
    pub fn resolve(
        n: usize,
        count: usize,
        instant: FailureInstant,
        exclude: Option<NodeId>,
        seed: u64,
    ) -> Result<Self, FailureError> {
        let available = n - usize::from(exclude.is_some_and(|e| e.index() < n));
        if count > available {
            return Err(FailureError::TooMany { count, available });
        }
        let mut rng = stream_rng(seed, Stream::Failure);
        let mut victims: Vec<NodeId> = index::sample(&mut rng, available, count)
            .into_iter()
            .map(|i| {
                // Skip over the excluded node by shifting indices past it.
                match exclude {
                    Some(e) if i >= e.index() => NodeId(i as u32 + 1),
                    _ => NodeId(i as u32),
                }
            })
            .collect();
        victims.sort_unstable();
        let fail_steps = match instant {
            FailureInstant::UniformOverRun { horizon } => {
                if horizon == 0 {
                    return Err(FailureError::EmptyHorizon);
                }
                victims.iter().map(|_| rng.gen_range(0..horizon)).collect()
            }
            _ => Vec::new(),
        };
        Ok(FailurePlan { n, instant, victims, fail_steps })
    }

    pub fn none(n: usize) -> Self {
        FailurePlan { n, instant: FailureInstant::BeforePhase2, victims: Vec::new(), fail_steps: Vec::new() }
    }

    pub fn count(&self) -> usize {
        self.victims.len()
    }

    pub fn is_victim(&self, v: NodeId) -> bool {
        self.victims.binary_search(&v).is_ok()
    }
}

/// Marks every victim failed now.
pub fn apply(engine: &mut Engine, plan: &FailurePlan) {
    for &v in &plan.victims {
        engine.fail(v);
    }
}

/// Registers step-triggered failures with the engine. `BeforePhase2` plans
/// are applied by the protocol at its phase boundary instead.
pub fn install(engine: &mut Engine, plan: &FailurePlan) {
    match plan.instant {
        FailureInstant::BeforePhase2 => {}
        FailureInstant::AtStep(k) => {
            for &v in &plan.victims {
                engine.schedule_failure(k, v);
            }
        }
        FailureInstant::UniformOverRun { .. } => {
            for (&v, &k) in plan.victims.iter().zip(&plan.fail_steps) {
                engine.schedule_failure(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_failures_change_nothing() {
        let plan = FailurePlan::resolve(100, 0, FailureInstant::BeforePhase2, None, 1).unwrap();
        let mut e = Engine::with_full_tracking(100);
        apply(&mut e, &plan);
        assert_eq!(e.failed_count(), 0);
    }

    #[test]
    fn exact_victim_count_without_duplicates() {
        let plan = FailurePlan::resolve(100_000, 1000, FailureInstant::BeforePhase2, None, 3).unwrap();
        let set: std::collections::BTreeSet<_> = plan.victims.iter().collect();
        assert_eq!(plan.victims.len(), 1000);
        assert_eq!(set.len(), 1000);
        assert!(plan.victims.iter().all(|v| v.index() < 100_000));
    }

    #[test]
    fn too_many_victims_rejected() {
        assert_eq!(
            FailurePlan::resolve(10, 11, FailureInstant::BeforePhase2, None, 0),
            Err(FailureError::TooMany { count: 11, available: 10 })
        );
        assert_eq!(
            FailurePlan::resolve(10, 10, FailureInstant::BeforePhase2, Some(NodeId(3)), 0),
            Err(FailureError::TooMany { count: 10, available: 9 })
        );
    }

    #[test]
    fn excluded_node_never_fails() {
        for seed in 0..50 {
            let plan = FailurePlan::resolve(20, 19, FailureInstant::BeforePhase2, Some(NodeId(7)), seed).unwrap();
            assert!(!plan.is_victim(NodeId(7)));
            assert_eq!(plan.count(), 19);
        }
    }

    #[test]
    fn victims_deterministic_in_seed() {
        let a = FailurePlan::resolve(500, 40, FailureInstant::AtStep(3), None, 9).unwrap();
        let b = FailurePlan::resolve(500, 40, FailureInstant::AtStep(3), None, 9).unwrap();
        let c = FailurePlan::resolve(500, 40, FailureInstant::AtStep(3), None, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.victims, c.victims);
    }

    #[test]
    fn uniform_instant_schedules_within_horizon() {
        let plan = FailurePlan::resolve(100, 30, FailureInstant::UniformOverRun { horizon: 5 }, None, 2).unwrap();
        assert_eq!(plan.fail_steps.len(), 30);
        assert!(plan.fail_steps.iter().all(|&s| s < 5));
        let mut e = Engine::with_full_tracking(100);
        install(&mut e, &plan);
        for _ in 0..5 {
            e.begin_step().unwrap();
            e.end_step().unwrap();
        }
        assert_eq!(e.failed_count(), 30);
    }
}
