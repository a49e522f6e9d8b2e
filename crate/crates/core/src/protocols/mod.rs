//! Protocol drivers: the push-pull baseline, fast-gossiping with random
//! walks, memory-model gossiping over dissemination trees, and leader
//! election. Each driver is a sequential consumer of the [`Engine`].

mod fast;
mod leader;
mod memory;
mod push_pull;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{ChannelKind, ChannelRef, Engine, EngineError, MessageSet, PhaseAccount, StepAccount, Tracking};
use crate::failure::{FailureInstant, FailurePlan};
use crate::graph::{Graph, GraphError, NodeId};

pub use fast::{run_fast_gossiping, WalkRoundStats, WalkToken};
pub use leader::run_leader_election;
pub use memory::{choose_leader, run_memory_gossiping, run_memory_gossiping_twice};
pub use push_pull::run_push_pull;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    PushPull,
    Fast,
    Memory,
    MemoryTwice,
    LeaderElection,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::PushPull, Algorithm::Fast, Algorithm::Memory, Algorithm::MemoryTwice, Algorithm::LeaderElection];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::PushPull => "push_pull",
            Algorithm::Fast => "fast",
            Algorithm::Memory => "memory",
            Algorithm::MemoryTwice => "memory_twice",
            Algorithm::LeaderElection => "leader_election",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Algorithm::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// `log2 n`, zero for `n <= 1`.
pub fn log2n(n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        (n as f64).log2()
    }
}

/// `log2 log2 n`, floored at 1 so tiny graphs never divide by zero.
pub fn loglog2n(n: usize) -> f64 {
    let l = log2n(n);
    if l <= 2.0 {
        1.0
    } else {
        l.log2().max(1.0)
    }
}

fn ceil_u32(x: f64) -> u32 {
    x.ceil().max(0.0) as u32
}

fn floor_u32(x: f64) -> u32 {
    x.floor().max(0.0) as u32
}

fn ceil_to_multiple_of_4(x: f64) -> u32 {
    4 * ceil_u32(x / 4.0)
}

/// Numeric protocol constants resolved for one graph size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConstants {
    pub n: usize,
    /// Walk-start coefficient: walks start with probability `ell / log2 n`.
    pub ell: f64,
    /// Long-step coefficient used by leader election.
    pub rho: f64,
    /// Walk move cap coefficient: cap is `ceil(c_moves * log2 n)`.
    pub c_moves: f64,
    pub phase1_steps: u32,
    pub phase2_rounds: u32,
    pub phase2_walk_steps: u32,
    pub phase2_bcast_steps: u32,
    /// Phase III length when not running to completion.
    pub phase3_steps: u32,
    pub memory_phase1_push_steps: u32,
    pub memory_phase1_pull_steps: u32,
    pub memory_phase3_steps: u32,
    pub leader_push_steps: u32,
    pub leader_pull_steps: u32,
    /// Step cap for push-pull and for run-to-completion extensions.
    pub step_cap: u32,
}

/// Default leader-election long-step coefficient.
pub const DEFAULT_RHO: f64 = 0.6;

impl ProtocolConstants {
    /// The tuned values used for the empirical study.
    pub fn table(n: usize) -> Self {
        let l = log2n(n);
        let ll = loglog2n(n);
        let rho = DEFAULT_RHO;
        let mut c = ProtocolConstants {
            n,
            ell: 1.0,
            rho,
            c_moves: 1.0,
            phase1_steps: ceil_u32(1.2 * ll),
            phase2_rounds: ceil_u32(l / ll),
            phase2_walk_steps: ceil_u32(l / ll + 2.0),
            phase2_bcast_steps: ceil_u32(0.5 * ll),
            phase3_steps: ceil_u32(8.0 * l / ll),
            memory_phase1_push_steps: ceil_to_multiple_of_4(2.0 * l),
            memory_phase1_pull_steps: floor_u32(2.0 * ll),
            memory_phase3_steps: floor_u32(l),
            leader_push_steps: 0,
            leader_pull_steps: 0,
            step_cap: ceil_u32(10.0 * l).max(1),
        };
        c.set_rho(rho);
        c
    }

    /// The step counts of the asymptotic pseudocode, for comparison runs.
    pub fn asymptotic(n: usize, ell: f64, rho: f64) -> Self {
        let l = log2n(n);
        let ll = loglog2n(n);
        let push = ceil_to_multiple_of_4(2.0 * l + 4.0 * rho * ll);
        let mut c = ProtocolConstants {
            ell,
            phase1_steps: ceil_u32(12.0 * l / ll),
            phase2_rounds: ceil_u32(4.0 * l / ll),
            phase2_walk_steps: ceil_u32(6.0 * ell * l),
            phase2_bcast_steps: ceil_u32(0.5 * ll),
            phase3_steps: ceil_u32(8.0 * l / ll),
            memory_phase1_push_steps: push,
            memory_phase1_pull_steps: ceil_u32(4.0 * rho * ll),
            memory_phase3_steps: push,
            ..Self::table(n)
        };
        c.set_rho(rho);
        c
    }

    /// Sets `rho` and the leader-election lengths derived from it.
    pub fn set_rho(&mut self, rho: f64) {
        let l = log2n(self.n);
        let ll = loglog2n(self.n);
        self.rho = rho;
        self.leader_push_steps = ceil_u32(l + rho * ll);
        self.leader_pull_steps = ceil_u32(rho * ll);
    }

    pub fn walk_probability(&self) -> f64 {
        let l = log2n(self.n);
        if l == 0.0 {
            0.0
        } else {
            (self.ell / l).min(1.0)
        }
    }

    pub fn moves_cap(&self) -> u32 {
        ceil_u32(self.c_moves * log2n(self.n)).max(1)
    }

    pub fn leader_candidate_probability(&self) -> f64 {
        let l = log2n(self.n);
        if self.n <= 1 {
            1.0
        } else {
            (l * l / self.n as f64).min(1.0)
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !self.memory_phase1_push_steps.is_multiple_of(4) {
            return Err(ProtocolError::InvalidConstants(format!(
                "memory_phase1_push_steps = {} is not a multiple of 4",
                self.memory_phase1_push_steps
            )));
        }
        for (name, v) in [("ell", self.ell), ("rho", self.rho), ("c_moves", self.c_moves)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ProtocolError::InvalidConstants(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid constants: {0}")]
    InvalidConstants(String),
    #[error("leader {0} out of range")]
    InvalidLeader(NodeId),
    #[error("failure plan is for {plan} nodes, graph has {graph}")]
    PlanMismatch { plan: usize, graph: usize },
}

/// Run-level switches shared by every protocol.
#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Extend the final phase until every healthy node knows everything
    /// (global knowledge), bounded by `step_cap`.
    pub run_to_completion: bool,
    /// Record the channel/delivery trace.
    pub trace: bool,
    /// Origins whose informed count is recorded every step.
    pub watch: Vec<NodeId>,
    /// `None` tracks every origin; otherwise exactly these origins.
    pub tracked: Option<Vec<NodeId>>,
    pub failure: Option<FailurePlan>,
    /// Independent trees for `run_memory_gossiping_twice`.
    pub tree_count: u32,
    /// Elect the memory-model leader first instead of picking one at random.
    pub elect_leader: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            run_to_completion: true,
            trace: false,
            watch: Vec::new(),
            tracked: None,
            failure: None,
            tree_count: 2,
            elect_leader: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Incomplete,
    StepCapExceeded,
    NoCandidate,
    LeaderFailed,
}

/// Per-origin informed counts: entry 0 before the first step, entry `t + 1`
/// after step `t`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchedTimeline {
    pub origin: NodeId,
    pub counts: Vec<u32>,
}

/// Everything a protocol run produces.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub algorithm: Algorithm,
    pub n: usize,
    pub status: RunStatus,
    pub completed: bool,
    pub steps_used: u64,
    pub account: StepAccount,
    pub max_packets_per_node: u64,
    pub packets_by_node: Vec<u32>,
    pub phases: Vec<PhaseAccount>,
    pub coverage_timeline: Vec<(u64, f64)>,
    pub watched: Vec<WatchedTimeline>,
    pub leader: Option<NodeId>,
    pub candidates: Vec<NodeId>,
    /// Tracked origins held by the leader after the gathering phase.
    pub gathered_at_leader: Option<MessageSet>,
    /// Exact gathering result over all origins: `gathered[v]` iff `v`'s
    /// original message reached a tree root.
    pub gathered: Option<Vec<bool>>,
    pub additional_lost: Option<u64>,
    pub victims: Vec<NodeId>,
    pub walk_rounds: Vec<WalkRoundStats>,
    pub trace: Option<crate::engine::Trace>,
}

impl RunOutcome {
    /// Adds the steps, channels and packets of a run that happened before
    /// this one on the same nodes. Phases are merged by name.
    pub fn absorb_costs(&mut self, earlier: &RunOutcome) {
        self.steps_used += earlier.steps_used;
        self.account.steps += earlier.account.steps;
        self.account.channels_opened += earlier.account.channels_opened;
        self.account.packets_sent += earlier.account.packets_sent;
        for (mine, theirs) in self.packets_by_node.iter_mut().zip(&earlier.packets_by_node) {
            *mine += theirs;
        }
        self.max_packets_per_node = self.packets_by_node.iter().copied().max().unwrap_or(0) as u64;
        for p in &earlier.phases {
            match self.phases.iter_mut().find(|q| q.phase == p.phase) {
                Some(q) => {
                    q.steps += p.steps;
                    q.channels_opened += p.channels_opened;
                    q.packets_sent += p.packets_sent;
                }
                None => self.phases.push(p.clone()),
            }
        }
    }
}

/// Engine plus the failure plan of a run.
pub(crate) struct World {
    pub engine: Engine,
    plan: Option<FailurePlan>,
    phase2_applied: bool,
}

impl World {
    pub fn new(n: usize, opts: &RunOptions) -> Result<Self, ProtocolError> {
        let tracking = match &opts.tracked {
            None => Tracking::full(n),
            Some(origins) => Tracking::subset(n, origins.clone()),
        };
        let mut engine = Engine::new(tracking);
        if opts.trace {
            engine.enable_trace();
        }
        engine.watch(&opts.watch);
        let plan = opts.failure.clone();
        if let Some(p) = &plan {
            if p.n != n {
                return Err(ProtocolError::PlanMismatch { plan: p.n, graph: n });
            }
            crate::failure::install(&mut engine, p);
        }
        Ok(World { engine, plan, phase2_applied: false })
    }

    /// Applies a `BeforePhase2` failure plan. Protocols without a second
    /// phase call this before their first step.
    pub fn before_phase2(&mut self) {
        if self.phase2_applied {
            return;
        }
        self.phase2_applied = true;
        if let Some(p) = &self.plan {
            if p.instant == FailureInstant::BeforePhase2 {
                crate::failure::apply(&mut self.engine, p);
            }
        }
    }

    pub fn victims(&self) -> Vec<NodeId> {
        self.plan.as_ref().map(|p| p.victims.clone()).unwrap_or_default()
    }

    pub fn outcome(self, algorithm: Algorithm, status: RunStatus) -> RunOutcome {
        let victims = self.victims();
        let mut engine = self.engine;
        let completed = status == RunStatus::Completed;
        RunOutcome {
            algorithm,
            n: engine.n(),
            status,
            completed,
            steps_used: engine.account().steps,
            account: engine.account(),
            max_packets_per_node: engine.max_packets_per_node(),
            packets_by_node: engine.packets_by_node().to_vec(),
            phases: engine.phases().to_vec(),
            coverage_timeline: engine.coverage_timeline().to_vec(),
            watched: engine.watched().map(|(origin, c)| WatchedTimeline { origin, counts: c.to_vec() }).collect(),
            leader: None,
            candidates: Vec::new(),
            gathered_at_leader: None,
            gathered: None,
            additional_lost: None,
            victims,
            walk_rounds: Vec::new(),
            trace: engine.take_trace(),
        }
    }
}

/// Opens a uniform channel from `v`; `None` if `v` is failed or isolated.
pub(crate) fn open_uniform<R: Rng>(
    engine: &mut Engine,
    g: &mut Graph,
    v: NodeId,
    rng: &mut R,
) -> Result<Option<ChannelRef>, ProtocolError> {
    if engine.is_failed(v) || !g.can_call(v) {
        return Ok(None);
    }
    let u = g.sample_neighbor(v, rng)?;
    Ok(engine.open_channel(v, u, ChannelKind::Uniform)?)
}

/// Opens an avoid-list channel from `v`; returns the channel and callee.
pub(crate) fn open_avoid<R: Rng>(
    engine: &mut Engine,
    g: &mut Graph,
    v: NodeId,
    avoid: &[NodeId],
    rng: &mut R,
) -> Result<Option<(ChannelRef, NodeId)>, ProtocolError> {
    if engine.is_failed(v) || !g.can_call(v) {
        return Ok(None);
    }
    let u = g.sample_neighbor_avoiding(v, avoid, rng)?;
    Ok(engine.open_channel(v, u, ChannelKind::Avoid)?.map(|ch| (ch, u)))
}

/// Runs `algorithm` with its default leader handling.
pub fn run(
    algorithm: Algorithm,
    g: &mut Graph,
    consts: &ProtocolConstants,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutcome, ProtocolError> {
    consts.validate()?;
    match algorithm {
        Algorithm::PushPull => run_push_pull(g, consts, seed, opts),
        Algorithm::Fast => run_fast_gossiping(g, consts, seed, opts),
        Algorithm::LeaderElection => run_leader_election(g, consts, seed, opts),
        Algorithm::Memory | Algorithm::MemoryTwice => {
            let mut election = None;
            let leader = if opts.elect_leader {
                let e = run_leader_election(g, consts, seed, &RunOptions { failure: None, ..opts.clone() })?;
                let leader = e.leader;
                election = Some(e);
                leader
            } else {
                Some(choose_leader(g.n(), seed))
            };
            let Some(leader) = leader else {
                return Ok(election.expect("elected"));
            };
            let mut out = if algorithm == Algorithm::Memory {
                run_memory_gossiping(g, consts, seed, leader, opts)?
            } else {
                run_memory_gossiping_twice(g, consts, seed, leader, opts)?
            };
            if let Some(e) = election {
                out.absorb_costs(&e);
                out.candidates = e.candidates;
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_constants_at_4096() {
        let c = ProtocolConstants::table(4096);
        // log2 n = 12, log2 log2 n = 3.585
        assert_eq!(c.phase1_steps, 5);
        assert_eq!(c.phase2_rounds, 4);
        assert_eq!(c.phase2_walk_steps, 6);
        assert_eq!(c.phase2_bcast_steps, 2);
        assert_eq!(c.memory_phase1_push_steps, 24);
        assert_eq!(c.memory_phase1_pull_steps, 7);
        assert_eq!(c.memory_phase3_steps, 12);
        assert_eq!(c.step_cap, 120);
        assert!((c.walk_probability() - 1.0 / 12.0).abs() < 1e-12);
        c.validate().unwrap();
    }

    #[test]
    fn push_steps_round_up_to_long_steps() {
        // 2 log2(10^5) = 33.2 -> 36
        assert_eq!(ProtocolConstants::table(100_000).memory_phase1_push_steps, 36);
        for n in [2, 3, 17, 1000, 65536] {
            assert_eq!(ProtocolConstants::table(n).memory_phase1_push_steps % 4, 0);
        }
    }

    #[test]
    fn tiny_graphs_are_guarded() {
        let c = ProtocolConstants::table(1);
        assert_eq!(c.walk_probability(), 0.0);
        assert_eq!(c.phase2_rounds, 0);
        assert_eq!(loglog2n(16), 2.0);
        assert_eq!(loglog2n(2), 1.0);
    }

    #[test]
    fn validate_rejects_partial_long_step() {
        let mut c = ProtocolConstants::table(4096);
        c.memory_phase1_push_steps = 10;
        assert!(matches!(c.validate(), Err(ProtocolError::InvalidConstants(_))));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
    }
}
