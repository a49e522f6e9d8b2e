//! Gossiping with constant memory per node.
//!
//! Phase I spreads the leader's message over long-steps of four steps each
//! and records, in every node's list `l_v`, whom it contacted and when. The
//! recorded links form a dissemination tree. Phase II replays the tree in
//! reverse to gather every message at the leader, and Phase III broadcasts
//! the gathered set with the Phase I schedule.

use rand::Rng;

use super::{open_avoid, Algorithm, ProtocolConstants, ProtocolError, RunOptions, RunOutcome, RunStatus, World};
use crate::engine::{reaching_target, ChannelKind, Delivery, Direction, Engine, MessageSet, Payload};
use crate::graph::{Graph, NodeId};
use crate::rng::{stream_rng, SimRng, Stream};

const UNINFORMED: i64 = i64::MAX;

/// One `l_v` entry: a link to `node` used at (tree-local) step `step`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemEntry {
    pub node: NodeId,
    pub step: u32,
}

/// A random node, drawn from the leader-choice stream.
pub fn choose_leader(n: usize, seed: u64) -> NodeId {
    let mut rng = stream_rng(seed, Stream::LeaderChoice);
    NodeId(rng.gen_range(0..n.max(1) as u32))
}

/// Per-node state of one dissemination tree.
struct Tree {
    root: NodeId,
    /// Step at which the root's message first arrived; the root sits at -4
    /// so that it is active in long-step 0.
    informed: Vec<i64>,
    l: Vec<[Option<MemEntry>; 4]>,
    /// Parent and step for nodes informed by a pull.
    provenance: Vec<Option<MemEntry>>,
}

impl Tree {
    fn new(n: usize, root: NodeId) -> Self {
        let mut informed = vec![UNINFORMED; n];
        informed[root.index()] = -4;
        Tree { root, informed, l: vec![[None; 4]; n], provenance: vec![None; n] }
    }

    fn avoid(&self, v: usize) -> Vec<NodeId> {
        self.l[v].iter().flatten().map(|e| e.node).collect()
    }

    fn reset_for_broadcast(&mut self) {
        self.informed.fill(UNINFORMED);
        self.informed[self.root.index()] = -4;
        self.l.fill([None; 4]);
    }

    /// Push steps `0..steps`: a node first informed in long-step `j - 1`
    /// contacts four avoid-distinct neighbors during long-step `j`.
    fn push_loop(
        &mut self,
        engine: &mut Engine,
        g: &mut Graph,
        steps: u32,
        payload: impl Fn(NodeId) -> Payload,
        rng: &mut SimRng,
    ) -> Result<(), ProtocolError> {
        for s in 0..steps {
            let long_step = (s / 4) as i64;
            engine.begin_step()?;
            for v in 0..engine.n() {
                let t = self.informed[v];
                if t == UNINFORMED || t.div_euclid(4) != long_step - 1 {
                    continue;
                }
                let avoid = self.avoid(v);
                if let Some((ch, u)) = open_avoid(engine, g, NodeId(v as u32), &avoid, rng)? {
                    self.l[v][(s % 4) as usize] = Some(MemEntry { node: u, step: s });
                    engine.send(ch, Direction::Push, payload(NodeId(v as u32)))?;
                }
            }
            for d in engine.end_step()? {
                let t = &mut self.informed[d.to.index()];
                if *t == UNINFORMED {
                    *t = s as i64;
                }
            }
        }
        Ok(())
    }

    /// One pull step at tree-local step `s`: uninformed nodes call an
    /// avoid-distinct neighbor, informed callees answer.
    fn pull_step(
        &mut self,
        engine: &mut Engine,
        g: &mut Graph,
        s: u32,
        payload: &impl Fn(NodeId) -> Payload,
        rng: &mut SimRng,
    ) -> Result<usize, ProtocolError> {
        engine.begin_step()?;
        for v in 0..engine.n() {
            if self.informed[v] != UNINFORMED {
                continue;
            }
            let avoid = self.avoid(v);
            if let Some((ch, u)) = open_avoid(engine, g, NodeId(v as u32), &avoid, rng)? {
                self.l[v][(s % 4) as usize] = Some(MemEntry { node: u, step: s });
                if self.informed[u.index()] < s as i64 {
                    engine.send(ch, Direction::Pull, payload(u))?;
                }
            }
        }
        let deliveries = engine.end_step()?;
        for d in &deliveries {
            let v = d.to.index();
            if self.informed[v] == UNINFORMED {
                self.informed[v] = s as i64;
                let e = MemEntry { node: d.from, step: s };
                self.provenance[v] = Some(e);
                self.l[v][0] = Some(e);
            }
        }
        Ok(deliveries.len())
    }

    fn uninformed_healthy(&self, engine: &Engine) -> usize {
        (0..engine.n()).filter(|&v| self.informed[v] == UNINFORMED && !engine.is_failed(NodeId(v as u32))).count()
    }

    /// Replays the recorded links in reverse, moving whole sets toward the
    /// root. Returns the `(reverse step, from, to)` delivery log.
    fn gather(
        &self,
        engine: &mut Engine,
        push_steps: u32,
        total_steps: u32,
    ) -> Result<Vec<(u64, NodeId, NodeId)>, ProtocolError> {
        // (opener, callee, opener sends) per forward step.
        let mut by_step: Vec<Vec<(NodeId, NodeId, bool)>> = vec![Vec::new(); total_steps as usize];
        for v in 0..engine.n() {
            let me = NodeId(v as u32);
            if let Some(p) = self.provenance[v] {
                by_step[p.step as usize].push((me, p.node, true));
            }
            for e in self.l[v].iter().flatten() {
                if e.step < push_steps {
                    by_step[e.step as usize].push((me, e.node, false));
                }
            }
        }
        let mut log = Vec::new();
        for r in 0..total_steps {
            let s = (total_steps - 1 - r) as usize;
            engine.begin_step()?;
            for &(v, u, opener_sends) in &by_step[s] {
                if let Some(ch) = engine.open_channel(v, u, ChannelKind::Addressed)? {
                    let dir = if opener_sends { Direction::Push } else { Direction::Pull };
                    engine.send(ch, dir, Payload::Snapshot)?;
                }
            }
            let deliveries: Vec<Delivery> = engine.end_step()?;
            log.extend(deliveries.iter().map(|d| (r as u64, d.from, d.to)));
        }
        Ok(log)
    }
}

/// Result of one tree: its world and what reached the root.
struct TreeRun {
    world: World,
    status: RunStatus,
    gathered_at_leader: Option<MessageSet>,
    reach: Vec<bool>,
}

fn run_tree(
    g: &mut Graph,
    consts: &ProtocolConstants,
    seed: u64,
    index: u32,
    leader: NodeId,
    opts: &RunOptions,
) -> Result<TreeRun, ProtocolError> {
    let n = g.n();
    if leader.index() >= n {
        return Err(ProtocolError::InvalidLeader(leader));
    }
    let mut world = World::new(n, opts)?;
    let mut tree = Tree::new(n, leader);
    let p1 = consts.memory_phase1_push_steps;
    let p2 = consts.memory_phase1_pull_steps;
    let mut rng = stream_rng(seed, Stream::MemoryTree(index));

    let engine = &mut world.engine;
    engine.set_phase("phase1");
    tree.push_loop(engine, g, p1, |_| Payload::Origin(leader), &mut rng)?;
    for k in 0..p2 {
        tree.pull_step(engine, g, p1 + k, &|_| Payload::Origin(leader), &mut rng)?;
    }

    world.before_phase2();
    let engine = &mut world.engine;
    if engine.is_failed(leader) {
        return Ok(TreeRun { world, status: RunStatus::LeaderFailed, gathered_at_leader: None, reach: vec![false; n] });
    }
    engine.set_phase("phase2");
    let log = tree.gather(engine, p1, p1 + p2)?;
    let reach = reaching_target(n, &log, leader);
    let gathered_at_leader = Some(engine.message_set(leader));

    engine.set_phase("phase3");
    let mut rng = stream_rng(seed, Stream::MemoryRebroadcast(index));
    tree.reset_for_broadcast();
    let p3 = consts.memory_phase3_steps;
    tree.push_loop(engine, g, p3, |_| Payload::Snapshot, &mut rng)?;
    let mut k = 0;
    let mut left = tree.uninformed_healthy(engine);
    loop {
        let more = if opts.run_to_completion { left > 0 && k < consts.step_cap } else { k < p2 };
        if !more {
            break;
        }
        left -= tree.pull_step(engine, g, p3 + k, &|_| Payload::Snapshot, &mut rng)?;
        k += 1;
    }
    let status = if engine.is_complete() {
        RunStatus::Completed
    } else if opts.run_to_completion && left > 0 {
        RunStatus::StepCapExceeded
    } else {
        RunStatus::Incomplete
    };
    Ok(TreeRun { world, status, gathered_at_leader, reach })
}

fn additional_lost(world: &World, covered: &[bool]) -> u64 {
    let e = &world.engine;
    (0..e.n()).filter(|&v| !covered[v] && !e.is_failed(NodeId(v as u32))).count() as u64
}

/// Runs the memory-model algorithm once with the given leader.
pub fn run_memory_gossiping(
    g: &mut Graph,
    consts: &ProtocolConstants,
    seed: u64,
    leader: NodeId,
    opts: &RunOptions,
) -> Result<RunOutcome, ProtocolError> {
    let t = run_tree(g, consts, seed, 0, leader, opts)?;
    let lost = additional_lost(&t.world, &t.reach);
    let mut out = t.world.outcome(Algorithm::Memory, t.status);
    out.leader = Some(leader);
    out.gathered_at_leader = t.gathered_at_leader;
    out.gathered = Some(t.reach);
    out.additional_lost = Some(lost);
    Ok(out)
}

/// Runs `opts.tree_count` independent trees under one leader and one failure
/// plan. A healthy node is covered if its message reached the leader in any
/// tree; the final sets of all trees are combined.
pub fn run_memory_gossiping_twice(
    g: &mut Graph,
    consts: &ProtocolConstants,
    seed: u64,
    leader: NodeId,
    opts: &RunOptions,
) -> Result<RunOutcome, ProtocolError> {
    let trees = opts.tree_count.max(1);
    let first = run_tree(g, consts, seed, 0, leader, opts)?;
    let mut acc = first.world;
    let mut gathered = first.gathered_at_leader;
    let mut covered = first.reach;
    let mut later: Vec<RunOutcome> = Vec::new();
    let mut leader_failed = first.status == RunStatus::LeaderFailed;
    for i in 1..trees {
        let t = run_tree(g, consts, seed, i, leader, &RunOptions { trace: false, ..opts.clone() })?;
        leader_failed |= t.status == RunStatus::LeaderFailed;
        acc.engine.absorb_store(t.world.engine.store());
        for (c, r) in covered.iter_mut().zip(&t.reach) {
            *c |= r;
        }
        if let (Some(a), Some(b)) = (gathered.as_mut(), t.gathered_at_leader.as_ref()) {
            a.union_with(b);
        }
        later.push(t.world.outcome(Algorithm::MemoryTwice, t.status));
    }
    let lost = additional_lost(&acc, &covered);
    let status = if leader_failed {
        RunStatus::LeaderFailed
    } else if acc.engine.is_complete() {
        RunStatus::Completed
    } else {
        RunStatus::Incomplete
    };
    let mut out = acc.outcome(Algorithm::MemoryTwice, status);
    for t in &later {
        out.absorb_costs(t);
    }
    out.leader = Some(leader);
    out.gathered_at_leader = gathered;
    out.gathered = Some(covered);
    out.additional_lost = Some(lost);
    Ok(out)
}
