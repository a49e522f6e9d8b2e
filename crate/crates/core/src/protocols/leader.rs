//! Leader election: a few random candidates spread their identifiers with
//! open-avoid pushes, then everyone pulls to catch up on the minimum.

use rand::Rng;

use super::{open_avoid, Algorithm, ProtocolConstants, ProtocolError, RunOptions, RunOutcome, RunStatus, World};
use crate::engine::{Content, Direction, Engine, Payload};
use crate::graph::{Graph, NodeId};
use crate::rng::{stream_rng, SimRng, Stream};

/// The last four contacts of every node, slot `t mod 4` written at step `t`.
struct AvoidRing {
    slots: Vec<[Option<NodeId>; 4]>,
}

impl AvoidRing {
    fn new(n: usize) -> Self {
        AvoidRing { slots: vec![[None; 4]; n] }
    }

    /// Contacts of the three previous steps.
    fn avoid(&self, v: usize, t: u64) -> Vec<NodeId> {
        let cur = (t % 4) as usize;
        (0..4).filter(|&i| i != cur).filter_map(|i| self.slots[v][i]).collect()
    }

    fn record(&mut self, v: usize, t: u64, u: NodeId) {
        self.slots[v][(t % 4) as usize] = Some(u);
    }
}

struct State {
    min_id: Vec<Option<u32>>,
    active: Vec<bool>,
    ring: AvoidRing,
}

impl State {
    fn absorb(&mut self, deliveries: &[crate::engine::Delivery]) {
        for d in deliveries {
            if let Content::Id(id) = d.content {
                let m = &mut self.min_id[d.to.index()];
                *m = Some(m.map_or(id, |x| x.min(id)));
                self.active[d.to.index()] = true;
            }
        }
    }
}

fn push_step(engine: &mut Engine, g: &mut Graph, st: &mut State, rng: &mut SimRng) -> Result<(), ProtocolError> {
    let t = engine.step_index();
    engine.begin_step()?;
    for v in 0..engine.n() {
        if !st.active[v] {
            continue;
        }
        let Some(id) = st.min_id[v] else { continue };
        let avoid = st.ring.avoid(v, t);
        if let Some((ch, u)) = open_avoid(engine, g, NodeId(v as u32), &avoid, rng)? {
            st.ring.record(v, t, u);
            engine.send(ch, Direction::Push, Payload::Id(id))?;
        }
    }
    let deliveries = engine.end_step()?;
    st.absorb(&deliveries);
    Ok(())
}

fn pull_step(engine: &mut Engine, g: &mut Graph, st: &mut State, rng: &mut SimRng) -> Result<(), ProtocolError> {
    let t = engine.step_index();
    engine.begin_step()?;
    for v in 0..engine.n() {
        let avoid = st.ring.avoid(v, t);
        if let Some((ch, u)) = open_avoid(engine, g, NodeId(v as u32), &avoid, rng)? {
            st.ring.record(v, t, u);
            if let Some(id) = st.min_id[u.index()] {
                engine.send(ch, Direction::Pull, Payload::Id(id))?;
            }
        }
    }
    let deliveries = engine.end_step()?;
    st.absorb(&deliveries);
    Ok(())
}

/// Runs leader election on `g`. Node IDs are node indices, so the winner is
/// the smallest-index candidate.
pub fn run_leader_election(
    g: &mut Graph,
    consts: &ProtocolConstants,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutcome, ProtocolError> {
    let n = g.n();
    // Identifiers never touch message sets, so no origin is tracked.
    let opts = RunOptions { tracked: Some(Vec::new()), ..opts.clone() };
    let mut world = World::new(n, &opts)?;
    world.before_phase2();

    let p = consts.leader_candidate_probability();
    let mut coin = stream_rng(seed, Stream::LeaderCandidates);
    let candidates: Vec<NodeId> = (0..n as u32).filter(|_| coin.gen_bool(p)).map(NodeId).collect();
    let mut st = State { min_id: vec![None; n], active: vec![false; n], ring: AvoidRing::new(n) };
    for &c in &candidates {
        if !world.engine.is_failed(c) {
            st.min_id[c.index()] = Some(c.0);
            st.active[c.index()] = true;
        }
    }

    let engine = &mut world.engine;
    engine.set_phase("election_push");
    let mut rng = stream_rng(seed, Stream::LeaderPush);
    for _ in 0..1 + consts.leader_push_steps {
        push_step(engine, g, &mut st, &mut rng)?;
    }
    engine.set_phase("election_pull");
    let mut rng = stream_rng(seed, Stream::LeaderPull);
    for _ in 0..consts.leader_pull_steps {
        pull_step(engine, g, &mut st, &mut rng)?;
    }

    let healthy = |v: usize| !engine.is_failed(NodeId(v as u32));
    let global_min = candidates.iter().copied().filter(|c| healthy(c.index())).min();
    let self_claimed: Vec<NodeId> =
        (0..n).filter(|&v| healthy(v) && st.min_id[v] == Some(v as u32)).map(|v| NodeId(v as u32)).collect();
    let leader = match (global_min, self_claimed.as_slice()) {
        (Some(m), [only]) if *only == m => Some(m),
        _ => None,
    };
    let status = match (global_min, leader) {
        (None, _) => RunStatus::NoCandidate,
        (Some(_), Some(l)) if (0..n).filter(|&v| healthy(v)).all(|v| st.min_id[v] == Some(l.0)) => RunStatus::Completed,
        _ => RunStatus::Incomplete,
    };
    let mut out = world.outcome(Algorithm::LeaderElection, status);
    out.leader = leader;
    out.candidates = candidates;
    Ok(out)
}
