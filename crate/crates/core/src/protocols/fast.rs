//! Fast-gossiping: a short push phase, rounds of random walks that collect
//! messages and activate a broadcast, then push-pull until done.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::push_pull::push_pull_step;
use super::{open_uniform, Algorithm, ProtocolConstants, ProtocolError, RunOptions, RunOutcome, RunStatus, World};
use crate::engine::{Content, Direction, Engine, MessageSet, Payload, SendOutcome};
use crate::graph::{Graph, NodeId};
use crate::rng::{stream_rng, Stream};

/// A travelling random walk: the bundle it carries plus its real moves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkToken {
    pub payload: MessageSet,
    pub moves: u32,
}

/// Token bookkeeping for one Phase II round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkRoundStats {
    pub started: u64,
    /// Arrived with the move cap reached and were not re-enqueued.
    pub retired: u64,
    /// Sent to a failed node.
    pub dropped: u64,
    /// Still queued when the walk steps ended.
    pub resident: u64,
    /// Nodes active when the broadcast began.
    pub activated: u64,
    /// Largest `moves` value on any enqueued token.
    pub max_moves_enqueued: u32,
}

impl WalkRoundStats {
    pub fn conserved(&self) -> bool {
        self.started == self.retired + self.dropped + self.resident
    }
}

fn push_everyone(engine: &mut Engine, g: &mut Graph, rng: &mut impl Rng) -> Result<(), ProtocolError> {
    engine.begin_step()?;
    for v in 0..engine.n() as u32 {
        if let Some(ch) = open_uniform(engine, g, NodeId(v), rng)? {
            engine.send(ch, Direction::Push, Payload::Snapshot)?;
        }
    }
    engine.end_step()?;
    Ok(())
}

/// Handles walk tokens that arrived this step: under the cap they are
/// enqueued carrying the receiver's updated set, at the cap they retire.
fn absorb_walks(
    engine: &Engine,
    deliveries: &mut [crate::engine::Delivery],
    queues: &mut [VecDeque<WalkToken>],
    cap: u32,
    stats: &mut WalkRoundStats,
) {
    // Same-step arrivals are queued in sender order.
    deliveries.sort_by_key(|d| (d.to, d.from));
    for d in deliveries.iter() {
        let Content::Walk { moves } = d.content else { continue };
        assert!(moves <= cap, "walk token forwarded past the move cap");
        if moves < cap {
            let payload = engine.message_set(d.to);
            queues[d.to.index()].push_back(WalkToken { payload, moves });
            stats.max_moves_enqueued = stats.max_moves_enqueued.max(moves);
        } else {
            stats.retired += 1;
        }
    }
}

/// Runs fast-gossiping on `g`.
pub fn run_fast_gossiping(
    g: &mut Graph,
    consts: &ProtocolConstants,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutcome, ProtocolError> {
    let n = g.n();
    let mut world = World::new(n, opts)?;
    let cap = consts.moves_cap();
    let walk_p = consts.walk_probability();

    world.engine.set_phase("phase1");
    let mut rng = stream_rng(seed, Stream::FastPhase1);
    for _ in 0..consts.phase1_steps {
        push_everyone(&mut world.engine, g, &mut rng)?;
    }

    world.before_phase2();
    world.engine.set_phase("phase2");
    let mut start_rng = stream_rng(seed, Stream::WalkStart);
    let mut move_rng = stream_rng(seed, Stream::WalkMove);
    let mut bcast_rng = stream_rng(seed, Stream::Broadcast);
    let mut queues: Vec<VecDeque<WalkToken>> = vec![VecDeque::new(); n];
    let mut rounds = Vec::with_capacity(consts.phase2_rounds as usize);
    for _ in 0..consts.phase2_rounds {
        let mut stats = WalkRoundStats::default();
        let engine = &mut world.engine;

        // Walk starts: one coin per node, drawn for every node.
        engine.begin_step()?;
        for v in 0..n as u32 {
            let starts = start_rng.gen_bool(walk_p);
            if !starts {
                continue;
            }
            if let Some(ch) = open_uniform(engine, g, NodeId(v), &mut move_rng)? {
                match engine.send(ch, Direction::Push, Payload::Walk { body: None, moves: 1 })? {
                    SendOutcome::Queued => stats.started += 1,
                    SendOutcome::Dropped => {
                        stats.started += 1;
                        stats.dropped += 1;
                    }
                    SendOutcome::SenderFailed => {}
                }
            }
        }
        let mut deliveries = engine.end_step()?;
        absorb_walks(engine, &mut deliveries, &mut queues, cap, &mut stats);

        for _ in 0..consts.phase2_walk_steps {
            engine.begin_step()?;
            for (v, queue) in queues.iter_mut().enumerate() {
                let v = NodeId(v as u32);
                if queue.is_empty() || engine.is_failed(v) {
                    continue;
                }
                if let Some(ch) = open_uniform(engine, g, v, &mut move_rng)? {
                    let token = queue.pop_front().expect("non-empty queue");
                    let payload = Payload::Walk { body: Some(token.payload), moves: token.moves + 1 };
                    if engine.send(ch, Direction::Push, payload)? == SendOutcome::Dropped {
                        stats.dropped += 1;
                    }
                }
            }
            let mut deliveries = engine.end_step()?;
            absorb_walks(engine, &mut deliveries, &mut queues, cap, &mut stats);
        }
        stats.resident = queues.iter().map(|q| q.len() as u64).sum();

        let mut active: Vec<bool> = queues.iter().map(|q| !q.is_empty()).collect();
        stats.activated = active.iter().filter(|&&a| a).count() as u64;
        for _ in 0..consts.phase2_bcast_steps {
            engine.begin_step()?;
            for v in (0..n).filter(|&v| active[v]) {
                if let Some(ch) = open_uniform(engine, g, NodeId(v as u32), &mut bcast_rng)? {
                    engine.send(ch, Direction::Push, Payload::Snapshot)?;
                }
            }
            for d in engine.end_step()? {
                active[d.to.index()] = true;
            }
        }
        for q in &mut queues {
            q.clear();
        }
        rounds.push(stats);
    }

    world.engine.set_phase("phase3");
    let mut rng = stream_rng(seed, Stream::FastPhase3);
    if opts.run_to_completion {
        let mut steps = 0;
        while !world.engine.is_complete() && steps < consts.step_cap {
            push_pull_step(&mut world.engine, g, &mut rng)?;
            steps += 1;
        }
    } else {
        for _ in 0..consts.phase3_steps {
            push_pull_step(&mut world.engine, g, &mut rng)?;
        }
    }
    let status = if world.engine.is_complete() {
        RunStatus::Completed
    } else if opts.run_to_completion && world.engine.healthy_count() > 0 {
        RunStatus::StepCapExceeded
    } else {
        RunStatus::Incomplete
    };
    let mut out = world.outcome(Algorithm::Fast, status);
    out.walk_rounds = rounds;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, GraphModel};

    #[test]
    fn single_node_starts_no_walks() {
        let mut g = generate(GraphModel::ErdosRenyi { n: 1, p: 1.0 }, 0).unwrap();
        let out = run_fast_gossiping(&mut g, &ProtocolConstants::table(1), 0, &RunOptions::default()).unwrap();
        assert!(out.completed);
        assert!(out.walk_rounds.iter().all(|r| r.started == 0));
        assert_eq!(out.account.packets_sent, 0);
    }

    #[test]
    fn walks_are_conserved_and_capped() {
        let n = 512;
        let mut g = generate(GraphModel::er_log_squared(n), 3).unwrap();
        let mut consts = ProtocolConstants::table(n);
        // Cap of 3 moves with 10 walk steps forces retirements.
        consts.c_moves = 0.3;
        consts.phase2_walk_steps = 10;
        let out = run_fast_gossiping(&mut g, &consts, 8, &RunOptions::default()).unwrap();
        assert_eq!(consts.moves_cap(), 3);
        assert!(out.walk_rounds.iter().any(|r| r.retired > 0));
        for r in &out.walk_rounds {
            assert!(r.conserved(), "{r:?}");
            assert!(r.max_moves_enqueued < consts.moves_cap());
        }
        assert!(out.completed);
    }

    #[test]
    fn phases_cover_all_packets() {
        let n = 256;
        let mut g = generate(GraphModel::er_log_squared(n), 1).unwrap();
        let out = run_fast_gossiping(&mut g, &ProtocolConstants::table(n), 2, &RunOptions::default()).unwrap();
        let names: Vec<&str> = out.phases.iter().map(|p| p.phase.as_str()).collect();
        assert_eq!(names, vec!["phase1", "phase2", "phase3"]);
        let total: u64 = out.phases.iter().map(|p| p.packets_sent).sum();
        assert_eq!(total, out.account.packets_sent);
    }
}
