use super::{open_uniform, Algorithm, ProtocolConstants, ProtocolError, RunOptions, RunOutcome, RunStatus, World};
use crate::engine::{Direction, Engine, Payload};
use crate::graph::{Graph, NodeId};
use crate::rng::{stream_rng, SimRng, Stream};

/// One push-pull step: every healthy node calls a uniform neighbor and both
/// ends exchange their whole sets.
pub(crate) fn push_pull_step(engine: &mut Engine, g: &mut Graph, rng: &mut SimRng) -> Result<(), ProtocolError> {
    engine.begin_step()?;
    for v in 0..engine.n() as u32 {
        if let Some(ch) = open_uniform(engine, g, NodeId(v), rng)? {
            engine.send(ch, Direction::Push, Payload::Snapshot)?;
            engine.send(ch, Direction::Pull, Payload::Snapshot)?;
        }
    }
    engine.end_step()?;
    Ok(())
}

/// Repeats push-pull steps until every healthy node knows every healthy
/// origin, or `step_cap` steps have run.
pub fn run_push_pull(
    g: &mut Graph,
    consts: &ProtocolConstants,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutcome, ProtocolError> {
    let mut world = World::new(g.n(), opts)?;
    let mut rng = stream_rng(seed, Stream::PushPull);
    world.before_phase2();
    world.engine.set_phase("push_pull");
    let mut steps = 0;
    while !world.engine.is_complete() && steps < consts.step_cap {
        push_pull_step(&mut world.engine, g, &mut rng)?;
        steps += 1;
    }
    let status = if world.engine.is_complete() {
        RunStatus::Completed
    } else if world.engine.healthy_count() == 0 {
        RunStatus::Incomplete
    } else {
        RunStatus::StepCapExceeded
    };
    Ok(world.outcome(Algorithm::PushPull, status))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, GraphModel};

    #[test]
    fn single_node_is_done_immediately() {
        let mut g = generate(GraphModel::ErdosRenyi { n: 1, p: 1.0 }, 0).unwrap();
        let out = run_push_pull(&mut g, &ProtocolConstants::table(1), 0, &RunOptions::default()).unwrap();
        assert!(out.completed);
        assert_eq!(out.steps_used, 0);
        assert_eq!(out.account.packets_sent, 0);
    }

    #[test]
    fn k2_takes_one_step_and_four_packets() {
        let mut g = generate(GraphModel::ErdosRenyi { n: 2, p: 1.0 }, 0).unwrap();
        let out = run_push_pull(&mut g, &ProtocolConstants::table(2), 5, &RunOptions::default()).unwrap();
        assert!(out.completed);
        assert_eq!(out.steps_used, 1);
        assert_eq!(out.account.packets_sent, 4);
        assert_eq!(out.account.channels_opened, 2);
    }

    #[test]
    fn disconnected_graph_hits_step_cap() {
        let mut g = Graph::Static(crate::graph::StaticGraph::from_edges(4, &[(0, 1), (2, 3)]).unwrap());
        let consts = ProtocolConstants::table(4);
        let out = run_push_pull(&mut g, &consts, 1, &RunOptions::default()).unwrap();
        assert_eq!(out.status, RunStatus::StepCapExceeded);
        assert_eq!(out.steps_used, consts.step_cap as u64);
    }
}
