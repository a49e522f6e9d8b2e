//! Random small engine instances, a brute-force replay oracle and the
//! invariant checks shared by the property tests and the acceptance run.

#![allow(dead_code)]

use gossipsim::engine::{ChannelKind, Content, Direction, Engine, Payload, Tracking};
use gossipsim::graph::{generate, GraphModel, NodeId};
use gossipsim::protocols::{run_fast_gossiping, ProtocolConstants, RunOptions};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Snapshot,
    Set,
    Origin,
    Walk,
    Id,
}

#[derive(Clone, Debug)]
pub struct Op {
    pub opener: u32,
    pub callee: u32,
    pub push: Option<Kind>,
    pub pull: Option<Kind>,
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub n: usize,
    pub failed: Vec<bool>,
    /// Channel operations per step, in the order they are issued.
    pub steps: Vec<Vec<Op>>,
}

fn kind() -> impl Strategy<Value = Kind> {
    prop_oneof![Just(Kind::Snapshot), Just(Kind::Set), Just(Kind::Origin), Just(Kind::Walk), Just(Kind::Id)]
}

/// Up to 16 nodes, a few failed ones, one to four steps in which each node
/// opens at most one channel. Operations within a step come in random order.
pub fn instance() -> impl Strategy<Value = Instance> {
    (2usize..=16)
        .prop_flat_map(|n| {
            let op = (0..n as u32, proptest::option::of(kind()), proptest::option::of(kind()));
            let step = proptest::collection::vec(proptest::option::weighted(0.7, op), n)
                .prop_map(|row| {
                    row.into_iter()
                        .enumerate()
                        .filter_map(|(v, o)| o.map(|(callee, push, pull)| Op { opener: v as u32, callee, push, pull }))
                        .collect::<Vec<_>>()
                })
                .prop_shuffle();
            (
                Just(n),
                proptest::collection::vec(proptest::bool::weighted(0.15), n),
                proptest::collection::vec(step, 1..5),
            )
        })
        .prop_map(|(n, failed, steps)| Instance { n, failed, steps })
}

fn transfers(op: &Op) -> [(Option<Kind>, usize, usize, Direction); 2] {
    let (a, b) = (op.opener as usize, op.callee as usize);
    [(op.push, a, b, Direction::Push), (op.pull, b, a, Direction::Pull)]
}

/// Expected bitmask sets after every step, from start-of-step copies.
pub fn oracle(inst: &Instance) -> Vec<Vec<u32>> {
    let mut sets: Vec<u32> = (0..inst.n).map(|v| 1 << v).collect();
    let mut history = Vec::new();
    for step in &inst.steps {
        let before = sets.clone();
        for op in step {
            if inst.failed[op.opener as usize] {
                continue;
            }
            for (kind, from, to, _) in transfers(op) {
                let Some(kind) = kind else { continue };
                if inst.failed[from] || inst.failed[to] {
                    continue;
                }
                sets[to] |= match kind {
                    Kind::Snapshot | Kind::Set | Kind::Walk => before[from],
                    Kind::Origin => 1 << from,
                    Kind::Id => 0,
                };
            }
        }
        history.push(sets.clone());
    }
    history
}

/// Channels opened, packets sent in total and per sender.
pub fn expected_account(inst: &Instance) -> (u64, u64, Vec<u64>) {
    let mut channels = 0;
    let mut per_node = vec![0u64; inst.n];
    for op in inst.steps.iter().flatten() {
        if inst.failed[op.opener as usize] {
            continue;
        }
        channels += 1;
        for (kind, from, _, _) in transfers(op) {
            if kind.is_some() && !inst.failed[from] {
                per_node[from] += 1;
            }
        }
    }
    (channels, per_node.iter().sum(), per_node)
}

pub fn masks(engine: &Engine) -> Vec<u32> {
    (0..engine.n())
        .map(|v| engine.message_set(NodeId(v as u32)).origins(engine.tracking()).fold(0u32, |m, o| m | 1 << o.0))
        .collect()
}

/// Runs `inst` on a fresh engine, in the given order or reversed within
/// each step. Returns the engine and the sets after every step.
pub fn execute(inst: &Instance, tracking: Tracking, reversed: bool, trace: bool) -> (Engine, Vec<Vec<u32>>) {
    let mut e = Engine::new(tracking);
    if trace {
        e.enable_trace();
    }
    for (v, &f) in inst.failed.iter().enumerate() {
        if f {
            e.fail(NodeId(v as u32));
        }
    }
    let mut history = Vec::new();
    for (i, step) in inst.steps.iter().enumerate() {
        e.set_phase(if i % 2 == 0 { "even" } else { "odd" });
        e.begin_step().unwrap();
        let mut ops: Vec<&Op> = step.iter().collect();
        if reversed {
            ops.reverse();
        }
        for op in ops {
            let Some(ch) = e.open_channel(NodeId(op.opener), NodeId(op.callee), ChannelKind::Uniform).unwrap() else {
                continue;
            };
            for (kind, from, _, dir) in transfers(op) {
                let Some(kind) = kind else { continue };
                let payload = match kind {
                    Kind::Snapshot => Payload::Snapshot,
                    Kind::Set => Payload::Set(e.message_set(NodeId(from as u32))),
                    Kind::Origin => Payload::Origin(NodeId(from as u32)),
                    Kind::Walk => Payload::Walk { body: None, moves: 1 },
                    Kind::Id => Payload::Id(from as u32),
                };
                e.send(ch, dir, payload).unwrap();
            }
        }
        e.end_step().unwrap();
        history.push(masks(&e));
    }
    (e, history)
}

/// Final sets match the oracle whatever the order of operations in a step.
pub fn check_order_independence(inst: &Instance) -> Result<(), TestCaseError> {
    let want = oracle(inst);
    for reversed in [false, true] {
        let (_, got) = execute(inst, Tracking::full(inst.n), reversed, false);
        prop_assert_eq!(&got, &want, "reversed = {}", reversed);
    }
    Ok(())
}

/// No node ever loses an origin.
pub fn check_monotone(inst: &Instance) -> Result<(), TestCaseError> {
    let (_, history) = execute(inst, Tracking::full(inst.n), false, false);
    let mut prev: Vec<u32> = (0..inst.n).map(|v| 1 << v).collect();
    for sets in history {
        for (a, b) in prev.iter().zip(&sets) {
            prop_assert_eq!(a & !b, 0, "origin lost: {:b} -> {:b}", a, b);
        }
        prev = sets;
    }
    Ok(())
}

pub fn check_accounting(inst: &Instance) -> Result<(), TestCaseError> {
    let (e, _) = execute(inst, Tracking::full(inst.n), false, true);
    let (channels, packets, per_node) = expected_account(inst);
    let acc = e.account();
    prop_assert_eq!(acc.steps, inst.steps.len() as u64);
    prop_assert_eq!(acc.channels_opened, channels);
    prop_assert_eq!(acc.packets_sent, packets);
    let by_node: Vec<u64> = e.packets_by_node().iter().map(|&p| p as u64).collect();
    prop_assert_eq!(&by_node, &per_node);
    prop_assert_eq!(e.max_packets_per_node(), per_node.iter().copied().max().unwrap_or(0));
    let phase_sum = |f: fn(&gossipsim::engine::PhaseAccount) -> u64| e.phases().iter().map(f).sum::<u64>();
    prop_assert_eq!(phase_sum(|p| p.steps), acc.steps);
    prop_assert_eq!(phase_sum(|p| p.channels_opened), acc.channels_opened);
    prop_assert_eq!(phase_sum(|p| p.packets_sent), acc.packets_sent);
    let trace = e.trace().unwrap();
    prop_assert_eq!(trace.channels.len() as u64, channels);
    prop_assert_eq!(trace.channels.iter().map(|c| c.packets as u64).sum::<u64>(), packets);
    Ok(())
}

/// Every origin a node holds arrived through a chain of logged deliveries,
/// and every such chain delivered it.
pub fn check_conservation(inst: &Instance) -> Result<(), TestCaseError> {
    let (e, _) = execute(inst, Tracking::full(inst.n), false, true);
    let reach = e.trace().unwrap().replay_reachability(inst.n);
    let replayed: Vec<u32> =
        reach.iter().map(|r| r.iter().enumerate().fold(0u32, |m, (o, &b)| if b { m | 1 << o } else { m })).collect();
    prop_assert_eq!(masks(&e), replayed);
    for d in &e.trace().unwrap().deliveries {
        prop_assert!(!inst.failed[d.to.index()] && !inst.failed[d.from.index()]);
    }
    Ok(())
}

/// Tracking a subset of origins gives the full result restricted to it.
pub fn check_subset(inst: &Instance, pick: u32) -> Result<(), TestCaseError> {
    let origins: Vec<NodeId> = (0..inst.n as u32).filter(|o| pick >> o & 1 == 1).map(NodeId).collect();
    let (_, got) = execute(inst, Tracking::subset(inst.n, origins), false, false);
    let want = oracle(inst);
    for (g, w) in got.iter().zip(&want) {
        let restricted: Vec<u32> = w.iter().map(|m| m & pick).collect();
        prop_assert_eq!(g, &restricted);
    }
    Ok(())
}

/// Runs fast-gossiping with a small move cap and checks every walk round:
/// tokens are conserved, never travel past the cap, and the retirements
/// seen in the delivery log match the round statistics.
pub fn check_walk_conservation(n: usize, seed: u64) -> Result<(), String> {
    let mut g = generate(GraphModel::er_log_squared(n), seed).map_err(|e| e.to_string())?;
    let mut consts = ProtocolConstants::table(n);
    consts.c_moves = 0.3;
    consts.phase2_walk_steps = 10;
    let cap = consts.moves_cap();
    let opts = RunOptions { trace: true, ..RunOptions::default() };
    let out = run_fast_gossiping(&mut g, &consts, seed, &opts).map_err(|e| e.to_string())?;
    let mut retired = 0;
    for r in &out.walk_rounds {
        if !r.conserved() {
            return Err(format!("round not conserved: {r:?}"));
        }
        if r.max_moves_enqueued >= cap {
            return Err(format!("token enqueued at move {} with cap {cap}", r.max_moves_enqueued));
        }
        retired += r.retired;
    }
    let trace = out.trace.as_ref().ok_or("no trace")?;
    let mut at_cap = 0;
    for d in &trace.deliveries {
        if let Content::Walk { moves } = d.content {
            if moves > cap {
                return Err(format!("delivery with {moves} moves beyond cap {cap}"));
            }
            at_cap += u64::from(moves == cap);
        }
    }
    if at_cap != retired {
        return Err(format!("{at_cap} deliveries at the cap, {retired} retirements"));
    }
    if retired == 0 {
        return Err("no token reached the cap".into());
    }
    Ok(())
}
