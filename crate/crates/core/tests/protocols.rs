use gossipsim::failure::{FailureInstant, FailurePlan};
use gossipsim::graph::{generate, Graph, GraphModel, NodeId};
use gossipsim::protocols::{choose_leader, run, Algorithm, ProtocolConstants, RunOptions, RunStatus};

fn er(n: usize, seed: u64) -> Graph {
    generate(GraphModel::er_log_squared(n), seed).unwrap()
}

#[test]
fn same_seed_same_run() {
    let n = 512;
    let consts = ProtocolConstants::table(n);
    for alg in Algorithm::ALL {
        let a = run(alg, &mut er(n, 4), &consts, 17, &RunOptions::default()).unwrap();
        let b = run(alg, &mut er(n, 4), &consts, 17, &RunOptions::default()).unwrap();
        assert_eq!(a.account, b.account, "{alg}");
        assert_eq!(a.packets_by_node, b.packets_by_node, "{alg}");
        assert_eq!(a.phases, b.phases, "{alg}");
        assert_eq!(a.leader, b.leader, "{alg}");
        assert_eq!(a.status, b.status, "{alg}");
    }
}

#[test]
fn every_algorithm_completes_on_configuration_graphs() {
    let n = 1024;
    let consts = ProtocolConstants::table(n);
    for alg in Algorithm::ALL {
        let mut g = generate(GraphModel::Configuration { n, d: 32 }, 2).unwrap();
        let out = run(alg, &mut g, &consts, 5, &RunOptions::default()).unwrap();
        assert!(out.completed, "{alg}: {:?}", out.status);
    }
}

#[test]
fn every_candidate_on_a_clique_elects_node_zero() {
    // log2(16)^2 / 16 = 1, so every node is a candidate.
    let n = 16;
    let mut g = generate(GraphModel::ErdosRenyi { n, p: 1.0 }, 0).unwrap();
    let out = run(Algorithm::LeaderElection, &mut g, &ProtocolConstants::table(n), 3, &RunOptions::default()).unwrap();
    assert_eq!(out.candidates.len(), n);
    assert_eq!(out.leader, Some(NodeId(0)));
    assert_eq!(out.status, RunStatus::Completed);
}

#[test]
fn elected_leader_is_the_least_candidate() {
    let n = 2048;
    let consts = ProtocolConstants::table(n);
    for seed in 0..5 {
        let out = run(Algorithm::LeaderElection, &mut er(n, seed), &consts, seed, &RunOptions::default()).unwrap();
        assert_eq!(out.leader, out.candidates.iter().min().copied(), "seed {seed}");
        assert!(out.completed);
        assert_eq!(out.account.packets_sent, out.phases.iter().map(|p| p.packets_sent).sum::<u64>());
    }
}

#[test]
fn electing_the_memory_leader_adds_its_cost() {
    let n = 1024;
    let consts = ProtocolConstants::table(n);
    let given = run(Algorithm::Memory, &mut er(n, 1), &consts, 9, &RunOptions::default()).unwrap();
    let opts = RunOptions { elect_leader: true, ..RunOptions::default() };
    let elected = run(Algorithm::Memory, &mut er(n, 1), &consts, 9, &opts).unwrap();
    assert!(elected.completed);
    assert_eq!(elected.leader, elected.candidates.iter().min().copied());
    let names: Vec<&str> = elected.phases.iter().map(|p| p.phase.as_str()).collect();
    assert!(names.contains(&"election_push") && names.contains(&"election_pull"), "{names:?}");
    let election: u64 = elected.phases.iter().filter(|p| p.phase.starts_with("election")).map(|p| p.packets_sent).sum();
    assert!(election > 0);
    assert!(!given.phases.iter().any(|p| p.phase.starts_with("election")));
}

#[test]
fn healthy_nodes_still_complete_after_failures() {
    let n = 2048;
    let consts = ProtocolConstants::table(n);
    for alg in [Algorithm::PushPull, Algorithm::Fast] {
        let plan = FailurePlan::resolve(n, 100, FailureInstant::BeforePhase2, None, 3).unwrap();
        let opts = RunOptions { failure: Some(plan), ..RunOptions::default() };
        let out = run(alg, &mut er(n, 8), &consts, 3, &opts).unwrap();
        assert!(out.completed, "{alg}");
        assert_eq!(out.victims.len(), 100);
    }
}

#[test]
fn lost_count_does_not_depend_on_tracking() {
    let n = 4096;
    let consts = ProtocolConstants::table(n);
    let seed = 21;
    let leader = choose_leader(n, seed);
    let plan = FailurePlan::resolve(n, 300, FailureInstant::BeforePhase2, Some(leader), seed).unwrap();
    let mut tracked = plan.victims.clone();
    tracked.extend((0..n as u32).step_by(7).map(NodeId).filter(|v| !plan.is_victim(*v)));
    let full = RunOptions { failure: Some(plan.clone()), tree_count: 3, ..RunOptions::default() };
    let subset = RunOptions { tracked: Some(tracked), ..full.clone() };
    let a = run(Algorithm::MemoryTwice, &mut er(n, 6), &consts, seed, &full).unwrap();
    let b = run(Algorithm::MemoryTwice, &mut er(n, 6), &consts, seed, &subset).unwrap();
    assert_eq!(a.additional_lost, b.additional_lost);
    assert_eq!(a.account, b.account);
    assert!(a.additional_lost.is_some());
}

#[test]
fn more_trees_gather_at_least_as_much() {
    let n = 4096;
    let consts = ProtocolConstants::table(n);
    let seed = 4;
    let leader = choose_leader(n, seed);
    let plan = FailurePlan::resolve(n, 400, FailureInstant::BeforePhase2, Some(leader), seed).unwrap();
    let mut last = u64::MAX;
    for trees in 1..=3 {
        let opts = RunOptions { failure: Some(plan.clone()), tree_count: trees, ..RunOptions::default() };
        let out = run(Algorithm::MemoryTwice, &mut er(n, 2), &consts, seed, &opts).unwrap();
        let lost = out.additional_lost.unwrap();
        assert!(lost <= last, "{trees} trees lost {lost}, fewer trees lost {last}");
        last = lost;
    }
}
