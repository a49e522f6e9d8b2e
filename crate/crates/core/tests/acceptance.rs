//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gossipsim::config::ExperimentConfig;
use gossipsim::experiment::{cells, run_cell, run_experiment, Cell, ExperimentOptions};
use gossipsim::graph::{generate, NodeId};
use gossipsim::protocols::{log2n, loglog2n, run, Algorithm, ProtocolConstants, RunOptions, RunOutcome, RunStatus};

const COMPARISON: &str = include_str!("../../../configs/comparison.toml");
const ROBUSTNESS: &str = include_str!("../../../configs/robustness.toml");

struct Report {
    lines: Vec<(u32, bool, String)>,
}

impl Report {
    fn add(&mut self, id: u32, pass: bool, detail: String) {
        println!("criterion {id}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id, pass, detail));
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn per_node(o: &RunOutcome) -> f64 {
    o.account.packets_sent as f64 / o.n as f64
}

/// Runs every algorithm of `cfg` on one shared graph per `(n, repetition)`,
/// with the seeds the experiment runner would use.
fn shared_graph_runs(cfg: &ExperimentConfig, n: usize, reps: u32, algs: &[Algorithm]) -> Vec<Vec<RunOutcome>> {
    let consts = cfg.constants.resolve(n);
    let opts = RunOptions { run_to_completion: cfg.modes.run_to_completion, ..RunOptions::default() };
    let mut out = vec![Vec::new(); algs.len()];
    for repetition in 0..reps {
        let cell = |algorithm| Cell { algorithm, n, failures: 0, repetition };
        let mut g = generate(cfg.graph.model(n), cell(algs[0]).graph_seed(cfg.master_seed)).unwrap();
        for (i, &alg) in algs.iter().enumerate() {
            let seed = cell(alg).seed(cfg.master_seed);
            out[i].push(run(alg, &mut g, &consts, seed, &opts).unwrap());
        }
    }
    out
}

fn comparison(report: &mut Report) {
    let cfg = ExperimentConfig::parse(COMPARISON).unwrap();
    let algs = [Algorithm::Memory, Algorithm::Fast, Algorithm::PushPull];
    assert!(algs.iter().all(|a| cfg.algorithms.contains(a)));
    assert!(cfg.repetitions >= 20);
    let mut bound_ok = true;
    let mut order_ok = true;
    let mut c1 = Vec::new();
    let mut c2 = Vec::new();
    let mut gaps = Vec::new();
    for &n in &cfg.n_sweep {
        let runs = shared_graph_runs(&cfg, n, cfg.repetitions, &algs);
        let m: Vec<f64> = runs.iter().map(|rs| mean(&rs.iter().map(per_node).collect::<Vec<_>>())).collect();
        let all_done = runs.iter().flatten().all(|o| o.completed);
        bound_ok &= m[0] <= 5.0;
        order_ok &= m[0] < m[1] && m[1] < m[2];
        gaps.push(m[2] - m[1]);
        c1.push(format!("n={n}:{:.2}", m[0]));
        c2.push(format!("n={n}:{:.2}<{:.2}<{:.2}", m[0], m[1], m[2]));
        if !all_done {
            c1.push(format!("(incomplete runs at n={n})"));
        }
    }
    report.add(1, bound_ok, format!("memory packets/node <= 5 over {} seeds [{}]", cfg.repetitions, c1.join(" ")));
    let gap_grows = gaps.last() > gaps.first();
    report.add(
        2,
        order_ok && gap_grows,
        format!(
            "memory < fast < push_pull [{}]; gap {:.2} at n={} vs {:.2} at n={}",
            c2.join(" "),
            gaps.last().unwrap(),
            cfg.n_sweep.last().unwrap(),
            gaps[0],
            cfg.n_sweep[0]
        ),
    );
}

/// `P(lo <= X <= hi)` for `X ~ Binomial(n, p)`.
fn binomial_window(n: usize, p: f64, lo: f64, hi: f64) -> f64 {
    let mut ln_fact = vec![0.0f64; n + 1];
    for i in 1..=n {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    (0..=n)
        .filter(|&k| k as f64 >= lo && k as f64 <= hi)
        .map(|k| {
            let ln = ln_fact[n] - ln_fact[k] - ln_fact[n - k] + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln();
            ln.exp()
        })
        .sum()
}

fn at_4096(report: &mut Report) {
    let n = 4096;
    let consts = ProtocolConstants::table(n);
    let algs = [Algorithm::PushPull, Algorithm::Fast, Algorithm::Memory, Algorithm::LeaderElection];
    let mut runs: Vec<Vec<RunOutcome>> = vec![Vec::new(); algs.len()];
    for seed in 0..100u64 {
        let mut g = generate(gossipsim::graph::GraphModel::er_log_squared(n), 10_000 + seed).unwrap();
        for (i, &alg) in algs.iter().enumerate() {
            runs[i].push(run(alg, &mut g, &consts, seed, &RunOptions::default()).unwrap());
        }
    }

    let steps: Vec<u64> = runs[0][..50].iter().map(|o| o.steps_used).collect();
    let (lo, hi) = (*steps.iter().min().unwrap(), *steps.iter().max().unwrap());
    let limit = log2n(n).ceil() as u64 + loglog2n(n).ceil() as u64 + 3;
    report.add(
        3,
        hi - lo <= 1 && hi <= limit,
        format!("push_pull steps over 50 seeds in [{lo}, {hi}], spread <= 1, limit {limit}"),
    );

    let done: Vec<usize> = runs.iter().map(|rs| rs.iter().filter(|o| o.completed).count()).collect();
    let detail: Vec<String> = algs.iter().zip(&done).map(|(a, d)| format!("{a}:{d}/100")).collect();
    report.add(4, done.iter().all(|&d| d >= 99), format!("completion >= 99/100 [{}]", detail.join(" ")));

    let mu = n as f64 / log2n(n);
    let (wlo, whi) = (0.8 * mu, 1.2 * mu);
    let samples: Vec<u64> = runs[1][..50].iter().flat_map(|o| o.walk_rounds.iter().map(|r| r.started)).collect();
    let inside = samples.iter().filter(|&&s| s as f64 >= wlo && s as f64 <= whi).count();
    let frac = inside as f64 / samples.len() as f64;
    let predicted = binomial_window(n, consts.walk_probability(), wlo, whi);
    report.add(
        5,
        samples.len() >= 200 && frac >= 0.95,
        format!(
            "walks started within +-20% of {mu:.1} in {inside}/{} (seed, round) samples; binomial predicts {:.4}",
            samples.len(),
            predicted
        ),
    );

    let bound = 4.0 * loglog2n(n);
    let le = &runs[3];
    let correct = le
        .iter()
        .filter(|o| {
            o.status == RunStatus::Completed && o.leader.is_some() && o.leader == o.candidates.iter().min().copied()
        })
        .count();
    let m = mean(&le.iter().map(per_node).collect::<Vec<_>>());
    report.add(
        9,
        correct == le.len() && m <= bound,
        format!("unique least-id leader known everywhere in {correct}/100; packets/node {m:.2} <= {bound:.2}"),
    );
}

fn phase1_growth(report: &mut Report) {
    let n = 4096;
    let mut consts = ProtocolConstants::table(n);
    let asym = ProtocolConstants::asymptotic(n, consts.ell, consts.rho);
    consts.phase1_steps = asym.phase1_steps;
    let t1 = consts.phase1_steps as usize;
    let (mut good, mut total) = (0usize, 0usize);
    for seed in 0..20u64 {
        let mut g = generate(gossipsim::graph::GraphModel::er_log_squared(n), 20_000 + seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let watch: Vec<NodeId> = index::sample(&mut rng, n, 50).into_iter().map(|i| NodeId(i as u32)).collect();
        let opts = RunOptions { watch, ..RunOptions::default() };
        let out = run(Algorithm::Fast, &mut g, &consts, seed, &opts).unwrap();
        for w in &out.watched {
            let (mut hits, mut cond) = (0, 0);
            for t in 0..t1 {
                let (a, b) = (w.counts[t] as f64, w.counts[t + 1] as f64);
                if (20.0..=n as f64 / 8.0).contains(&a) {
                    cond += 1;
                    hits += usize::from(b >= 1.5 * a);
                }
            }
            total += 1;
            good += usize::from(cond > 0 && 2 * hits >= cond);
        }
    }
    let frac = good as f64 / total as f64;
    report.add(
        6,
        frac >= 0.95,
        format!("{good}/{total} messages grow by 1.5x in at least half of their Phase I steps with 20 <= |I| <= n/8 ({t1} push steps)"),
    );
}

fn robustness(report: &mut Report) {
    let cfg = ExperimentConfig::parse(ROBUSTNESS).unwrap();
    assert!(cfg.repetitions >= 5);
    let mut worst_ratio = 0.0f64;
    let mut ok = true;
    let mut per_f = Vec::new();
    for &f in &cfg.f_sweep {
        let mut max_lost = 0u64;
        for cell in cells(&cfg).into_iter().filter(|c| c.failures == f) {
            let r = run_cell(&cfg, cell, false, false).unwrap();
            let lost = r.row.additional_lost.expect("gathering reports losses");
            max_lost = max_lost.max(lost);
            if f > 0 {
                let ratio = lost as f64 / f as f64;
                worst_ratio = worst_ratio.max(ratio);
                ok &= ratio <= 2.5;
            }
            if f <= 4000 {
                ok &= lost < 100;
            }
        }
        per_f.push(format!("F={f}:{max_lost}"));
    }
    report.add(
        7,
        ok,
        format!(
            "n={} additional_lost < 100 and lost/F <= 2.5; max lost per F [{}]; worst ratio {worst_ratio:.3}",
            cfg.n_sweep[0],
            per_f.join(" ")
        ),
    );
}

type Check = fn(&common::Instance) -> Result<(), TestCaseError>;

const DETERMINISM: &str = r#"
[experiment]
algorithm = ["push_pull", "fast", "memory", "memory_twice", "leader_election"]
n_sweep = [256]
F_sweep = [0, 16]
repetitions = 2
master_seed = 5

[graph]
kind = "erdos_renyi"
"#;

fn invariants(report: &mut Report) {
    let mut failures = Vec::new();
    let checks: [(&str, Check); 4] = [
        ("order independence", common::check_order_independence),
        ("union monotonicity", common::check_monotone),
        ("accounting", common::check_accounting),
        ("trace conservation", common::check_conservation),
    ];
    for (name, check) in checks {
        let mut runner = TestRunner::new(Config { cases: 256, failure_persistence: None, ..Config::default() });
        if let Err(e) = runner.run(&common::instance(), |inst| check(&inst)) {
            failures.push(format!("{name}: {e}"));
        }
    }
    for seed in 0..3 {
        if let Err(e) = common::check_walk_conservation(512, seed) {
            failures.push(format!("walk tokens: {e}"));
        }
    }
    let cfg = ExperimentConfig::parse(DETERMINISM).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (i, jobs) in [1, 2].into_iter().enumerate() {
        let out = dir.path().join(i.to_string());
        let opts = ExperimentOptions { jobs, out_dir: Some(out.clone()), ..ExperimentOptions::default() };
        run_experiment(&cfg, &opts).unwrap();
        files.push((std::fs::read(out.join("runs.csv")).unwrap(), std::fs::read(out.join("summary.csv")).unwrap()));
    }
    if files[0] != files[1] {
        failures.push("repeated experiment wrote different CSV bytes".into());
    }
    report.add(
        8,
        failures.is_empty(),
        if failures.is_empty() {
            "engine properties (4 x 256 cases), walk-token conservation and cap, byte-identical CSVs".into()
        } else {
            failures.join("; ")
        },
    );
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut report = Report { lines: Vec::new() };
    invariants(&mut report);
    at_4096(&mut report);
    phase1_growth(&mut report);
    robustness(&mut report);
    comparison(&mut report);
    report.lines.sort_by_key(|l| l.0);
    println!("summary ({:.0} s):", started.elapsed().as_secs_f64());
    for (id, pass, _) in &report.lines {
        println!("  {id}: {}", if *pass { "PASS" } else { "FAIL" });
    }
    if report.lines.iter().all(|l| l.1) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
