//! Parameter sweeps: one run per (algorithm, n, F, repetition) cell, written
//! as CSV and JSON lines in cell order.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{density_value, ExperimentConfig};
use crate::engine::PhaseAccount;
use crate::failure::{FailureError, FailurePlan};
use crate::graph::{generate, GraphError, NodeId};
use crate::metrics::{loss_ratio, record, summarize, GroupKey, RunMetrics, SweepSummary};
use crate::protocols::{self, choose_leader, Algorithm, ProtocolError, RunOptions, RunStatus, WalkRoundStats};
use crate::rng::{derive_seed, label_hash, stream_rng, Stream};

pub const SCHEMA_VERSION: u32 = 1;

/// Thresholds of the exceedance plot.
pub const EXCEEDANCE_THRESHOLDS: [u64; 3] = [0, 10, 100];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{cell}: {source}")]
    Graph { cell: String, source: GraphError },
    #[error("{cell}: {source}")]
    Failure { cell: String, source: FailureError },
    #[error("{cell}: {source}")]
    Protocol { cell: String, source: ProtocolError },
    #[error("writing {path}: {message}")]
    Output { path: String, message: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentOptions {
    /// Worker threads; 0 uses rayon's default.
    pub jobs: usize,
    pub out_dir: Option<PathBuf>,
    pub emit_plotdata: bool,
    /// Write per-run channel traces (also enabled by `modes.trace`).
    pub trace: bool,
    /// Fill the wallclock column; off by default so outputs are reproducible.
    pub wallclock: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub n: usize,
    pub failures: usize,
    pub repetition: u32,
}

impl Cell {
    pub fn graph_seed(&self, master: u64) -> u64 {
        derive_seed(master, &[label_hash("graph"), self.n as u64, self.repetition as u64])
    }

    /// Depends only on the cell's coordinates, never on sweep order.
    pub fn seed(&self, master: u64) -> u64 {
        derive_seed(
            master,
            &[label_hash(self.algorithm.as_str()), self.n as u64, self.failures as u64, self.repetition as u64],
        )
    }

    fn label(&self) -> String {
        format!("{}_n{}_f{}_r{}", self.algorithm, self.n, self.failures, self.repetition)
    }
}

/// One row of `runs.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRow {
    pub schema_version: u32,
    pub algorithm: String,
    pub n: usize,
    pub p_or_d: f64,
    #[serde(rename = "F")]
    pub failures: usize,
    pub seed: u64,
    pub repetition: u32,
    pub steps: u64,
    pub channels_opened: u64,
    pub packets_sent: u64,
    pub avg_packets_per_node: f64,
    pub max_packets_per_node: u64,
    pub completed: bool,
    pub additional_lost: Option<u64>,
    pub wallclock_ms: u64,
}

/// One line of `runs.jsonl`.
#[derive(Clone, Debug, Serialize)]
pub struct RunDetail {
    pub algorithm: String,
    pub n: usize,
    #[serde(rename = "F")]
    pub failures: usize,
    pub repetition: u32,
    pub seed: u64,
    pub graph_seed: u64,
    pub status: RunStatus,
    pub constants: protocols::ProtocolConstants,
    pub leader: Option<NodeId>,
    pub candidates: usize,
    pub victims: Vec<NodeId>,
    pub phases: Vec<PhaseAccount>,
    pub walk_rounds: Vec<WalkRoundStats>,
    pub metrics: RunMetrics,
}

pub struct CellResult {
    pub cell: Cell,
    pub row: RunRow,
    pub detail: RunDetail,
    pub trace: Option<String>,
}

pub struct ExperimentReport {
    pub results: Vec<CellResult>,
    pub summaries: Vec<SweepSummary>,
}

pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &algorithm in &cfg.algorithms {
        for &n in &cfg.n_sweep {
            for &failures in &cfg.f_sweep {
                for repetition in 0..cfg.repetitions {
                    out.push(Cell { algorithm, n, failures, repetition });
                }
            }
        }
    }
    out
}

fn constants_hash(c: &protocols::ProtocolConstants) -> u64 {
    label_hash(&serde_json::to_string(c).expect("constants serialize"))
}

/// Victims plus `k` healthy origins sampled from the tracked-sample stream.
fn tracked_origins(n: usize, k: usize, plan: &FailurePlan, seed: u64) -> Vec<NodeId> {
    let healthy = n - plan.count();
    let mut rng = stream_rng(seed, Stream::TrackedSample);
    let mut out = plan.victims.clone();
    let picks = index::sample(&mut rng, healthy, k.min(healthy));
    // Map the i-th healthy index to its node, skipping victims.
    let mut sorted: Vec<usize> = picks.into_iter().collect();
    sorted.sort_unstable();
    let mut victims = plan.victims.iter().peekable();
    let mut skipped = 0;
    for i in sorted {
        while let Some(v) = victims.peek() {
            if v.index() <= i + skipped {
                skipped += 1;
                victims.next();
            } else {
                break;
            }
        }
        out.push(NodeId((i + skipped) as u32));
    }
    out
}

pub fn run_cell(
    cfg: &ExperimentConfig,
    cell: Cell,
    trace: bool,
    wallclock: bool,
) -> Result<CellResult, ExperimentError> {
    let started = Instant::now();
    let label = cell.label();
    let seed = cell.seed(cfg.master_seed);
    let graph_seed = cell.graph_seed(cfg.master_seed);
    let mut g = generate(cfg.graph.model(cell.n), graph_seed)
        .map_err(|source| ExperimentError::Graph { cell: label.clone(), source })?;
    let consts = cfg.constants.resolve(cell.n);

    let memory = matches!(cell.algorithm, Algorithm::Memory | Algorithm::MemoryTwice);
    let exclude =
        (memory && cfg.failure.exclude_leader && !cfg.modes.elect_leader).then(|| choose_leader(cell.n, seed));
    let plan = FailurePlan::resolve(cell.n, cell.failures, cfg.failure.instant, exclude, seed)
        .map_err(|source| ExperimentError::Failure { cell: label.clone(), source })?;
    let tracked = cfg.modes.tracked_subset_size.map(|k| tracked_origins(cell.n, k, &plan, seed));
    let opts = RunOptions {
        run_to_completion: cfg.modes.run_to_completion,
        trace,
        watch: Vec::new(),
        tracked,
        failure: Some(plan),
        tree_count: cfg.modes.tree_count,
        elect_leader: cfg.modes.elect_leader,
    };
    let out = protocols::run(cell.algorithm, &mut g, &consts, seed, &opts)
        .map_err(|source| ExperimentError::Protocol { cell: label.clone(), source })?;
    let metrics = record(&out);
    let wallclock_ms = if wallclock { started.elapsed().as_millis() as u64 } else { 0 };
    let row = RunRow {
        schema_version: SCHEMA_VERSION,
        algorithm: cell.algorithm.to_string(),
        n: cell.n,
        p_or_d: density_value(&cfg.graph, cell.n),
        failures: cell.failures,
        seed,
        repetition: cell.repetition,
        steps: metrics.steps,
        channels_opened: metrics.channels_opened,
        packets_sent: metrics.packets_sent,
        avg_packets_per_node: metrics.avg_packets_per_node,
        max_packets_per_node: metrics.max_packets_per_node,
        completed: metrics.completed,
        additional_lost: metrics.additional_lost,
        wallclock_ms,
    };
    let trace = out.trace.as_ref().map(|t| {
        let mut buf = Vec::new();
        t.write_text(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii trace")
    });
    let detail = RunDetail {
        algorithm: cell.algorithm.to_string(),
        n: cell.n,
        failures: cell.failures,
        repetition: cell.repetition,
        seed,
        graph_seed,
        status: out.status,
        constants: consts,
        leader: out.leader,
        candidates: out.candidates.len(),
        victims: out.victims.clone(),
        phases: out.phases.clone(),
        walk_rounds: out.walk_rounds.clone(),
        metrics,
    };
    Ok(CellResult { cell, row, detail, trace })
}

/// Runs every cell of `cfg` and writes the outputs to `opts.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &ExperimentOptions) -> Result<ExperimentReport, ExperimentError> {
    let trace = opts.trace || cfg.modes.trace;
    let all = cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let results: Vec<CellResult> = pool
        .install(|| all.par_iter().map(|&c| run_cell(cfg, c, trace, opts.wallclock)).collect::<Result<Vec<_>, _>>())?;
    let summaries = summarize_results(cfg, &results);
    let report = ExperimentReport { results, summaries };
    if let Some(dir) = &opts.out_dir {
        write_outputs(dir, &report, opts.emit_plotdata)?;
    }
    Ok(report)
}

fn summarize_results(cfg: &ExperimentConfig, results: &[CellResult]) -> Vec<SweepSummary> {
    let mut out = Vec::new();
    for &algorithm in &cfg.algorithms {
        for &n in &cfg.n_sweep {
            let hash = constants_hash(&cfg.constants.resolve(n));
            for &failures in &cfg.f_sweep {
                let runs: Vec<RunMetrics> = results
                    .iter()
                    .filter(|r| r.cell.algorithm == algorithm && r.cell.n == n && r.cell.failures == failures)
                    .map(|r| r.detail.metrics.clone())
                    .collect();
                let key = GroupKey { algorithm: algorithm.to_string(), n, failures, constants_hash: hash };
                out.push(summarize(key, &runs).expect("repetitions >= 1"));
            }
        }
    }
    out
}

fn out_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Output { path: path.display().to_string(), message: e.to_string() }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| out_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| out_err(path, e))?;
    }
    w.flush().map_err(|e| out_err(path, e))
}

#[derive(Serialize)]
struct SummaryRow {
    schema_version: u32,
    algorithm: String,
    n: usize,
    #[serde(rename = "F")]
    failures: usize,
    constants_hash: String,
    repetitions: usize,
    steps_mean: f64,
    steps_stddev: f64,
    steps_min: f64,
    steps_max: f64,
    packets_per_node_mean: f64,
    packets_per_node_stddev: f64,
    packets_per_node_min: f64,
    packets_per_node_max: f64,
    max_packets_per_node_mean: f64,
    additional_lost_mean: Option<f64>,
    additional_lost_stddev: Option<f64>,
    additional_lost_max: Option<f64>,
    completed_fraction: f64,
    steps_plus_one_sufficient: bool,
}

#[derive(Serialize)]
struct ComparisonRow {
    algorithm: String,
    n: usize,
    #[serde(rename = "F")]
    failures: usize,
    messages_per_node_mean: f64,
    messages_per_node_stddev: f64,
}

#[derive(Serialize)]
struct RobustnessRow {
    algorithm: String,
    n: usize,
    #[serde(rename = "F")]
    failures: usize,
    runs: usize,
    additional_lost_mean: f64,
    ratio_mean: f64,
    ratio_max: f64,
}

#[derive(Serialize)]
struct ExceedanceRow {
    algorithm: String,
    n: usize,
    #[serde(rename = "F")]
    failures: usize,
    threshold: u64,
    percent_runs_exceeding: f64,
}

fn write_outputs(dir: &Path, report: &ExperimentReport, plotdata: bool) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| out_err(dir, e))?;
    write_csv(&dir.join("runs.csv"), report.results.iter().map(|r| &r.row))?;
    write_csv(
        &dir.join("summary.csv"),
        report.summaries.iter().map(|s| SummaryRow {
            schema_version: SCHEMA_VERSION,
            algorithm: s.key.algorithm.clone(),
            n: s.key.n,
            failures: s.key.failures,
            constants_hash: format!("{:016x}", s.key.constants_hash),
            repetitions: s.runs,
            steps_mean: s.steps.mean,
            steps_stddev: s.steps.stddev,
            steps_min: s.steps.min,
            steps_max: s.steps.max,
            packets_per_node_mean: s.packets_per_node.mean,
            packets_per_node_stddev: s.packets_per_node.stddev,
            packets_per_node_min: s.packets_per_node.min,
            packets_per_node_max: s.packets_per_node.max,
            max_packets_per_node_mean: s.max_packets_per_node.mean,
            additional_lost_mean: s.additional_lost.map(|a| a.mean),
            additional_lost_stddev: s.additional_lost.map(|a| a.stddev),
            additional_lost_max: s.additional_lost.map(|a| a.max),
            completed_fraction: s.completed_fraction,
            steps_plus_one_sufficient: s.steps_plus_one_sufficient,
        }),
    )?;

    let path = dir.join("runs.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| out_err(&path, e))?);
    for r in &report.results {
        serde_json::to_writer(&mut w, &r.detail).map_err(|e| out_err(&path, e))?;
        w.write_all(b"\n").map_err(|e| out_err(&path, e))?;
    }
    w.flush().map_err(|e| out_err(&path, e))?;

    if report.results.iter().any(|r| r.trace.is_some()) {
        let tdir = dir.join("traces");
        fs::create_dir_all(&tdir).map_err(|e| out_err(&tdir, e))?;
        for r in &report.results {
            if let Some(t) = &r.trace {
                let p = tdir.join(format!("{}.txt", r.cell.label()));
                fs::write(&p, t).map_err(|e| out_err(&p, e))?;
            }
        }
    }

    if plotdata {
        write_plotdata(dir, report)?;
    }
    Ok(())
}

fn write_plotdata(dir: &Path, report: &ExperimentReport) -> Result<(), ExperimentError> {
    write_csv(
        &dir.join("plot_comparison.csv"),
        report.summaries.iter().map(|s| ComparisonRow {
            algorithm: s.key.algorithm.clone(),
            n: s.key.n,
            failures: s.key.failures,
            messages_per_node_mean: s.packets_per_node.mean,
            messages_per_node_stddev: s.packets_per_node.stddev,
        }),
    )?;
    let groups: Vec<(&SweepSummary, Vec<u64>)> = report
        .summaries
        .iter()
        .map(|s| {
            let lost = report
                .results
                .iter()
                .filter(|r| {
                    r.row.algorithm == s.key.algorithm && r.row.n == s.key.n && r.row.failures == s.key.failures
                })
                .filter_map(|r| r.row.additional_lost)
                .collect();
            (s, lost)
        })
        .filter(|(_, lost): &(_, Vec<u64>)| !lost.is_empty())
        .collect();
    write_csv(
        &dir.join("plot_robustness.csv"),
        groups.iter().map(|(s, lost)| {
            let ratios: Vec<f64> = lost.iter().map(|&l| loss_ratio(l, s.key.failures)).collect();
            RobustnessRow {
                algorithm: s.key.algorithm.clone(),
                n: s.key.n,
                failures: s.key.failures,
                runs: lost.len(),
                additional_lost_mean: lost.iter().sum::<u64>() as f64 / lost.len() as f64,
                ratio_mean: ratios.iter().sum::<f64>() / ratios.len() as f64,
                ratio_max: ratios.iter().copied().fold(0.0, f64::max),
            }
        }),
    )?;
    write_csv(
        &dir.join("plot_exceedance.csv"),
        groups.iter().flat_map(|(s, lost)| {
            EXCEEDANCE_THRESHOLDS.iter().map(move |&t| ExceedanceRow {
                algorithm: s.key.algorithm.clone(),
                n: s.key.n,
                failures: s.key.failures,
                threshold: t,
                percent_runs_exceeding: 100.0 * lost.iter().filter(|&&l| l > t).count() as f64 / lost.len() as f64,
            })
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::failure::FailureInstant;

    #[test]
    fn tracked_sample_skips_victims() {
        let n = 50;
        let plan = FailurePlan::resolve(n, 20, FailureInstant::BeforePhase2, None, 3).unwrap();
        let t = tracked_origins(n, 30, &plan, 1);
        assert_eq!(t.len(), 50);
        let mut sorted = t.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 50);
    }

    #[test]
    fn seeds_ignore_sweep_order() {
        let c = Cell { algorithm: Algorithm::Fast, n: 64, failures: 3, repetition: 2 };
        let d = Cell { algorithm: Algorithm::Memory, ..c };
        assert_eq!(c.seed(9), Cell { ..c }.seed(9));
        assert_ne!(c.seed(9), d.seed(9));
        assert_eq!(c.graph_seed(9), d.graph_seed(9));
    }
}
