//! C interface to the simulator.
//!
//! Graphs and run outcomes are opaque handles created and destroyed through
//! this API. Every fallible call returns a [`GsStatus`]; on failure the
//! message is available from [`gs_last_error_message`] on the same thread.
//! Strings returned through out-pointers are owned by the caller and must be
//! released with [`gs_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gossipsim::config::ExperimentConfig;
use gossipsim::experiment::{run_experiment, ExperimentOptions};
use gossipsim::graph::{generate, Graph, GraphModel};
use gossipsim::metrics::record;
use gossipsim::protocols::{self, Algorithm, ProtocolConstants, RunOptions, RunOutcome};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Graph = 3,
    Protocol = 4,
    Config = 5,
    Io = 6,
    Panic = 7,
}

/// A graph owned by the library.
pub struct GsGraph {
    graph: Graph,
}

/// The result of one protocol run.
pub struct GsOutcome {
    outcome: RunOutcome,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: GsStatus, msg: impl Into<String>) -> GsStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning a panic into `GsStatus::Panic`.
fn guard(f: impl FnOnce() -> GsStatus) -> GsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(GsStatus::Panic, msg)
        }
    }
}

/// `s` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, GsStatus> {
    if s.is_null() {
        return Err(fail(GsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(GsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn into_c_string(s: String, out: *mut *mut c_char) -> GsStatus {
    match CString::new(s) {
        Ok(c) => {
            // SAFETY: callers check `out` for null before calling.
            unsafe { *out = c.into_raw() };
            GsStatus::Ok
        }
        Err(_) => fail(GsStatus::InvalidArgument, "string contains NUL"),
    }
}

fn put_graph(graph: Result<Graph, gossipsim::graph::GraphError>, out: *mut *mut GsGraph) -> GsStatus {
    match graph {
        Ok(graph) => {
            // SAFETY: callers check `out` for null before calling.
            unsafe { *out = Box::into_raw(Box::new(GsGraph { graph })) };
            GsStatus::Ok
        }
        Err(e) => fail(GsStatus::Graph, e.to_string()),
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Erdős–Rényi graph `G(n, p)`. A `p` of zero or less selects
/// `p = log2(n)^2 / n`.
#[no_mangle]
pub unsafe extern "C" fn gs_graph_erdos_renyi(n: u32, p: f64, seed: u64, out: *mut *mut GsGraph) -> GsStatus {
    guard(|| {
        if out.is_null() {
            return fail(GsStatus::NullPointer, "out is null");
        }
        let model =
            if p <= 0.0 { GraphModel::er_log_squared(n as usize) } else { GraphModel::ErdosRenyi { n: n as usize, p } };
        put_graph(generate(model, seed), out)
    })
}

/// Configuration-model graph with `d` stubs per node, paired lazily.
#[no_mangle]
pub unsafe extern "C" fn gs_graph_configuration(n: u32, d: u32, seed: u64, out: *mut *mut GsGraph) -> GsStatus {
    guard(|| {
        if out.is_null() {
            return fail(GsStatus::NullPointer, "out is null");
        }
        put_graph(generate(GraphModel::Configuration { n: n as usize, d: d as usize }, seed), out)
    })
}

/// Reads an edge list: a header line `n m`, then one `u v` pair per line.
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_graph_load_edge_list(path: *const c_char, out: *mut *mut GsGraph) -> GsStatus {
    guard(|| {
        if out.is_null() {
            return fail(GsStatus::NullPointer, "out is null");
        }
        let path = match read_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) => return fail(GsStatus::Io, format!("{path}: {e}")),
        };
        put_graph(Graph::read_edge_list(BufReader::new(file)), out)
    })
}

/// Node count of `g`, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn gs_graph_node_count(g: *const GsGraph) -> u32 {
    g.as_ref().map_or(0, |g| g.graph.n() as u32)
}

#[no_mangle]
pub unsafe extern "C" fn gs_graph_free(g: *mut GsGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Runs `algorithm` (`push_pull`, `fast`, `memory`, `memory_twice` or
/// `leader_election`) on `g` with the default constants for its size.
/// Configuration-model graphs pair stubs as they are used, so `g` changes.
/// `g` must be a live handle, `algorithm` a NUL-terminated string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_run(
    g: *mut GsGraph,
    algorithm: *const c_char,
    seed: u64,
    out: *mut *mut GsOutcome,
) -> GsStatus {
    guard(|| {
        let Some(g) = g.as_mut() else { return fail(GsStatus::NullPointer, "graph is null") };
        if out.is_null() {
            return fail(GsStatus::NullPointer, "out is null");
        }
        let name = match read_str(algorithm, "algorithm") {
            Ok(s) => s,
            Err(s) => return s,
        };
        let alg: Algorithm = match name.parse() {
            Ok(a) => a,
            Err(e) => return fail(GsStatus::InvalidArgument, e),
        };
        let consts = ProtocolConstants::table(g.graph.n());
        match protocols::run(alg, &mut g.graph, &consts, seed, &RunOptions::default()) {
            Ok(outcome) => {
                *out = Box::into_raw(Box::new(GsOutcome { outcome }));
                GsStatus::Ok
            }
            Err(e) => fail(GsStatus::Protocol, e.to_string()),
        }
    })
}

/// Whether every healthy node ended up knowing every healthy origin.
#[no_mangle]
pub unsafe extern "C" fn gs_outcome_completed(o: *const GsOutcome) -> bool {
    o.as_ref().is_some_and(|o| o.outcome.completed)
}

/// Steps used, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn gs_outcome_steps(o: *const GsOutcome) -> u64 {
    o.as_ref().map_or(0, |o| o.outcome.steps_used)
}

#[no_mangle]
pub unsafe extern "C" fn gs_outcome_packets_sent(o: *const GsOutcome) -> u64 {
    o.as_ref().map_or(0, |o| o.outcome.account.packets_sent)
}

#[no_mangle]
pub unsafe extern "C" fn gs_outcome_channels_opened(o: *const GsOutcome) -> u64 {
    o.as_ref().map_or(0, |o| o.outcome.account.channels_opened)
}

/// Packets sent divided by n.
#[no_mangle]
pub unsafe extern "C" fn gs_outcome_avg_packets_per_node(o: *const GsOutcome) -> f64 {
    o.as_ref().map_or(0.0, |o| record(&o.outcome).avg_packets_per_node)
}

/// The elected or given leader, -1 if there is none.
#[no_mangle]
pub unsafe extern "C" fn gs_outcome_leader(o: *const GsOutcome) -> i64 {
    o.as_ref().and_then(|o| o.outcome.leader).map_or(-1, |l| l.0 as i64)
}

/// Writes the number of healthy nodes whose message was not gathered.
/// Fails with `InvalidArgument` for algorithms that do not gather.
/// `o` must be a live outcome handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_outcome_additional_lost(o: *const GsOutcome, value: *mut u64) -> GsStatus {
    let (Some(o), false) = (o.as_ref(), value.is_null()) else {
        return fail(GsStatus::NullPointer, "null argument");
    };
    match o.outcome.additional_lost {
        Some(v) => {
            *value = v;
            GsStatus::Ok
        }
        None => fail(GsStatus::InvalidArgument, "algorithm does not gather messages"),
    }
}

/// The run's metrics as a JSON object.
/// `o` must be a live outcome handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_outcome_to_json(o: *const GsOutcome, out: *mut *mut c_char) -> GsStatus {
    guard(|| {
        let (Some(o), false) = (o.as_ref(), out.is_null()) else {
            return fail(GsStatus::NullPointer, "null argument");
        };
        let r = &o.outcome;
        let json = serde_json::json!({
            "algorithm": r.algorithm.as_str(),
            "n": r.n,
            "status": r.status,
            "leader": r.leader,
            "victims": r.victims.len(),
            "walk_rounds": r.walk_rounds,
            "metrics": record(r),
        });
        into_c_string(json.to_string(), out)
    })
}

#[no_mangle]
pub unsafe extern "C" fn gs_outcome_free(o: *mut GsOutcome) {
    if !o.is_null() {
        drop(Box::from_raw(o));
    }
}

/// Releases a string returned by this library.
/// `s` must be null or a string from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a config file; on success `out` receives the
/// resolved config text.
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_validate_config(path: *const c_char, out: *mut *mut c_char) -> GsStatus {
    guard(|| {
        if out.is_null() {
            return fail(GsStatus::NullPointer, "out is null");
        }
        let path = match read_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ExperimentConfig::from_path(path.as_ref()) {
            Ok(cfg) => into_c_string(cfg.echo(), out),
            Err(e) => fail(GsStatus::Config, e.to_string()),
        }
    })
}

/// Runs an experiment config and writes its CSV and JSON files to
/// `out_dir`. `jobs` of 0 uses one thread per core.
/// `config_path` and `out_dir` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn gs_run_experiment(
    config_path: *const c_char,
    out_dir: *const c_char,
    jobs: u32,
    emit_plotdata: bool,
) -> GsStatus {
    guard(|| {
        let (path, dir) = match (read_str(config_path, "config_path"), read_str(out_dir, "out_dir")) {
            (Ok(p), Ok(d)) => (p, d),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let cfg = match ExperimentConfig::from_path(path.as_ref()) {
            Ok(c) => c,
            Err(e) => return fail(GsStatus::Config, e.to_string()),
        };
        let opts = ExperimentOptions {
            jobs: jobs as usize,
            out_dir: Some(PathBuf::from(dir)),
            emit_plotdata,
            ..ExperimentOptions::default()
        };
        match run_experiment(&cfg, &opts) {
            Ok(_) => GsStatus::Ok,
            Err(e @ gossipsim::experiment::ExperimentError::Output { .. }) => fail(GsStatus::Io, e.to_string()),
            Err(e) => fail(GsStatus::Protocol, e.to_string()),
        }
    })
}
