//! Experiment configuration files.
//!
//! A config is TOML with the sections `[experiment]`, `[graph]`,
//! `[constants]`, `[modes]` and `[failure]`. Unknown keys are rejected and
//! every error names the line it comes from. Constants default to the tuned
//! Table values; each can be set to a number or left at its formula.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Spanned;

use crate::failure::FailureInstant;
use crate::graph::GraphModel;
use crate::protocols::{log2n, Algorithm, ProtocolConstants};

/// Largest n simulated with one bit per origin per node.
pub const FULL_TRACKING_LIMIT: usize = 65_536;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Parse(String),
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
enum Value {
    Int(i64),
    Float(f64),
    Text(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: RawExperiment,
    #[serde(default)]
    graph: RawGraph,
    #[serde(default)]
    constants: BTreeMap<Spanned<String>, Spanned<Value>>,
    #[serde(default)]
    modes: RawModes,
    #[serde(default)]
    failure: RawFailure,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    algorithm: Spanned<OneOrMany>,
    n_sweep: Spanned<Vec<i64>>,
    #[serde(default, alias = "F_sweep")]
    f_sweep: Option<Spanned<Vec<i64>>>,
    repetitions: Spanned<i64>,
    #[serde(default)]
    master_seed: u64,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    kind: Option<Spanned<String>>,
    p: Option<Spanned<Value>>,
    d: Option<Spanned<i64>>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModes {
    run_to_completion: Option<bool>,
    tracked_subset_size: Option<Spanned<i64>>,
    tree_count: Option<Spanned<i64>>,
    trace: Option<bool>,
    elect_leader: Option<bool>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFailure {
    instant: Option<Spanned<String>>,
    step: Option<Spanned<i64>>,
    horizon: Option<Spanned<i64>>,
    exclude_leader: Option<bool>,
}

/// Edge density of an Erdős–Rényi graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    /// `p = log2(n)^2 / n`.
    LogSquared,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSpec {
    ErdosRenyi(Density),
    Configuration { d: usize },
}

impl GraphSpec {
    pub fn model(&self, n: usize) -> GraphModel {
        match *self {
            GraphSpec::ErdosRenyi(Density::LogSquared) => GraphModel::er_log_squared(n),
            GraphSpec::ErdosRenyi(Density::Fixed(p)) => GraphModel::ErdosRenyi { n, p },
            GraphSpec::Configuration { d } => GraphModel::Configuration { n, d },
        }
    }
}

/// Which step-count formulas the constants start from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsBase {
    Table,
    Asymptotic,
}

/// Explicit constant overrides on top of a base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsSpec {
    pub base: ConstantsBase,
    pub ell: Option<f64>,
    pub rho: Option<f64>,
    pub c_moves: Option<f64>,
    /// Integer step counts by field name.
    pub steps: BTreeMap<String, u32>,
}

const STEP_KEYS: [&str; 11] = [
    "phase1_steps",
    "phase2_rounds",
    "phase2_walk_steps",
    "phase2_bcast_steps",
    "phase3_steps",
    "memory_phase1_push_steps",
    "memory_phase1_pull_steps",
    "memory_phase3_steps",
    "leader_push_steps",
    "leader_pull_steps",
    "step_cap",
];

fn step_field<'a>(c: &'a mut ProtocolConstants, key: &str) -> &'a mut u32 {
    match key {
        "phase1_steps" => &mut c.phase1_steps,
        "phase2_rounds" => &mut c.phase2_rounds,
        "phase2_walk_steps" => &mut c.phase2_walk_steps,
        "phase2_bcast_steps" => &mut c.phase2_bcast_steps,
        "phase3_steps" => &mut c.phase3_steps,
        "memory_phase1_push_steps" => &mut c.memory_phase1_push_steps,
        "memory_phase1_pull_steps" => &mut c.memory_phase1_pull_steps,
        "memory_phase3_steps" => &mut c.memory_phase3_steps,
        "leader_push_steps" => &mut c.leader_push_steps,
        "leader_pull_steps" => &mut c.leader_pull_steps,
        "step_cap" => &mut c.step_cap,
        _ => unreachable!("unknown step key {key}"),
    }
}

/// Formula text of each default, with `loglog(n) = max(log2(log2(n)), 1)`.
pub fn default_formula(base: ConstantsBase, key: &str) -> Option<&'static str> {
    use ConstantsBase::*;
    Some(match (base, key) {
        (_, "ell") => "1.0",
        (_, "rho") => "0.6",
        (_, "c_moves") => "1.0",
        (_, "walk_probability") => "1.0/log2(n)",
        (Table, "phase1_steps") => "ceil(1.2*loglog(n))",
        (Table, "phase2_rounds") => "ceil(log2(n)/loglog(n))",
        (Table, "phase2_walk_steps") => "ceil(log2(n)/loglog(n)+2)",
        (Asymptotic, "phase1_steps") => "ceil(12*log2(n)/loglog(n))",
        (Asymptotic, "phase2_rounds") => "ceil(4*log2(n)/loglog(n))",
        (Asymptotic, "phase2_walk_steps") => "ceil(6*ell*log2(n))",
        (_, "phase2_bcast_steps") => "ceil(0.5*loglog(n))",
        (_, "phase3_steps") => "ceil(8*log2(n)/loglog(n))",
        (Table, "memory_phase1_push_steps") => "4*ceil(2*log2(n)/4)",
        (Table, "memory_phase1_pull_steps") => "floor(2*loglog(n))",
        (Table, "memory_phase3_steps") => "floor(log2(n))",
        (Asymptotic, "memory_phase1_push_steps") => "4*ceil((2*log2(n)+4*rho*loglog(n))/4)",
        (Asymptotic, "memory_phase1_pull_steps") => "ceil(4*rho*loglog(n))",
        (Asymptotic, "memory_phase3_steps") => "4*ceil((2*log2(n)+4*rho*loglog(n))/4)",
        (_, "leader_push_steps") => "ceil(log2(n)+rho*loglog(n))",
        (_, "leader_pull_steps") => "ceil(rho*loglog(n))",
        (_, "step_cap") => "ceil(10*log2(n))",
        _ => return None,
    })
}

impl ConstantsSpec {
    pub fn table() -> Self {
        ConstantsSpec { base: ConstantsBase::Table, ell: None, rho: None, c_moves: None, steps: BTreeMap::new() }
    }

    pub fn resolve(&self, n: usize) -> ProtocolConstants {
        let rho = self.rho.unwrap_or(crate::protocols::DEFAULT_RHO);
        let mut c = match self.base {
            ConstantsBase::Table => {
                let mut c = ProtocolConstants::table(n);
                c.ell = self.ell.unwrap_or(c.ell);
                c.set_rho(rho);
                c
            }
            ConstantsBase::Asymptotic => ProtocolConstants::asymptotic(n, self.ell.unwrap_or(1.0), rho),
        };
        if let Some(m) = self.c_moves {
            c.c_moves = m;
        }
        for (k, &v) in &self.steps {
            *step_field(&mut c, k) = v;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Modes {
    pub run_to_completion: bool,
    /// Healthy origins sampled for tracking, on top of every victim.
    pub tracked_subset_size: Option<usize>,
    pub tree_count: u32,
    pub trace: bool,
    pub elect_leader: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureSpec {
    pub instant: FailureInstant,
    pub exclude_leader: bool,
}

/// A validated experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithms: Vec<Algorithm>,
    pub graph: GraphSpec,
    pub n_sweep: Vec<usize>,
    pub f_sweep: Vec<usize>,
    pub repetitions: u32,
    pub master_seed: u64,
    pub constants: ConstantsSpec,
    pub modes: Modes,
    pub failure: FailureSpec,
}

struct Lines<'a>(&'a str);

impl Lines<'_> {
    fn at(&self, span: Range<usize>) -> usize {
        1 + self.0[..span.start.min(self.0.len())].bytes().filter(|&b| b == b'\n').count()
    }

    fn err<T>(&self, span: Range<usize>, message: impl Into<String>) -> Result<T, ConfigError> {
        Err(ConfigError::Invalid { line: self.at(span), message: message.into() })
    }
}

fn positive(lines: &Lines, v: &Spanned<i64>, what: &str) -> Result<usize, ConfigError> {
    if *v.get_ref() < 1 {
        return lines.err(v.span(), format!("{what} must be at least 1, got {}", v.get_ref()));
    }
    Ok(*v.get_ref() as usize)
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let lines = Lines(text);

        let ex = &raw.experiment;
        let names = match ex.algorithm.get_ref() {
            OneOrMany::One(s) => vec![s.clone()],
            OneOrMany::Many(v) => v.clone(),
        };
        if names.is_empty() {
            return lines.err(ex.algorithm.span(), "algorithm list is empty");
        }
        let mut algorithms = Vec::new();
        for s in &names {
            match s.parse::<Algorithm>() {
                Ok(a) => algorithms.push(a),
                Err(e) => return lines.err(ex.algorithm.span(), e),
            }
        }

        let repetitions = positive(&lines, &ex.repetitions, "repetitions")? as u32;
        if ex.n_sweep.get_ref().is_empty() {
            return lines.err(ex.n_sweep.span(), "n_sweep is empty");
        }
        let mut n_sweep = Vec::new();
        for &n in ex.n_sweep.get_ref() {
            if n < 1 || n > u32::MAX as i64 {
                return lines.err(ex.n_sweep.span(), format!("n = {n} out of range"));
            }
            n_sweep.push(n as usize);
        }
        let f_sweep = match &ex.f_sweep {
            None => vec![0],
            Some(s) => {
                if s.get_ref().is_empty() {
                    return lines.err(s.span(), "F_sweep is empty");
                }
                let mut out = Vec::new();
                for &f in s.get_ref() {
                    if f < 0 {
                        return lines.err(s.span(), format!("F = {f} is negative"));
                    }
                    if let Some(&n) = n_sweep.iter().find(|&&n| f as usize > n) {
                        return lines.err(s.span(), format!("F = {f} exceeds n = {n}"));
                    }
                    out.push(f as usize);
                }
                out
            }
        };

        let graph = Self::graph(&lines, &raw.graph)?;
        let constants = Self::constants(&lines, &raw.constants)?;
        for &n in &n_sweep {
            // Validate every resolved size, pointing at the section on error.
            if let Err(e) = constants.resolve(n).validate() {
                let line = raw.constants.keys().next().map_or(1, |k| lines.at(k.span()));
                return Err(ConfigError::Invalid { line, message: e.to_string() });
            }
            if let Err(e) = graph.model(n).validate() {
                let line = raw.graph.kind.as_ref().map_or(1, |k| lines.at(k.span()));
                return Err(ConfigError::Invalid { line, message: format!("n = {n}: {e}") });
            }
        }

        let m = &raw.modes;
        let tracked_subset_size = match &m.tracked_subset_size {
            None => None,
            Some(v) => Some(positive(&lines, v, "tracked_subset_size")?),
        };
        let tree_count = match &m.tree_count {
            None => 3,
            Some(v) => positive(&lines, v, "tree_count")? as u32,
        };
        let needs_bits = algorithms.iter().any(|&a| a != Algorithm::LeaderElection);
        if needs_bits && tracked_subset_size.is_none() {
            if let Some(&n) = n_sweep.iter().find(|&&n| n > FULL_TRACKING_LIMIT) {
                return lines.err(
                    ex.n_sweep.span(),
                    format!("n = {n} needs tracked_subset_size in [modes] (full tracking is limited to n <= {FULL_TRACKING_LIMIT})"),
                );
            }
        }
        let modes = Modes {
            run_to_completion: m.run_to_completion.unwrap_or(true),
            tracked_subset_size,
            tree_count,
            trace: m.trace.unwrap_or(false),
            elect_leader: m.elect_leader.unwrap_or(false),
        };

        let f = &raw.failure;
        let instant = match f.instant.as_ref().map(|s| (s.get_ref().as_str(), s.span())) {
            None | Some(("before_phase2", _)) => FailureInstant::BeforePhase2,
            Some(("at_step", span)) => match &f.step {
                Some(k) if *k.get_ref() >= 0 => FailureInstant::AtStep(*k.get_ref() as u64),
                Some(k) => return lines.err(k.span(), "step must be non-negative"),
                None => return lines.err(span, "instant = \"at_step\" needs `step`"),
            },
            Some(("uniform_over_run", span)) => match &f.horizon {
                Some(h) => FailureInstant::UniformOverRun { horizon: positive(&lines, h, "horizon")? as u64 },
                None => return lines.err(span, "instant = \"uniform_over_run\" needs `horizon`"),
            },
            Some((other, span)) => {
                return lines
                    .err(span, format!("unknown failure instant `{other}` (before_phase2, at_step, uniform_over_run)"))
            }
        };
        let failure = FailureSpec { instant, exclude_leader: f.exclude_leader.unwrap_or(false) };

        Ok(ExperimentConfig {
            algorithms,
            graph,
            n_sweep,
            f_sweep,
            repetitions,
            master_seed: ex.master_seed,
            constants,
            modes,
            failure,
        })
    }

    fn graph(lines: &Lines, g: &RawGraph) -> Result<GraphSpec, ConfigError> {
        let kind = g.kind.as_ref().map_or("erdos_renyi", |k| k.get_ref().as_str());
        match kind {
            "erdos_renyi" => {
                if let Some(d) = &g.d {
                    return lines.err(d.span(), "`d` applies to configuration graphs only");
                }
                let density = match g.p.as_ref().map(|p| (p.get_ref(), p.span())) {
                    None => Density::LogSquared,
                    Some((Value::Text(s), span)) => {
                        if s.replace(' ', "") == "log2(n)^2/n" {
                            Density::LogSquared
                        } else {
                            return lines
                                .err(span, format!("unsupported p formula `{s}` (use a number or \"log2(n)^2/n\")"));
                        }
                    }
                    Some((Value::Float(p), _)) => Density::Fixed(*p),
                    Some((Value::Int(p), _)) => Density::Fixed(*p as f64),
                };
                Ok(GraphSpec::ErdosRenyi(density))
            }
            "configuration" => {
                if let Some(p) = &g.p {
                    return lines.err(p.span(), "`p` applies to erdos_renyi graphs only");
                }
                match &g.d {
                    Some(d) => Ok(GraphSpec::Configuration { d: positive(lines, d, "d")? }),
                    None => lines.err(g.kind.as_ref().expect("kind given").span(), "configuration graph needs `d`"),
                }
            }
            other => lines.err(
                g.kind.as_ref().expect("kind given").span(),
                format!("unknown graph kind `{other}` (erdos_renyi, configuration)"),
            ),
        }
    }

    fn constants(lines: &Lines, raw: &BTreeMap<Spanned<String>, Spanned<Value>>) -> Result<ConstantsSpec, ConfigError> {
        let mut spec = ConstantsSpec::table();
        if let Some((k, v)) = raw.iter().find(|(k, _)| k.get_ref() == "base") {
            spec.base = match v.get_ref() {
                Value::Text(s) if s == "table" => ConstantsBase::Table,
                Value::Text(s) if s == "asymptotic" => ConstantsBase::Asymptotic,
                _ => return lines.err(k.span(), "base must be \"table\" or \"asymptotic\""),
            };
        }
        for (k, v) in raw {
            let key = k.get_ref().as_str();
            if key == "base" {
                continue;
            }
            let Some(formula) = default_formula(spec.base, key) else {
                return lines.err(k.span(), format!("unknown constant `{key}`"));
            };
            let span = v.span();
            let number = match v.get_ref() {
                Value::Int(i) => Some(*i as f64),
                Value::Float(x) => Some(*x),
                Value::Text(s) if s.replace(' ', "") == formula.replace(' ', "") => None,
                Value::Text(s) if key == "walk_probability" => {
                    let c = s.replace(' ', "");
                    match c.strip_suffix("/log2(n)").and_then(|c| c.parse::<f64>().ok()) {
                        Some(c) => Some(c),
                        None => {
                            return lines
                                .err(span, format!("walk_probability must look like \"<c>/log2(n)\", got `{s}`"))
                        }
                    }
                }
                Value::Text(s) => {
                    return lines.err(span, format!("`{key}` takes a number or its default \"{formula}\", got `{s}`"))
                }
            };
            let Some(x) = number else { continue };
            match key {
                "ell" | "walk_probability" | "rho" | "c_moves" => {
                    if !(x > 0.0 && x.is_finite()) {
                        return lines.err(span, format!("`{key}` must be positive"));
                    }
                    match key {
                        "rho" => spec.rho = Some(x),
                        "c_moves" => spec.c_moves = Some(x),
                        _ => spec.ell = Some(x),
                    }
                }
                _ => {
                    if x < 0.0 || x.fract() != 0.0 || x > u32::MAX as f64 {
                        return lines.err(span, format!("`{key}` must be a non-negative integer"));
                    }
                    if key == "memory_phase1_push_steps" && !(x as u32).is_multiple_of(4) {
                        return lines.err(span, format!("memory_phase1_push_steps = {x} is not a multiple of 4"));
                    }
                    spec.steps.insert(key.to_string(), x as u32);
                }
            }
        }
        Ok(spec)
    }

    /// The fully resolved config as TOML, with every default spelled out.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let list = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let algs: Vec<String> = self.algorithms.iter().map(|a| format!("\"{a}\"")).collect();
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "algorithm = [{}]", algs.join(", "));
        let _ = writeln!(s, "n_sweep = [{}]", list(&self.n_sweep));
        let _ = writeln!(s, "F_sweep = [{}]", list(&self.f_sweep));
        let _ = writeln!(s, "repetitions = {}", self.repetitions);
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "\n[graph]");
        match self.graph {
            GraphSpec::ErdosRenyi(d) => {
                let _ = writeln!(s, "kind = \"erdos_renyi\"");
                match d {
                    Density::LogSquared => {
                        let _ = writeln!(s, "p = \"log2(n)^2/n\"");
                    }
                    Density::Fixed(p) => {
                        let _ = writeln!(s, "p = {p:?}");
                    }
                }
            }
            GraphSpec::Configuration { d } => {
                let _ = writeln!(s, "kind = \"configuration\"\nd = {d}");
            }
        }
        let c = &self.constants;
        let _ = writeln!(s, "\n[constants]");
        let base = match c.base {
            ConstantsBase::Table => "table",
            ConstantsBase::Asymptotic => "asymptotic",
        };
        let _ = writeln!(s, "base = \"{base}\"");
        let float = |key: &str, v: Option<f64>| match v {
            Some(x) => format!("{key} = {x:?}"),
            None => format!("{key} = \"{}\"", default_formula(c.base, key).expect("known key")),
        };
        match c.ell {
            Some(ell) => {
                let _ = writeln!(s, "walk_probability = \"{ell:?}/log2(n)\"");
            }
            None => {
                let _ = writeln!(s, "walk_probability = \"1.0/log2(n)\"");
            }
        }
        let _ = writeln!(s, "{}", float("rho", c.rho));
        let _ = writeln!(s, "{}", float("c_moves", c.c_moves));
        for key in STEP_KEYS {
            match c.steps.get(key) {
                Some(v) => {
                    let _ = writeln!(s, "{key} = {v}");
                }
                None => {
                    let _ = writeln!(s, "{key} = \"{}\"", default_formula(c.base, key).expect("known key"));
                }
            }
        }
        let m = &self.modes;
        let _ = writeln!(s, "\n[modes]");
        let _ = writeln!(s, "run_to_completion = {}", m.run_to_completion);
        if let Some(k) = m.tracked_subset_size {
            let _ = writeln!(s, "tracked_subset_size = {k}");
        }
        let _ = writeln!(s, "tree_count = {}", m.tree_count);
        let _ = writeln!(s, "trace = {}", m.trace);
        let _ = writeln!(s, "elect_leader = {}", m.elect_leader);
        let _ = writeln!(s, "\n[failure]");
        match self.failure.instant {
            FailureInstant::BeforePhase2 => {
                let _ = writeln!(s, "instant = \"before_phase2\"");
            }
            FailureInstant::AtStep(k) => {
                let _ = writeln!(s, "instant = \"at_step\"\nstep = {k}");
            }
            FailureInstant::UniformOverRun { horizon } => {
                let _ = writeln!(s, "instant = \"uniform_over_run\"\nhorizon = {horizon}");
            }
        }
        let _ = writeln!(s, "exclude_leader = {}", self.failure.exclude_leader);
        s
    }

    /// Per-n resolved constants, for the record.
    pub fn resolved_constants(&self) -> Vec<ProtocolConstants> {
        self.n_sweep.iter().map(|&n| self.constants.resolve(n)).collect()
    }
}

/// `p` used for an ER graph of size `n`, or `d` for a configuration graph.
pub fn density_value(spec: &GraphSpec, n: usize) -> f64 {
    match spec {
        GraphSpec::ErdosRenyi(Density::LogSquared) => (log2n(n) * log2n(n) / n as f64).min(1.0),
        _ => spec.model(n).density_param(),
    }
}
