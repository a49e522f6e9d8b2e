//! Random communication topologies.
//!
//! Two models are supported. Erdős–Rényi graphs are generated up front and
//! stored in compressed adjacency form; they are immutable afterwards.
//! Configuration-model graphs start with every stub unpaired and pair a stub
//! only when a node first calls over it (deferred decisions), so the graph
//! grows as the protocol runs.

use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, SimRng, Stream};

/// Index of a node in `[0, n)`. It doubles as the node's unique identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("node count must be positive")]
    EmptyGraph,
    #[error("node count {0} exceeds the supported maximum of 2^32 - 1")]
    TooLarge(usize),
    #[error("edge probability {0} outside (0, 1]")]
    BadProbability(f64),
    #[error("p*n = {0} < 1 gives a degenerate, mostly isolated graph")]
    Degenerate(f64),
    #[error("stub count d must be positive")]
    NoStubs,
    #[error("d*n = {0} is odd; stubs cannot be paired")]
    OddStubs(usize),
    #[error("node {0} has no neighbor")]
    NoNeighbor(NodeId),
    #[error("node {0} out of range")]
    OutOfRange(NodeId),
    #[error("edge list line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GraphError {
    fn from(e: std::io::Error) -> Self {
        GraphError::Io(e.to_string())
    }
}

/// Parameters of a random graph model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphModel {
    ErdosRenyi { n: usize, p: f64 },
    Configuration { n: usize, d: usize },
}

impl GraphModel {
    /// The density used throughout the experiments: `p = log2(n)^2 / n`,
    /// clamped to 1 for tiny graphs.
    pub fn er_log_squared(n: usize) -> Self {
        let l = (n as f64).log2();
        let p = if n <= 1 { 1.0 } else { (l * l / n as f64).min(1.0) };
        GraphModel::ErdosRenyi { n, p }
    }

    pub fn n(&self) -> usize {
        match *self {
            GraphModel::ErdosRenyi { n, .. } | GraphModel::Configuration { n, .. } => n,
        }
    }

    /// Edge probability for ER, stub count for the configuration model.
    pub fn density_param(&self) -> f64 {
        match *self {
            GraphModel::ErdosRenyi { p, .. } => p,
            GraphModel::Configuration { d, .. } => d as f64,
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.n();
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        if n > u32::MAX as usize {
            return Err(GraphError::TooLarge(n));
        }
        match *self {
            GraphModel::ErdosRenyi { n, p } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(GraphError::BadProbability(p));
                }
                if p * (n as f64) < 1.0 {
                    return Err(GraphError::Degenerate(p * n as f64));
                }
            }
            GraphModel::Configuration { n, d } => {
                if d == 0 {
                    return Err(GraphError::NoStubs);
                }
                if (d * n) % 2 == 1 {
                    return Err(GraphError::OddStubs(d * n));
                }
            }
        }
        Ok(())
    }
}

/// A fully materialized graph in compressed sparse row form.
#[derive(Clone, Debug)]
pub struct StaticGraph {
    model: Option<GraphModel>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl StaticGraph {
    /// Builds a graph from an undirected edge list. Each edge `(u, v)` adds
    /// `v` to `u`'s list and `u` to `v`'s list (a loop adds `u` twice).
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Result<Self, GraphError> {
        let mut degree = vec![0usize; n];
        for &(u, v) in edges {
            for w in [u, v] {
                if w as usize >= n {
                    return Err(GraphError::OutOfRange(NodeId(w)));
                }
            }
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut targets = vec![0u32; offsets[n]];
        for &(u, v) in edges {
            targets[fill[u as usize]] = v;
            fill[u as usize] += 1;
            targets[fill[v as usize]] = u;
            fill[v as usize] += 1;
        }
        let mut g = StaticGraph { model: None, offsets, targets };
        g.sort_lists();
        Ok(g)
    }

    fn sort_lists(&mut self) {
        for v in 0..self.n() {
            let (a, b) = (self.offsets[v], self.offsets[v + 1]);
            self.targets[a..b].sort_unstable();
        }
    }

    pub fn model(&self) -> Option<GraphModel> {
        self.model
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, v: NodeId) -> &[u32] {
        let i = v.index();
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }
}

/// Erdős–Rényi generation by geometric skipping over the lower triangle
/// (Batagelj–Brandes), so the cost is linear in `n + m` rather than `n^2`.
fn generate_er(n: usize, p: f64, seed: u64) -> StaticGraph {
    // Two passes over the same random sequence: count degrees, then fill.
    let mut degree = vec![0usize; n];
    for_each_er_edge(n, p, seed, |u, v| {
        degree[u] += 1;
        degree[v] += 1;
    });
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    for d in &degree {
        offsets.push(offsets.last().unwrap() + d);
    }
    let mut fill = offsets[..n].to_vec();
    let mut targets = vec![0u32; offsets[n]];
    for_each_er_edge(n, p, seed, |u, v| {
        targets[fill[u]] = v as u32;
        fill[u] += 1;
        targets[fill[v]] = u as u32;
        fill[v] += 1;
    });
    let mut g = StaticGraph { model: Some(GraphModel::ErdosRenyi { n, p }), offsets, targets };
    g.sort_lists();
    g
}

fn for_each_er_edge(n: usize, p: f64, seed: u64, mut emit: impl FnMut(usize, usize)) {
    if p >= 1.0 {
        for v in 1..n {
            for w in 0..v {
                emit(v, w);
            }
        }
        return;
    }
    let mut rng = stream_rng(seed, Stream::Topology);
    let log_q = (1.0 - p).ln();
    let mut v: usize = 1;
    let mut w: i64 = -1;
    while v < n {
        let r: f64 = rng.gen();
        let skip = ((1.0 - r).ln() / log_q).floor();
        w += 1 + skip as i64;
        while w >= v as i64 && v < n {
            w -= v as i64;
            v += 1;
        }
        if v < n {
            emit(v, w as usize);
        }
    }
}

const UNPAIRED: u32 = u32::MAX;

/// Configuration-model multigraph with lazily paired stubs.
#[derive(Clone, Debug)]
pub struct ConfigGraph {
    n: usize,
    d: usize,
    /// `partner[s]` is the stub paired with stub `s`, or `UNPAIRED`.
    partner: Vec<u32>,
    free: Vec<u32>,
    free_pos: Vec<u32>,
    rng: SimRng,
    paired_edges: usize,
}

impl ConfigGraph {
    fn new(n: usize, d: usize, seed: u64) -> Self {
        let stubs = n * d;
        ConfigGraph {
            n,
            d,
            partner: vec![UNPAIRED; stubs],
            free: (0..stubs as u32).collect(),
            free_pos: (0..stubs as u32).collect(),
            rng: stream_rng(seed, Stream::Topology),
            paired_edges: 0,
        }
    }

    pub fn stubs_per_node(&self) -> usize {
        self.d
    }

    fn remove_free(&mut self, s: u32) {
        let pos = self.free_pos[s as usize] as usize;
        let last = *self.free.last().expect("free stub list is non-empty");
        self.free[pos] = last;
        self.free_pos[last as usize] = pos as u32;
        self.free.pop();
        self.free_pos[s as usize] = UNPAIRED;
    }

    /// Pairs the unpaired stub `s` with a uniformly random free stub.
    fn pair(&mut self, s: u32) {
        debug_assert_eq!(self.partner[s as usize], UNPAIRED);
        self.remove_free(s);
        let idx = self.rng.gen_range(0..self.free.len());
        let other = self.free[idx];
        self.remove_free(other);
        self.partner[s as usize] = other;
        self.partner[other as usize] = s;
        self.paired_edges += 1;
    }

    fn stub_owner(&self, s: u32) -> u32 {
        (s as usize / self.d) as u32
    }

    /// Stub `k` of node `v`; pairs it first if necessary.
    pub fn resolve_stub(&mut self, v: NodeId, k: usize) -> NodeId {
        let s = (v.index() * self.d + k) as u32;
        if self.partner[s as usize] == UNPAIRED {
            self.pair(s);
        }
        NodeId(self.stub_owner(self.partner[s as usize]))
    }

    /// Endpoint of stub `k` of `v` if already paired.
    pub fn stub_endpoint(&self, v: NodeId, k: usize) -> Option<NodeId> {
        let p = self.partner[v.index() * self.d + k];
        (p != UNPAIRED).then(|| NodeId(self.stub_owner(p)))
    }

    pub fn free_stubs(&self, v: NodeId) -> usize {
        (0..self.d).filter(|&k| self.stub_endpoint(v, k).is_none()).count()
    }

    pub fn total_free_stubs(&self) -> usize {
        self.free.len()
    }

    pub fn paired_edges(&self) -> usize {
        self.paired_edges
    }

    /// Pairs every remaining stub.
    pub fn pair_all(&mut self) {
        while let Some(&s) = self.free.first() {
            self.pair(s);
        }
    }
}

/// A communication topology.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Graph {
    Static(StaticGraph),
    Configuration(ConfigGraph),
}

/// Generates a graph. Deterministic in `(model, seed)`.
pub fn generate(model: GraphModel, seed: u64) -> Result<Graph, GraphError> {
    model.validate()?;
    Ok(match model {
        GraphModel::ErdosRenyi { n, p } => Graph::Static(generate_er(n, p, seed)),
        GraphModel::Configuration { n, d } => Graph::Configuration(ConfigGraph::new(n, d, seed)),
    })
}

impl Graph {
    pub fn n(&self) -> usize {
        match self {
            Graph::Static(g) => g.n(),
            Graph::Configuration(g) => g.n,
        }
    }

    pub fn model(&self) -> Option<GraphModel> {
        match self {
            Graph::Static(g) => g.model,
            Graph::Configuration(g) => Some(GraphModel::Configuration { n: g.n, d: g.d }),
        }
    }

    /// Degree counting only paired stubs for the configuration model.
    pub fn degree(&self, v: NodeId) -> usize {
        match self {
            Graph::Static(g) => g.neighbors(v).len(),
            Graph::Configuration(g) => g.d - g.free_stubs(v),
        }
    }

    /// Current adjacency of `v`, with multiplicity.
    pub fn neighbors(&self, v: NodeId) -> Vec<NodeId> {
        match self {
            Graph::Static(g) => g.neighbors(v).iter().map(|&u| NodeId(u)).collect(),
            Graph::Configuration(g) => (0..g.d).filter_map(|k| g.stub_endpoint(v, k)).collect(),
        }
    }

    /// Whether `v` can open a channel at all.
    pub fn can_call(&self, v: NodeId) -> bool {
        match self {
            Graph::Static(g) => !g.neighbors(v).is_empty(),
            Graph::Configuration(g) => g.d > 0,
        }
    }

    fn check(&self, v: NodeId) -> Result<(), GraphError> {
        if v.index() >= self.n() {
            Err(GraphError::OutOfRange(v))
        } else {
            Ok(())
        }
    }

    /// A neighbor of `v` chosen uniformly at random. For the configuration
    /// model a uniform stub of `v` is chosen and paired on first use.
    pub fn sample_neighbor<R: Rng + ?Sized>(&mut self, v: NodeId, rng: &mut R) -> Result<NodeId, GraphError> {
        self.check(v)?;
        match self {
            Graph::Static(g) => {
                let nb = g.neighbors(v);
                if nb.is_empty() {
                    return Err(GraphError::NoNeighbor(v));
                }
                Ok(NodeId(nb[rng.gen_range(0..nb.len())]))
            }
            Graph::Configuration(g) => {
                let k = rng.gen_range(0..g.d);
                Ok(g.resolve_stub(v, k))
            }
        }
    }

    /// A neighbor chosen uniformly from `N(v)` minus `avoid`; when every
    /// neighbor is in `avoid`, uniform over all of `N(v)`.
    pub fn sample_neighbor_avoiding<R: Rng + ?Sized>(
        &mut self,
        v: NodeId,
        avoid: &[NodeId],
        rng: &mut R,
    ) -> Result<NodeId, GraphError> {
        if avoid.is_empty() {
            return self.sample_neighbor(v, rng);
        }
        self.check(v)?;
        let blocked = |u: u32| avoid.iter().any(|a| a.0 == u);
        match self {
            Graph::Static(g) => {
                let nb = g.neighbors(v);
                if nb.is_empty() {
                    return Err(GraphError::NoNeighbor(v));
                }
                if nb.len() > 2 * avoid.len() {
                    // At least half the list is admissible: rejection terminates fast.
                    loop {
                        let u = nb[rng.gen_range(0..nb.len())];
                        if !blocked(u) {
                            return Ok(NodeId(u));
                        }
                    }
                }
                let allowed: Vec<u32> = nb.iter().copied().filter(|&u| !blocked(u)).collect();
                let pool = if allowed.is_empty() { nb } else { &allowed[..] };
                Ok(NodeId(pool[rng.gen_range(0..pool.len())]))
            }
            Graph::Configuration(g) => {
                // Candidate stubs: unpaired ones, or paired to an admissible node.
                let mut candidates: Vec<usize> =
                    (0..g.d).filter(|&k| g.stub_endpoint(v, k).is_none_or(|u| !blocked(u.0))).collect();
                while !candidates.is_empty() {
                    let i = rng.gen_range(0..candidates.len());
                    let k = candidates.swap_remove(i);
                    let u = g.resolve_stub(v, k);
                    if !blocked(u.0) {
                        return Ok(u);
                    }
                }
                let k = rng.gen_range(0..g.d);
                Ok(g.resolve_stub(v, k))
            }
        }
    }

    /// All currently existing edges `(u, v)` with `u <= v`, sorted, with
    /// multiplicity.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        match self {
            Graph::Static(g) => {
                for u in 0..g.n() {
                    let nb = g.neighbors(NodeId(u as u32));
                    let mut i = 0;
                    while i < nb.len() {
                        let w = nb[i];
                        if w as usize > u {
                            out.push((u as u32, w));
                        } else if w as usize == u {
                            // A loop appears twice in its own list.
                            out.push((u as u32, w));
                            i += 1;
                        }
                        i += 1;
                    }
                }
            }
            Graph::Configuration(g) => {
                for (s, &p) in g.partner.iter().enumerate() {
                    if p != UNPAIRED && (s as u32) < p {
                        let a = g.stub_owner(s as u32);
                        let b = g.stub_owner(p);
                        out.push((a.min(b), a.max(b)));
                    }
                }
                out.sort_unstable();
            }
        }
        out
    }

    /// Writes the edge-list text format: a `n m` header, then one sorted
    /// `u v` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let edges = self.edges();
        writeln!(w, "{} {}", self.n(), edges.len())?;
        for (u, v) in edges {
            writeln!(w, "{u} {v}")?;
        }
        Ok(())
    }

    /// Reads the edge-list text format into a static graph.
    pub fn read_edge_list<R: BufRead>(r: R) -> Result<Graph, GraphError> {
        let mut lines = r.lines().enumerate();
        let parse_pair = |line: usize, s: &str| -> Result<(usize, usize), GraphError> {
            let mut it = s.split_whitespace();
            let mut next = || -> Result<usize, GraphError> {
                it.next()
                    .ok_or_else(|| GraphError::Parse { line, message: "expected two integers".into() })?
                    .parse::<usize>()
                    .map_err(|e| GraphError::Parse { line, message: e.to_string() })
            };
            let a = next()?;
            let b = next()?;
            Ok((a, b))
        };
        let (i, header) = lines.next().ok_or(GraphError::Parse { line: 1, message: "missing header".into() })?;
        let (n, m) = parse_pair(i + 1, &header?)?;
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        let mut edges = Vec::with_capacity(m);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (u, v) = parse_pair(i + 1, &line)?;
            if u >= n || v >= n {
                return Err(GraphError::Parse { line: i + 1, message: format!("node out of range 0..{n}") });
            }
            edges.push((u as u32, v as u32));
        }
        if edges.len() != m {
            return Err(GraphError::Parse {
                line: 1,
                message: format!("header announces {m} edges, found {}", edges.len()),
            });
        }
        Ok(Graph::Static(StaticGraph::from_edges(n, &edges)?))
    }
}
