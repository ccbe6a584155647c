//! Directed communication graphs.
//!
//! Nodes are stored 0-based. Everything user facing (graph files, reports,
//! error messages, [`Digraph::from_one_based`]) uses 1-based indices.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

/// Maximum number of rejection-sampling attempts in [`random_strongly_connected`].
pub const MAX_GENERATOR_ATTEMPTS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge ({from}, {to}) references a node outside 1..={n_nodes}")]
    OutOfRange { from: usize, to: usize, n_nodes: usize },
    #[error("self-loop on node {0} is not allowed")]
    SelfLoop(usize),
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("no strongly connected digraph found in {attempts} attempts (n={n_nodes}, density={density})")]
    GeneratorExhausted { n_nodes: usize, density: f64, attempts: usize },
    #[error("invalid edge density {0}; expected a value in (0, 1]")]
    BadDensity(f64),
    #[error("graph file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot read graph file: {0}")]
    Io(String),
}

/// A simple directed graph without self-loops.
///
/// Edges are kept sorted by `(from, to)`, which makes the out-edges of a node
/// a contiguous range and gives every edge a stable index used by per-edge
/// parameter arrays elsewhere in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Digraph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    out_offsets: Vec<usize>,
    in_edges: Vec<Vec<usize>>,
}

impl Digraph {
    /// Builds a graph from 0-based edges. Duplicates are dropped.
    pub fn new(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if n_nodes == 0 {
            return Err(GraphError::Empty);
        }
        for &(i, j) in edges {
            if i >= n_nodes || j >= n_nodes {
                return Err(GraphError::OutOfRange { from: i + 1, to: j + 1, n_nodes });
            }
            if i == j {
                return Err(GraphError::SelfLoop(i + 1));
            }
        }
        let mut edges = edges.to_vec();
        edges.sort_unstable();
        edges.dedup();

        let mut out_offsets = vec![0; n_nodes + 1];
        for &(i, _) in &edges {
            out_offsets[i + 1] += 1;
        }
        for k in 0..n_nodes {
            out_offsets[k + 1] += out_offsets[k];
        }
        let mut in_edges = vec![Vec::new(); n_nodes];
        for (e, &(_, j)) in edges.iter().enumerate() {
            in_edges[j].push(e);
        }
        Ok(Self { n_nodes, edges, out_offsets, in_edges })
    }

    /// Builds a graph from 1-based edges, the convention used in files and reports.
    pub fn from_one_based(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut zero_based = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i == 0 || j == 0 {
                return Err(GraphError::OutOfRange { from: i, to: j, n_nodes });
            }
            zero_based.push((i - 1, j - 1));
        }
        Self::new(n_nodes, &zero_based)
    }

    /// Directed ring `0 -> 1 -> ... -> n-1 -> 0`, plus the reverse ring when `bidirectional`.
    pub fn ring(n_nodes: usize, bidirectional: bool) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        if n_nodes > 1 {
            for i in 0..n_nodes {
                let j = (i + 1) % n_nodes;
                edges.push((i, j));
                if bidirectional {
                    edges.push((j, i));
                }
            }
        }
        Self::new(n_nodes, &edges)
    }

    pub fn complete(n_nodes: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (0..n_nodes)
            .flat_map(|i| (0..n_nodes).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        Self::new(n_nodes, &edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// All edges, sorted, 0-based. The position of an edge is its edge index.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Edge indices of the out-edges of `i`, in increasing target order.
    pub fn out_edge_range(&self, i: usize) -> std::ops::Range<usize> {
        self.out_offsets[i]..self.out_offsets[i + 1]
    }

    /// Out-neighbors of `i`, increasing.
    pub fn out_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges[self.out_edge_range(i)].iter().map(|&(_, j)| j)
    }

    /// Edge indices of the in-edges of `j`, increasing source order.
    pub fn in_edges(&self, j: usize) -> &[usize] {
        &self.in_edges[j]
    }

    /// In-neighbors of `j`, increasing.
    pub fn in_neighbors(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.in_edges[j].iter().map(move |&e| self.edges[e].0)
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.out_offsets[i + 1] - self.out_offsets[i]
    }

    pub fn edge_index(&self, from: usize, to: usize) -> Option<usize> {
        let range = self.out_edge_range(from);
        self.edges[range.clone()]
            .binary_search_by_key(&to, |&(_, j)| j)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edge_index(from, to).is_some()
    }

    pub fn is_strongly_connected(&self) -> bool {
        let out: Vec<Vec<usize>> = (0..self.n_nodes).map(|i| self.out_neighbors(i).collect()).collect();
        is_strongly_connected_adjacency(&out)
    }

    /// Returns `Err(NotStronglyConnected)` unless the graph is strongly connected.
    pub fn require_strongly_connected(&self) -> Result<(), GraphError> {
        if self.is_strongly_connected() {
            Ok(())
        } else {
            Err(GraphError::NotStronglyConnected)
        }
    }

    /// Parses the plain-text graph format: first line `N`, then one `i j`
    /// (1-based) edge per line. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut n_nodes = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| GraphError::Parse { line: lineno + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match n_nodes {
                None => {
                    if fields.len() != 1 {
                        return Err(parse_err(format!("expected node count, got `{line}`")));
                    }
                    let n: usize = fields[0].parse().map_err(|_| parse_err(format!("bad node count `{}`", fields[0])))?;
                    n_nodes = Some(n);
                }
                Some(_) => {
                    if fields.len() != 2 {
                        return Err(parse_err(format!("expected `i j`, got `{line}`")));
                    }
                    let i: usize = fields[0].parse().map_err(|_| parse_err(format!("bad node `{}`", fields[0])))?;
                    let j: usize = fields[1].parse().map_err(|_| parse_err(format!("bad node `{}`", fields[1])))?;
                    edges.push((i, j));
                }
            }
        }
        let n = n_nodes.ok_or(GraphError::Parse { line: 0, message: "missing node count".into() })?;
        Self::from_one_based(n, &edges)
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

impl fmt::Display for Digraph {
    /// Writes the graph in the file format accepted by [`Digraph::parse`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.n_nodes)?;
        for &(i, j) in &self.edges {
            writeln!(f, "{} {}", i + 1, j + 1)?;
        }
        Ok(())
    }
}

/// Strong connectivity of an adjacency-list graph: node 0 must reach every
/// node and be reached from every node (one forward and one reverse BFS).
pub fn is_strongly_connected_adjacency(out: &[Vec<usize>]) -> bool {
    let n = out.len();
    if n <= 1 {
        return true;
    }
    let mut reverse = vec![Vec::new(); n];
    for (i, targets) in out.iter().enumerate() {
        for &j in targets {
            reverse[j].push(i);
        }
    }
    reaches_all(out, 0) && reaches_all(&reverse, 0)
}

fn reaches_all(adj: &[Vec<usize>], start: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == adj.len()
}

/// Samples each ordered pair as an edge with probability `density` and
/// retries until the result is strongly connected.
pub fn random_strongly_connected<R: Rng + ?Sized>(
    n_nodes: usize,
    density: f64,
    rng: &mut R,
) -> Result<Digraph, GraphError> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(GraphError::BadDensity(density));
    }
    for _ in 0..MAX_GENERATOR_ATTEMPTS {
        let mut edges = Vec::new();
        for i in 0..n_nodes {
            for j in 0..n_nodes {
                if i != j && rng.random::<f64>() < density {
                    edges.push((i, j));
                }
            }
        }
        let g = Digraph::new(n_nodes, &edges)?;
        if g.is_strongly_connected() {
            return Ok(g);
        }
    }
    Err(GraphError::GeneratorExhausted { n_nodes, density, attempts: MAX_GENERATOR_ATTEMPTS })
}
