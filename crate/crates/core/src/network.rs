//! Location graph and the precomputed all-pairs travel-time matrix.
//!
//! Travel times are whole seconds. The matrix is built once from a
//! [`LocationGraph`] with Dijkstra from every node and is immutable afterwards;
//! congestion scenarios produce a new matrix instead of mutating one in place.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{LocationId, Seconds};

const CACHE_MAGIC: &[u8; 4] = b"TTMX";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("graph has no nodes")]
    Empty,
    #[error("depot {0} is not a node of the graph")]
    DepotOutOfRange(LocationId),
    #[error("edge {from} -> {to} references a node outside 0..{nodes}")]
    EdgeOutOfRange {
        from: LocationId,
        to: LocationId,
        nodes: u32,
    },
    #[error("edge {from} -> {to} has non-positive travel time")]
    NonPositiveWeight { from: LocationId, to: LocationId },
    #[error("no path from {from} to {to}; the graph must be strongly connected")]
    Unreachable { from: LocationId, to: LocationId },
    #[error("unknown location {0}")]
    UnknownLocation(String),
    #[error("congestion factor {0} is below 1.0 (congestion can only slow travel)")]
    FactorBelowOne(f64),
    #[error("travel time overflow while scaling entry {0}")]
    Overflow(u32),
    #[error("network file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("matrix cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: LocationId,
    pub to: LocationId,
    pub seconds: u32,
}

/// Directed road graph; node identifiers are `0..node_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationGraph {
    node_count: u32,
    depot: LocationId,
    edges: Vec<Edge>,
}

impl LocationGraph {
    pub fn new(node_count: u32, depot: LocationId, edges: Vec<Edge>) -> Result<Self, NetworkError> {
        if node_count == 0 {
            return Err(NetworkError::Empty);
        }
        if depot.0 >= node_count {
            return Err(NetworkError::DepotOutOfRange(depot));
        }
        for e in &edges {
            if e.from.0 >= node_count || e.to.0 >= node_count {
                return Err(NetworkError::EdgeOutOfRange {
                    from: e.from,
                    to: e.to,
                    nodes: node_count,
                });
            }
            if e.seconds == 0 {
                return Err(NetworkError::NonPositiveWeight {
                    from: e.from,
                    to: e.to,
                });
            }
        }
        Ok(Self {
            node_count,
            depot,
            edges,
        })
    }

    /// A `rows x cols` street grid with two-way edges of `edge_seconds`.
    /// The depot sits at the node closest to the centre.
    pub fn grid(rows: u32, cols: u32, edge_seconds: u32) -> Result<Self, NetworkError> {
        let id = |r: u32, c: u32| LocationId(r * cols + c);
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push(Edge { from: id(r, c), to: id(r, c + 1), seconds: edge_seconds });
                    edges.push(Edge { from: id(r, c + 1), to: id(r, c), seconds: edge_seconds });
                }
                if r + 1 < rows {
                    edges.push(Edge { from: id(r, c), to: id(r + 1, c), seconds: edge_seconds });
                    edges.push(Edge { from: id(r + 1, c), to: id(r, c), seconds: edge_seconds });
                }
            }
        }
        Self::new(rows * cols, id(rows / 2, cols / 2), edges)
    }

    pub fn node_count(&self) -> u32 {
        self.node_count
    }

    pub fn depot(&self) -> LocationId {
        self.depot
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Slows individual edges; `factor` is called once per edge and must
    /// return a value >= 1. Travel times are rounded to whole seconds.
    pub fn slowed<F>(&self, mut factor: F) -> Result<Self, NetworkError>
    where
        F: FnMut(&Edge) -> f64,
    {
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let f = factor(e);
            edges.push(Edge {
                seconds: scale_seconds(e.seconds, f)?,
                ..*e
            });
        }
        Self::new(self.node_count, self.depot, edges)
    }

    /// Parses the line-oriented network format:
    ///
    /// ```text
    /// nodes <count> depot <id>
    /// edge <from> <to> <seconds>
    /// ```
    ///
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, NetworkError> {
        let mut header: Option<(u32, u32)> = None;
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split_whitespace().collect();
            let err = |message: String| NetworkError::Parse { line, message };
            match fields.as_slice() {
                ["nodes", count, "depot", depot] => {
                    if header.is_some() {
                        return Err(err("duplicate header".into()));
                    }
                    let count = count.parse().map_err(|_| err(format!("bad node count {count:?}")))?;
                    let depot = depot.parse().map_err(|_| err(format!("bad depot {depot:?}")))?;
                    header = Some((count, depot));
                }
                ["edge", from, to, secs] => {
                    if header.is_none() {
                        return Err(err("edge before header".into()));
                    }
                    let from = from.parse().map_err(|_| err(format!("bad node id {from:?}")))?;
                    let to = to.parse().map_err(|_| err(format!("bad node id {to:?}")))?;
                    let seconds = secs.parse().map_err(|_| err(format!("bad seconds {secs:?}")))?;
                    edges.push(Edge {
                        from: LocationId(from),
                        to: LocationId(to),
                        seconds,
                    });
                }
                _ => return Err(err(format!("unrecognized line {raw:?}"))),
            }
        }
        let (count, depot) = header.ok_or(NetworkError::Parse {
            line: 0,
            message: "missing `nodes <count> depot <id>` header".into(),
        })?;
        Self::new(count, LocationId(depot), edges)
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        fs::write(path, self.to_string())?;
        Ok(())
    }
}

impl fmt::Display for LocationGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nodes {} depot {}", self.node_count, self.depot)?;
        for e in &self.edges {
            writeln!(f, "edge {} {} {}", e.from, e.to, e.seconds)?;
        }
        Ok(())
    }
}

/// Dense all-pairs shortest travel times, row-major by origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TravelMatrix {
    n: usize,
    depot: LocationId,
    times: Vec<u32>,
}

impl TravelMatrix {
    /// Builds from explicit entries (row-major). Used for hand-made fixtures
    /// and the binary cache; no shortest-path closure is applied.
    pub fn from_rows(depot: LocationId, rows: Vec<Vec<u32>>) -> Result<Self, NetworkError> {
        let n = rows.len();
        if n == 0 {
            return Err(NetworkError::Empty);
        }
        if depot.index() >= n {
            return Err(NetworkError::DepotOutOfRange(depot));
        }
        let mut times = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(NetworkError::Cache(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            times.extend(row);
        }
        Ok(Self { n, depot, times })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn depot(&self) -> LocationId {
        self.depot
    }

    pub fn contains(&self, loc: LocationId) -> bool {
        loc.index() < self.n
    }

    /// Hot-path lookup. Panics on an unknown location; use
    /// [`TravelMatrix::travel_time`] for unchecked input.
    #[inline]
    pub fn tt(&self, from: LocationId, to: LocationId) -> Seconds {
        Seconds::from(self.times[from.index() * self.n + to.index()])
    }

    pub fn travel_time(&self, from: LocationId, to: LocationId) -> Result<Seconds, NetworkError> {
        for loc in [from, to] {
            if !self.contains(loc) {
                return Err(NetworkError::UnknownLocation(loc.to_string()));
            }
        }
        Ok(self.tt(from, to))
    }

    /// Lookup by textual identifier, as read from files or the HTTP API.
    pub fn travel_time_by_name(&self, from: &str, to: &str) -> Result<Seconds, NetworkError> {
        let from = self.resolve(from)?;
        let to = self.resolve(to)?;
        Ok(self.tt(from, to))
    }

    pub fn resolve(&self, name: &str) -> Result<LocationId, NetworkError> {
        name.parse::<u32>()
            .ok()
            .map(LocationId)
            .filter(|l| self.contains(*l))
            .ok_or_else(|| NetworkError::UnknownLocation(name.to_string()))
    }

    pub fn row(&self, from: LocationId) -> &[u32] {
        &self.times[from.index() * self.n..(from.index() + 1) * self.n]
    }

    pub fn locations(&self) -> impl Iterator<Item = LocationId> {
        (0..self.n as u32).map(LocationId)
    }

    /// Uniform slowdown: every entry `tt` becomes `ceil(tt * factor)`. Rounding
/// up keeps the triangle inequality; rounding to nearest does not.
    pub fn apply_congestion(&self, factor: f64) -> Result<Self, NetworkError> {
        let times = self
            .times
            .iter()
            .map(|&t| scale_seconds(t, factor))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            n: self.n,
            depot: self.depot,
            times,
        })
    }

    pub fn write_cache<W: Write>(&self, mut out: W) -> Result<(), NetworkError> {
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&CACHE_VERSION.to_le_bytes())?;
        out.write_all(&(self.n as u32).to_le_bytes())?;
        out.write_all(&self.depot.0.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.times.len() * 4);
        for t in &self.times {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_cache<R: Read>(mut input: R) -> Result<Self, NetworkError> {
        let mut header = [0u8; 16];
        input.read_exact(&mut header)?;
        if &header[0..4] != CACHE_MAGIC {
            return Err(NetworkError::Cache("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        if word(4) != CACHE_VERSION {
            return Err(NetworkError::Cache(format!("unsupported version {}", word(4))));
        }
        let n = word(8) as usize;
        let depot = LocationId(word(12));
        if n == 0 || depot.index() >= n {
            return Err(NetworkError::Cache(format!("bad node count {n} / depot {depot}")));
        }
        let mut body = vec![0u8; n * n * 4];
        input.read_exact(&mut body)?;
        let times = body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { n, depot, times })
    }
}

fn scale_seconds(t: u32, factor: f64) -> Result<u32, NetworkError> {
    if !(factor >= 1.0) || !factor.is_finite() {
        return Err(NetworkError::FactorBelowOne(factor));
    }
    let scaled = (f64::from(t) * factor).ceil();
    if scaled > f64::from(u32::MAX) {
        return Err(NetworkError::Overflow(t));
    }
    Ok(scaled as u32)
}

/// All-pairs shortest paths by Dijkstra from every node.
pub fn build_travel_matrix(graph: &LocationGraph) -> Result<TravelMatrix, NetworkError> {
    let n = graph.node_count as usize;
    // compressed adjacency
    let mut offsets = vec![0usize; n + 1];
    for e in &graph.edges {
        offsets[e.from.index() + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let mut fill = offsets.clone();
    let mut targets = vec![(0usize, 0u64); graph.edges.len()];
    for e in &graph.edges {
        targets[fill[e.from.index()]] = (e.to.index(), u64::from(e.seconds));
        fill[e.from.index()] += 1;
    }

    let mut times = Vec::with_capacity(n * n);
    let mut dist = vec![u64::MAX; n];
    let mut heap = BinaryHeap::new();
    for src in 0..n {
        dist.fill(u64::MAX);
        dist[src] = 0;
        heap.push(Reverse((0u64, src)));
        while let Some(Reverse((d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &targets[offsets[u]..offsets[u + 1]] {
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Reverse((nd, v)));
                }
            }
        }
        for (dst, &d) in dist.iter().enumerate() {
            if d == u64::MAX {
                return Err(NetworkError::Unreachable {
                    from: LocationId(src as u32),
                    to: LocationId(dst as u32),
                });
            }
            times.push(u32::try_from(d).map_err(|_| NetworkError::Overflow(u32::MAX))?);
        }
    }
    Ok(TravelMatrix {
        n,
        depot: graph.depot,
        times,
    })
}
