//! Graph topologies cells live on: complete graphs, explicit edge lists,
//! and random unit-ball graphs with exact rational coordinates.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::rational::Rational;

/// Coordinates of unit-ball graphs land on this dyadic grid: every
/// coordinate is an integer multiple of `2^-COORD_GRID_BITS`.
pub const COORD_GRID_BITS: u32 = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
enum EdgeSet {
    Complete,
    /// Sorted adjacency lists, symmetric, no self-loops.
    Explicit(Vec<Vec<usize>>),
}

/// Undirected graph on vertices `0..n`, optionally carrying an embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: EdgeSet,
    embedding: Option<Vec<Vec<Rational>>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyError {
    EmptyGraph,
    SelfLoop { vertex: usize },
    VertexOutOfRange { vertex: usize, n: usize },
    BadDimension { dimension: usize },
    NegativeSide,
    Disconnected { attempts: u32 },
}

impl fmt::Display for TopologyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyError::EmptyGraph => write!(f, "graph needs at least one vertex"),
            TopologyError::SelfLoop { vertex } => write!(f, "self-loop at vertex {vertex}"),
            TopologyError::VertexOutOfRange { vertex, n } => {
                write!(f, "vertex {vertex} out of range for n = {n}")
            }
            TopologyError::BadDimension { dimension } => {
                write!(f, "dimension {dimension} unsupported, expected 1..=3")
            }
            TopologyError::NegativeSide => write!(f, "side length must be non-negative"),
            TopologyError::Disconnected { attempts } => {
                write!(f, "no connected placement found in {attempts} attempts")
            }
        }
    }
}

impl core::error::Error for TopologyError {}

impl Topology {
    /// Complete graph on `n >= 1` vertices. Adjacency is implicit, so large
    /// `n` stays cheap.
    pub fn complete(n: usize) -> Self {
        assert!(n >= 1, "complete graph needs at least one vertex");
        Self {
            n,
            edges: EdgeSet::Complete,
            embedding: None,
        }
    }

    /// Graph from an explicit edge list. Duplicate edges collapse.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::EmptyGraph);
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u == v {
                return Err(TopologyError::SelfLoop { vertex: u });
            }
            for w in [u, v] {
                if w >= n {
                    return Err(TopologyError::VertexOutOfRange { vertex: w, n });
                }
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self {
            n,
            edges: EdgeSet::Explicit(adjacency),
            embedding: None,
        })
    }

    /// Unit-ball graph over the given points: an edge joins two points at
    /// squared distance at most 1, decided exactly.
    pub fn from_embedding(points: Vec<Vec<Rational>>) -> Result<Self, TopologyError> {
        let n = points.len();
        if n == 0 {
            return Err(TopologyError::EmptyGraph);
        }
        let mut adjacency = vec![Vec::new(); n];
        let one = Rational::one();
        for u in 0..n {
            for v in (u + 1)..n {
                if squared_distance(&points[u], &points[v]) <= one {
                    adjacency[u].push(v);
                    adjacency[v].push(u);
                }
            }
        }
        Ok(Self {
            n,
            edges: EdgeSet::Explicit(adjacency),
            embedding: Some(points),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_complete(&self) -> bool {
        matches!(self.edges, EdgeSet::Complete)
    }

    pub fn embedding(&self) -> Option<&[Vec<Rational>]> {
        self.embedding.as_deref()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        if u == v || u >= self.n || v >= self.n {
            return false;
        }
        match &self.edges {
            EdgeSet::Complete => true,
            EdgeSet::Explicit(adj) => adj[u].binary_search(&v).is_ok(),
        }
    }

    pub fn neighbors(&self, v: usize) -> Neighbors<'_> {
        match &self.edges {
            EdgeSet::Complete => Neighbors::Complete {
                vertex: v,
                next: 0,
                n: self.n,
            },
            EdgeSet::Explicit(adj) => Neighbors::Explicit(adj[v].iter()),
        }
    }

    pub fn degree(&self, v: usize) -> usize {
        match &self.edges {
            EdgeSet::Complete => self.n - 1,
            EdgeSet::Explicit(adj) => adj[v].len(),
        }
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        match &self.edges {
            EdgeSet::Complete => self.n * (self.n - 1) / 2,
            EdgeSet::Explicit(adj) => adj.iter().map(Vec::len).sum::<usize>() / 2,
        }
    }

    /// All edges as ordered pairs `u < v`.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for u in 0..self.n {
            for v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        if self.is_complete() {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::new();
        seen[0] = true;
        queue.push_back(0);
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }
}

/// Iterator over the neighbors of one vertex.
pub enum Neighbors<'a> {
    Complete {
        vertex: usize,
        next: usize,
        n: usize,
    },
    Explicit(core::slice::Iter<'a, usize>),
}

impl Iterator for Neighbors<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        match self {
            Neighbors::Complete { vertex, next, n } => {
                if *next == *vertex {
                    *next += 1;
                }
                if *next >= *n {
                    None
                } else {
                    let v = *next;
                    *next += 1;
                    Some(v)
                }
            }
            Neighbors::Explicit(iter) => iter.next().copied(),
        }
    }
}

fn squared_distance(a: &[Rational], b: &[Rational]) -> Rational {
    let mut total = Rational::zero();
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        total += &d * &d;
    }
    total
}

/// What to do when a sampled unit-ball graph is disconnected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectPolicy {
    /// Draw fresh placements until connected, up to `limit` attempts.
    Resample { limit: u32 },
    /// Fail immediately on a disconnected draw.
    Reject,
}

/// Parameters for [`ubg_random`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UbgParams {
    pub n: usize,
    /// Ambient dimension, 1 to 3.
    pub dimension: usize,
    /// Cube side length; coordinates are sampled uniformly on the dyadic
    /// grid intersected with `[0, side]^dimension`.
    pub side: Rational,
    pub seed: u64,
    pub policy: ConnectPolicy,
}

/// A sampled unit-ball graph plus how many placements it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UbgSample {
    pub topology: Topology,
    pub attempts: u32,
}

/// Uniform integer on `[0, bound]` by rejection, so the draw sequence is a
/// pure function of the stream.
fn uniform_inclusive(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    if bound == u64::MAX {
        return rng.next_u64();
    }
    let span = bound + 1;
    let zone = u64::MAX - u64::MAX % span;
    loop {
        let draw = rng.next_u64();
        if draw < zone {
            return draw % span;
        }
    }
}

/// Samples a connected unit-ball graph with coordinates on the dyadic grid.
pub fn ubg_random(params: &UbgParams) -> Result<UbgSample, TopologyError> {
    if params.n == 0 {
        return Err(TopologyError::EmptyGraph);
    }
    if !(1..=3).contains(&params.dimension) {
        return Err(TopologyError::BadDimension {
            dimension: params.dimension,
        });
    }
    if params.side.is_negative() {
        return Err(TopologyError::NegativeSide);
    }
    // Number of grid cells along one axis: floor(side * 2^bits).
    let scaled = (&params.side * crate::rational::pow2(COORD_GRID_BITS as i32)).floor();
    let cells = scaled
        .numer()
        .to_u64()
        .expect("side length too large for the coordinate grid");
    let grid_denom = BigInt::one() << COORD_GRID_BITS as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let limit = match params.policy {
        ConnectPolicy::Resample { limit } => limit.max(1),
        ConnectPolicy::Reject => 1,
    };
    for attempt in 1..=limit {
        let mut points = Vec::with_capacity(params.n);
        for _ in 0..params.n {
            let mut coord = Vec::with_capacity(params.dimension);
            for _ in 0..params.dimension {
                let step = uniform_inclusive(&mut rng, cells);
                coord.push(Rational::new(BigInt::from(step), grid_denom.clone()));
            }
            points.push(coord);
        }
        let topology = Topology::from_embedding(points)?;
        if topology.is_connected() {
            return Ok(UbgSample {
                topology,
                attempts: attempt,
            });
        }
    }
    Err(TopologyError::Disconnected { attempts: limit })
}

/// Why a vertex set fails to be a maximal independent set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MisViolation {
    /// Two chosen vertices are adjacent.
    Independence { u: usize, v: usize },
    /// This vertex is neither chosen nor adjacent to a chosen vertex.
    Maximality { vertex: usize },
}

impl fmt::Display for MisViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MisViolation::Independence { u, v } => {
                write!(f, "adjacent vertices {u} and {v} are both in the set")
            }
            MisViolation::Maximality { vertex } => {
                write!(f, "vertex {vertex} is uncovered")
            }
        }
    }
}

/// Checks that `chosen` (a membership mask over vertices) is a maximal
/// independent set, returning the first violation found.
pub fn validate_mis(topology: &Topology, chosen: &[bool]) -> Result<(), MisViolation> {
    assert_eq!(chosen.len(), topology.n(), "mask length must equal n");
    for u in 0..topology.n() {
        if chosen[u] {
            for v in topology.neighbors(u) {
                if chosen[v] && u < v {
                    return Err(MisViolation::Independence { u, v });
                }
            }
        }
    }
    for u in 0..topology.n() {
        if !chosen[u] && !topology.neighbors(u).any(|v| chosen[v]) {
            return Err(MisViolation::Maximality { vertex: u });
        }
    }
    Ok(())
}
