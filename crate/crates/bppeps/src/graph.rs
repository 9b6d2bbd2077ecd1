//! Graph topology, directed-edge indexing, distances, and loop enumeration.

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitRng;

/// Undirected simple graph with a canonical edge order.
///
/// Undirected edges are stored as `(u, v)` with `u < v`, sorted. Directed
/// edges are ordered lexicographically by `(source, target)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    directed: Vec<(usize, usize)>,
    directed_index: HashMap<(usize, usize), usize>,
    edge_index: HashMap<(usize, usize), usize>,
    max_degree: usize,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    vertices: usize,
    edges: Vec<[usize; 2]>,
}

impl Serialize for Graph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GraphRepr { vertices: self.n, edges: self.edges.iter().map(|&(u, v)| [u, v]).collect() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Graph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = GraphRepr::deserialize(d)?;
        Graph::from_edges(repr.vertices, &repr.edges.iter().map(|e| (e[0], e[1])).collect::<Vec<_>>())
            .map_err(serde::de::Error::custom)
    }
}

impl Graph {
    /// Build a simple graph. Self-loops and parallel edges are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("graph needs at least one vertex".into()));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Invalid(format!("edge ({a}, {b}) out of range for {n} vertices")));
            }
            if a == b {
                return Err(Error::Invalid(format!("self-loop at vertex {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::Invalid(format!("parallel edge ({a}, {b})")));
            }
        }
        Ok(Self::build(n, set))
    }

    /// Build from a possibly redundant edge list, silently dropping
    /// self-loops and duplicates (used by the periodic grid family, where
    /// small periods wrap onto existing edges).
    fn from_edges_dedup(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let set: BTreeSet<_> = edges.into_iter().filter(|(a, b)| a != b).map(|(a, b)| (a.min(b), a.max(b))).collect();
        Self::build(n, set)
    }

    fn build(n: usize, set: BTreeSet<(usize, usize)>) -> Self {
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for nb in &mut adjacency {
            nb.sort_unstable();
        }
        let mut directed: Vec<(usize, usize)> = edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        directed.sort_unstable();
        let directed_index = directed.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let edge_index = edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let max_degree = adjacency.iter().map(Vec::len).max().unwrap_or(0);
        Graph { n, edges, adjacency, directed, directed_index, edge_index, max_degree }
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Position of `n` among the (ascending) neighbors of `v`.
    pub fn leg_of(&self, v: usize, n: usize) -> Option<usize> {
        self.adjacency[v].binary_search(&n).ok()
    }

    /// Id of the undirected edge `{a, b}`.
    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_index.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn directed_edges(&self) -> &[(usize, usize)] {
        &self.directed
    }

    pub fn directed_id(&self, src: usize, dst: usize) -> Option<usize> {
        self.directed_index.get(&(src, dst)).copied()
    }

    /// Id of the reversed directed edge.
    pub fn reverse(&self, id: usize) -> usize {
        let (a, b) = self.directed[id];
        self.directed_index[&(b, a)]
    }

    /// Breadth-first distances from a set of sources; `None` marks
    /// unreachable vertices.
    pub fn distances_from(&self, sources: &[usize]) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s].is_none() {
                dist[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &w in &self.adjacency[u] {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Shortest-path length; `None` when the pair is disconnected.
    pub fn distance(&self, u: usize, v: usize) -> Option<usize> {
        self.distances_from(&[u])[v]
    }

    /// `min_{a∈A, b∈B} d(a, b)`.
    pub fn region_distance(&self, a: &[usize], b: &[usize]) -> Result<Option<usize>> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::Invalid("region distance needs nonempty regions".into()));
        }
        let dist = self.distances_from(a);
        Ok(b.iter().filter_map(|&v| dist[v]).min())
    }

    /// Largest finite distance between any two vertices.
    pub fn diameter(&self) -> usize {
        (0..self.n).map(|v| self.distances_from(&[v]).into_iter().flatten().max().unwrap_or(0)).max().unwrap_or(0)
    }

    // ---- families -------------------------------------------------------

    /// `rows × cols` square grid; periodic wrap is deduplicated so the result
    /// is always a simple graph.
    pub fn grid(rows: usize, cols: usize, periodic: bool) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Invalid("grid dimensions must be positive".into()));
        }
        let id = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((id(r, c), id(r, c + 1)));
                } else if periodic {
                    edges.push((id(r, c), id(r, 0)));
                }
                if r + 1 < rows {
                    edges.push((id(r, c), id(r + 1, c)));
                } else if periodic {
                    edges.push((id(r, c), id(0, c)));
                }
            }
        }
        Ok(Self::from_edges_dedup(rows * cols, edges))
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::from_edges(n, &(0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect::<Vec<_>>())
    }

    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Invalid("a cycle needs at least 3 vertices".into()));
        }
        Self::from_edges(n, &(0..n).map(|a| (a, (a + 1) % n)).collect::<Vec<_>>())
    }

    /// Uniform-ish random `d`-regular simple graph by the configuration model
    /// with rejection.
    pub fn random_regular(n: usize, d: usize, seed: u64) -> Result<Self> {
        if d >= n || (n * d) % 2 == 1 {
            return Err(Error::Infeasible(format!("no simple {d}-regular graph on {n} vertices")));
        }
        let mut rng = SplitRng::new(seed).stream(0x7267_7261_7068);
        for _ in 0..10_000 {
            let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();
            stubs.shuffle(&mut rng);
            let pairs: Vec<(usize, usize)> = stubs.chunks(2).map(|p| (p[0], p[1])).collect();
            if let Ok(g) = Self::from_edges(n, &pairs) {
                return Ok(g);
            }
        }
        Err(Error::Infeasible(format!("failed to sample a simple {d}-regular graph on {n} vertices")))
    }

    /// Parse `grid:RxC[:periodic]`, `complete:n`, `cycle:n`, or
    /// `random-regular:n:d:seed`.
    pub fn parse_spec(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let num = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Invalid(format!("bad number '{s}' in graph spec '{spec}'")))
        };
        match parts.as_slice() {
            ["grid", dims] | ["grid", dims, "periodic"] => {
                let (r, c) =
                    dims.split_once('x').ok_or_else(|| Error::Invalid(format!("grid spec '{spec}' needs RxC")))?;
                Self::grid(num(r)?, num(c)?, parts.len() == 3)
            }
            ["complete", n] => Self::complete(num(n)?),
            ["cycle", n] => Self::cycle(num(n)?),
            ["random-regular", n, d, seed] => Self::random_regular(num(n)?, num(d)?, num(seed)? as u64),
            _ => Err(Error::Invalid(format!("unknown graph spec '{spec}'"))),
        }
    }

    // ---- loops ----------------------------------------------------------

    /// All connected edge subsets of weight `≤ max_weight` in which every
    /// vertex has degree `≥ 2`.
    pub fn enumerate_loops(&self, max_weight: usize) -> Vec<Loop> {
        self.enumerate_anchored_loops(&[], max_weight).into_iter().map(|a| a.lp).collect()
    }

    /// Connected edge subsets of weight `≤ max_weight` in which every vertex
    /// outside the union of `anchors` has degree `≥ 2` (vertices inside may
    /// have degree 1).
    pub fn enumerate_anchored_loops(&self, anchors: &[Vec<usize>], max_weight: usize) -> Vec<AnchoredLoop> {
        let mut anchored = vec![false; self.n];
        for a in anchors.iter().flatten() {
            anchored[*a] = true;
        }
        let mut search = LoopSearch { g: self, anchored: &anchored, max_weight, found: Vec::new() };
        for e0 in 0..self.edges.len() {
            if max_weight == 0 {
                break;
            }
            let mut deg = vec![0usize; self.n];
            let (a, b) = self.edges[e0];
            deg[a] += 1;
            deg[b] += 1;
            let mut in_set = vec![false; self.edges.len()];
            in_set[e0] = true;
            let mut touched = vec![false; self.edges.len()];
            touched[e0] = true;
            let mut ext = Vec::new();
            for f in self.incident_edges(e0) {
                if f > e0 && !touched[f] {
                    touched[f] = true;
                    ext.push(f);
                }
            }
            let mut current = vec![e0];
            search.extend(&mut current, &mut in_set, &mut deg, &ext, &touched, e0);
        }
        let mut found = search.found;
        found.sort_by(|x, y| x.len().cmp(&y.len()).then_with(|| x.cmp(y)));
        found
            .into_iter()
            .map(|edges| AnchoredLoop { lp: Loop::from_edge_ids(self, edges), anchors: anchors.to_vec() })
            .collect()
    }

    /// Edges sharing an endpoint with edge `e` (excluding `e`).
    fn incident_edges(&self, e: usize) -> impl Iterator<Item = usize> + '_ {
        let (a, b) = self.edges[e];
        self.adjacency[a]
            .iter()
            .map(move |&w| self.edge_id(a, w).unwrap())
            .chain(self.adjacency[b].iter().map(move |&w| self.edge_id(b, w).unwrap()))
            .filter(move |&f| f != e)
    }
}

struct LoopSearch<'a> {
    g: &'a Graph,
    anchored: &'a [bool],
    max_weight: usize,
    found: Vec<Vec<usize>>,
}

impl LoopSearch<'_> {
    /// Number of unanchored vertices with degree exactly one.
    fn deficit(&self, current: &[usize], deg: &[usize]) -> usize {
        let mut seen = BTreeSet::new();
        for &e in current {
            let (a, b) = self.g.edges[e];
            for v in [a, b] {
                if deg[v] == 1 && !self.anchored[v] {
                    seen.insert(v);
                }
            }
        }
        seen.len()
    }

    /// Edge-ESU: every connected edge set whose minimum edge is `root` is
    /// visited exactly once.
    fn extend(
        &mut self,
        current: &mut Vec<usize>,
        in_set: &mut [bool],
        deg: &mut [usize],
        ext: &[usize],
        touched: &[bool],
        root: usize,
    ) {
        let deficit = self.deficit(current, deg);
        if deficit == 0 {
            let mut key = current.clone();
            key.sort_unstable();
            self.found.push(key);
        }
        let budget = self.max_weight - current.len();
        // Each added edge fixes at most two deficient endpoints.
        if budget == 0 || deficit > 2 * budget {
            return;
        }
        let mut ext = ext.to_vec();
        while let Some(w) = ext.pop() {
            let mut touched2 = touched.to_vec();
            let mut ext2 = ext.clone();
            for f in self.g.incident_edges(w) {
                if f > root && !touched2[f] && !in_set[f] {
                    touched2[f] = true;
                    ext2.push(f);
                }
            }
            let (a, b) = self.g.edges[w];
            in_set[w] = true;
            deg[a] += 1;
            deg[b] += 1;
            current.push(w);
            self.extend(current, in_set, deg, &ext2, &touched2, root);
            current.pop();
            deg[a] -= 1;
            deg[b] -= 1;
            in_set[w] = false;
        }
    }
}

/// A connected excitation subgraph `(W, F)`; weight `|F|`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Loop {
    /// Sorted vertex ids `W`.
    pub vertices: Vec<usize>,
    /// Sorted undirected edge ids `F`.
    pub edges: Vec<usize>,
}

impl Loop {
    pub fn from_edge_ids(g: &Graph, mut edges: Vec<usize>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        let vertices: BTreeSet<usize> = edges.iter().flat_map(|&e| [g.edges[e].0, g.edges[e].1]).collect();
        Loop { vertices: vertices.into_iter().collect(), edges }
    }

    pub fn weight(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_vertex(&self, v: usize) -> bool {
        self.vertices.binary_search(&v).is_ok()
    }

    pub fn shares_vertex(&self, other: &Loop) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.vertices.len() && j < other.vertices.len() {
            match self.vertices[i].cmp(&other.vertices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    /// Degree of `v` inside the loop.
    pub fn degree_in(&self, g: &Graph, v: usize) -> usize {
        self.edges.iter().filter(|&&e| g.edges[e].0 == v || g.edges[e].1 == v).count()
    }

    pub fn edge_pairs(&self, g: &Graph) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&e| g.edges[e]).collect()
    }

    /// Connected, and every vertex not in `anchored` has degree `≥ 2`.
    pub fn is_valid(&self, g: &Graph, anchored: &[usize]) -> bool {
        if self.edges.is_empty() {
            return false;
        }
        let degree_ok = self.vertices.iter().all(|&v| anchored.contains(&v) || self.degree_in(g, v) >= 2);
        let mut seen = BTreeSet::from([self.vertices[0]]);
        let mut stack = vec![self.vertices[0]];
        while let Some(u) = stack.pop() {
            for &e in &self.edges {
                let (a, b) = g.edges[e];
                let other = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if seen.insert(other) {
                    stack.push(other);
                }
            }
        }
        degree_ok && seen.len() == self.vertices.len()
    }
}

/// A loop drawn from `ℒ_A`: degree one is allowed inside the anchor regions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnchoredLoop {
    pub lp: Loop,
    pub anchors: Vec<Vec<usize>>,
}

impl AnchoredLoop {
    pub fn touches_all_anchors(&self) -> bool {
        self.anchors.iter().all(|region| region.iter().any(|&v| self.lp.contains_vertex(v)))
    }
}

/// Loops whose vertex set meets `region`, in their original order.
pub fn loops_touching(loops: &[Loop], region: &[usize]) -> Vec<Loop> {
    loops.iter().filter(|l| region.iter().any(|&v| l.contains_vertex(v))).cloned().collect()
}
