use std::collections::{HashMap, VecDeque};
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub distance: f64,
}

/// Undirected road network with positive edge distances.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadGraph {
    node_count: usize,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl RoadGraph {
    /// Builds a graph from `(from, to, distance)` triples.
    ///
    /// Both orientations of a pair name the same edge; duplicates keep the
    /// smallest distance.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut kept: Vec<Edge> = Vec::new();
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for (from, to, distance) in edges {
            if from >= node_count || to >= node_count {
                return Err(Error::Data(format!("edge ({from}, {to}) references a node outside [0, {node_count})")));
            }
            if from == to {
                return Err(Error::Data(format!("self-loop on node {from}")));
            }
            if !(distance > 0.0) || !distance.is_finite() {
                return Err(Error::Data(format!("edge ({from}, {to}) has non-positive distance {distance}")));
            }
            let key = (from.min(to), from.max(to));
            match seen.get(&key) {
                Some(&i) => kept[i].distance = kept[i].distance.min(distance),
                None => {
                    seen.insert(key, kept.len());
                    kept.push(Edge { from, to, distance });
                }
            }
        }
        let mut adjacency = vec![Vec::new(); node_count];
        for e in &kept {
            adjacency[e.from].push((e.to, e.distance));
            adjacency[e.to].push((e.from, e.distance));
        }
        Ok(RoadGraph { node_count, edges: kept, adjacency })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adjacency[node]
    }

    pub fn distance(&self, a: usize, b: usize) -> Option<f64> {
        self.adjacency[a].iter().find(|(n, _)| *n == b).map(|&(_, d)| d)
    }

    /// Nodes reachable from `target` in at most `hops` steps, in
    /// breadth-first order, excluding `target`.
    pub fn within_hops(&self, target: usize, hops: usize) -> Vec<usize> {
        let mut depth = vec![usize::MAX; self.node_count];
        depth[target] = 0;
        let mut queue = VecDeque::from([target]);
        let mut out = Vec::new();
        while let Some(v) = queue.pop_front() {
            if depth[v] == hops {
                continue;
            }
            for &(n, _) in &self.adjacency[v] {
                if depth[n] == usize::MAX {
                    depth[n] = depth[v] + 1;
                    out.push(n);
                    queue.push_back(n);
                }
            }
        }
        out
    }

    /// Writes the `from,to,distance` CSV form read by [`load_edges`].
    pub fn to_csv(&self) -> String {
        let mut s = String::from("from,to,distance\n");
        for e in &self.edges {
            s.push_str(&format!("{},{},{}\n", e.from, e.to, e.distance));
        }
        s
    }
}

/// Reads a `from,to,distance` edge file.
///
/// `declared_nodes` fixes N; otherwise N is one past the largest id seen.
pub fn load_edges(path: impl AsRef<Path>, declared_nodes: Option<usize>) -> Result<RoadGraph> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Data(format!("cannot open edge file {}: {e}", path.as_ref().display())))?;
    parse_edges(file, declared_nodes)
}

pub fn parse_edges(reader: impl Read, declared_nodes: Option<usize>) -> Result<RoadGraph> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    if header != ["from", "to", "distance"] {
        return Err(Error::Data(format!("edge file header must be from,to,distance, got {}", header.join(","))));
    }
    let mut triples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != 3 {
            return Err(Error::Data(format!("edge file line {line}: expected 3 fields, got {}", record.len())));
        }
        let parse_id = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Data(format!("edge file line {line}: bad node id {s:?}")))
        };
        let from = parse_id(&record[0])?;
        let to = parse_id(&record[1])?;
        let distance: f64 = record[2]
            .parse()
            .map_err(|_| Error::Data(format!("edge file line {line}: bad distance {:?}", &record[2])))?;
        if !(distance > 0.0) {
            return Err(Error::Data(format!("edge file line {line}: distance must be positive, got {distance}")));
        }
        if let Some(n) = declared_nodes {
            if from >= n || to >= n {
                return Err(Error::Data(format!("edge file line {line}: node id >= declared node count {n}")));
            }
        }
        triples.push((from, to, distance));
    }
    let n = declared_nodes.unwrap_or_else(|| triples.iter().map(|&(a, b, _)| a.max(b) + 1).max().unwrap_or(0));
    RoadGraph::new(n, triples)
}

/// Reciprocal-distance weights `A_s`, dense `N×N`, zero off the edge set.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialWeights {
    n: usize,
    weights: Vec<f64>,
}

impl SpatialWeights {
    pub fn from_graph(g: &RoadGraph) -> Self {
        let n = g.node_count();
        let mut weights = vec![0.0; n * n];
        for e in g.edges() {
            let w = 1.0 / e.distance;
            weights[e.from * n + e.to] = w;
            weights[e.to * n + e.from] = w;
        }
        SpatialWeights { n, weights }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    /// `A_s[target][j]` for each sampled neighbor `j`, in slot order.
    pub fn neighbor_weights(&self, target: usize, neighbors: &[usize]) -> Vec<f64> {
        neighbors.iter().map(|&j| self.get(target, j)).collect()
    }

    /// Row `target` of `A_s` with every column outside `neighbors` zeroed.
    pub fn masked_row(&self, target: usize, neighbors: &[usize]) -> Vec<f64> {
        let mut row = vec![0.0; self.n];
        for &j in neighbors {
            row[j] = self.get(target, j);
        }
        row
    }
}

pub fn spatial_weights(g: &RoadGraph) -> SpatialWeights {
    SpatialWeights::from_graph(g)
}

/// Exactly `K` sampled neighbor ids for one target node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborSet {
    pub target: usize,
    pub neighbors: Vec<usize>,
    pub hop_limit: usize,
}

/// Draws `k` neighbors from a candidate pool.
///
/// More candidates than `k`: uniform without replacement. Fewer (but some):
/// all candidates, then the remainder drawn with replacement from them.
/// None: every slot is `target` itself.
fn draw(target: usize, candidates: &[usize], k: usize, rng: &mut Rng) -> Vec<usize> {
    if candidates.is_empty() {
        return vec![target; k];
    }
    if candidates.len() >= k {
        let mut pool = candidates.to_vec();
        // partial Fisher-Yates: the first k slots end up uniformly chosen
        for i in 0..k {
            let j = i + rng.below(pool.len() - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        return pool;
    }
    let mut out = candidates.to_vec();
    while out.len() < k {
        out.push(candidates[rng.below(candidates.len())]);
    }
    out
}

pub fn sample_neighbors(g: &RoadGraph, target: usize, k: usize, hops: usize, rng: &mut Rng) -> Result<NeighborSet> {
    NeighborSampler::new(g, k, hops)?.sample(target, rng)
}

/// [`sample_neighbors`] with the breadth-first candidate pools cached.
#[derive(Clone, Debug)]
pub struct NeighborSampler {
    candidates: Vec<Vec<usize>>,
    k: usize,
    hops: usize,
}

impl NeighborSampler {
    pub fn new(g: &RoadGraph, k: usize, hops: usize) -> Result<Self> {
        if hops == 0 {
            return Err(Error::InvalidArgument("hop limit must be at least 1".into()));
        }
        if k > 0 && g.node_count() <= 1 {
            return Err(Error::InvalidArgument(format!("cannot sample {k} neighbors in a graph of {} node(s)", g.node_count())));
        }
        let candidates = (0..g.node_count()).map(|v| g.within_hops(v, hops)).collect();
        Ok(NeighborSampler { candidates, k, hops })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn candidates(&self, target: usize) -> &[usize] {
        &self.candidates[target]
    }

    pub fn sample(&self, target: usize, rng: &mut Rng) -> Result<NeighborSet> {
        let pool = self
            .candidates
            .get(target)
            .ok_or_else(|| Error::InvalidArgument(format!("target node {target} out of range")))?;
        Ok(NeighborSet { target, neighbors: draw(target, pool, self.k, rng), hop_limit: self.hops })
    }
}
