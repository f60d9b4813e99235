//! Contact networks and cluster structures.
//!
//! A [`Network`] is an undirected, connected, weighted graph with a curing
//! rate and an infection rate per node. Adjacency is stored in compressed
//! rows (sorted neighbours per node, weights in a parallel array); every
//! undirected edge appears once in each endpoint's row.
//!
//! On disk both types are JSON documents with 0-based node indices:
//!
//! ```json
//! {"n": 3, "edges": [[0, 1, 0.5], [1, 2, 0.4]], "gamma": [0.4, 0.4, 0.4], "beta": [0.6, 0.6, 0.6]}
//! {"clusters": [[0, 1], [1, 2]], "cost_c1": [1.0, 2.0], "cost_c2": [3.0, 5.0]}
//! ```

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, Stream};

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn check_positive(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo <= 0.0 || self.hi < self.lo {
            return Err(Error::InvalidParams(format!(
                "{what} range [{}, {}] must satisfy 0 < lo <= hi",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        rng.gen_range(self.lo..=self.hi)
    }
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(r: Interval) -> Self {
        [r.lo, r.hi]
    }
}

/// Raw network document as read from or written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Checks every structural assumption of the epidemic model.
pub fn validate(doc: &NetworkDoc) -> Result<()> {
    build_rows(doc).map(|_| ())
}

type Rows = (Vec<usize>, Vec<usize>, Vec<f64>, Vec<(usize, usize, f64)>);

fn build_rows(doc: &NetworkDoc) -> Result<Rows> {
    let n = doc.n;
    if n == 0 {
        return Err(Error::InvalidParams(
            "network needs at least one node".into(),
        ));
    }
    if doc.gamma.len() != n || doc.beta.len() != n {
        return Err(Error::InvalidParams(format!(
            "expected {n} curing and infection rates, got {} and {}",
            doc.gamma.len(),
            doc.beta.len()
        )));
    }
    for (which, rates) in [("curing", &doc.gamma), ("infection", &doc.beta)] {
        if let Some((node, &value)) = rates
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::NonPositiveRate { node, which, value });
        }
    }

    let mut canonical: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(i, j, w) in &doc.edges {
        for node in [i, j] {
            if node >= n {
                return Err(Error::NodeOutOfRange { node, n });
            }
        }
        if i == j {
            return Err(Error::SelfLoop { node: i });
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::NonPositiveWeight { i, j, value: w });
        }
        let key = (i.min(j), i.max(j));
        match canonical.get(&key) {
            Some(&prev) if prev != w => {
                return Err(Error::AsymmetricWeight {
                    i: key.0,
                    j: key.1,
                    forward: prev,
                    backward: w,
                })
            }
            Some(_) => {}
            None => {
                canonical.insert(key, w);
            }
        }
    }

    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (&(i, j), &w) in &canonical {
        adj[i].push((j, w));
        adj[j].push((i, w));
    }
    if let Some(node) = first_unreachable(n, |u| adj[u].iter().map(|&(v, _)| v)) {
        return Err(Error::NotConnected { node });
    }

    let mut offsets = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::with_capacity(2 * canonical.len());
    let mut weights = Vec::with_capacity(2 * canonical.len());
    offsets.push(0);
    for row in &mut adj {
        row.sort_by_key(|&(v, _)| v);
        for &(v, w) in row.iter() {
            neighbors.push(v);
            weights.push(w);
        }
        offsets.push(neighbors.len());
    }
    let edges = canonical.into_iter().map(|((i, j), w)| (i, j, w)).collect();
    Ok((offsets, neighbors, weights, edges))
}

/// Breadth-first search from node 0; returns the lowest-indexed node it cannot reach.
fn first_unreachable<F, I>(n: usize, mut neighbors: F) -> Option<usize>
where
    F: FnMut(usize) -> I,
    I: IntoIterator<Item = usize>,
{
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for v in neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.iter().position(|s| !s)
}

/// Validated contact network. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkDoc", into = "NetworkDoc")]
pub struct Network {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    edges: Vec<(usize, usize, f64)>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
}

impl TryFrom<NetworkDoc> for Network {
    type Error = Error;

    fn try_from(doc: NetworkDoc) -> Result<Self> {
        let (offsets, neighbors, weights, edges) = build_rows(&doc)?;
        Ok(Self {
            offsets,
            neighbors,
            weights,
            edges,
            gamma: doc.gamma,
            beta: doc.beta,
        })
    }
}

impl From<Network> for NetworkDoc {
    fn from(net: Network) -> Self {
        NetworkDoc {
            n: net.n(),
            edges: net.edges,
            gamma: net.gamma,
            beta: net.beta,
        }
    }
}

impl Network {
    pub fn new(
        n: usize,
        edges: Vec<(usize, usize, f64)>,
        gamma: Vec<f64>,
        beta: Vec<f64>,
    ) -> Result<Self> {
        NetworkDoc {
            n,
            edges,
            gamma,
            beta,
        }
        .try_into()
    }

    pub fn n(&self) -> usize {
        self.gamma.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Undirected edges as `(i, j, a_ij)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Position range of node `i`'s row inside the directed-entry arrays.
    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Column (neighbour) index of every directed entry, row-major.
    pub fn columns(&self) -> &[usize] {
        &self.neighbors
    }

    /// Weight of every directed entry, aligned with [`Network::columns`].
    pub fn entry_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of directed entries, i.e. twice the edge count.
    pub fn num_entries(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row(i);
        self.neighbors[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row(i).len()
    }

    /// `sum_j a_ij`.
    pub fn weighted_degree(&self, i: usize) -> f64 {
        self.weights[self.row(i)].iter().sum()
    }

    /// Directed-entry position of `j` in row `i`.
    pub fn entry(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row(i);
        self.neighbors[r.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| r.start + k)
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.entry(i, j).map(|k| self.weights[k])
    }

    pub fn topology(&self) -> Topology {
        Topology {
            n: self.n(),
            edges: self.edges.iter().map(|&(i, j, _)| (i, j)).collect(),
        }
    }
}

/// Unweighted undirected graph; edges stored as sorted `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Topology {
    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        self.n > 0 && first_unreachable(self.n, |u| adj[u].iter().copied()).is_none()
    }
}

/// Retries before [`watts_strogatz`] gives up on finding a connected rewiring.
pub const MAX_REWIRE_ATTEMPTS: u64 = 1000;

/// Small-world graph: a ring lattice where each node links to its `k/2`
/// nearest neighbours on each side, after which every lattice edge `(u, u+j)`
/// has its far endpoint moved to a uniformly random node with probability
/// `p`. Moves that would create a self-loop or a duplicate edge redraw the
/// target. Disconnected outcomes are discarded and the construction repeats
/// under a derived sub-seed.
pub fn watts_strogatz(n: usize, k: usize, p: f64, seed: u64) -> Result<Topology> {
    if k < 2 || !k.is_multiple_of(2) || n <= k {
        return Err(Error::InvalidParams(format!(
            "Watts-Strogatz needs an even k >= 2 and n > k, got n = {n}, k = {k}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParams(format!(
            "rewiring probability {p} outside [0, 1]"
        )));
    }
    for attempt in 0..MAX_REWIRE_ATTEMPTS {
        let sub = if attempt == 0 {
            seed
        } else {
            derive_seed(seed, attempt)
        };
        let topo = rewired_lattice(n, k, p, sub);
        if topo.is_connected() {
            return Ok(topo);
        }
    }
    Err(Error::InvalidParams(format!(
        "no connected Watts-Strogatz graph for n = {n}, k = {k}, p = {p} after {MAX_REWIRE_ATTEMPTS} attempts"
    )))
}

fn rewired_lattice(n: usize, k: usize, p: f64, seed: u64) -> Topology {
    let mut rng = rng::stream(seed, Stream::Topology);
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            adj[u].insert(v);
            adj[v].insert(u);
        }
    }
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            if rng.gen::<f64>() >= p {
                continue;
            }
            if adj[u].len() >= n - 1 || !adj[u].contains(&v) {
                continue;
            }
            let w = loop {
                let w = rng.gen_range(0..n);
                if w != u && !adj[u].contains(&w) {
                    break w;
                }
            };
            adj[u].remove(&v);
            adj[v].remove(&u);
            adj[u].insert(w);
            adj[w].insert(u);
        }
    }
    let edges = adj
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.range(i + 1..).map(move |&j| (i, j)))
        .collect();
    Topology { n, edges }
}

/// Fills rates and weights uniformly from the given ranges. Draw order is
/// all `gamma`, then all `beta`, then one weight per edge in sorted edge
/// order.
pub fn random_parameters(
    topology: &Topology,
    gamma_range: Interval,
    beta_range: Interval,
    weight_range: Interval,
    seed: u64,
) -> Result<Network> {
    gamma_range.check_positive("curing")?;
    beta_range.check_positive("infection")?;
    weight_range.check_positive("weight")?;
    let mut rng = rng::stream(seed, Stream::Rates);
    let n = topology.n;
    let gamma: Vec<f64> = (0..n).map(|_| gamma_range.sample(&mut rng)).collect();
    let beta: Vec<f64> = (0..n).map(|_| beta_range.sample(&mut rng)).collect();
    let edges = topology
        .edges
        .iter()
        .map(|&(i, j)| (i, j, weight_range.sample(&mut rng)))
        .collect();
    Network::new(n, edges, gamma, beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSetDoc {
    pub clusters: Vec<Vec<usize>>,
    pub cost_c1: Vec<f64>,
    pub cost_c2: Vec<f64>,
}

/// Indexed, possibly overlapping node subsets with per-cluster costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClusterSetDoc", into = "ClusterSetDoc")]
pub struct ClusterSet {
    clusters: Vec<Vec<usize>>,
    cost_c1: Vec<f64>,
    cost_c2: Vec<f64>,
}

impl TryFrom<ClusterSetDoc> for ClusterSet {
    type Error = Error;

    fn try_from(doc: ClusterSetDoc) -> Result<Self> {
        ClusterSet::new(doc.clusters, doc.cost_c1, doc.cost_c2)
    }
}

impl From<ClusterSet> for ClusterSetDoc {
    fn from(cs: ClusterSet) -> Self {
        ClusterSetDoc {
            clusters: cs.clusters,
            cost_c1: cs.cost_c1,
            cost_c2: cs.cost_c2,
        }
    }
}

impl ClusterSet {
    /// Members are sorted; duplicate members within a cluster are rejected.
    pub fn new(clusters: Vec<Vec<usize>>, cost_c1: Vec<f64>, cost_c2: Vec<f64>) -> Result<Self> {
        let m = clusters.len();
        if cost_c1.len() != m || cost_c2.len() != m {
            return Err(Error::InvalidParams(format!(
                "{m} clusters but {} / {} cost entries",
                cost_c1.len(),
                cost_c2.len()
            )));
        }
        if let Some(c) = cost_c1
            .iter()
            .chain(&cost_c2)
            .find(|c| !(c.is_finite() && **c >= 0.0))
        {
            return Err(Error::InvalidParams(format!(
                "cluster cost {c} must be nonnegative"
            )));
        }
        let mut sorted = Vec::with_capacity(m);
        for (r, mut members) in clusters.into_iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidParams(format!("cluster {r} is empty")));
            }
            members.sort_unstable();
            if members.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidParams(format!(
                    "cluster {r} lists a node twice"
                )));
            }
            sorted.push(members);
        }
        Ok(Self {
            clusters: sorted,
            cost_c1,
            cost_c2,
        })
    }

    /// Rejects member indices that do not exist in a network of `n` nodes.
    pub fn check_nodes(&self, n: usize) -> Result<()> {
        match self.clusters.iter().flatten().find(|&&v| v >= n) {
            Some(&node) => Err(Error::NodeOutOfRange { node, n }),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn members(&self, r: usize) -> &[usize] {
        &self.clusters[r]
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn cost_c1(&self) -> &[f64] {
        &self.cost_c1
    }

    pub fn cost_c2(&self) -> &[f64] {
        &self.cost_c2
    }

    /// Number of distinct nodes in at least one cluster.
    pub fn coverage(&self) -> usize {
        self.clusters
            .iter()
            .flatten()
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// `count` clusters, each a uniformly random node subset whose size is drawn
/// uniformly from `size_range`; `c1` and `c2` are drawn from `cost_choices`.
pub fn random_clusters(
    net: &Network,
    count: usize,
    size_range: (usize, usize),
    cost_choices: &[f64],
    seed: u64,
) -> Result<ClusterSet> {
    let n = net.n();
    let (min, max) = size_range;
    if count == 0 || min == 0 || min > max || max > n {
        return Err(Error::InvalidParams(format!(
            "need at least one cluster and 1 <= min <= max <= {n}, got {count} clusters of size {min}..={max}"
        )));
    }
    if cost_choices.is_empty() {
        return Err(Error::InvalidParams("cost_choices is empty".into()));
    }
    let mut rng = rng::stream(seed, Stream::Clusters);
    let mut clusters = Vec::with_capacity(count);
    let mut c1 = Vec::with_capacity(count);
    let mut c2 = Vec::with_capacity(count);
    for _ in 0..count {
        let size = rng.gen_range(min..=max);
        clusters.push(index::sample(&mut rng, n, size).into_vec());
        c1.push(*cost_choices.choose(&mut rng).expect("nonempty"));
        c2.push(*cost_choices.choose(&mut rng).expect("nonempty"));
    }
    ClusterSet::new(clusters, c1, c2)
}
