//! Intervention model: how selecting clusters scales the infection rates on
//! each edge, and what a selection costs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::{ClusterSet, Network};

/// Effectiveness of an intervention on an edge where one endpoint
/// (`theta1`) or both endpoints (`theta2`) comply.
///
/// The default range is `0.5 < theta1 < theta2 < 1`. Setting `relaxed`
/// widens it to `0 < theta1 < theta2 < 1`; the supermodularity of the edge
/// rates in the selected set then holds only while `2 * theta1 >= theta2`
/// (see [`NpiParams::rates_supermodular`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NpiParamsDoc", into = "NpiParamsDoc")]
pub struct NpiParams {
    theta1: f64,
    theta2: f64,
    relaxed: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NpiParamsDoc {
    theta1: f64,
    theta2: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    relaxed: bool,
}

impl TryFrom<NpiParamsDoc> for NpiParams {
    type Error = Error;

    fn try_from(d: NpiParamsDoc) -> Result<Self> {
        if d.relaxed {
            NpiParams::relaxed(d.theta1, d.theta2)
        } else {
            NpiParams::new(d.theta1, d.theta2)
        }
    }
}

impl From<NpiParams> for NpiParamsDoc {
    fn from(p: NpiParams) -> Self {
        NpiParamsDoc {
            theta1: p.theta1,
            theta2: p.theta2,
            relaxed: p.relaxed,
        }
    }
}

impl NpiParams {
    pub fn new(theta1: f64, theta2: f64) -> Result<Self> {
        if !(0.5 < theta1 && theta1 < theta2 && theta2 < 1.0) {
            return Err(Error::InvalidParams(format!(
                "need 0.5 < theta1 < theta2 < 1, got theta1 = {theta1}, theta2 = {theta2}"
            )));
        }
        Ok(Self {
            theta1,
            theta2,
            relaxed: false,
        })
    }

    pub fn relaxed(theta1: f64, theta2: f64) -> Result<Self> {
        if !(0.0 < theta1 && theta1 < theta2 && theta2 < 1.0) {
            return Err(Error::InvalidParams(format!(
                "need 0 < theta1 < theta2 < 1, got theta1 = {theta1}, theta2 = {theta2}"
            )));
        }
        Ok(Self {
            theta1,
            theta2,
            relaxed: true,
        })
    }

    pub fn theta1(&self) -> f64 {
        self.theta1
    }

    pub fn theta2(&self) -> f64 {
        self.theta2
    }

    pub fn is_relaxed(&self) -> bool {
        self.relaxed
    }

    /// Whether the edge rates are supermodular in the selected set.
    pub fn rates_supermodular(&self) -> bool {
        2.0 * self.theta1 >= self.theta2
    }

    /// Multiplier on `a_ij` given which endpoints are selected.
    pub fn factor(&self, i_selected: bool, j_selected: bool) -> f64 {
        match (i_selected, j_selected) {
            (false, false) => 1.0,
            (true, true) => 1.0 - self.theta2,
            _ => 1.0 - self.theta1,
        }
    }
}

/// A set of selected cluster indices. Serializes as a sorted array.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Strategy(BTreeSet<usize>);

impl Strategy {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Every cluster of a set with `count` clusters.
    pub fn all(count: usize) -> Self {
        Self((0..count).collect())
    }

    pub fn contains(&self, r: usize) -> bool {
        self.0.contains(&r)
    }

    pub fn insert(&mut self, r: usize) -> bool {
        self.0.insert(r)
    }

    /// Copy with `r` added.
    pub fn with(&self, r: usize) -> Self {
        let mut s = self.clone();
        s.insert(r);
        s
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn is_subset(&self, other: &Strategy) -> bool {
        self.0.is_subset(&other.0)
    }

    /// Members of `mask`'s set bits, cluster `r` at bit `r`.
    pub fn from_bits(mask: u64) -> Self {
        Self((0..64).filter(|r| mask >> r & 1 == 1).collect())
    }

    pub fn check(&self, clusters: &ClusterSet) -> Result<()> {
        match self.iter().find(|&r| r >= clusters.len()) {
            Some(cluster) => Err(Error::InvalidStrategy {
                cluster,
                count: clusters.len(),
            }),
            None => Ok(()),
        }
    }
}

impl FromIterator<usize> for Strategy {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Membership mask over the nodes of a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSet {
    mask: Vec<bool>,
}

impl NodeSet {
    pub fn empty(n: usize) -> Self {
        Self {
            mask: vec![false; n],
        }
    }

    pub fn from_nodes<I: IntoIterator<Item = usize>>(n: usize, nodes: I) -> Self {
        let mut set = Self::empty(n);
        for v in nodes {
            set.mask[v] = true;
        }
        set
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }

    pub fn as_mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn insert(&mut self, i: usize) {
        self.mask[i] = true;
    }

    pub fn add_cluster(&mut self, members: &[usize]) {
        for &v in members {
            self.mask[v] = true;
        }
    }
}

/// Union of the selected clusters' members, as a mask over `n` nodes.
pub fn selected_nodes(clusters: &ClusterSet, strategy: &Strategy, n: usize) -> NodeSet {
    let mut set = NodeSet::empty(n);
    for r in strategy.iter() {
        set.add_cluster(clusters.members(r));
    }
    set
}

/// `lambda_ij = beta_i * a_ij * factor`, for the selected node set `selected`.
pub fn effective_rate(
    net: &Network,
    params: &NpiParams,
    selected: &NodeSet,
    i: usize,
    j: usize,
) -> Result<f64> {
    let a = net.weight(i, j).ok_or(Error::NotAnEdge { i, j })?;
    Ok(net.beta()[i] * a * params.factor(selected.contains(i), selected.contains(j)))
}

/// Directed infection rates `lambda_ij`, one per adjacency entry of a
/// network (row `i` scaled by `beta_i`, so generally not symmetric).
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    rates: Vec<f64>,
}

impl RateMatrix {
    /// `beta_i * a_ij` on every entry: no intervention.
    pub fn unmodified(net: &Network) -> Self {
        let mut rates = net.entry_weights().to_vec();
        for i in 0..net.n() {
            for k in net.row(i) {
                rates[k] *= net.beta()[i];
            }
        }
        Self { rates }
    }

    pub fn for_selection(net: &Network, params: &NpiParams, selected: &NodeSet) -> Self {
        let cols = net.columns();
        let w = net.entry_weights();
        let mut rates = Vec::with_capacity(net.num_entries());
        for i in 0..net.n() {
            let si = selected.contains(i);
            let b = net.beta()[i];
            for k in net.row(i) {
                rates.push(b * w[k] * params.factor(si, selected.contains(cols[k])));
            }
        }
        Self { rates }
    }

    /// Arbitrary positive rates aligned with `net`'s adjacency entries.
    pub fn from_entries(net: &Network, rates: Vec<f64>) -> Result<Self> {
        if rates.len() != net.num_entries() {
            return Err(Error::InvalidParams(format!(
                "expected {} rate entries, got {}",
                net.num_entries(),
                rates.len()
            )));
        }
        if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::InvalidParams(format!("rate {r} must be positive")));
        }
        Ok(Self { rates })
    }

    pub fn entries(&self) -> &[f64] {
        &self.rates
    }

    pub fn get(&self, net: &Network, i: usize, j: usize) -> Option<f64> {
        net.entry(i, j).map(|k| self.rates[k])
    }

    /// `d_i = sum_j lambda_ij`.
    pub fn row_sum(&self, net: &Network, i: usize) -> f64 {
        self.rates[net.row(i)].iter().sum()
    }

    /// `sum_j lambda_ij * x_j`.
    pub fn row_dot(&self, net: &Network, i: usize, x: &[f64]) -> f64 {
        let cols = net.columns();
        net.row(i).map(|k| self.rates[k] * x[cols[k]]).sum()
    }
}

/// Rates under `strategy`.
pub fn lambda_matrix(
    net: &Network,
    params: &NpiParams,
    clusters: &ClusterSet,
    strategy: &Strategy,
) -> RateMatrix {
    RateMatrix::for_selection(net, params, &selected_nodes(clusters, strategy, net.n()))
}

/// Coefficients of the combined cost `alpha1*C1 + alpha2*C2 + alpha3*C3`,
/// with `c0` the per-node price used by `C3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CostModelDoc", into = "CostModelDoc")]
pub struct CostModel {
    pub alpha: [f64; 3],
    pub c0: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostModelDoc {
    alpha: [f64; 3],
    c0: f64,
}

impl TryFrom<CostModelDoc> for CostModel {
    type Error = Error;

    fn try_from(d: CostModelDoc) -> Result<Self> {
        CostModel::new(d.alpha, d.c0)
    }
}

impl From<CostModel> for CostModelDoc {
    fn from(m: CostModel) -> Self {
        CostModelDoc {
            alpha: m.alpha,
            c0: m.c0,
        }
    }
}

impl CostModel {
    pub fn new(alpha: [f64; 3], c0: f64) -> Result<Self> {
        if alpha
            .iter()
            .chain([&c0])
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidParams(format!(
                "cost coefficients must be nonnegative, got alpha = {alpha:?}, c0 = {c0}"
            )));
        }
        Ok(Self { alpha, c0 })
    }

    /// Pure additive cost, `C = C1`.
    pub fn additive() -> Self {
        Self {
            alpha: [1.0, 0.0, 0.0],
            c0: 0.0,
        }
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self::additive()
    }
}

/// Additive cost: every member of every selected cluster is paid that
/// cluster's `c1`, so a node in two selected clusters is paid twice.
pub fn cost_c1(clusters: &ClusterSet, strategy: &Strategy) -> f64 {
    strategy
        .iter()
        .map(|r| clusters.cost_c1()[r] * clusters.members(r).len() as f64)
        .sum()
}

/// Maximum cost: each selected node costs the largest `c2` among the
/// selected clusters containing it.
pub fn cost_c2(clusters: &ClusterSet, strategy: &Strategy) -> f64 {
    let mut per_node: std::collections::BTreeMap<usize, f64> = Default::default();
    for r in strategy.iter() {
        let c = clusters.cost_c2()[r];
        for &v in clusters.members(r) {
            let e = per_node.entry(v).or_insert(c);
            *e = e.max(c);
        }
    }
    per_node.values().sum()
}

/// Identical cost: `c0` per distinct selected node.
pub fn cost_c3(clusters: &ClusterSet, strategy: &Strategy, c0: f64) -> f64 {
    let nodes: BTreeSet<usize> = strategy
        .iter()
        .flat_map(|r| clusters.members(r).iter().copied())
        .collect();
    c0 * nodes.len() as f64
}

pub fn total_cost(clusters: &ClusterSet, strategy: &Strategy, model: &CostModel) -> f64 {
    let [a1, a2, a3] = model.alpha;
    a1 * cost_c1(clusters, strategy)
        + a2 * cost_c2(clusters, strategy)
        + a3 * cost_c3(clusters, strategy, model.c0)
}

/// Per-cluster weights `c_{r,1} * |V_r|`, the modular cost used by the
/// greedy cover.
pub fn c1_weights(clusters: &ClusterSet) -> Vec<f64> {
    (0..clusters.len())
        .map(|r| clusters.cost_c1()[r] * clusters.members(r).len() as f64)
        .collect()
}
