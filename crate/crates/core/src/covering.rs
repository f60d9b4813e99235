//! Threshold constraints and cluster selection.
//!
//! For a target `x_hat`, node `i` is satisfied by a strategy when
//! `J_i = -gamma_i x_hat_i + (1 - x_hat_i) sum_j lambda_ij x_hat_j <= 0`. If
//! every node is satisfied, the endemic state under that strategy lies
//! componentwise below `x_hat`. The clipped total `J-bar = sum_i max(J_i, 0)`
//! is nonincreasing and supermodular in the selected set, so driving it to
//! zero at minimum modular cost is a submodular cover problem, solved here
//! greedily with an a-posteriori approximation certificate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, SolverOptions, SteadyState};
use crate::error::{Error, Result};
use crate::netgraph::{ClusterSet, Network};
use crate::npi::{selected_nodes, NodeSet, NpiParams, RateMatrix, Strategy};

/// Slack allowed between a certified strategy's endemic state and `x_hat`.
pub const SUFFICIENCY_TOL: f64 = 1e-9;

/// Largest cluster count accepted by [`CoverProblem::brute_force_cover`].
pub const BRUTE_FORCE_MAX_CLUSTERS: usize = 20;

/// Per-node bound on the endemic infection probability, each in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Threshold(Vec<f64>);

impl Threshold {
    pub fn new(x_hat: Vec<f64>) -> Result<Self> {
        if let Some(v) = x_hat.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::InvalidParams(format!(
                "threshold {v} outside (0, 1]"
            )));
        }
        Ok(Self(x_hat))
    }

    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Threshold {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Threshold> for Vec<f64> {
    fn from(t: Threshold) -> Self {
        t.0
    }
}

/// Outcome of [`CoverProblem::check_sufficiency`].
#[derive(Debug, Clone, PartialEq)]
pub enum Sufficiency {
    /// Every `J_i <= 0`; carries the endemic state that confirmed it.
    Certified(SteadyState),
    NotCertified {
        violators: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub cluster: usize,
    /// Decrease of `J-bar` caused by this pick.
    pub drop: f64,
    pub jbar_after: f64,
    pub cost_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyResult {
    #[serde(rename = "selected")]
    pub strategy: Strategy,
    pub trace: Vec<GreedyStep>,
    /// `1 + ln(J-bar(empty) / J-bar(S_hat))` with `S_hat` the selection
    /// before the final pick; 1 when the cover took at most one pick.
    pub bound_ratio: f64,
    /// Set when the certificate degenerated to 1 (zero or one pick).
    pub degenerate_bound: bool,
    pub jbar_initial: f64,
    pub jbar_final: f64,
    pub cost: f64,
}

/// One instance of the covering problem: a network, the intervention
/// parameters, the candidate clusters and the target.
#[derive(Debug, Clone, Copy)]
pub struct CoverProblem<'a> {
    pub net: &'a Network,
    pub params: &'a NpiParams,
    pub clusters: &'a ClusterSet,
    pub x_hat: &'a Threshold,
}

impl<'a> CoverProblem<'a> {
    pub fn new(
        net: &'a Network,
        params: &'a NpiParams,
        clusters: &'a ClusterSet,
        x_hat: &'a Threshold,
    ) -> Result<Self> {
        clusters.check_nodes(net.n())?;
        if x_hat.values().len() != net.n() {
            return Err(Error::InvalidParams(format!(
                "threshold has {} entries for {} nodes",
                x_hat.values().len(),
                net.n()
            )));
        }
        Ok(Self {
            net,
            params,
            clusters,
            x_hat,
        })
    }

    pub fn rates(&self, strategy: &Strategy) -> RateMatrix {
        RateMatrix::for_selection(self.net, self.params, &self.selection(strategy))
    }

    fn selection(&self, strategy: &Strategy) -> NodeSet {
        selected_nodes(self.clusters, strategy, self.net.n())
    }

    fn j_row(&self, selected: &NodeSet, i: usize) -> f64 {
        let x = self.x_hat.values();
        let net = self.net;
        let cols = net.columns();
        let w = net.entry_weights();
        let si = selected.contains(i);
        let pressure: f64 = net
            .row(i)
            .map(|k| {
                let j = cols[k];
                net.beta()[i] * w[k] * self.params.factor(si, selected.contains(j)) * x[j]
            })
            .sum();
        -net.gamma()[i] * x[i] + (1.0 - x[i]) * pressure
    }

    /// `J_i(strategy; x_hat)`.
    pub fn j_i(&self, strategy: &Strategy, i: usize) -> f64 {
        self.j_row(&self.selection(strategy), i)
    }

    pub fn j_values(&self, strategy: &Strategy) -> Vec<f64> {
        let sel = self.selection(strategy);
        (0..self.net.n()).map(|i| self.j_row(&sel, i)).collect()
    }

    fn j_bar_for(&self, selected: &NodeSet) -> f64 {
        (0..self.net.n())
            .map(|i| self.j_row(selected, i).max(0.0))
            .sum()
    }

    /// `J-bar(strategy; x_hat) = sum_i max(J_i, 0)`.
    pub fn j_bar(&self, strategy: &Strategy) -> f64 {
        self.j_bar_for(&self.selection(strategy))
    }

    /// Certifies `strategy` when every `J_i <= 0`, then confirms the
    /// guarantee by solving for the endemic state and comparing it with
    /// `x_hat`. A certified strategy whose endemic state exceeds `x_hat` by
    /// more than [`SUFFICIENCY_TOL`] is reported as
    /// [`Error::SufficiencyViolation`].
    pub fn check_sufficiency(
        &self,
        strategy: &Strategy,
        opts: &SolverOptions,
    ) -> Result<Sufficiency> {
        strategy.check(self.clusters)?;
        let violators: Vec<usize> = self
            .j_values(strategy)
            .iter()
            .enumerate()
            .filter(|(_, &j)| j > 0.0)
            .map(|(i, _)| i)
            .collect();
        if !violators.is_empty() {
            return Ok(Sufficiency::NotCertified { violators });
        }
        let steady = dynamics::endemic_fixed_point(self.net, &self.rates(strategy), opts)?;
        let x_hat = self.x_hat.values();
        if let Some(node) =
            (0..self.net.n()).find(|&i| steady.x_star[i] > x_hat[i] + SUFFICIENCY_TOL)
        {
            return Err(Error::SufficiencyViolation {
                node,
                x_star: steady.x_star[node],
                x_hat: x_hat[node],
            });
        }
        Ok(Sufficiency::Certified(steady))
    }

    fn check_weights(&self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.clusters.len() {
            return Err(Error::InvalidParams(format!(
                "{} cost weights for {} clusters",
                weights.len(),
                self.clusters.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidParams(format!(
                "cluster cost weight {w} must be positive"
            )));
        }
        Ok(())
    }

    fn require_feasible(&self) -> Result<()> {
        let jbar = self.j_bar(&Strategy::all(self.clusters.len()));
        if jbar > 0.0 {
            return Err(Error::Infeasible { jbar });
        }
        Ok(())
    }

    /// Greedy submodular cover under the modular cost `weights[r]`.
    ///
    /// Each round adds the cluster with the largest `J-bar` decrease per
    /// unit cost, breaking ties by the larger absolute decrease and then the
    /// lower index; clusters that would not decrease `J-bar` are never
    /// picked. Stops as soon as `J-bar` reaches zero.
    pub fn greedy_cover(&self, weights: &[f64]) -> Result<GreedyResult> {
        self.check_weights(weights)?;
        self.require_feasible()?;

        let m = self.clusters.len();
        let mut strategy = Strategy::empty();
        let mut selected = NodeSet::empty(self.net.n());
        let jbar_initial = self.j_bar_for(&selected);
        let mut current = jbar_initial;
        let mut cost = 0.0;
        let mut trace: Vec<GreedyStep> = Vec::new();

        while current > 0.0 {
            let candidates: Vec<(usize, f64)> = (0..m)
                .into_par_iter()
                .filter(|&r| !strategy.contains(r))
                .map(|r| {
                    let mut trial = selected.clone();
                    trial.add_cluster(self.clusters.members(r));
                    (r, self.j_bar_for(&trial))
                })
                .collect();

            let mut best: Option<(f64, f64, usize, f64)> = None;
            for (r, after) in candidates {
                let drop = current - after;
                if drop <= 0.0 {
                    continue;
                }
                let ratio = drop / weights[r];
                let better = match best {
                    None => true,
                    Some((br, bd, _, _)) => ratio > br || (ratio == br && drop > bd),
                };
                if better {
                    best = Some((ratio, drop, r, after));
                }
            }
            let Some((_, drop, r, after)) = best else {
                return Err(Error::ZeroGainStall { jbar: current });
            };

            strategy.insert(r);
            selected.add_cluster(self.clusters.members(r));
            cost += weights[r];
            current = after;
            trace.push(GreedyStep {
                cluster: r,
                drop,
                jbar_after: after,
                cost_after: cost,
            });
        }

        let (bound_ratio, degenerate_bound) = if trace.len() >= 2 {
            let jbar_hat = trace[trace.len() - 2].jbar_after;
            (1.0 + (jbar_initial / jbar_hat).ln(), false)
        } else {
            (1.0, true)
        };
        Ok(GreedyResult {
            strategy,
            trace,
            bound_ratio,
            degenerate_bound,
            jbar_initial,
            jbar_final: current,
            cost,
        })
    }

    /// Minimum-cost strategy with `J-bar = 0`, by enumerating all subsets.
    /// Ties prefer fewer clusters, then the lexicographically smallest index list.
    pub fn brute_force_cover(&self, weights: &[f64]) -> Result<Strategy> {
        let m = self.clusters.len();
        if m > BRUTE_FORCE_MAX_CLUSTERS {
            return Err(Error::TooManyClusters {
                count: m,
                max: BRUTE_FORCE_MAX_CLUSTERS,
            });
        }
        self.check_weights(weights)?;
        self.require_feasible()?;

        let mut best: Option<(f64, Strategy)> = None;
        for mask in 0u64..(1u64 << m) {
            let s = Strategy::from_bits(mask);
            let cost = strategy_weight(weights, &s);
            let improves = match &best {
                None => true,
                Some((bc, bs)) => cost < *bc || (cost == *bc && (s.len(), &s) < (bs.len(), bs)),
            };
            if improves && self.j_bar(&s) == 0.0 {
                best = Some((cost, s));
            }
        }
        Ok(best.expect("the full selection is feasible").1)
    }

    /// Degree heuristic: add clusters in decreasing order of the summed
    /// weighted degree of their members (lower index first on ties) until
    /// `J-bar` reaches zero.
    pub fn baseline_degree(&self) -> Result<Strategy> {
        self.require_feasible()?;
        let score = |r: usize| -> f64 {
            self.clusters
                .members(r)
                .iter()
                .map(|&i| self.net.weighted_degree(i))
                .sum()
        };
        let mut order: Vec<(f64, usize)> =
            (0..self.clusters.len()).map(|r| (score(r), r)).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut strategy = Strategy::empty();
        for (_, r) in order {
            if self.j_bar(&strategy) == 0.0 {
                break;
            }
            strategy.insert(r);
        }
        Ok(strategy)
    }
}

/// Sum of `weights[r]` over the strategy, in index order.
pub fn strategy_weight(weights: &[f64], strategy: &Strategy) -> f64 {
    strategy.iter().map(|r| weights[r]).sum()
}
