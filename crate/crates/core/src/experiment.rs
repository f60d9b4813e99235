//! Seeded end-to-end runs: instance generation with feasibility retries,
//! uncontrolled-versus-controlled trajectory comparisons, and threshold
//! sweeps comparing the greedy cover with the degree baseline.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covering::{CoverProblem, GreedyResult, Sufficiency, Threshold};
use crate::dynamics::{self, IntegrateOptions, SolverOptions, SteadyState, Trajectory};
use crate::error::{Error, Result};
use crate::netgraph::{self, ClusterSet, Interval, Network};
use crate::npi::{
    c1_weights, lambda_matrix, selected_nodes, total_cost, CostModel, NpiParams, Strategy,
};
use crate::rng::{self, derive_seed, Stream};

pub const CONFIG_SCHEMA: u32 = 1;

/// Slack on the controlled trajectory's terminal state in [`run_comparison`].
pub const TERMINAL_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub n: usize,
    pub k: usize,
    #[serde(default = "default_rewire")]
    pub p: f64,
    pub gamma_range: Interval,
    pub beta_range: Interval,
    pub weight_range: Interval,
}

fn default_rewire() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub count: usize,
    pub size_range: (usize, usize),
    pub cost_choices: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSpec {
    pub dt: f64,
    pub t_end: f64,
    pub stride: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DynamicsSpec {
    fn default() -> Self {
        let i = IntegrateOptions::default();
        let s = SolverOptions::default();
        Self {
            dt: i.dt,
            t_end: i.t_end,
            stride: i.stride,
            tol: s.tol,
            max_iter: s.max_iter,
        }
    }
}

impl DynamicsSpec {
    pub fn integrate_options(&self) -> IntegrateOptions {
        IntegrateOptions {
            dt: self.dt,
            t_end: self.t_end,
            stride: self.stride,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

/// Full description of a run. Read from JSON with `"schema": 1`; unknown
/// fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub network: NetworkSpec,
    pub clusters: ClusterSpec,
    pub npi: NpiParams,
    #[serde(default)]
    pub cost: CostModel,
    pub thresholds: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub dynamics: DynamicsSpec,
    /// Instances tried per seed before giving up on feasibility.
    pub max_regen: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.schema != CONFIG_SCHEMA {
            return fail(format!(
                "unsupported schema {} (expected {CONFIG_SCHEMA})",
                self.schema
            ));
        }
        if self.thresholds.is_empty() {
            return fail("thresholds is empty".into());
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return fail(format!("threshold {t} outside (0, 1)"));
        }
        if self.seeds.is_empty() {
            return fail("seeds is empty".into());
        }
        if self.max_regen == 0 {
            return fail("max_regen must be at least 1".into());
        }
        let d = &self.dynamics;
        if !(d.dt > 0.0 && d.t_end >= 0.0 && d.stride > 0 && d.tol > 0.0 && d.max_iter > 0) {
            return fail(format!("invalid dynamics settings {d:?}"));
        }
        Ok(())
    }

    /// Smallest configured threshold; feasibility there implies feasibility
    /// for every larger uniform threshold.
    pub fn min_threshold(&self) -> f64 {
        self.thresholds
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// A generated network and cluster set.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub network: Network,
    pub clusters: ClusterSet,
    /// Seed the accepted instance was generated from.
    pub seed: u64,
    /// Number of rejected draws before this one.
    pub regen: usize,
}

impl Instance {
    pub fn problem<'a>(
        &'a self,
        params: &'a NpiParams,
        x_hat: &'a Threshold,
    ) -> Result<CoverProblem<'a>> {
        CoverProblem::new(&self.network, params, &self.clusters, x_hat)
    }
}

/// Draws one instance from `seed` without any feasibility check.
pub fn generate_instance(config: &ExperimentConfig, seed: u64) -> Result<(Network, ClusterSet)> {
    let ns = &config.network;
    let topo = netgraph::watts_strogatz(ns.n, ns.k, ns.p, seed)?;
    let net =
        netgraph::random_parameters(&topo, ns.gamma_range, ns.beta_range, ns.weight_range, seed)?;
    let cs = &config.clusters;
    let clusters =
        netgraph::random_clusters(&net, cs.count, cs.size_range, &cs.cost_choices, seed)?;
    Ok((net, clusters))
}

/// Generates an instance for `seed`, redrawing under derived sub-seeds
/// until selecting every cluster satisfies the smallest configured
/// threshold, for at most `max_regen` draws.
pub fn build_instance(config: &ExperimentConfig, seed: u64) -> Result<Instance> {
    let t_min = config.min_threshold();
    for attempt in 0..config.max_regen {
        let sub = if attempt == 0 {
            seed
        } else {
            derive_seed(seed, attempt as u64)
        };
        let (network, clusters) = generate_instance(config, sub)?;
        let x_hat = Threshold::uniform(network.n(), t_min)?;
        let prob = CoverProblem::new(&network, &config.npi, &clusters, &x_hat)?;
        if prob.j_bar(&Strategy::all(clusters.len())) == 0.0 {
            return Ok(Instance {
                network,
                clusters,
                seed: sub,
                regen: attempt,
            });
        }
    }
    Err(Error::InfeasibleAfterRetries {
        attempts: config.max_regen,
    })
}

/// Uniform point of `[0, 1]^n`, redrawn in the (measure-zero) all-zero case.
pub fn random_initial_state(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, Stream::InitialState);
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        if x.iter().any(|&v| v > 0.0) {
            return x;
        }
    }
}

/// Uncontrolled and greedy-controlled runs from a common initial state.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub threshold: f64,
    pub x0: Vec<f64>,
    pub strategy: Strategy,
    /// Present when the strategy came from the greedy cover.
    pub greedy: Option<GreedyResult>,
    pub selected_nodes: usize,
    pub free: Trajectory,
    pub controlled: Trajectory,
    pub steady_free: SteadyState,
    pub steady_controlled: SteadyState,
    /// `x0 = 0`: both runs stay at zero and the terminal check says nothing.
    pub degenerate: bool,
}

#[derive(Serialize)]
struct SteadyDoc<'a> {
    threshold: f64,
    selected: &'a Strategy,
    selected_nodes: usize,
    bound_ratio: Option<f64>,
    terminal_free: [f64; 2],
    terminal_controlled: [f64; 2],
    degenerate: bool,
    free: &'a SteadyState,
    controlled: &'a SteadyState,
}

fn range(x: &[f64]) -> [f64; 2] {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [lo, hi]
}

impl Comparison {
    /// `[min, max]` of the uncontrolled terminal state.
    pub fn terminal_free_range(&self) -> [f64; 2] {
        range(self.free.terminal())
    }

    pub fn terminal_controlled_range(&self) -> [f64; 2] {
        range(self.controlled.terminal())
    }

    /// Writes `traj_free.csv`, `traj_npi.csv` and `steady.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.free
            .write_csv(BufWriter::new(fs::File::create(dir.join("traj_free.csv"))?))?;
        self.controlled
            .write_csv(BufWriter::new(fs::File::create(dir.join("traj_npi.csv"))?))?;
        let doc = SteadyDoc {
            threshold: self.threshold,
            selected: &self.strategy,
            selected_nodes: self.selected_nodes,
            bound_ratio: self.greedy.as_ref().map(|g| g.bound_ratio),
            terminal_free: self.terminal_free_range(),
            terminal_controlled: self.terminal_controlled_range(),
            degenerate: self.degenerate,
            free: &self.steady_free,
            controlled: &self.steady_controlled,
        };
        fs::write(
            dir.join("steady.json"),
            serde_json::to_string_pretty(&doc)? + "\n",
        )?;
        Ok(())
    }
}

/// Builds the instance for `seed`, draws a random initial state and runs
/// [`compare_from`].
pub fn run_comparison(config: &ExperimentConfig, seed: u64, threshold: f64) -> Result<Comparison> {
    let inst = build_instance(config, seed)?;
    let x0 = random_initial_state(inst.network.n(), inst.seed);
    compare_from(config, &inst, threshold, x0, None)
}

/// Integrates the uncontrolled system and the controlled system from the
/// same `x0`. The control is `strategy`, or the greedy cover for
/// `threshold` when none is given. When the control satisfies every
/// threshold constraint, the controlled run must end within
/// [`TERMINAL_SLACK`] of the threshold.
pub fn compare_from(
    config: &ExperimentConfig,
    inst: &Instance,
    threshold: f64,
    x0: Vec<f64>,
    strategy: Option<Strategy>,
) -> Result<Comparison> {
    let net = &inst.network;
    let x_hat = Threshold::uniform(net.n(), threshold)?;
    let prob = inst.problem(&config.npi, &x_hat)?;
    let (strategy, greedy) = match strategy {
        Some(s) => {
            s.check(&inst.clusters)?;
            (s, None)
        }
        None => {
            let g = prob.greedy_cover(&c1_weights(&inst.clusters))?;
            (g.strategy.clone(), Some(g))
        }
    };
    let certified = prob.j_bar(&strategy) == 0.0;

    let iopts = config.dynamics.integrate_options();
    let sopts = config.dynamics.solver_options();
    let free_rates = lambda_matrix(net, &config.npi, &inst.clusters, &Strategy::empty());
    let npi_rates = lambda_matrix(net, &config.npi, &inst.clusters, &strategy);
    let free = dynamics::integrate(net, &free_rates, &x0, &iopts)?;
    let controlled = dynamics::integrate(net, &npi_rates, &x0, &iopts)?;
    let steady_free = dynamics::endemic_fixed_point(net, &free_rates, &sopts)?;
    let steady_controlled = dynamics::endemic_fixed_point(net, &npi_rates, &sopts)?;

    let degenerate = x0.iter().all(|&v| v == 0.0);
    let max_terminal = range(controlled.terminal())[1];
    if certified && !degenerate && max_terminal > threshold + TERMINAL_SLACK {
        return Err(Error::ComparisonViolation {
            max_terminal,
            threshold,
        });
    }
    Ok(Comparison {
        threshold,
        selected_nodes: selected_nodes(&inst.clusters, &strategy, net.n()).count(),
        x0,
        strategy,
        greedy,
        free,
        controlled,
        steady_free,
        steady_controlled,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Greedy,
    Baseline,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Greedy => "greedy",
            Method::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub seed: u64,
    pub method: Method,
    pub clusters: usize,
    pub nodes: usize,
    pub cost: f64,
    /// Greedy approximation certificate; absent for the baseline.
    pub bound_ratio: Option<f64>,
    pub regen: usize,
    /// Largest endemic infection probability under the strategy.
    pub max_x_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub threshold: f64,
    pub runs: usize,
    pub mean_greedy_cost: f64,
    pub mean_baseline_cost: f64,
    pub mean_cost_ratio: f64,
    pub min_cost_ratio: f64,
    pub max_cost_ratio: f64,
    pub mean_greedy_clusters: f64,
    pub mean_baseline_clusters: f64,
    pub mean_greedy_nodes: f64,
    pub mean_baseline_nodes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub per_threshold: Vec<ThresholdSummary>,
    /// Mean over all `(threshold, seed)` cells of greedy cost / baseline cost.
    pub mean_cost_ratio: f64,
    pub greedy_never_worse: bool,
}

pub const SWEEP_CSV_HEADER: &str = "threshold,seed,method,clusters,nodes,cost,bound_ratio,regen";

impl SweepReport {
    /// Ratio greedy / baseline for one cell; `1` when both cost nothing.
    pub fn cost_ratio(greedy: f64, baseline: f64) -> f64 {
        if baseline == 0.0 {
            if greedy == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            greedy / baseline
        }
    }

    /// `(greedy, baseline)` row pairs, in row order.
    pub fn pairs(&self) -> impl Iterator<Item = (&SweepRow, &SweepRow)> {
        self.rows.chunks(2).map(|c| (&c[0], &c[1]))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SWEEP_CSV_HEADER}")?;
        for r in &self.rows {
            let bound = r.bound_ratio.map(|b| b.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.threshold,
                r.seed,
                r.method.as_str(),
                r.clusters,
                r.nodes,
                r.cost,
                bound,
                r.regen
            )?;
        }
        Ok(())
    }

    /// Writes `sweep.csv` and `sweep.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut csv = BufWriter::new(fs::File::create(dir.join("sweep.csv"))?);
        self.write_csv(&mut csv)?;
        csv.flush()?;
        fs::write(
            dir.join("sweep.json"),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }
}

fn evaluate(
    config: &ExperimentConfig,
    inst: &Instance,
    prob: &CoverProblem,
    seed: u64,
    method: Method,
    strategy: &Strategy,
    bound_ratio: Option<f64>,
) -> Result<SweepRow> {
    let sopts = config.dynamics.solver_options();
    let max_x_star = match prob.check_sufficiency(strategy, &sopts)? {
        Sufficiency::Certified(st) => st.x_star.iter().copied().fold(0.0, f64::max),
        Sufficiency::NotCertified { .. } => {
            return Err(Error::Infeasible {
                jbar: prob.j_bar(strategy),
            })
        }
    };
    Ok(SweepRow {
        threshold: prob.x_hat.values()[0],
        seed,
        method,
        clusters: strategy.len(),
        nodes: selected_nodes(&inst.clusters, strategy, inst.network.n()).count(),
        cost: total_cost(&inst.clusters, strategy, &config.cost),
        bound_ratio,
        regen: inst.regen,
        max_x_star,
    })
}

fn sweep_seed(config: &ExperimentConfig, seed: u64) -> Result<Vec<SweepRow>> {
    let inst = build_instance(config, seed)?;
    let weights = c1_weights(&inst.clusters);
    let mut rows = Vec::with_capacity(2 * config.thresholds.len());
    for &t in &config.thresholds {
        let x_hat = Threshold::uniform(inst.network.n(), t)?;
        let prob = inst.problem(&config.npi, &x_hat)?;
        let greedy = prob.greedy_cover(&weights)?;
        let baseline = prob.baseline_degree()?;
        rows.push(evaluate(
            config,
            &inst,
            &prob,
            seed,
            Method::Greedy,
            &greedy.strategy,
            Some(greedy.bound_ratio),
        )?);
        rows.push(evaluate(
            config,
            &inst,
            &prob,
            seed,
            Method::Baseline,
            &baseline,
            None,
        )?);
    }
    Ok(rows)
}

/// Greedy cover and degree baseline for every configured threshold and
/// seed, on at most `jobs` worker threads. Rows are ordered by threshold,
/// then seed, then method, independently of `jobs`.
pub fn sweep(config: &ExperimentConfig, jobs: usize) -> Result<SweepReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let per_seed: Vec<Result<Vec<SweepRow>>> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&s| sweep_seed(config, s))
            .collect()
    });
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| {
        a.threshold
            .total_cmp(&b.threshold)
            .then(a.seed.cmp(&b.seed))
            .then(a.method.cmp(&b.method))
    });
    Ok(summarize(rows))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

fn summarize(rows: Vec<SweepRow>) -> SweepReport {
    let mut thresholds: Vec<f64> = rows.iter().map(|r| r.threshold).collect();
    thresholds.dedup();
    let report = SweepReport {
        rows,
        per_threshold: Vec::new(),
        mean_cost_ratio: 0.0,
        greedy_never_worse: true,
    };
    let per_threshold = thresholds
        .iter()
        .map(|&t| {
            let pairs: Vec<_> = report.pairs().filter(|(g, _)| g.threshold == t).collect();
            let ratios: Vec<f64> = pairs
                .iter()
                .map(|(g, b)| SweepReport::cost_ratio(g.cost, b.cost))
                .collect();
            ThresholdSummary {
                threshold: t,
                runs: pairs.len(),
                mean_greedy_cost: mean(pairs.iter().map(|(g, _)| g.cost)),
                mean_baseline_cost: mean(pairs.iter().map(|(_, b)| b.cost)),
                mean_cost_ratio: mean(ratios.iter().copied()),
                min_cost_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
                max_cost_ratio: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean_greedy_clusters: mean(pairs.iter().map(|(g, _)| g.clusters as f64)),
                mean_baseline_clusters: mean(pairs.iter().map(|(_, b)| b.clusters as f64)),
                mean_greedy_nodes: mean(pairs.iter().map(|(g, _)| g.nodes as f64)),
                mean_baseline_nodes: mean(pairs.iter().map(|(_, b)| b.nodes as f64)),
            }
        })
        .collect();
    let mean_cost_ratio = mean(
        report
            .pairs()
            .map(|(g, b)| SweepReport::cost_ratio(g.cost, b.cost)),
    );
    let greedy_never_worse = report.pairs().all(|(g, b)| g.cost <= b.cost);
    SweepReport {
        per_threshold,
        mean_cost_ratio,
        greedy_never_worse,
        ..report
    }
}
