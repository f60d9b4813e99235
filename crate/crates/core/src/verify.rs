//! Randomized and exhaustive checks of the structural facts the optimizer
//! depends on: monotonicity and supermodularity of the rates and of the
//! threshold constraints, the shape of the cost metrics, monotone
//! comparison of endemic states, solver agreement, and the greedy
//! certificate against exhaustive search.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::covering::{CoverProblem, Threshold};
use crate::dynamics::{self, IntegrateOptions, SolverOptions, SteadyKind};
use crate::error::Result;
use crate::experiment::{self, ExperimentConfig};
use crate::netgraph::{self, ClusterSet, Interval, Network};
use crate::npi::{self, c1_weights, CostModel, NpiParams, RateMatrix, Strategy};
use crate::rng::{self, derive_seed, Stream};

/// Slack for set-function inequalities evaluated in floating point.
pub const SET_TOL: f64 = 1e-12;
/// Slack for componentwise comparisons of endemic states.
pub const STATE_TOL: f64 = 1e-9;
/// Largest tolerated max-norm gap between the endemic solvers.
pub const AGREEMENT_TOL: f64 = 1e-4;

const TIGHT: SolverOptions = SolverOptions {
    tol: 1e-13,
    max_iter: 5_000_000,
};

/// Outcome of one property suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub name: String,
    pub checks: usize,
    pub violations: usize,
    /// Largest amount by which an inequality failed, or 0.
    pub max_violation: f64,
}

impl PropertyReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            checks: 0,
            violations: 0,
            max_violation: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.checks > 0
    }

    /// Counts one check that fails when `excess > tol`.
    fn record(&mut self, excess: f64, tol: f64) {
        self.checks += 1;
        if excess.is_nan() || excess > tol {
            self.violations += 1;
            self.max_violation = if excess.is_nan() {
                f64::INFINITY
            } else {
                self.max_violation.max(excess)
            };
        }
    }

    fn record_all(&mut self, excess: impl IntoIterator<Item = f64>, tol: f64) {
        for e in excess {
            self.record(e, tol);
        }
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<34} {:>4} {:>9} checks {:>6} violations  max {:.3e}",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.checks,
            self.violations,
            self.max_violation
        )
    }
}

/// Sizes of the individual suites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Instances with at most five clusters, checked over every subset pair.
    pub exhaustive_instances: usize,
    /// Random `(S1 ⊆ S2, w)` triples on 25-cluster instances.
    pub random_triples: usize,
    pub monotonicity_pairs: usize,
    pub agreement_graphs: usize,
    pub agreement_t_end: f64,
    pub dichotomy_instances: usize,
    pub bound_instances: usize,
    pub sufficiency_instances: usize,
}

impl VerifyOptions {
    pub fn full(seed: u64) -> Self {
        Self {
            seed,
            exhaustive_instances: 20,
            random_triples: 1000,
            monotonicity_pairs: 100,
            agreement_graphs: 50,
            agreement_t_end: 500.0,
            dichotomy_instances: 50,
            bound_instances: 30,
            sufficiency_instances: 20,
        }
    }

    pub fn quick(seed: u64) -> Self {
        Self {
            seed,
            exhaustive_instances: 6,
            random_triples: 200,
            monotonicity_pairs: 30,
            agreement_graphs: 10,
            agreement_t_end: 500.0,
            dichotomy_instances: 20,
            bound_instances: 10,
            sufficiency_instances: 3,
        }
    }
}

/// Parameters of the 100-node, 25-cluster benchmark instances.
pub fn benchmark_config(seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        schema: experiment::CONFIG_SCHEMA,
        network: experiment::NetworkSpec {
            n: 100,
            k: 4,
            p: 0.2,
            gamma_range: Interval::new(0.4, 0.5),
            beta_range: Interval::new(0.4, 0.6),
            weight_range: Interval::new(0.4, 0.5),
        },
        clusters: experiment::ClusterSpec {
            count: 25,
            size_range: (10, 15),
            cost_choices: vec![1.0, 2.0, 3.0, 4.0],
        },
        npi: NpiParams::new(0.7, 0.9).expect("valid benchmark parameters"),
        cost: CostModel::additive(),
        thresholds: vec![0.05, 0.2, 0.3, 0.4],
        seeds,
        dynamics: experiment::DynamicsSpec::default(),
        max_regen: 1000,
    }
}

/// A random small-world instance with random parameters, clusters, NPI
/// strengths and per-node thresholds.
pub struct RandomInstance {
    pub net: Network,
    pub clusters: ClusterSet,
    pub params: NpiParams,
    pub x_hat: Threshold,
    pub c0: f64,
}

impl RandomInstance {
    pub fn problem(&self) -> CoverProblem<'_> {
        CoverProblem::new(&self.net, &self.params, &self.clusters, &self.x_hat)
            .expect("consistent instance")
    }
}

fn random_network(rng: &mut ChaCha8Rng, n_range: (usize, usize)) -> Result<Network> {
    let n = rng.gen_range(n_range.0..=n_range.1);
    let k = if n > 6 { 4 } else { 2 };
    let topo = netgraph::watts_strogatz(n, k, rng.gen_range(0.0..0.5), rng.gen())?;
    netgraph::random_parameters(
        &topo,
        Interval::new(0.2, 0.5),
        Interval::new(0.3, 0.8),
        Interval::new(0.3, 1.0),
        rng.gen(),
    )
}

fn random_params(rng: &mut ChaCha8Rng) -> NpiParams {
    let theta1 = rng.gen_range(0.51..0.85);
    let theta2 = rng.gen_range(theta1 + 0.01..0.99);
    NpiParams::new(theta1, theta2).expect("sampled inside the admissible region")
}

/// Draws a [`RandomInstance`] with `clusters` clusters on `n_range` nodes.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    n_range: (usize, usize),
    clusters: usize,
) -> Result<RandomInstance> {
    let net = random_network(rng, n_range)?;
    let n = net.n();
    let max_size = (n / 2).max(1);
    let clusters = netgraph::random_clusters(
        &net,
        clusters,
        (1, max_size),
        &[1.0, 2.0, 3.0, 4.0],
        rng.gen(),
    )?;
    let x_hat = Threshold::new((0..n).map(|_| rng.gen_range(0.01..1.0)).collect())?;
    Ok(RandomInstance {
        net,
        clusters,
        params: random_params(rng),
        x_hat,
        c0: rng.gen_range(0.0..3.0),
    })
}

/// Set functions checked by the structural suites, each vector valued.
#[derive(Clone, Copy, PartialEq, Eq)]
enum SetFn {
    Rates,
    J,
    JBar,
    C1,
    C2,
    C3,
}

fn eval(inst: &RandomInstance, f: SetFn, s: &Strategy) -> Vec<f64> {
    let prob = inst.problem();
    match f {
        SetFn::Rates => prob.rates(s).entries().to_vec(),
        SetFn::J => prob.j_values(s),
        SetFn::JBar => vec![prob.j_bar(s)],
        SetFn::C1 => vec![npi::cost_c1(&inst.clusters, s)],
        SetFn::C2 => vec![npi::cost_c2(&inst.clusters, s)],
        SetFn::C3 => vec![npi::cost_c3(&inst.clusters, s, inst.c0)],
    }
}

/// Which inequality a suite checks on a triple `(S1 ⊆ S2, w ∉ S2)`.
#[derive(Clone, Copy)]
enum Shape {
    /// `f(S1 + w) <= f(S1)`.
    Nonincreasing,
    /// `f(S1 + w) >= f(S1)`.
    Nondecreasing,
    /// Marginal at `S1` at most the marginal at `S2`.
    Supermodular,
    /// Marginal at `S1` at least the marginal at `S2`.
    Submodular,
    /// Equal marginals.
    Modular,
}

const STRUCTURAL: [(&str, SetFn, Shape, f64); 11] = [
    (
        "rates nonincreasing",
        SetFn::Rates,
        Shape::Nonincreasing,
        SET_TOL,
    ),
    (
        "rates supermodular",
        SetFn::Rates,
        Shape::Supermodular,
        SET_TOL,
    ),
    ("J_i nonincreasing", SetFn::J, Shape::Nonincreasing, SET_TOL),
    ("J_i supermodular", SetFn::J, Shape::Supermodular, SET_TOL),
    (
        "J-bar nonincreasing",
        SetFn::JBar,
        Shape::Nonincreasing,
        SET_TOL,
    ),
    (
        "J-bar supermodular",
        SetFn::JBar,
        Shape::Supermodular,
        SET_TOL,
    ),
    ("C1 modular", SetFn::C1, Shape::Modular, 0.0),
    ("C2 nondecreasing", SetFn::C2, Shape::Nondecreasing, SET_TOL),
    ("C2 submodular", SetFn::C2, Shape::Submodular, SET_TOL),
    ("C3 nondecreasing", SetFn::C3, Shape::Nondecreasing, SET_TOL),
    ("C3 submodular", SetFn::C3, Shape::Submodular, SET_TOL),
];

struct Triple<'a> {
    s1: &'a [f64],
    s1w: &'a [f64],
    s2: &'a [f64],
    s2w: &'a [f64],
}

fn check_triple(report: &mut PropertyReport, shape: Shape, tol: f64, t: Triple) {
    for i in 0..t.s1.len() {
        let m1 = t.s1w[i] - t.s1[i];
        let m2 = t.s2w[i] - t.s2[i];
        let excess = match shape {
            Shape::Nonincreasing => m1,
            Shape::Nondecreasing => -m1,
            Shape::Supermodular => m1 - m2,
            Shape::Submodular => m2 - m1,
            Shape::Modular => (m1 - m2).abs(),
        };
        report.record(excess, tol);
    }
}

fn structural_reports(prefix: &str) -> Vec<PropertyReport> {
    STRUCTURAL
        .iter()
        .map(|(name, ..)| PropertyReport::new(&format!("{prefix}{name}")))
        .collect()
}

/// Every structural inequality over every `(S1 ⊆ S2, w ∉ S2)` on random
/// instances with three to five clusters.
pub fn exhaustive_structure(opts: &VerifyOptions) -> Result<Vec<PropertyReport>> {
    let mut rng = rng::stream(derive_seed(opts.seed, 1), Stream::Verify);
    let mut reports = structural_reports("exhaustive ");
    for _ in 0..opts.exhaustive_instances {
        let m = rng.gen_range(3..=5);
        let inst = random_instance(&mut rng, (8, 24), m)?;
        let full = 1u64 << m;
        for (report, &(_, f, shape, tol)) in reports.iter_mut().zip(STRUCTURAL.iter()) {
            let table: Vec<Vec<f64>> = (0..full)
                .map(|mask| eval(&inst, f, &Strategy::from_bits(mask)))
                .collect();
            for s2 in 0..full {
                let mut s1 = s2;
                loop {
                    for w in (0..m).filter(|w| s2 & (1 << w) == 0) {
                        let bit = 1u64 << w;
                        check_triple(
                            report,
                            shape,
                            tol,
                            Triple {
                                s1: &table[s1 as usize],
                                s1w: &table[(s1 | bit) as usize],
                                s2: &table[s2 as usize],
                                s2w: &table[(s2 | bit) as usize],
                            },
                        );
                    }
                    if s1 == 0 {
                        break;
                    }
                    s1 = (s1 - 1) & s2;
                }
            }
        }
    }
    Ok(reports)
}

fn random_triple(rng: &mut ChaCha8Rng, m: usize) -> (Strategy, Strategy, usize) {
    loop {
        let s2: Strategy = (0..m).filter(|_| rng.gen_bool(0.5)).collect();
        if s2.len() == m {
            continue;
        }
        let s1: Strategy = s2.iter().filter(|_| rng.gen_bool(0.5)).collect();
        let outside: Vec<usize> = (0..m).filter(|r| !s2.contains(*r)).collect();
        let w = outside[rng.gen_range(0..outside.len())];
        return (s1, s2, w);
    }
}

/// The structural inequalities on random triples drawn on 25-cluster
/// instances of benchmark size.
pub fn sampled_structure(opts: &VerifyOptions) -> Result<Vec<PropertyReport>> {
    let mut rng = rng::stream(derive_seed(opts.seed, 2), Stream::Verify);
    let mut reports = structural_reports("sampled ");
    let per_instance = 100;
    let mut remaining = opts.random_triples;
    while remaining > 0 {
        let inst = random_instance(&mut rng, (60, 100), 25)?;
        for _ in 0..per_instance.min(remaining) {
            let (s1, s2, w) = random_triple(&mut rng, 25);
            for (report, &(_, f, shape, tol)) in reports.iter_mut().zip(STRUCTURAL.iter()) {
                check_triple(
                    report,
                    shape,
                    tol,
                    Triple {
                        s1: &eval(&inst, f, &s1),
                        s1w: &eval(&inst, f, &s1.with(w)),
                        s2: &eval(&inst, f, &s2),
                        s2w: &eval(&inst, f, &s2.with(w)),
                    },
                );
            }
        }
        remaining = remaining.saturating_sub(per_instance);
    }
    Ok(reports)
}

/// Componentwise larger rates give a componentwise larger endemic state,
/// and the continued-fraction iterates decrease monotonically.
pub fn monotone_comparison(opts: &VerifyOptions) -> Result<Vec<PropertyReport>> {
    let mut rng = rng::stream(derive_seed(opts.seed, 3), Stream::Verify);
    let mut states = PropertyReport::new("endemic state monotone in rates");
    let mut phi = PropertyReport::new("phi iterates nonincreasing");
    for _ in 0..opts.monotonicity_pairs {
        let net = random_network(&mut rng, (5, 50))?;
        let upper = RateMatrix::unmodified(&net);
        let lower = RateMatrix::from_entries(
            &net,
            upper
                .entries()
                .iter()
                .map(|v| v * rng.gen_range(0.3..=1.0))
                .collect(),
        )?;
        let hi = dynamics::endemic_fixed_point(&net, &upper, &TIGHT)?;
        let lo = dynamics::endemic_fixed_point(&net, &lower, &TIGHT)?;
        states.record_all(
            lo.x_star.iter().zip(&hi.x_star).map(|(l, h)| l - h),
            STATE_TOL,
        );

        let seq = dynamics::phi_sequence(&net, &lower, 40);
        for w in seq.windows(2) {
            phi.record_all(
                w[1].iter().zip(&w[0]).map(|(next, prev)| next - prev),
                SET_TOL,
            );
        }
    }
    Ok(vec![states, phi])
}

/// Draws a random network whose reproduction number exceeds `min_r0`.
fn supercritical_network(rng: &mut ChaCha8Rng, min_r0: f64) -> Result<Network> {
    loop {
        let net = random_network(rng, (5, 50))?;
        if dynamics::r0(&net, &RateMatrix::unmodified(&net))? > min_r0 {
            return Ok(net);
        }
    }
}

/// Largest pairwise max-norm gap between the fixed-point solver, the
/// continued-fraction solver and the terminal state of an RK4 run.
pub fn solver_gap(net: &Network, rates: &RateMatrix, x0: &[f64], t_end: f64) -> Result<f64> {
    let fp = dynamics::endemic_fixed_point(net, rates, &TIGHT)?;
    let phi = dynamics::endemic_phi_iteration(net, rates, TIGHT.max_iter, TIGHT.tol)?;
    let traj = dynamics::integrate(
        net,
        rates,
        x0,
        &IntegrateOptions {
            t_end,
            stride: usize::MAX,
            ..IntegrateOptions::default()
        },
    )?;
    let gap = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    Ok(gap(&fp.x_star, &phi.x_star)
        .max(gap(&fp.x_star, traj.terminal()))
        .max(gap(&phi.x_star, traj.terminal())))
}

/// The two endemic solvers and long-run integration agree on random
/// supercritical networks.
pub fn solver_agreement(opts: &VerifyOptions) -> Result<Vec<PropertyReport>> {
    let mut rng = rng::stream(derive_seed(opts.seed, 4), Stream::Verify);
    let mut report = PropertyReport::new("endemic solvers agree");
    for _ in 0..opts.agreement_graphs {
        let net = supercritical_network(&mut rng, dynamics::NEAR_CRITICAL_R0)?;
        let x0: Vec<f64> = (0..net.n()).map(|_| rng.gen_range(0.01..1.0)).collect();
        let gap = solver_gap(
            &net,
            &RateMatrix::unmodified(&net),
            &x0,
            opts.agreement_t_end,
        )?;
        report.record(gap, AGREEMENT_TOL);
    }
    Ok(vec![report])
}

/// Rates rescaled to a chosen reproduction number land on the predicted
/// side of the disease-free / endemic dichotomy.
pub fn dichotomy(opts: &VerifyOptions) -> Result<Vec<PropertyReport>> {
    let mut rng = rng::stream(derive_seed(opts.seed, 5), Stream::Verify);
    let mut report = PropertyReport::new("threshold dichotomy");
    for _ in 0..opts.dichotomy_instances {
        let net = random_network(&mut rng, (5, 50))?;
        let base = RateMatrix::unmodified(&net);
        let target = if rng.gen_bool(0.5) {
            rng.gen_range(0.3..0.98)
        } else {
            rng.gen_range(1.1..3.0)
        };
        let scale = target / dynamics::r0(&net, &base)?;
        let rates =
            RateMatrix::from_entries(&net, base.entries().iter().map(|v| v * scale).collect())?;
        let st = dynamics::endemic_fixed_point(&net, &rates, &TIGHT)?;
        let excess = match (target < 1.0, st.kind) {
            (true, SteadyKind::DiseaseFree) => 0.0,
            (false, SteadyKind::Endemic) => {
                let smallest = st.x_star.iter().copied().fold(f64::INFINITY, f64::min);
                if smallest > 0.0 {
                    st.residual
                } else {
                    f64::INFINITY
                }
            }
            _ => f64::INFINITY,
        };
        report.record(excess, STATE_TOL);
    }
    Ok(vec![report])
}

/// Draws a feasible, nontrivial instance with at most ten clusters.
pub fn bound_instance(rng: &mut ChaCha8Rng) -> Result<RandomInstance> {
    loop {
        let m = rng.gen_range(4..=10);
        let mut inst = random_instance(rng, (10, 40), m)?;
        inst.params = NpiParams::new(0.7, 0.9)?;
        inst.x_hat = Threshold::uniform(inst.net.n(), rng.gen_range(0.05..0.5))?;
        let prob = inst.problem();
        if prob.j_bar(&Strategy::all(m)) == 0.0 && prob.j_bar(&Strategy::empty()) > 0.0 {
            return Ok(inst);
        }
    }
}

/// Greedy cost over the exhaustive optimum stays within the greedy
/// certificate, and the greedy trace decreases strictly.
pub fn greedy_bound(opts: &VerifyOptions) -> Result<Vec<PropertyReport>> {
    let mut rng = rng::stream(derive_seed(opts.seed, 6), Stream::Verify);
    let mut bound = PropertyReport::new("greedy within certificate");
    let mut trace = PropertyReport::new("greedy trace decreasing");
    for _ in 0..opts.bound_instances {
        let inst = bound_instance(&mut rng)?;
        let prob = inst.problem();
        let weights = c1_weights(&inst.clusters);
        let greedy = prob.greedy_cover(&weights)?;
        let optimum = prob.brute_force_cover(&weights)?;
        let opt_cost = crate::covering::strategy_weight(&weights, &optimum);
        bound.record(greedy.cost / opt_cost - greedy.bound_ratio, SET_TOL);
        let mut prev = greedy.jbar_initial;
        for step in &greedy.trace {
            trace.record(
                if step.jbar_after < prev {
                    0.0
                } else {
                    f64::INFINITY
                },
                0.0,
            );
            prev = step.jbar_after;
        }
    }
    Ok(vec![bound, trace])
}

/// Every greedy strategy on benchmark instances has an endemic state under
/// its threshold.
pub fn sufficiency(opts: &VerifyOptions) -> Result<Vec<PropertyReport>> {
    let mut report = PropertyReport::new("greedy cover keeps x* under target");
    let seeds = (0..opts.sufficiency_instances as u64)
        .map(|i| derive_seed(opts.seed, 100 + i))
        .collect();
    let cfg = benchmark_config(seeds);
    for &seed in &cfg.seeds {
        let inst = experiment::build_instance(&cfg, seed)?;
        for &t in &cfg.thresholds {
            let x_hat = Threshold::uniform(inst.network.n(), t)?;
            let prob = inst.problem(&cfg.npi, &x_hat)?;
            let greedy = prob.greedy_cover(&c1_weights(&inst.clusters))?;
            if prob.j_bar(&greedy.strategy) > 0.0 {
                report.record(f64::INFINITY, 0.0);
                continue;
            }
            let st = dynamics::endemic_fixed_point(
                &inst.network,
                &prob.rates(&greedy.strategy),
                &TIGHT,
            )?;
            report.record_all(st.x_star.iter().map(|x| x - t), STATE_TOL);
        }
    }
    Ok(vec![report])
}

type Suite = fn(&VerifyOptions) -> Result<Vec<PropertyReport>>;

/// Runs every suite in order.
pub fn run_all(opts: &VerifyOptions) -> Result<Vec<PropertyReport>> {
    let suites: [Suite; 7] = [
        exhaustive_structure,
        sampled_structure,
        monotone_comparison,
        solver_agreement,
        dichotomy,
        greedy_bound,
        sufficiency,
    ];
    let mut out = Vec::new();
    for suite in suites {
        out.extend(suite(opts)?);
    }
    Ok(out)
}
