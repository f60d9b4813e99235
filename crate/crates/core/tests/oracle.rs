use nalgebra::{DMatrix, DVector, SymmetricEigen};
use npi_core::covering::{strategy_weight, CoverProblem, Threshold};
use npi_core::dynamics::{self, IntegrateOptions, SolverOptions};
use npi_core::experiment::{self, ExperimentConfig, Method};
use npi_core::netgraph::{self, Interval, Network};
use npi_core::npi::{c1_weights, lambda_matrix, selected_nodes, NpiParams, RateMatrix, Strategy};
use npi_core::verify;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(name: &str) -> ExperimentConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    ExperimentConfig::load(&path).unwrap()
}

/// Symmetrized `diag(b/g)^{1/2} A(S) diag(b/g)^{1/2}`, similar to `D^{-1} lambda`.
fn symmetrized(net: &Network, params: &NpiParams, selected: &[bool]) -> DMatrix<f64> {
    let n = net.n();
    let s: Vec<f64> = (0..n)
        .map(|i| (net.beta()[i] / net.gamma()[i]).sqrt())
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for &(i, j, a) in net.edges() {
        let v = s[i] * s[j] * a * params.factor(selected[i], selected[j]);
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    m
}

#[test]
fn r0_matches_dense_symmetric_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let inst = verify::random_instance(&mut rng, (5, 60), 6).unwrap();
        let strategy: Strategy = (0..6).filter(|_| rng.gen_bool(0.5)).collect();
        let sel = selected_nodes(&inst.clusters, &strategy, inst.net.n());
        let rates = lambda_matrix(&inst.net, &inst.params, &inst.clusters, &strategy);
        let ours = dynamics::r0(&inst.net, &rates).unwrap();
        let eig = SymmetricEigen::new(symmetrized(&inst.net, &inst.params, sel.as_mask()));
        let oracle = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(
            (ours - oracle).abs() <= 1e-8 * oracle.max(1.0),
            "r0 {ours} vs eigensolver {oracle}"
        );
    }
}

/// Newton's method on the steady-state equations, started from a long
/// integration so it lands on the endemic root.
fn newton_endemic(net: &Network, rates: &RateMatrix) -> DVector<f64> {
    let n = net.n();
    let start = dynamics::integrate(
        net,
        rates,
        &vec![0.5; n],
        &IntegrateOptions {
            t_end: 100.0,
            stride: usize::MAX,
            ..IntegrateOptions::default()
        },
    )
    .unwrap();
    let mut x = DVector::from_column_slice(start.terminal());
    for _ in 0..50 {
        let mut f = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..n {
            let s = rates.row_dot(net, i, x.as_slice());
            f[i] = -net.gamma()[i] * x[i] + (1.0 - x[i]) * s;
            jac[(i, i)] = -net.gamma()[i] - s;
            for e in net.row(i) {
                jac[(i, net.columns()[e])] += (1.0 - x[i]) * rates.entries()[e];
            }
        }
        let step = jac.lu().solve(&f).unwrap();
        x -= &step;
        if step.amax() < 1e-15 {
            break;
        }
    }
    x
}

#[test]
fn endemic_state_matches_newton_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    while checked < 20 {
        let inst = verify::random_instance(&mut rng, (5, 40), 4).unwrap();
        let rates = RateMatrix::unmodified(&inst.net);
        if dynamics::r0(&inst.net, &rates).unwrap() < 1.2 {
            continue;
        }
        let opts = SolverOptions {
            tol: 1e-14,
            max_iter: 1_000_000,
        };
        let ours = dynamics::endemic_fixed_point(&inst.net, &rates, &opts).unwrap();
        let oracle = newton_endemic(&inst.net, &rates);
        for (a, b) in ours.x_star.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        checked += 1;
    }
}

#[test]
fn steady_state_zeroes_the_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    while checked < 10 {
        let inst = verify::random_instance(&mut rng, (5, 40), 4).unwrap();
        let strategy: Strategy = (0..4).filter(|_| rng.gen_bool(0.5)).collect();
        let rates = lambda_matrix(&inst.net, &inst.params, &inst.clusters, &strategy);
        if dynamics::r0(&inst.net, &rates).unwrap() < 1.2 {
            continue;
        }
        let st =
            dynamics::endemic_fixed_point(&inst.net, &rates, &SolverOptions::default()).unwrap();
        let x_hat = Threshold::new(st.x_star.clone()).unwrap();
        let prob = CoverProblem::new(&inst.net, &inst.params, &inst.clusters, &x_hat).unwrap();
        for j in prob.j_values(&strategy) {
            assert!(j.abs() < 1e-8, "{j}");
        }
        checked += 1;
    }
}

#[test]
fn greedy_sits_between_optimum_and_certificate() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..15 {
        let inst = verify::bound_instance(&mut rng).unwrap();
        let prob = inst.problem();
        let weights = c1_weights(&inst.clusters);
        let greedy = prob.greedy_cover(&weights).unwrap();
        let optimum = prob.brute_force_cover(&weights).unwrap();
        let opt = strategy_weight(&weights, &optimum);
        let enumerated = (0..1u64 << inst.clusters.len())
            .map(Strategy::from_bits)
            .filter(|s| prob.j_bar(s) == 0.0)
            .map(|s| strategy_weight(&weights, &s))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(opt, enumerated);
        assert!(greedy.cost >= opt);
        assert!(greedy.cost <= greedy.bound_ratio * opt + 1e-9);
        assert_eq!(prob.j_bar(&greedy.strategy), 0.0);
    }
}

#[test]
fn baseline_follows_weighted_degree_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let inst = verify::bound_instance(&mut rng).unwrap();
    let prob = inst.problem();
    let chosen = prob.baseline_degree().unwrap();
    let score = |r: usize| -> f64 {
        inst.clusters
            .members(r)
            .iter()
            .map(|&i| inst.net.neighbors(i).map(|(_, a)| a).sum::<f64>())
            .sum()
    };
    let mut order: Vec<usize> = (0..inst.clusters.len()).collect();
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    let mut prefix = Strategy::empty();
    for r in order {
        if prob.j_bar(&prefix) == 0.0 {
            break;
        }
        prefix.insert(r);
    }
    assert_eq!(chosen, prefix);
}

#[test]
fn looser_threshold_needs_fewer_clusters() {
    let report = experiment::sweep(&config("cost_sweep.json"), 2).unwrap();
    for &seed in &config("cost_sweep.json").seeds {
        let clusters = |t: f64| {
            report
                .rows
                .iter()
                .find(|r| r.seed == seed && r.threshold == t && r.method == Method::Greedy)
                .unwrap()
                .clusters
        };
        assert!(clusters(0.4) < clusters(0.05), "seed {seed}");
    }
}

#[test]
fn uncontrolled_benchmark_is_not_certified() {
    let cfg = config("trajectory.json");
    let inst = experiment::build_instance(&cfg, cfg.seeds[0]).unwrap();
    let x_hat = Threshold::uniform(inst.network.n(), 0.05).unwrap();
    let prob = inst.problem(&cfg.npi, &x_hat).unwrap();
    let verdict = prob
        .check_sufficiency(&Strategy::empty(), &SolverOptions::default())
        .unwrap();
    assert!(matches!(
        verdict,
        npi_core::covering::Sufficiency::NotCertified { ref violators } if !violators.is_empty()
    ));
}

#[test]
fn watts_strogatz_has_ring_lattice_edge_count() {
    for seed in 0..20 {
        let topo = netgraph::watts_strogatz(100, 4, 0.2, seed).unwrap();
        assert_eq!(topo.edges.len(), 200);
        assert!(topo.is_connected());
        let net = netgraph::random_parameters(
            &topo,
            Interval::new(0.4, 0.5),
            Interval::new(0.4, 0.6),
            Interval::new(0.4, 0.5),
            seed,
        )
        .unwrap();
        assert!(net.gamma().iter().all(|g| (0.4..=0.5).contains(g)));
        assert!(net.edges().iter().all(|e| (0.4..=0.5).contains(&e.2)));
    }
}
