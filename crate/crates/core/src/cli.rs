//! Command-line front end for the `npi` binary.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration or input,
//! 3 infeasible target, 4 solver non-convergence, 5 property violation.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::covering::{strategy_weight, Threshold};
use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentConfig, Instance};
use crate::netgraph::{ClusterSet, Network};
use crate::npi::{c1_weights, selected_nodes, total_cost, Strategy};
use crate::verify::{self, VerifyOptions};

pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_NO_CONVERGENCE: u8 = 4;
pub const EXIT_VIOLATION: u8 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "npi",
    version,
    about = "Cluster-level intervention planning for SIS epidemics on networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a network and cluster set and report feasibility per threshold.
    Generate(Common),
    /// Integrate the uncontrolled and controlled dynamics from a random start.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Directory holding network.json and clusters.json.
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Strategy JSON with a "selected" array; the greedy cover otherwise.
        #[arg(long)]
        strategy: Option<PathBuf>,
    },
    /// Select intervention clusters for one threshold.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Use the degree heuristic instead of the greedy cover.
        #[arg(long, conflicts_with = "brute_force")]
        baseline: bool,
        /// Also solve exactly by enumeration and report the greedy ratio.
        #[arg(long)]
        brute_force: bool,
    },
    /// Compare greedy and baseline costs over all thresholds and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads.
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
    },
    /// Run the property suites.
    Verify {
        /// Output directory for verify.json.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reduced instance counts.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (JSON, schema 1).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Replaces the configured seed list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replaces the configured threshold list.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Integration step.
    #[arg(long)]
    pub dt: Option<f64>,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(t) = self.threshold {
            cfg.thresholds = vec![t];
        }
        if let Some(dt) = self.dt {
            cfg.dynamics.dt = dt;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Maps an error to its documented exit code.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::Infeasible { .. }
        | Error::InfeasibleAfterRetries { .. }
        | Error::ZeroGainStall { .. } => EXIT_INFEASIBLE,
        Error::NoConvergence { .. }
        | Error::NonFiniteState { .. }
        | Error::ThresholdNotMet { .. } => EXIT_NO_CONVERGENCE,
        Error::SufficiencyViolation { .. } | Error::ComparisonViolation { .. } => EXIT_VIOLATION,
        _ => EXIT_CONFIG,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<u8> {
    match command {
        Command::Generate(c) => generate(&c),
        Command::Simulate {
            common,
            instance,
            strategy,
        } => simulate(&common, instance.as_deref(), strategy.as_deref()),
        Command::Optimize {
            common,
            instance,
            baseline,
            brute_force,
        } => optimize(&common, instance.as_deref(), baseline, brute_force),
        Command::Sweep { common, jobs } => sweep(&common, jobs),
        Command::Verify { out, seed, quick } => run_verify(&out, seed, quick),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_instance(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<Instance> {
    match dir {
        Some(dir) => Ok(Instance {
            network: read_json::<Network>(&dir.join("network.json"))?,
            clusters: read_json::<ClusterSet>(&dir.join("clusters.json"))?,
            seed: cfg.seeds[0],
            regen: 0,
        }),
        None => experiment::build_instance(cfg, cfg.seeds[0]),
    }
}

fn generate(c: &Common) -> Result<u8> {
    let cfg = c.load()?;
    let inst = experiment::build_instance(&cfg, cfg.seeds[0])?;
    fs::create_dir_all(&c.out)?;
    write_json(&c.out.join("network.json"), &inst.network)?;
    write_json(&c.out.join("clusters.json"), &inst.clusters)?;
    println!(
        "instance: {} nodes, {} edges, {} clusters (seed {}, {} regenerations)",
        inst.network.n(),
        inst.network.num_edges(),
        inst.clusters.len(),
        cfg.seeds[0],
        inst.regen
    );
    let all = Strategy::all(inst.clusters.len());
    for &t in &cfg.thresholds {
        let x_hat = Threshold::uniform(inst.network.n(), t)?;
        let jbar = inst.problem(&cfg.npi, &x_hat)?.j_bar(&all);
        if jbar == 0.0 {
            println!("threshold {t}: ok");
        } else {
            println!("threshold {t}: infeasible (J-bar with every cluster = {jbar:.3e})");
        }
    }
    println!("wrote {}", c.out.display());
    Ok(0)
}

#[derive(Serialize)]
struct StrategyDoc<'a> {
    method: &'a str,
    threshold: f64,
    selected: &'a Strategy,
    clusters: usize,
    nodes: usize,
    cost: f64,
    jbar: f64,
}

fn optimize(c: &Common, instance: Option<&Path>, baseline: bool, brute_force: bool) -> Result<u8> {
    let cfg = c.load()?;
    let inst = load_instance(&cfg, instance)?;
    let t = cfg.min_threshold();
    let n = inst.network.n();
    let x_hat = Threshold::uniform(n, t)?;
    let prob = inst.problem(&cfg.npi, &x_hat)?;
    let weights = c1_weights(&inst.clusters);
    fs::create_dir_all(&c.out)?;
    let path = c.out.join("strategy.json");
    let summarize = |label: &str, s: &Strategy| {
        println!(
            "{label}: clusters {:?}, {} clusters, {} nodes, cost {}",
            s.iter().collect::<Vec<_>>(),
            s.len(),
            selected_nodes(&inst.clusters, s, n).count(),
            total_cost(&inst.clusters, s, &cfg.cost)
        );
    };
    println!("threshold {t}");

    if baseline {
        let s = prob.baseline_degree()?;
        summarize("baseline", &s);
        write_json(
            &path,
            &StrategyDoc {
                method: "baseline",
                threshold: t,
                selected: &s,
                clusters: s.len(),
                nodes: selected_nodes(&inst.clusters, &s, n).count(),
                cost: total_cost(&inst.clusters, &s, &cfg.cost),
                jbar: prob.j_bar(&s),
            },
        )?;
        println!("wrote {}", path.display());
        return Ok(0);
    }

    let greedy = prob.greedy_cover(&weights)?;
    summarize("greedy", &greedy.strategy);
    println!(
        "bound ratio {:.6}{}",
        greedy.bound_ratio,
        if greedy.degenerate_bound {
            " (degenerate)"
        } else {
            ""
        }
    );
    write_json(&path, &greedy)?;
    if brute_force {
        let opt = prob.brute_force_cover(&weights)?;
        summarize("optimal", &opt);
        let opt_weight = strategy_weight(&weights, &opt);
        let ratio = if opt_weight == 0.0 {
            1.0
        } else {
            greedy.cost / opt_weight
        };
        println!("greedy / optimal = {ratio:.6}");
        write_json(
            &c.out.join("optimal.json"),
            &StrategyDoc {
                method: "brute_force",
                threshold: t,
                selected: &opt,
                clusters: opt.len(),
                nodes: selected_nodes(&inst.clusters, &opt, n).count(),
                cost: total_cost(&inst.clusters, &opt, &cfg.cost),
                jbar: prob.j_bar(&opt),
            },
        )?;
    }
    println!("wrote {}", path.display());
    Ok(0)
}

#[derive(serde::Deserialize)]
struct SelectedDoc {
    selected: Strategy,
}

fn simulate(c: &Common, instance: Option<&Path>, strategy: Option<&Path>) -> Result<u8> {
    let cfg = c.load()?;
    let inst = load_instance(&cfg, instance)?;
    let strategy = strategy
        .map(|p| read_json::<SelectedDoc>(p).map(|d| d.selected))
        .transpose()?;
    let t = cfg.min_threshold();
    let x0 = experiment::random_initial_state(inst.network.n(), inst.seed);
    let cmp = experiment::compare_from(&cfg, &inst, t, x0, strategy)?;
    cmp.write(&c.out)?;
    let [free_lo, free_hi] = cmp.terminal_free_range();
    let [npi_lo, npi_hi] = cmp.terminal_controlled_range();
    println!("threshold {t}");
    println!(
        "strategy: {} clusters, {} nodes",
        cmp.strategy.len(),
        cmp.selected_nodes
    );
    println!("uncontrolled terminal state in [{free_lo:.4}, {free_hi:.4}]");
    println!("controlled terminal state in   [{npi_lo:.4}, {npi_hi:.4}]");
    if cmp.degenerate {
        println!("initial state is zero; comparison is degenerate");
    }
    println!("wrote {}", c.out.display());
    Ok(0)
}

fn sweep(c: &Common, jobs: usize) -> Result<u8> {
    let cfg = c.load()?;
    let report = experiment::sweep(&cfg, jobs)?;
    report.write(&c.out)?;
    println!(
        "{:>9} {:>5} {:>12} {:>14} {:>10} {:>10}",
        "threshold", "runs", "greedy cost", "baseline cost", "mean ratio", "max ratio"
    );
    for s in &report.per_threshold {
        println!(
            "{:>9} {:>5} {:>12.2} {:>14.2} {:>10.3} {:>10.3}",
            s.threshold,
            s.runs,
            s.mean_greedy_cost,
            s.mean_baseline_cost,
            s.mean_cost_ratio,
            s.max_cost_ratio
        );
    }
    println!(
        "mean cost ratio {:.3}; greedy never costlier: {}",
        report.mean_cost_ratio,
        if report.greedy_never_worse {
            "yes"
        } else {
            "no"
        }
    );
    println!("wrote {}", c.out.display());
    Ok(0)
}

fn run_verify(out: &Path, seed: u64, quick: bool) -> Result<u8> {
    let opts = if quick {
        VerifyOptions::quick(seed)
    } else {
        VerifyOptions::full(seed)
    };
    let reports = verify::run_all(&opts)?;
    for r in &reports {
        println!("{r}");
    }
    fs::create_dir_all(out)?;
    write_json(&out.join("verify.json"), &reports)?;
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed == 0 {
        println!("all {} properties hold", reports.len());
        Ok(0)
    } else {
        println!("{failed} of {} properties violated", reports.len());
        Ok(EXIT_VIOLATION)
    }
}
