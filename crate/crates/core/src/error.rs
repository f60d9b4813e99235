use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("network is not connected: node {node} is unreachable from node 0")]
    NotConnected { node: usize },

    #[error("non-positive {which} rate {value} at node {node}")]
    NonPositiveRate {
        node: usize,
        which: &'static str,
        value: f64,
    },

    #[error("non-positive weight {value} on edge ({i}, {j})")]
    NonPositiveWeight { i: usize, j: usize, value: f64 },

    #[error("asymmetric weight on edge ({i}, {j}): {forward} vs {backward}")]
    AsymmetricWeight {
        i: usize,
        j: usize,
        forward: f64,
        backward: f64,
    },

    #[error("self-loop at node {node}")]
    SelfLoop { node: usize },

    #[error("node index {node} out of range for a network of {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("({i}, {j}) is not an edge")]
    NotAnEdge { i: usize, j: usize },

    #[error("cluster index {cluster} out of range ({count} clusters)")]
    InvalidStrategy { cluster: usize, count: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid initial state: {0}")]
    InvalidInitialState(String),

    #[error("state became non-finite at t = {time}; the step size is likely too large")]
    NonFiniteState { time: f64 },

    #[error("no convergence after {iterations} iterations")]
    NoConvergence {
        iterations: usize,
        last: Option<Box<Vec<f64>>>,
    },

    #[error("reproduction number {r0} is below 1; no endemic state")]
    ThresholdNotMet { r0: f64 },

    #[error("infeasible: selecting every cluster still leaves J-bar = {jbar}")]
    Infeasible { jbar: f64 },

    #[error("all marginal gains are zero while J-bar = {jbar} > 0")]
    ZeroGainStall { jbar: f64 },

    #[error("{count} clusters exceeds the exhaustive-search limit of {max}")]
    TooManyClusters { count: usize, max: usize },

    #[error("certified strategy has endemic x*[{node}] = {x_star} above the bound {x_hat}")]
    SufficiencyViolation {
        node: usize,
        x_star: f64,
        x_hat: f64,
    },

    #[error("no feasible instance after {attempts} attempts")]
    InfeasibleAfterRetries { attempts: usize },

    #[error(
        "controlled trajectory ends at {max_terminal} which exceeds the threshold {threshold}"
    )]
    ComparisonViolation { max_terminal: f64, threshold: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
