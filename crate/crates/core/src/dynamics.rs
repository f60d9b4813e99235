//! Mean-field SIS dynamics on a network with directed infection rates:
//!
//! ```text
//! dx_i/dt = -gamma_i x_i + (1 - x_i) * sum_j lambda_ij x_j
//! ```
//!
//! This module computes the threshold `R0 = rho(D^-1 lambda)`, integrates the
//! ODE, and finds the endemic equilibrium two ways: a direct fixed-point
//! iteration on the steady-state condition, and the continued-fraction
//! (`phi`) recursion.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::Network;
use crate::npi::RateMatrix;

/// Upper edge of the band `(1, NEAR_CRITICAL_R0]` in which results are
/// flagged as near-critical.
pub const NEAR_CRITICAL_R0: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Record every `stride`-th step (the first and last states are always kept).
    pub stride: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_end: 200.0,
            stride: 100,
        }
    }
}

/// Spectral radius of `D^-1 lambda`.
pub fn r0(net: &Network, rates: &RateMatrix) -> Result<f64> {
    let SolverOptions { tol, max_iter } = SolverOptions::default();
    spectral_radius(net, rates, tol, max_iter)
}

/// Power iteration on the shifted matrix `I + D^-1 lambda`, started from the
/// all-ones vector.
///
/// The shift makes the iteration matrix primitive, so it converges even on
/// bipartite graphs where `D^-1 lambda` has `-rho` as an eigenvalue. The
/// stopping rule uses the Collatz-Wielandt bracket
/// `min_i (My)_i / y_i <= rho(M) <= max_i (My)_i / y_i`, which holds for any
/// positive `y`, and stops once the bracket is narrower than `tol * rho`.
pub fn spectral_radius(
    net: &Network,
    rates: &RateMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let n = net.n();
    let gamma = net.gamma();
    let mut y = vec![1.0; n];
    let mut z = vec![0.0; n];
    for _ in 0..max_iter {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            z[i] = y[i] + rates.row_dot(net, i, &y) / gamma[i];
            let ratio = z[i] / y[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        if hi - lo <= tol * (hi - 1.0).max(f64::MIN_POSITIVE) {
            return Ok(0.5 * (lo + hi) - 1.0);
        }
        let scale = z.iter().fold(0.0_f64, |m, &v| m.max(v));
        for (yi, zi) in y.iter_mut().zip(&z) {
            *yi = zi / scale;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        last: Some(Box::new(y)),
    })
}

/// Right-hand side of the ODE.
pub fn vector_field(net: &Network, rates: &RateMatrix, x: &[f64], out: &mut [f64]) {
    let gamma = net.gamma();
    for i in 0..net.n() {
        out[i] = -gamma[i] * x[i] + (1.0 - x[i]) * rates.row_dot(net, i, x);
    }
}

/// `J_i(x) = -gamma_i x_i + (1 - x_i) sum_j lambda_ij x_j` for every node.
/// Equilibria are exactly the zeros of this vector.
pub fn steady_residuals(net: &Network, rates: &RateMatrix, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; net.n()];
    vector_field(net, rates, x, &mut out);
    out
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Sampled solution of the ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Components that left `[0, 1]` after an RK4 step and were clamped back.
    pub clamped: usize,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states
            .last()
            .expect("a trajectory always holds its initial state")
    }

    /// CSV with header `t,x_0,...,x_{n-1}` and 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        write!(w, "t")?;
        for i in 0..n {
            write!(w, ",x_{i}")?;
        }
        writeln!(w)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(w, "{t:.16e}")?;
            for v in x {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Fixed-step classical RK4 from `x0` over `[0, t_end]`. Each step's result
/// is clamped to `[0, 1]`; a final partial step lands exactly on `t_end`.
pub fn integrate(
    net: &Network,
    rates: &RateMatrix,
    x0: &[f64],
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    let n = net.n();
    if x0.len() != n {
        return Err(Error::InvalidInitialState(format!(
            "expected {n} components, got {}",
            x0.len()
        )));
    }
    if let Some((i, v)) = x0
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::InvalidInitialState(format!(
            "x0[{i}] = {v} is outside [0, 1]"
        )));
    }
    if !(opts.dt.is_finite() && opts.dt > 0.0) || !(opts.t_end.is_finite() && opts.t_end >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "need dt > 0 and t_end >= 0, got dt = {}, t_end = {}",
            opts.dt, opts.t_end
        )));
    }
    if opts.stride == 0 {
        return Err(Error::InvalidParams("stride must be at least 1".into()));
    }

    let steps = (opts.t_end / opts.dt - 1e-9).ceil().max(0.0) as usize;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.to_vec()],
        clamped: 0,
    };
    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for step in 1..=steps {
        let t = if step == steps {
            opts.t_end
        } else {
            step as f64 * opts.dt
        };
        let h = t - (step - 1) as f64 * opts.dt;

        vector_field(net, rates, &x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        vector_field(net, rates, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        vector_field(net, rates, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        vector_field(net, rates, &tmp, &mut k4);
        for i in 0..n {
            let next = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !next.is_finite() {
                return Err(Error::NonFiniteState { time: t });
            }
            if !(0.0..=1.0).contains(&next) {
                traj.clamped += 1;
            }
            x[i] = next.clamp(0.0, 1.0);
        }

        if step % opts.stride == 0 || step == steps {
            traj.times.push(t);
            traj.states.push(x.clone());
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyKind {
    DiseaseFree,
    Endemic,
}

/// Equilibrium returned by the endemic solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub kind: SteadyKind,
    pub x_star: Vec<f64>,
    /// `max_i |J_i(x_star)|`.
    pub residual: f64,
    pub iterations: usize,
    pub near_critical: bool,
    pub r0: f64,
}

impl SteadyState {
    fn disease_free(n: usize, r0: f64) -> Self {
        Self {
            kind: SteadyKind::DiseaseFree,
            x_star: vec![0.0; n],
            residual: 0.0,
            iterations: 0,
            near_critical: false,
            r0,
        }
    }

    fn near_critical(r0: f64) -> bool {
        r0 > 1.0 && r0 <= NEAR_CRITICAL_R0
    }
}

/// Endemic equilibrium by iterating `x_i <- s_i / (gamma_i + s_i)`,
/// `s_i = sum_j lambda_ij x_j`, from `x = 1`.
///
/// Iterates decrease monotonically toward the largest equilibrium. Returns
/// the disease-free state directly when `R0 <= 1`.
pub fn endemic_fixed_point(
    net: &Network,
    rates: &RateMatrix,
    opts: &SolverOptions,
) -> Result<SteadyState> {
    let rho = spectral_radius(net, rates, opts.tol, opts.max_iter)?;
    if rho <= 1.0 {
        return Ok(SteadyState::disease_free(net.n(), rho));
    }
    let gamma = net.gamma();
    let n = net.n();
    let mut x = vec![1.0; n];
    let mut next = vec![0.0; n];
    for iter in 1..=opts.max_iter {
        let mut change = 0.0_f64;
        for i in 0..n {
            let s = rates.row_dot(net, i, &x);
            next[i] = s / (gamma[i] + s);
            change = change.max((next[i] - x[i]).abs());
        }
        std::mem::swap(&mut x, &mut next);
        if change < opts.tol {
            return Ok(SteadyState {
                kind: SteadyKind::Endemic,
                residual: max_abs(&steady_residuals(net, rates, &x)),
                x_star: x,
                iterations: iter,
                near_critical: SteadyState::near_critical(rho),
                r0: rho,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        last: Some(Box::new(x)),
    })
}

/// Tolerance on `R0 - 1` inside which the continued-fraction solver treats
/// the system as critical and hands over to [`endemic_fixed_point`].
const CRITICAL_BAND: f64 = 1e-9;

/// One level of the continued fraction:
/// `phi_i <- 1 + mu_i d_i - mu_i sum_j lambda_ij / phi_j`. A `prev` of `None`
/// stands for the first level, `phi_i = 1 + mu_i d_i`.
pub fn phi_step(net: &Network, rates: &RateMatrix, prev: Option<&[f64]>) -> Vec<f64> {
    let cols = net.columns();
    let lam = rates.entries();
    (0..net.n())
        .map(|i| {
            let mu = 1.0 / net.gamma()[i];
            let d = rates.row_sum(net, i);
            let tail: f64 = match prev {
                None => 0.0,
                Some(phi) => net.row(i).map(|k| lam[k] / phi[cols[k]]).sum(),
            };
            1.0 + mu * d - mu * tail
        })
        .collect()
}

/// The first `levels` terms `phi^1 .. phi^levels` of the recursion.
pub fn phi_sequence(net: &Network, rates: &RateMatrix, levels: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(levels);
    for _ in 0..levels {
        let next = phi_step(net, rates, out.last().map(Vec::as_slice));
        out.push(next);
    }
    out
}

/// Endemic equilibrium as the limit `x_i = 1 - 1/phi_i` of the
/// continued-fraction recursion, evaluated for at most `levels` levels and
/// stopped once successive `x` differ by less than `tol` in max-norm.
///
/// Requires `R0 >= 1`; within `1e-9` of the threshold the fixed-point solver
/// is used instead.
pub fn endemic_phi_iteration(
    net: &Network,
    rates: &RateMatrix,
    levels: usize,
    tol: f64,
) -> Result<SteadyState> {
    let rho = spectral_radius(net, rates, tol.min(1e-10), 100_000)?;
    if rho < 1.0 - CRITICAL_BAND {
        return Err(Error::ThresholdNotMet { r0: rho });
    }
    if rho <= 1.0 + CRITICAL_BAND {
        let mut st = endemic_fixed_point(
            net,
            rates,
            &SolverOptions {
                tol,
                max_iter: levels.max(1),
            },
        )?;
        st.near_critical = true;
        return Ok(st);
    }

    let mut x = vec![1.0; net.n()];
    let mut phi: Option<Vec<f64>> = None;
    for level in 1..=levels {
        let next = phi_step(net, rates, phi.as_deref());
        let mut change = 0.0_f64;
        for (xi, p) in x.iter_mut().zip(&next) {
            let v = 1.0 - 1.0 / p;
            change = change.max((v - *xi).abs());
            *xi = v;
        }
        phi = Some(next);
        if change < tol {
            return Ok(SteadyState {
                kind: SteadyKind::Endemic,
                residual: max_abs(&steady_residuals(net, rates, &x)),
                x_star: x,
                iterations: level,
                near_critical: SteadyState::near_critical(rho),
                r0: rho,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: levels,
        last: Some(Box::new(x)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // gamma = 0.4, beta = 0.6, a = 1 on both nodes: R0 = 1.5, x* = 1/3.
    fn symmetric_pair() -> (Network, RateMatrix) {
        let net = Network::new(2, vec![(0, 1, 1.0)], vec![0.4; 2], vec![0.6; 2]).unwrap();
        let rates = RateMatrix::unmodified(&net);
        (net, rates)
    }

    fn path(n: usize, gamma: f64, beta: f64) -> (Network, RateMatrix) {
        let edges = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        let net = Network::new(n, edges, vec![gamma; n], vec![beta; n]).unwrap();
        let rates = RateMatrix::unmodified(&net);
        (net, rates)
    }

    #[test]
    fn pair_threshold() {
        let (net, rates) = symmetric_pair();
        assert!((r0(&net, &rates).unwrap() - 1.5).abs() < 1e-12);
        let slow = Network::new(2, vec![(0, 1, 1.0)], vec![0.8; 2], vec![0.6; 2]).unwrap();
        let r = r0(&slow, &RateMatrix::unmodified(&slow)).unwrap();
        assert!((r - 0.75).abs() < 1e-12);
    }

    #[test]
    fn bipartite_path_converges() {
        // P_n: 2 cos(pi / (n + 1)).
        let (net, rates) = path(6, 1.0, 1.0);
        let expect = 2.0 * (std::f64::consts::PI / 7.0).cos();
        assert!((r0(&net, &rates).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn single_node_has_zero_radius() {
        let net = Network::new(1, vec![], vec![1.0], vec![1.0]).unwrap();
        assert_eq!(r0(&net, &RateMatrix::unmodified(&net)).unwrap(), 0.0);
    }

    #[test]
    fn zero_start_stays_zero() {
        let (net, rates) = symmetric_pair();
        let traj = integrate(&net, &rates, &[0.0, 0.0], &IntegrateOptions::default()).unwrap();
        assert!(traj.states.iter().all(|x| x.iter().all(|&v| v == 0.0)));
        assert_eq!(traj.clamped, 0);
    }

    #[test]
    fn pair_trajectory_reaches_closed_form() {
        let (net, rates) = symmetric_pair();
        let opts = IntegrateOptions {
            t_end: 100.0,
            ..Default::default()
        };
        let traj = integrate(&net, &rates, &[0.5, 0.5], &opts).unwrap();
        for v in traj.terminal() {
            assert!((v - 1.0 / 3.0).abs() < 1e-9);
        }
        assert_eq!(*traj.times.last().unwrap(), 100.0);
        assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(traj.times.len(), traj.states.len());
    }

    #[test]
    fn partial_final_step_hits_t_end() {
        let (net, rates) = symmetric_pair();
        let opts = IntegrateOptions {
            dt: 0.3,
            t_end: 1.0,
            stride: 1,
        };
        let traj = integrate(&net, &rates, &[0.5, 0.2], &opts).unwrap();
        assert_eq!(traj.times.len(), 5);
        assert_eq!(*traj.times.last().unwrap(), 1.0);
    }

    #[test]
    fn subcritical_trajectory_dies_out() {
        let (net, rates) = path(5, 1.0, 0.3);
        assert!(r0(&net, &rates).unwrap() < 1.0);
        let traj = integrate(&net, &rates, &[1.0; 5], &IntegrateOptions::default()).unwrap();
        assert!(traj.terminal().iter().all(|&v| v < 1e-6));
    }

    #[test]
    fn integrate_rejects_bad_input() {
        let (net, rates) = symmetric_pair();
        let opts = IntegrateOptions::default();
        assert!(matches!(
            integrate(&net, &rates, &[0.5], &opts),
            Err(Error::InvalidInitialState(_))
        ));
        assert!(matches!(
            integrate(&net, &rates, &[1.5, 0.0], &opts),
            Err(Error::InvalidInitialState(_))
        ));
        let bad = IntegrateOptions { dt: 0.0, ..opts };
        assert!(integrate(&net, &rates, &[0.5, 0.5], &bad).is_err());
    }

    #[test]
    fn huge_step_is_reported_as_non_finite() {
        let net = Network::new(2, vec![(0, 1, 1e150)], vec![1e150; 2], vec![1e150; 2]).unwrap();
        let rates = RateMatrix::unmodified(&net);
        let opts = IntegrateOptions {
            dt: 1e10,
            t_end: 1e11,
            stride: 1,
        };
        assert!(matches!(
            integrate(&net, &rates, &[0.5, 0.5], &opts),
            Err(Error::NonFiniteState { .. })
        ));
    }

    #[test]
    fn fixed_point_closed_form() {
        let (net, rates) = symmetric_pair();
        let st = endemic_fixed_point(&net, &rates, &SolverOptions::default()).unwrap();
        assert_eq!(st.kind, SteadyKind::Endemic);
        for v in &st.x_star {
            assert!((v - 1.0 / 3.0).abs() < 1e-9);
        }
        assert!(st.residual < 1e-9);
        assert!(!st.near_critical);
    }

    #[test]
    fn fixed_point_below_threshold_is_disease_free() {
        // R0 = 0.9 on the pair.
        let net = Network::new(2, vec![(0, 1, 1.0)], vec![0.5; 2], vec![0.45; 2]).unwrap();
        let st = endemic_fixed_point(
            &net,
            &RateMatrix::unmodified(&net),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((st.r0 - 0.9).abs() < 1e-12);
        assert_eq!(st.kind, SteadyKind::DiseaseFree);
        assert_eq!(st.x_star, vec![0.0; 2]);
    }

    #[test]
    fn fixed_point_reports_non_convergence() {
        let (net, rates) = symmetric_pair();
        let opts = SolverOptions {
            tol: 1e-14,
            max_iter: 3,
        };
        match endemic_fixed_point(&net, &rates, &opts) {
            Err(Error::NoConvergence {
                iterations: 3,
                last: Some(x),
            }) => assert_eq!(x.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn phi_first_level() {
        // mu = 2, d = 1.2 gives 3.4.
        let net = Network::new(2, vec![(0, 1, 1.2)], vec![0.5; 2], vec![1.0; 2]).unwrap();
        let phi = phi_step(&net, &RateMatrix::unmodified(&net), None);
        assert!((phi[0] - 3.4).abs() < 1e-15);
    }

    #[test]
    fn phi_matches_closed_form_and_fixed_point() {
        let (net, rates) = symmetric_pair();
        let phi = endemic_phi_iteration(&net, &rates, 100_000, 1e-12).unwrap();
        let fp = endemic_fixed_point(&net, &rates, &SolverOptions::default()).unwrap();
        for (a, b) in phi.x_star.iter().zip(&fp.x_star) {
            assert!((a - 1.0 / 3.0).abs() < 1e-9);
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn phi_requires_threshold() {
        let (net, rates) = path(4, 1.0, 0.2);
        assert!(matches!(
            endemic_phi_iteration(&net, &rates, 1000, 1e-10),
            Err(Error::ThresholdNotMet { .. })
        ));
    }

    #[test]
    fn near_critical_flag() {
        // R0 = 0.41 / 0.4 = 1.025.
        let net = Network::new(2, vec![(0, 1, 1.0)], vec![0.4; 2], vec![0.41; 2]).unwrap();
        let st = endemic_fixed_point(
            &net,
            &RateMatrix::unmodified(&net),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(st.near_critical);
        assert!((st.x_star[0] - (1.0 - 0.4 / 0.41)).abs() < 1e-8);
    }

    #[test]
    fn trajectory_csv_layout() {
        let (net, rates) = symmetric_pair();
        let opts = IntegrateOptions {
            dt: 0.5,
            t_end: 1.0,
            stride: 1,
        };
        let traj = integrate(&net, &rates, &[0.5, 0.25], &opts).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x_0,x_1");
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[1],
            "0.0000000000000000e0,5.0000000000000000e-1,2.5000000000000000e-1"
        );
        let parsed: f64 = lines[3].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(parsed, traj.terminal()[0]);
    }

    #[test]
    fn steady_state_json_fields() {
        let (net, rates) = symmetric_pair();
        let st = endemic_fixed_point(&net, &rates, &SolverOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&st).unwrap();
        assert_eq!(v["kind"], "endemic");
        for key in ["x_star", "residual", "iterations", "near_critical"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
