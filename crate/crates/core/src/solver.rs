//! Power-flow solvers: polar Newton-Raphson and a Gauss-Seidel cross-check.
//!
//! Load convention: positive `p`/`q` is consumption. The specified complex
//! injection at a load bus is `-(p + jq)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::Network;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub mismatch_tolerance: f64,
    pub max_iterations: usize,
    pub warm_start: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { mismatch_tolerance: 1e-8, max_iterations: 50, warm_start: true }
    }
}

impl SolverSettings {
    /// Defaults for Gauss-Seidel, which needs far more sweeps than NR needs iterations.
    pub fn gauss_seidel() -> Self {
        Self { mismatch_tolerance: 1e-10, max_iterations: 500_000, warm_start: false }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.mismatch_tolerance > 0.0) || !self.mismatch_tolerance.is_finite() {
            return Err(SolverError::InvalidSettings("mismatch_tolerance must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(SolverError::InvalidSettings("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Solver,
    Model,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSolution {
    /// Magnitudes in pu, one per bus.
    pub v: Vec<f64>,
    /// Angles in radians, one per bus.
    pub a: Vec<f64>,
    pub iterations: usize,
    pub provenance: Provenance,
    pub converged: bool,
}

impl VoltageSolution {
    pub fn flat(n_bus: usize) -> Self {
        Self {
            v: vec![1.0; n_bus],
            a: vec![0.0; n_bus],
            iterations: 0,
            provenance: Provenance::Solver,
            converged: true,
        }
    }

    pub fn from_model(v: Vec<f64>, a: Vec<f64>) -> Self {
        Self { v, a, iterations: 0, provenance: Provenance::Model, converged: true }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("expected {expected} load values, got p={p} q={q}")]
    LoadDimension { expected: usize, p: usize, q: usize },
    #[error("initial guess has {got} entries, network has {expected} buses")]
    GuessDimension { expected: usize, got: usize },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("non-finite load value at index {0}")]
    NonFiniteLoad(usize),
    #[error("invalid solver settings: {0}")]
    InvalidSettings(String),
}

/// Real and reactive residuals `S_spec - S_calc` per bus; slack entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Mismatch {
    pub fn max_abs(&self) -> f64 {
        self.p.iter().chain(&self.q).fold(0.0, |m, x| m.max(x.abs()))
    }
}

fn check_loads(network: &Network, p: &[f64], q: &[f64]) -> Result<(), SolverError> {
    let n = network.n_loads();
    if p.len() != n || q.len() != n {
        return Err(SolverError::LoadDimension { expected: n, p: p.len(), q: q.len() });
    }
    if let Some(i) = p.iter().chain(q).position(|x| !x.is_finite()) {
        return Err(SolverError::NonFiniteLoad(i % n.max(1)));
    }
    Ok(())
}

/// Specified complex injection per bus.
fn specified_injection(network: &Network, p: &[f64], q: &[f64]) -> Vec<Complex64> {
    let mut s = vec![Complex64::new(0.0, 0.0); network.n_bus()];
    for (k, &bus) in network.load_buses().iter().enumerate() {
        s[bus] = Complex64::new(-p[k], -q[k]);
    }
    s
}

fn phasors(v: &[f64], a: &[f64]) -> Vec<Complex64> {
    v.iter().zip(a).map(|(&m, &t)| Complex64::from_polar(m, t)).collect()
}

fn bus_currents(y: &DMatrix<Complex64>, vc: &[Complex64]) -> Vec<Complex64> {
    let n = vc.len();
    (0..n)
        .map(|i| (0..n).map(|j| y[(i, j)] * vc[j]).sum())
        .collect()
}

fn mismatch_from(network: &Network, s_spec: &[Complex64], vc: &[Complex64]) -> Mismatch {
    let current = bus_currents(network.admittance(), vc);
    let n = network.n_bus();
    let mut out = Mismatch { p: vec![0.0; n], q: vec![0.0; n] };
    for i in 0..n {
        if i == network.slack() {
            continue;
        }
        let r = s_spec[i] - vc[i] * current[i].conj();
        out.p[i] = r.re;
        out.q[i] = r.im;
    }
    out
}

/// Per-bus injection residuals at the voltage state `(v, a)`.
pub fn power_mismatch(network: &Network, p: &[f64], q: &[f64], v: &[f64], a: &[f64]) -> Mismatch {
    let s_spec = specified_injection(network, p, q);
    mismatch_from(network, &s_spec, &phasors(v, a))
}

fn starting_point(
    network: &Network,
    initial_guess: Option<(&[f64], &[f64])>,
    settings: &SolverSettings,
) -> Result<(Vec<f64>, Vec<f64>), SolverError> {
    let n = network.n_bus();
    let (mut v, mut a) = match initial_guess.filter(|_| settings.warm_start) {
        Some((v, a)) => {
            if v.len() != n || a.len() != n {
                return Err(SolverError::GuessDimension { expected: n, got: v.len().min(a.len()) });
            }
            (v.to_vec(), a.to_vec())
        }
        None => (vec![1.0; n], vec![0.0; n]),
    };
    // A guess with garbage entries is no better than a flat start.
    if v.iter().chain(&a).any(|x| !x.is_finite()) || v.iter().any(|&m| m <= 0.0) {
        v = vec![1.0; n];
        a = vec![0.0; n];
    }
    v[network.slack()] = 1.0;
    a[network.slack()] = 0.0;
    Ok((v, a))
}

/// Full Newton-Raphson in polar coordinates with a dense Jacobian rebuilt each iteration.
///
/// `initial_guess` is used only when `settings.warm_start` is set. Failure to
/// reach the tolerance within `max_iterations` yields `converged = false`
/// rather than an error.
pub fn solve_newton_raphson(
    network: &Network,
    p: &[f64],
    q: &[f64],
    initial_guess: Option<(&[f64], &[f64])>,
    settings: &SolverSettings,
) -> Result<VoltageSolution, SolverError> {
    settings.validate()?;
    check_loads(network, p, q)?;
    let (mut v, mut a) = starting_point(network, initial_guess, settings)?;

    let y = network.admittance();
    let pq = network.pq_buses();
    let m = pq.len();
    let s_spec = specified_injection(network, p, q);

    let mut iterations = 0;
    loop {
        let vc = phasors(&v, &a);
        let mis = mismatch_from(network, &s_spec, &vc);
        let norm = mis.max_abs();
        if norm.is_finite() && norm <= settings.mismatch_tolerance {
            return Ok(VoltageSolution { v, a, iterations, provenance: Provenance::Solver, converged: true });
        }
        if iterations >= settings.max_iterations || !norm.is_finite() {
            return Ok(VoltageSolution { v, a, iterations, provenance: Provenance::Solver, converged: false });
        }
        iterations += 1;

        // dS/dθ = j diag(V) conj(diag(I) - Y diag(V))
        // dS/d|V| = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        let current = bus_currents(y, &vc);
        let unit: Vec<Complex64> = vc.iter().map(|x| x / x.norm()).collect();
        let mut jac = DMatrix::<f64>::zeros(2 * m, 2 * m);
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pq.iter().enumerate() {
                let yik = y[(i, k)];
                let mut ds_dth = -Complex64::i() * vc[i] * (yik * vc[k]).conj();
                let mut ds_dvm = vc[i] * (yik * unit[k]).conj();
                if i == k {
                    ds_dth += Complex64::i() * vc[i] * current[i].conj();
                    ds_dvm += current[i].conj() * unit[i];
                }
                jac[(r, c)] = ds_dth.re;
                jac[(r, m + c)] = ds_dvm.re;
                jac[(m + r, c)] = ds_dth.im;
                jac[(m + r, m + c)] = ds_dvm.im;
            }
        }
        // Residual is S_spec - S_calc, so J dx = residual.
        let rhs = DVector::from_iterator(
            2 * m,
            pq.iter().map(|&i| mis.p[i]).chain(pq.iter().map(|&i| mis.q[i])),
        );
        let dx = jac.lu().solve(&rhs).ok_or(SolverError::SingularJacobian { iteration: iterations })?;
        if dx.iter().any(|x| !x.is_finite()) {
            return Err(SolverError::SingularJacobian { iteration: iterations });
        }
        for (r, &i) in pq.iter().enumerate() {
            a[i] += dx[r];
            v[i] += dx[m + r];
        }
    }
}

/// Gauss-Seidel power flow, used as an independent cross-check of NR.
///
/// Each sweep updates PQ bus voltages in index order from
/// `V_i = (conj(S_i / V_i) - sum_{j != i} Y_ij V_j) / Y_ii`. Always flat-starts.
pub fn solve_gauss_seidel(
    network: &Network,
    p: &[f64],
    q: &[f64],
    settings: &SolverSettings,
) -> Result<VoltageSolution, SolverError> {
    settings.validate()?;
    check_loads(network, p, q)?;
    let n = network.n_bus();
    let y = network.admittance();
    let s_spec = specified_injection(network, p, q);
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && y[(i, j)].norm() != 0.0).collect())
        .collect();
    let pq = network.pq_buses();

    let mut vc = vec![Complex64::new(1.0, 0.0); n];
    let mut sweeps = 0;
    // Checking the mismatch costs about as much as a sweep; do it every few sweeps.
    const CHECK_EVERY: usize = 8;
    let converged = loop {
        if sweeps % CHECK_EVERY == 0 || sweeps >= settings.max_iterations {
            let norm = mismatch_from(network, &s_spec, &vc).max_abs();
            if !norm.is_finite() {
                break false;
            }
            if norm <= settings.mismatch_tolerance {
                break true;
            }
            if sweeps >= settings.max_iterations {
                break false;
            }
        }
        sweeps += 1;
        for &i in &pq {
            let coupled: Complex64 = neighbors[i].iter().map(|&j| y[(i, j)] * vc[j]).sum();
            let yii = y[(i, i)];
            if yii.norm() == 0.0 {
                return Err(SolverError::SingularJacobian { iteration: sweeps });
            }
            vc[i] = ((s_spec[i] / vc[i]).conj() - coupled) / yii;
        }
    };
    let v = vc.iter().map(|x| x.norm()).collect();
    let mut a: Vec<f64> = vc.iter().map(|x| x.arg()).collect();
    a[network.slack()] = 0.0;
    Ok(VoltageSolution { v, a, iterations: sweeps, provenance: Provenance::Solver, converged })
}
