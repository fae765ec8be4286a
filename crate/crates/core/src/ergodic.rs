//! Stationary (ergodic) mean field game on the periodic grid.
//!
//! Two iterative solvers are provided: alternating linear solves for the
//! value function and the invariant density, and an explicit relaxation in
//! artificial time. Both start from the uniform density with zero control.

use std::fmt;
use std::str::FromStr;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ControlField, Density, ModelParams, PeriodicGrid, ValueField};
use crate::metrics::{circular_w2_below, circular_w2_clamped, order_parameter};
use crate::operators::{
    build_transport_operator, cfl_dt, check_dt, empty_operator, extract_control_into,
    fill_operator, interaction_cost, interaction_cost_into, sun_cost, Scheme,
};

/// Initial guess for the control bound used to size explicit steps.
pub const INITIAL_CONTROL_BOUND: f64 = 0.25;

/// Largest control bound tried before giving up on the CFL search.
const MAX_CONTROL_BOUND: f64 = 1e6;

/// `|ψ|` must stay below this for a converged density to count as valid.
pub const MAX_MEAN_PHASE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Alternate a bordered linear solve for `(U, Λ)` with a least-squares
    /// solve for the invariant density.
    Alternating,
    /// Explicit forward iteration in artificial time.
    ArtificialTime,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Alternating => "alternating",
            Method::ArtificialTime => "artificial-time",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "method1" | "alternating" => Ok(Method::Alternating),
            "2" | "method2" | "artificial-time" | "artificial_time" => Ok(Method::ArtificialTime),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Why a converged iterate was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum InvalidReason {
    /// Mean phase too far from the sun phase.
    MeanPhase { psi: f64 },
    /// Density dips below the negativity tolerance.
    Negativity { min: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum OutcomeClass {
    Converged,
    InvalidSolution(InvalidReason),
    NotConverged,
}

impl OutcomeClass {
    pub fn is_converged(&self) -> bool {
        matches!(self, OutcomeClass::Converged)
    }

    pub fn label(&self) -> &'static str {
        match self {
            OutcomeClass::Converged => "converged",
            OutcomeClass::InvalidSolution(_) => "invalid",
            OutcomeClass::NotConverged => "not-converged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub eps: f64,
    pub max_iter: usize,
    /// Explicit step override for the artificial-time method. When unset the
    /// step follows the CFL bound, doubling the control bound on violation.
    pub dt: Option<f64>,
    pub initial_bound: f64,
}

impl SolverOptions {
    pub fn for_method(method: Method) -> Self {
        Self {
            eps: 1e-5,
            max_iter: match method {
                Method::Alternating => 1_000,
                Method::ArtificialTime => 1_000_000,
            },
            dt: None,
            initial_bound: INITIAL_CONTROL_BOUND,
        }
    }
}

/// Discrete stationary solution `(M, U, Λ, β)` and how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicSolution {
    pub params: ModelParams,
    pub n: usize,
    pub mu: Density,
    pub value: ValueField,
    pub lambda: f64,
    pub beta: ControlField,
    pub scheme: Scheme,
    pub method: Method,
    pub iterations: usize,
    /// Whether the solver's stopping rule was met.
    pub criteria_met: bool,
    pub outcome: OutcomeClass,
    /// Control bound `A` in force at the end of the run (explicit method).
    pub control_bound: f64,
}

impl ErgodicSolution {
    pub fn grid(&self) -> PeriodicGrid {
        PeriodicGrid::new(self.n).expect("solution grid was validated on construction")
    }

    /// Mean phase `arg z` of the density, 0 when `|z|` vanishes.
    pub fn mean_phase(&self) -> f64 {
        mean_phase(&self.mu, &self.grid())
    }

    /// Sup-norm residuals of the discrete HJB and stationary Fokker-Planck
    /// equations at the stored `(M, U, Λ, β)`.
    pub fn fixed_point_residuals(&self) -> (f64, f64) {
        let grid = self.grid();
        let op = build_transport_operator(&grid, &self.params, &self.beta, self.scheme);
        let lu = op.apply(&self.value);
        let cbar = interaction_cost(&grid, &self.mu);
        let sun = sun_cost(&grid, self.params.time_zone);
        let hjb = (0..self.n)
            .map(|j| {
                (lu[j] + 0.5 * self.beta[j] * self.beta[j]
                    + self.params.interaction_weight * cbar[j]
                    + self.params.sun_weight * sun[j]
                    - self.lambda)
                    .abs()
            })
            .fold(0.0, f64::max);
        let fp = op.apply_transpose(&self.mu).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (hjb, fp)
    }
}

fn mean_phase(mu: &[f64], grid: &PeriodicGrid) -> f64 {
    let z = order_parameter(mu, grid);
    if z.norm() < 1e-8 {
        0.0
    } else {
        z.arg()
    }
}

/// Converged only if the stopping rule was met, the mean phase is within
/// 0.1 rad of zero, and no density entry is below `-eps`.
pub fn classify_outcome(
    mu: &[f64],
    grid: &PeriodicGrid,
    criteria_met: bool,
    eps: f64,
) -> OutcomeClass {
    if !criteria_met {
        return OutcomeClass::NotConverged;
    }
    let psi = mean_phase(mu, grid);
    if psi.abs() >= MAX_MEAN_PHASE {
        return OutcomeClass::InvalidSolution(InvalidReason::MeanPhase { psi });
    }
    let min = mu.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= -eps {
        return OutcomeClass::InvalidSolution(InvalidReason::Negativity { min });
    }
    OutcomeClass::Converged
}

/// `Λ = Σ_j [½β_j² + K c̄_j + F c_sun,j] M_j dphi`.
pub fn ergodic_average_cost(
    mu: &[f64],
    beta: &[f64],
    params: &ModelParams,
    grid: &PeriodicGrid,
) -> f64 {
    let cbar = interaction_cost(grid, mu);
    let sun = sun_cost(grid, params.time_zone);
    (0..grid.n())
        .map(|j| {
            (0.5 * beta[j] * beta[j]
                + params.interaction_weight * cbar[j]
                + params.sun_weight * sun[j])
                * mu[j]
        })
        .sum::<f64>()
        * grid.dphi()
}

/// Dispatches to the requested method.
pub fn solve(
    grid: &PeriodicGrid,
    params: &ModelParams,
    scheme: Scheme,
    method: Method,
    opts: &SolverOptions,
) -> Result<ErgodicSolution> {
    match method {
        Method::Alternating => solve_alternating(grid, params, scheme, opts),
        Method::ArtificialTime => solve_artificial_time(grid, params, scheme, opts),
    }
}

fn check_inputs(params: &ModelParams, opts: &SolverOptions) -> Result<()> {
    params.validate()?;
    if !(opts.eps > 0.0) {
        return Err(Error::InvalidParameter("eps must be positive".into()));
    }
    if opts.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
    }
    Ok(())
}

/// Value step: solves `L_β U - Λ = -½β² - K c̄(M) - F c_sun`, `Σ U = 0`.
fn solve_value(
    grid: &PeriodicGrid,
    params: &ModelParams,
    scheme: Scheme,
    mu: &[f64],
    beta: &[f64],
    sun: &[f64],
    iteration: usize,
) -> Result<(Vec<f64>, f64)> {
    let n = grid.n();
    let op = build_transport_operator(grid, params, beta, scheme);
    let cbar = interaction_cost(grid, mu);
    let mut a = DMatrix::zeros(n + 1, n + 1);
    a.view_mut((0, 0), (n, n)).copy_from(&op.to_dense());
    let mut rhs = DVector::zeros(n + 1);
    for j in 0..n {
        a[(j, n)] = -1.0;
        a[(n, j)] = 1.0;
        rhs[j] = -0.5 * beta[j] * beta[j]
            - params.interaction_weight * cbar[j]
            - params.sun_weight * sun[j];
    }
    let x = a
        .lu()
        .solve(&rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or(Error::SingularSystem { iteration })?;
    Ok((x.as_slice()[..n].to_vec(), x[n]))
}

/// Density step: least-squares solution of `Lᵀ M = 0`, `Σ M dphi = 1`.
/// Returns the density and the residual norm of the overdetermined system.
fn solve_density(
    grid: &PeriodicGrid,
    params: &ModelParams,
    scheme: Scheme,
    beta: &[f64],
    iteration: usize,
) -> Result<(Vec<f64>, f64)> {
    let n = grid.n();
    let op = build_transport_operator(grid, params, beta, scheme);
    let mut a = DMatrix::zeros(n + 1, n);
    a.view_mut((0, 0), (n, n)).copy_from(&op.to_dense().transpose());
    for j in 0..n {
        a[(n, j)] = grid.dphi();
    }
    let mut b = DVector::zeros(n + 1);
    b[n] = 1.0;
    let qr = a.clone().qr();
    let qtb = qr.q().transpose() * &b;
    let m = qr
        .r()
        .solve_upper_triangular(&qtb)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or(Error::SingularSystem { iteration })?;
    let residual = (&a * &m - &b).norm();
    Ok((m.as_slice().to_vec(), residual))
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Alternating linear solves.
///
/// Iteration `k` solves for `(U^k, Λ^k)` given `(M^k, β^k)`, extracts
/// `β^{k+1}` and solves for `M^{k+1}`. The run stops once successive
/// densities are within `eps` in `W₂`, successive controls and ergodic
/// costs within `eps`, and the density residual below `eps`.
pub fn solve_alternating(
    grid: &PeriodicGrid,
    params: &ModelParams,
    scheme: Scheme,
    opts: &SolverOptions,
) -> Result<ErgodicSolution> {
    check_inputs(params, opts)?;
    let n = grid.n();
    let sun = sun_cost(grid, params.time_zone);
    let detuning = params.detuning();

    let mut mu = Density::uniform(grid).into_inner();
    let mut beta = vec![0.0; n];
    let mut prev: Option<(Vec<f64>, Vec<f64>, f64, f64)> = None; // (M, β, Λ, ε) of the previous iterate
    let mut criteria_met = false;
    let mut value = vec![0.0; n];
    let mut lambda = 0.0;
    let mut iterations = 0;

    for k in 0..opts.max_iter {
        iterations = k + 1;
        let (u, lam) = solve_value(grid, params, scheme, &mu, &beta, &sun, k)?;
        value = u;
        lambda = lam;

        if let Some((mu_prev, beta_prev, lambda_prev, residual)) = &prev {
            let w2 = circular_w2_clamped(mu_prev, &mu, grid)?;
            let db = l2_diff(beta_prev, &beta);
            let dl = (lambda_prev - lambda).abs();
            debug!("alternating k={k} w2={w2:.3e} dbeta={db:.3e} dlambda={dl:.3e} res={residual:.3e}");
            if w2 < opts.eps && db < opts.eps && dl < opts.eps && *residual < opts.eps {
                criteria_met = true;
                break;
            }
        }
        if k + 1 == opts.max_iter {
            break;
        }

        let mut beta_next = vec![0.0; n];
        extract_control_into(&value, grid, detuning, scheme, &mut beta_next);
        let (mu_next, residual) = solve_density(grid, params, scheme, &beta_next, k)?;
        let old_mu = std::mem::replace(&mut mu, mu_next);
        let old_beta = std::mem::replace(&mut beta, beta_next);
        prev = Some((old_mu, old_beta, lambda, residual));
    }

    let outcome = classify_outcome(&mu, grid, criteria_met, opts.eps);
    Ok(ErgodicSolution {
        params: *params,
        n,
        mu: Density::from_values(mu),
        value: ValueField::from_values(value).centered(),
        lambda,
        beta: ControlField::from_values(beta),
        scheme,
        method: Method::Alternating,
        iterations,
        criteria_met,
        outcome,
        control_bound: f64::NAN,
    })
}

enum Relaxation {
    Finished(ErgodicSolution),
    BoundExceeded,
}

/// Explicit relaxation in artificial time.
///
/// `U ← U + dt [L_β U + ½β² + K c̄(M) + F c_sun]`, then `β ← β(U)`, then
/// `M ← M + dt L_βᵀ M`. Stops when successive densities are within `eps` in
/// `W₂` and successive controls within `eps` in `ℓ₂`. Restarts with a doubled
/// control bound whenever `|β|` outgrows the bound used for the step size.
pub fn solve_artificial_time(
    grid: &PeriodicGrid,
    params: &ModelParams,
    scheme: Scheme,
    opts: &SolverOptions,
) -> Result<ErgodicSolution> {
    check_inputs(params, opts)?;
    let mut bound = opts.initial_bound.max(0.0);
    loop {
        let dt = match opts.dt {
            Some(dt) => {
                check_dt(dt, cfl_dt(grid, params, bound))?;
                dt
            }
            None => cfl_dt(grid, params, bound),
        };
        match relax(grid, params, scheme, opts, dt, bound)? {
            Relaxation::Finished(sol) => return Ok(sol),
            Relaxation::BoundExceeded => {
                bound *= 2.0;
                if bound > MAX_CONTROL_BOUND {
                    return Err(Error::CflViolation {
                        dt,
                        bound: cfl_dt(grid, params, bound),
                    });
                }
                debug!("artificial-time: control bound raised to {bound}");
            }
        }
    }
}

fn relax(
    grid: &PeriodicGrid,
    params: &ModelParams,
    scheme: Scheme,
    opts: &SolverOptions,
    dt: f64,
    bound: f64,
) -> Result<Relaxation> {
    let n = grid.n();
    let sun = sun_cost(grid, params.time_zone);
    let (detuning, sigma) = (params.detuning(), params.sigma);
    let (k_w, f_w) = (params.interaction_weight, params.sun_weight);

    let mut mu = Density::uniform(grid).into_inner();
    let mut mu_next = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut u_next = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut beta_next = vec![0.0; n];
    let mut lu = vec![0.0; n];
    let mut cbar = vec![0.0; n];
    let mut flux = vec![0.0; n];
    let mut op = empty_operator(n, scheme);

    let mut criteria_met = false;
    let mut iterations = 0;
    for k in 0..opts.max_iter {
        iterations = k + 1;
        fill_operator(grid, detuning, sigma, &beta, &mut op);
        op.apply_into(&u, &mut lu);
        interaction_cost_into(grid, &mu, &mut cbar);
        for j in 0..n {
            u_next[j] = u[j]
                + dt * (lu[j] + 0.5 * beta[j] * beta[j] + k_w * cbar[j] + f_w * sun[j]);
        }
        extract_control_into(&u_next, grid, detuning, scheme, &mut beta_next);
        let peak = beta_next.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        if !peak.is_finite() {
            break;
        }
        if peak > bound {
            if opts.dt.is_none() || check_dt(dt, cfl_dt(grid, params, 2.0 * bound)).is_ok() {
                return Ok(Relaxation::BoundExceeded);
            }
            return Err(Error::CflViolation {
                dt,
                bound: cfl_dt(grid, params, peak),
            });
        }
        fill_operator(grid, detuning, sigma, &beta_next, &mut op);
        op.apply_transpose_into(&mu, &mut flux);
        for j in 0..n {
            mu_next[j] = mu[j] + dt * flux[j];
        }

        let db = l2_diff(&beta, &beta_next);
        std::mem::swap(&mut u, &mut u_next);
        std::mem::swap(&mut beta, &mut beta_next);
        std::mem::swap(&mut mu, &mut mu_next);
        // the cheap control test first, transport only when it passes
        if db < opts.eps && circular_w2_below(&mu_next, &mu, grid, opts.eps)? {
            criteria_met = true;
            break;
        }
        if k % 100_000 == 0 {
            debug!("artificial-time k={k} dbeta={db:.3e}");
        }
    }

    let lambda = ergodic_average_cost(&mu, &beta, params, grid);
    let outcome = classify_outcome(&mu, grid, criteria_met, opts.eps);
    Ok(Relaxation::Finished(ErgodicSolution {
        params: *params,
        n,
        mu: Density::from_values(mu),
        value: ValueField::from_values(u).centered(),
        lambda,
        beta: ControlField::from_values(beta),
        scheme,
        method: Method::ArtificialTime,
        iterations,
        criteria_met,
        outcome,
        control_bound: bound,
    }))
}
