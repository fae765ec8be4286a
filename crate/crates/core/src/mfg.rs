//! Finite-horizon recovery mean field game.
//!
//! After travel the population re-solves a game on `[0, T]` with zero
//! terminal value. Each fixed-point iterate runs one explicit backward sweep
//! for the value, extracts the control slice by slice, and runs one explicit
//! forward sweep for the density.

use log::{debug, info};

use crate::ergodic::ErgodicSolution;
use crate::error::{Error, Result};
use crate::grid::{rotate_field, ModelParams, PeriodicGrid};
use crate::metrics::{circular_w2, recovery_report, ControlSource, RecoveryReport, Thresholds};
use crate::operators::{
    empty_operator, extract_control_into, fill_operator, interaction_cost_into, sun_cost, Scheme,
};
use crate::ergodic::INITIAL_CONTROL_BOUND;
use crate::recovery::{require_converged, resolve_step, rotation_from_home};

/// Default horizon: 100 days.
pub const DEFAULT_MFG_HORIZON_HOURS: f64 = 2400.0;

const MAX_CONTROL_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfgOptions {
    pub horizon_hours: f64,
    pub eps: f64,
    pub max_iter: usize,
    /// Blend factor between successive iterates; 1 is plain substitution.
    pub relaxation: f64,
    pub sample_hours: f64,
    pub dt: Option<f64>,
    pub scheme: Option<Scheme>,
    pub initial_bound: f64,
}

impl Default for MfgOptions {
    fn default() -> Self {
        Self {
            horizon_hours: DEFAULT_MFG_HORIZON_HOURS,
            eps: 1e-5,
            max_iter: 500,
            relaxation: 1.0,
            sample_hours: 1.0,
            dt: None,
            scheme: None,
            initial_bound: INITIAL_CONTROL_BOUND,
        }
    }
}

/// Sampled solution of the recovery game.
#[derive(Debug, Clone, PartialEq)]
pub struct MfgPath {
    pub dt: f64,
    pub steps: usize,
    pub steps_per_sample: usize,
    pub times: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub p: f64,
    pub horizon_hours: f64,
    pub iterations: usize,
    pub converged: bool,
    pub control_bound: f64,
    /// Last measured `max_i ℓ₂` changes of the density and the control.
    pub last_change: (f64, f64),
}

/// Full-resolution state of the fixed-point iteration, slice-major.
struct Sweeps {
    n: usize,
    slices: usize,
    density: Vec<f64>,
    control: Vec<f64>,
    sampled_values: Vec<Vec<f64>>,
}

impl Sweeps {
    fn row(v: &[f64], n: usize, i: usize) -> &[f64] {
        &v[i * n..(i + 1) * n]
    }
}

enum Attempt {
    Done(Sweeps, usize, bool, (f64, f64)),
    BoundExceeded,
}

pub fn solve_recovery_mfg(
    ergodic: &ErgodicSolution,
    p: f64,
    opts: &MfgOptions,
) -> Result<MfgPath> {
    require_converged(ergodic)?;
    if !(opts.horizon_hours > 0.0) {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    if !(opts.eps > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidParameter("need eps > 0 and max_iter >= 1".into()));
    }
    if !(opts.relaxation > 0.0 && opts.relaxation <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "relaxation {} outside (0, 1]",
            opts.relaxation
        )));
    }
    let grid = ergodic.grid();
    rotation_from_home(&grid, &ergodic.params, p)?;
    let params = ergodic.params.with_time_zone(p);
    let scheme = opts.scheme.unwrap_or(ergodic.scheme);
    let samples = (opts.horizon_hours / opts.sample_hours - 1e-9).ceil() as usize;

    let mut bound = opts.initial_bound;
    loop {
        let (dt, per_sample) = resolve_step(&grid, &params, bound, opts.sample_hours, opts.dt)?;
        let slices = samples * per_sample + 1;
        info!(
            "recovery game p={:.4} T={} h: dt={dt:.5} h, {slices} slices, bound {bound}",
            params.time_zone, opts.horizon_hours
        );
        match iterate(&grid, &params, ergodic, scheme, opts, dt, slices, per_sample, bound)? {
            Attempt::BoundExceeded => {
                bound *= 2.0;
                if bound > MAX_CONTROL_BOUND {
                    return Err(Error::CflViolation { dt, bound });
                }
                info!("control exceeded the CFL bound, restarting with bound {bound}");
            }
            Attempt::Done(sweeps, iterations, converged, last_change) => {
                let n = sweeps.n;
                let pick = |v: &[f64]| -> Vec<Vec<f64>> {
                    (0..=samples)
                        .map(|s| Sweeps::row(v, n, s * per_sample).to_vec())
                        .collect()
                };
                return Ok(MfgPath {
                    dt,
                    steps: sweeps.slices - 1,
                    steps_per_sample: per_sample,
                    times: (0..=samples).map(|s| s as f64 * opts.sample_hours).collect(),
                    densities: pick(&sweeps.density),
                    controls: pick(&sweeps.control),
                    values: sweeps.sampled_values,
                    p: params.time_zone,
                    horizon_hours: samples as f64 * opts.sample_hours,
                    iterations,
                    converged,
                    control_bound: bound,
                    last_change,
                });
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    grid: &PeriodicGrid,
    params: &ModelParams,
    ergodic: &ErgodicSolution,
    scheme: Scheme,
    opts: &MfgOptions,
    dt: f64,
    slices: usize,
    per_sample: usize,
    bound: f64,
) -> Result<Attempt> {
    let n = grid.n();
    let h = grid.dphi();
    let (detuning, sigma) = (params.detuning(), params.sigma);
    let (k_w, f_w) = (params.interaction_weight, params.sun_weight);
    let theta = opts.relaxation;
    let sun = sun_cost(grid, params.time_zone);
    let mu0 = ergodic.mu.as_slice();

    let mut density: Vec<f64> = (0..slices).flat_map(|_| mu0.iter().copied()).collect();
    let mut control = vec![0.0; slices * n];
    let mut sampled_values = vec![Vec::new(); (slices - 1) / per_sample + 1];

    let mut op = empty_operator(n, scheme);
    let mut u = vec![0.0; n];
    let mut u_prev = vec![0.0; n];
    let mut lu = vec![0.0; n];
    let mut cbar = vec![0.0; n];
    let mut fresh = vec![0.0; n];
    let mut state = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut flux = vec![0.0; n];

    let mut converged = false;
    let mut change = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    for k in 0..opts.max_iter {
        iterations = k + 1;
        // backward sweep: slice i uses the previous iterate at slice i + 1,
        // whose control is replaced once it has been consumed
        u.iter_mut().for_each(|v| *v = 0.0);
        sampled_values[(slices - 1) / per_sample] = u.clone();
        let mut d_beta = 0.0f64;
        let mut peak = 0.0f64;
        for i in (0..slices - 1).rev() {
            let above = (i + 1) * n..(i + 2) * n;
            fill_operator(grid, detuning, sigma, &control[above.clone()], &mut op);
            op.apply_into(&u, &mut lu);
            interaction_cost_into(grid, &density[above.clone()], &mut cbar);
            std::mem::swap(&mut u, &mut u_prev);
            let beta_above = &control[above.clone()];
            for j in 0..n {
                let b = beta_above[j];
                u[j] = u_prev[j] + dt * (lu[j] + 0.5 * b * b + k_w * cbar[j] + f_w * sun[j]);
            }
            // u_prev now holds the value at slice i + 1
            extract_control_into(&u_prev, grid, detuning, scheme, &mut fresh);
            d_beta = d_beta.max(blend_into(&mut control[above], &fresh, theta, &mut peak));
            if i % per_sample == 0 {
                sampled_values[i / per_sample] = u.clone();
            }
        }
        extract_control_into(&u, grid, detuning, scheme, &mut fresh);
        d_beta = d_beta.max(blend_into(&mut control[0..n], &fresh, theta, &mut peak));
        if peak > bound && opts.dt.is_none() {
            return Ok(Attempt::BoundExceeded);
        }
        if peak > bound {
            crate::operators::check_dt(dt, crate::operators::cfl_dt(grid, params, peak))?;
        }

        // forward sweep from the home density
        state.copy_from_slice(mu0);
        let mut d_m = 0.0f64;
        for i in 0..slices - 1 {
            fill_operator(grid, detuning, sigma, &control[i * n..(i + 1) * n], &mut op);
            op.apply_transpose_into(&state, &mut flux);
            for j in 0..n {
                next[j] = state[j] + dt * flux[j];
            }
            std::mem::swap(&mut state, &mut next);
            let row = &mut density[(i + 1) * n..(i + 2) * n];
            let mut sq = 0.0;
            for j in 0..n {
                let blended = row[j] + theta * (state[j] - row[j]);
                sq += ((blended - row[j]) * h).powi(2);
                row[j] = blended;
            }
            d_m = d_m.max(sq.sqrt());
        }
        change = (d_m, d_beta);
        debug!("recovery game iteration {k}: dM={d_m:.3e} dbeta={d_beta:.3e}");
        if k % 25 == 0 {
            info!("recovery game iteration {k}: dM={d_m:.3e} dbeta={d_beta:.3e}");
        }
        if !(d_m.is_finite() && d_beta.is_finite()) {
            break;
        }
        if d_m < opts.eps && d_beta < opts.eps {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "recovery game stopped after {iterations} iterations without converging \
             (dM={:.3e}, dbeta={:.3e})",
            change.0,
            change.1
        );
    }
    Ok(Attempt::Done(
        Sweeps {
            n,
            slices,
            density,
            control,
            sampled_values,
        },
        iterations,
        converged,
        change,
    ))
}

/// `old ← old + θ (fresh - old)`; returns the ℓ₂ change and tracks `max |·|`.
fn blend_into(old: &mut [f64], fresh: &[f64], theta: f64, peak: &mut f64) -> f64 {
    let mut sq = 0.0;
    for (o, f) in old.iter_mut().zip(fresh) {
        let b = *o + theta * (f - *o);
        sq += (b - *o) * (b - *o);
        *o = b;
        *peak = peak.max(b.abs());
    }
    sq.sqrt()
}

/// Recovery times and cost integrals of a recovery-game path.
pub fn evaluate_mfg(
    ergodic: &ErgodicSolution,
    path: &MfgPath,
    thresholds: Thresholds,
) -> Result<RecoveryReport> {
    let grid = ergodic.grid();
    let home = rotate_field(&ergodic.mu, -grid.rotation_steps(ergodic.params.time_zone)?);
    recovery_report(
        &path.times,
        &path.densities,
        ControlSource::PerSample(&path.controls),
        &home,
        &ergodic.params.with_time_zone(path.p),
        &grid,
        thresholds,
    )
}

/// Distance from the stationary density over the middle half of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StationarityReport {
    pub window_start_hours: f64,
    pub window_end_hours: f64,
    pub min_w2: f64,
    pub max_w2: f64,
    pub eps_w: f64,
}

impl StationarityReport {
    /// Some sample in the window drifts at least `eps_w` away.
    pub fn violated_somewhere(&self) -> bool {
        self.max_w2 >= self.eps_w
    }

    /// Every sample in the window is at least `eps_w` away.
    pub fn violated_throughout(&self) -> bool {
        self.min_w2 >= self.eps_w
    }
}

/// Compares a stay-at-home recovery-game path with the stationary density
/// over `t ∈ [T/4, 3T/4]`.
pub fn stationarity_check(
    path: &MfgPath,
    ergodic: &ErgodicSolution,
    eps_w: f64,
) -> Result<StationarityReport> {
    let grid = ergodic.grid();
    let target = rotate_field(
        &ergodic.mu,
        grid.rotation_steps(crate::grid::wrap_angle(path.p - ergodic.params.time_zone))?,
    );
    let (lo, hi) = (path.horizon_hours / 4.0, 3.0 * path.horizon_hours / 4.0);
    let mut min_w2 = f64::INFINITY;
    let mut max_w2 = 0.0f64;
    for (t, m) in path.times.iter().zip(&path.densities) {
        if *t + 1e-9 < lo || *t - 1e-9 > hi {
            continue;
        }
        let w = circular_w2(m, &target, &grid)?;
        min_w2 = min_w2.min(w);
        max_w2 = max_w2.max(w);
    }
    Ok(StationarityReport {
        window_start_hours: lo,
        window_end_hours: hi,
        min_w2,
        max_w2,
        eps_w,
    })
}
