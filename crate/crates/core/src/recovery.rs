//! Jet-lag recovery under the stationary control learned at home.
//!
//! Travel is instantaneous: the population starts from the home density and
//! follows the home control shifted to the new time zone, while the density
//! relaxes towards the shifted stationary density.

use log::debug;

use crate::ergodic::ErgodicSolution;
use crate::error::{Error, Result};
use crate::grid::{rotate_field, wrap_angle, ControlField, ModelParams, PeriodicGrid};
use crate::metrics::{recovery_report, ControlSource, RecoveryReport, Thresholds};
use crate::operators::{build_transport_operator, cfl_dt, check_dt, Scheme};

/// Default simulated horizon: 20 days.
pub const DEFAULT_HORIZON_HOURS: f64 = 480.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryOptions {
    pub horizon_hours: f64,
    /// Spacing of stored slices. The time step is chosen to divide it.
    pub sample_hours: f64,
    /// Step override; must respect the CFL bound and divide `sample_hours`.
    pub dt: Option<f64>,
    /// Operator scheme; defaults to the scheme of the stationary solution.
    pub scheme: Option<Scheme>,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            horizon_hours: DEFAULT_HORIZON_HOURS,
            sample_hours: 1.0,
            dt: None,
            scheme: None,
        }
    }
}

/// Sampled density path of a recovery run.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPath {
    pub dt: f64,
    /// Total number of explicit steps.
    pub steps: usize,
    pub steps_per_sample: usize,
    pub times: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
    /// Destination time zone (radians).
    pub p: f64,
    pub beta_p: ControlField,
    pub scheme: Scheme,
}

/// Largest step not above the CFL bound that divides `sample_hours`.
pub fn sampled_dt(
    grid: &PeriodicGrid,
    params: &ModelParams,
    bound: f64,
    sample_hours: f64,
) -> (f64, usize) {
    let limit = cfl_dt(grid, params, bound);
    let steps = (sample_hours / limit).ceil().max(1.0) as usize;
    (sample_hours / steps as f64, steps)
}

/// Resolves a step override or the default CFL step for a sampling interval.
pub(crate) fn resolve_step(
    grid: &PeriodicGrid,
    params: &ModelParams,
    bound: f64,
    sample_hours: f64,
    dt: Option<f64>,
) -> Result<(f64, usize)> {
    if !(sample_hours > 0.0) {
        return Err(Error::InvalidParameter("sample interval must be positive".into()));
    }
    match dt {
        None => Ok(sampled_dt(grid, params, bound, sample_hours)),
        Some(dt) => {
            check_dt(dt, cfl_dt(grid, params, bound))?;
            let k = (sample_hours / dt).round();
            if k < 1.0 || (k * dt - sample_hours).abs() > 1e-9 * sample_hours {
                return Err(Error::InvalidParameter(format!(
                    "step {dt} does not divide the sample interval {sample_hours}"
                )));
            }
            Ok((dt, k as usize))
        }
    }
}

/// Number of grid points for a rotation from the home zone to `p`.
pub(crate) fn rotation_from_home(
    grid: &PeriodicGrid,
    home: &ModelParams,
    p: f64,
) -> Result<isize> {
    grid.rotation_steps(wrap_angle(p - home.time_zone))
}

pub(crate) fn require_converged(ergodic: &ErgodicSolution) -> Result<()> {
    if !ergodic.outcome.is_converged() {
        return Err(Error::UnusableSolution(format!(
            "stationary solution is {}",
            ergodic.outcome.label()
        )));
    }
    Ok(())
}

/// Forward Euler on `∂ₜM = L_{β^p}ᵀ M` from the home density, with the home
/// control rotated to the destination time zone `p`.
pub fn run_recovery(
    ergodic: &ErgodicSolution,
    p: f64,
    opts: &RecoveryOptions,
) -> Result<DensityPath> {
    require_converged(ergodic)?;
    if !(opts.horizon_hours > 0.0) {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let grid = ergodic.grid();
    let r = rotation_from_home(&grid, &ergodic.params, p)?;
    let params = ergodic.params.with_time_zone(p);
    let scheme = opts.scheme.unwrap_or(ergodic.scheme);
    let beta_p = rotate_field(&ergodic.beta, r);
    let (dt, per_sample) = resolve_step(
        &grid,
        &params,
        ergodic.beta.max_abs(),
        opts.sample_hours,
        opts.dt,
    )?;
    let samples = (opts.horizon_hours / opts.sample_hours - 1e-9).ceil() as usize;
    debug!("recovery p={p:.4} dt={dt:.5} steps/sample={per_sample} samples={samples}");

    let op = build_transport_operator(&grid, &params, &beta_p, scheme);
    let mut m = ergodic.mu.as_slice().to_vec();
    let mut flux = vec![0.0; m.len()];
    let mut times = Vec::with_capacity(samples + 1);
    let mut densities = Vec::with_capacity(samples + 1);
    times.push(0.0);
    densities.push(m.clone());
    for s in 1..=samples {
        for _ in 0..per_sample {
            op.apply_transpose_into(&m, &mut flux);
            for (mj, fj) in m.iter_mut().zip(&flux) {
                *mj += dt * fj;
            }
        }
        times.push(s as f64 * opts.sample_hours);
        densities.push(m.clone());
    }
    Ok(DensityPath {
        dt,
        steps: samples * per_sample,
        steps_per_sample: per_sample,
        times,
        densities,
        p: params.time_zone,
        beta_p: ControlField::from_values(beta_p),
        scheme,
    })
}

/// Recovery times and cost integrals of a path produced by [`run_recovery`].
pub fn evaluate_recovery(
    ergodic: &ErgodicSolution,
    path: &DensityPath,
    thresholds: Thresholds,
) -> Result<RecoveryReport> {
    let grid = ergodic.grid();
    let home = rotate_field(&ergodic.mu, -grid.rotation_steps(ergodic.params.time_zone)?);
    recovery_report(
        &path.times,
        &path.densities,
        ControlSource::Fixed(&path.beta_p),
        &home,
        &ergodic.params.with_time_zone(path.p),
        &grid,
        thresholds,
    )
}
