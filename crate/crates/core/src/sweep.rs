//! One-parameter sensitivity sweeps over east/west trips.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::ergodic::{solve, ErgodicSolution};
use crate::error::{Error, Result};
use crate::metrics::RecoveryReport;
use crate::mfg::{evaluate_mfg, solve_recovery_mfg};
use crate::recovery::{evaluate_recovery, run_recovery};

/// Trip length used for sweeps when the base config stays at home.
pub const DEFAULT_SWEEP_HOURS: i32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepParam {
    /// Trip length in hours; east is `+value`, west is `-value`.
    P,
    Omega0,
    Sigma,
    K,
    F,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "p" | "p_hours" => Ok(SweepParam::P),
            "omega_0" => Ok(SweepParam::Omega0),
            "sigma" => Ok(SweepParam::Sigma),
            "K" => Ok(SweepParam::K),
            "F" => Ok(SweepParam::F),
            other => Err(Error::Config(format!(
                "cannot sweep `{other}`; choose one of p, omega_0, sigma, K, F"
            ))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::P => "p",
            SweepParam::Omega0 => "omega_0",
            SweepParam::Sigma => "sigma",
            SweepParam::K => "K",
            SweepParam::F => "F",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecoveryMode {
    Ergodic,
    Mfg,
}

impl FromStr for RecoveryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ergodic" => Ok(RecoveryMode::Ergodic),
            "mfg" => Ok(RecoveryMode::Mfg),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for RecoveryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecoveryMode::Ergodic => "ergodic",
            RecoveryMode::Mfg => "mfg",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub base: RunConfig,
    pub mode: RecoveryMode,
}

/// Metrics of one trip direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripMetrics {
    pub p_hours: i32,
    pub tau_w_hours: Option<f64>,
    pub tau_z_hours: Option<f64>,
    pub f_alpha: f64,
    pub f_osc: f64,
    pub f_sun: f64,
    pub f_total: f64,
    /// False when the recovery game stopped at its iteration cap.
    pub converged: bool,
}

impl TripMetrics {
    fn from_report(p_hours: i32, r: &RecoveryReport, converged: bool) -> Self {
        Self {
            p_hours,
            tau_w_hours: r.tau_w_hours,
            tau_z_hours: r.tau_z_hours,
            f_alpha: r.f_alpha_costhours,
            f_osc: r.f_osc_costhours,
            f_sun: r.f_sun_costhours,
            f_total: r.f_total_costhours,
            converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    /// `ok`, the stationary outcome label, or an error message.
    pub status: String,
    pub east: Option<TripMetrics>,
    pub west: Option<TripMetrics>,
}

/// Applies one swept value to a copy of the base config; returns it with
/// the trip length in hours.
pub fn point_config(spec: &SweepSpec, value: f64) -> Result<(RunConfig, i32)> {
    let mut cfg = spec.base.clone();
    let mut hours = if cfg.p_hours == 0 {
        DEFAULT_SWEEP_HOURS
    } else {
        cfg.p_hours.abs()
    };
    match spec.param {
        SweepParam::P => {
            if value.fract() != 0.0 || !(0.0..=12.0).contains(&value.abs()) {
                return Err(Error::Config(format!(
                    "trip sweep values must be whole hours in [-12, 12], got {value}"
                )));
            }
            hours = value as i32;
        }
        SweepParam::Omega0 => cfg.params.intrinsic_freq = value,
        SweepParam::Sigma => cfg.params.sigma = value,
        SweepParam::K => cfg.params.interaction_weight = value,
        SweepParam::F => cfg.params.sun_weight = value,
    }
    cfg.p_hours = hours;
    cfg.validate()?;
    Ok((cfg, hours))
}

/// Recovery metrics for a trip of `hours` time zones from a stationary
/// solution computed with `cfg`.
pub fn trip_metrics(
    ergodic: &ErgodicSolution,
    cfg: &RunConfig,
    mode: RecoveryMode,
    hours: i32,
) -> Result<TripMetrics> {
    let p = hours as f64 * crate::grid::SUN_FREQ;
    match mode {
        RecoveryMode::Ergodic => {
            let path = run_recovery(ergodic, p, &cfg.recovery_options())?;
            let r = evaluate_recovery(ergodic, &path, cfg.thresholds())?;
            Ok(TripMetrics::from_report(hours, &r, true))
        }
        RecoveryMode::Mfg => {
            let path = solve_recovery_mfg(ergodic, p, &cfg.mfg_options())?;
            let r = evaluate_mfg(ergodic, &path, cfg.thresholds())?;
            Ok(TripMetrics::from_report(hours, &r, path.converged))
        }
    }
}

fn run_point(spec: &SweepSpec, value: f64) -> SweepRow {
    let failed = |status: String| SweepRow {
        value,
        status,
        east: None,
        west: None,
    };
    let (cfg, hours) = match point_config(spec, value) {
        Ok(c) => c,
        Err(e) => return failed(format!("error: {e}")),
    };
    let grid = match cfg.grid() {
        Ok(g) => g,
        Err(e) => return failed(format!("error: {e}")),
    };
    let ergodic = match solve(&grid, &cfg.params, cfg.scheme, cfg.method, &cfg.solver_options()) {
        Ok(e) => e,
        Err(e) => return failed(format!("error: {e}")),
    };
    if !ergodic.outcome.is_converged() {
        return failed(ergodic.outcome.label().to_string());
    }
    let (east_h, west_h) = (hours.abs(), -hours.abs());
    match (
        trip_metrics(&ergodic, &cfg, spec.mode, east_h),
        trip_metrics(&ergodic, &cfg, spec.mode, west_h),
    ) {
        (Ok(east), Ok(west)) => SweepRow {
            value,
            status: "ok".into(),
            east: Some(east),
            west: Some(west),
        },
        (Err(e), _) | (_, Err(e)) => failed(format!("error: {e}")),
    }
}

/// Runs every point (in parallel), one row per value, sorted by value.
pub fn run_sweep(spec: &SweepSpec) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = spec
        .values
        .par_iter()
        .map(|&v| run_point(spec, v))
        .collect();
    rows.sort_by(|a, b| a.value.total_cmp(&b.value));
    rows
}

pub const SWEEP_COLUMNS: &[&str] = &[
    "value",
    "status",
    "tau_w_east_hours",
    "tau_w_west_hours",
    "tau_z_east_hours",
    "tau_z_west_hours",
    "f_alpha_east",
    "f_osc_east",
    "f_sun_east",
    "f_total_east",
    "f_alpha_west",
    "f_osc_west",
    "f_sun_west",
    "f_total_west",
];

/// CSV rendering. A time that never drops below its threshold is written
/// as `none`; metrics of failed points are written as `nan`.
pub fn sweep_records(rows: &[SweepRow]) -> Vec<Vec<String>> {
    let tau = |m: &Option<TripMetrics>, pick: fn(&TripMetrics) -> Option<f64>| match m {
        Some(m) => pick(m).map_or_else(|| "none".to_string(), |v| format!("{v}")),
        None => "nan".to_string(),
    };
    let cost = |m: &Option<TripMetrics>, pick: fn(&TripMetrics) -> f64| match m {
        Some(m) => format!("{}", pick(m)),
        None => "nan".to_string(),
    };
    rows.iter()
        .map(|r| {
            vec![
                format!("{}", r.value),
                r.status.replace(',', ";"),
                tau(&r.east, |m| m.tau_w_hours),
                tau(&r.west, |m| m.tau_w_hours),
                tau(&r.east, |m| m.tau_z_hours),
                tau(&r.west, |m| m.tau_z_hours),
                cost(&r.east, |m| m.f_alpha),
                cost(&r.east, |m| m.f_osc),
                cost(&r.east, |m| m.f_sun),
                cost(&r.east, |m| m.f_total),
                cost(&r.west, |m| m.f_alpha),
                cost(&r.west, |m| m.f_osc),
                cost(&r.west, |m| m.f_sun),
                cost(&r.west, |m| m.f_total),
            ]
        })
        .collect()
}

pub fn write_sweep_csv(path: &std::path::Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(SWEEP_COLUMNS).map_err(io)?;
    for rec in sweep_records(rows) {
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_base() -> RunConfig {
        // coarse grid: only the monotone scheme keeps trip densities positive
        RunConfig {
            n: 48,
            horizon_days: 2.0,
            scheme: crate::operators::Scheme::Monotone,
            ..RunConfig::default()
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("omega_0".parse::<SweepParam>().unwrap(), SweepParam::Omega0);
        assert_eq!("K".parse::<SweepParam>().unwrap(), SweepParam::K);
        assert!("k".parse::<SweepParam>().is_err());
    }

    #[test]
    fn every_point_reported_once_sorted() {
        let spec = SweepSpec {
            param: SweepParam::P,
            values: vec![3.0, 0.5, 1.0, 12.0],
            base: small_base(),
            mode: RecoveryMode::Ergodic,
        };
        let rows = run_sweep(&spec);
        let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
        assert_eq!(values, vec![0.5, 1.0, 3.0, 12.0]);
        assert!(rows[0].status.starts_with("error"));
        assert!(rows[0].east.is_none());
        assert!(rows[1..].iter().all(|r| r.status == "ok"), "{:?}", rows.iter().map(|r| &r.status).collect::<Vec<_>>());
        // twelve hours east and west land on the same zone
        let r12 = &rows[3];
        let (e, w) = (r12.east.as_ref().unwrap(), r12.west.as_ref().unwrap());
        assert_eq!(e.tau_w_hours, w.tau_w_hours);
        assert_eq!(e.f_total, w.f_total);
        assert_eq!(sweep_records(&rows)[0][2], "nan");
    }
}
