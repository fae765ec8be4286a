//! Solution files, path CSVs and report JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::config::RunConfig;
use crate::ergodic::{ErgodicSolution, Method, OutcomeClass};
use crate::error::{Error, Result};
use crate::grid::{ControlField, Density, ModelParams, PeriodicGrid, ValueField};
use crate::metrics::{CostTraces, RecoveryReport};
use crate::operators::Scheme;

pub const SOLUTION_VERSION: u32 = 1;

/// Arrays are written with 17 significant digits so that reading them back
/// reproduces every bit.
mod exact {
    use super::RawValue;
    use serde::ser::{Error as _, SerializeSeq};
    use serde::{Deserialize, Deserializer, Serializer};

    pub(super) fn number(x: f64) -> Result<Box<RawValue>, String> {
        if !x.is_finite() {
            return Err(format!("cannot store non-finite value {x}"));
        }
        RawValue::from_string(format!("{x:.16e}")).map_err(|e| e.to_string())
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for &x in v {
            seq.serialize_element(&number(x).map_err(S::Error::custom)?)?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<f64>::deserialize(d)
    }

    pub mod scalar {
        use super::*;

        pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
            s.serialize_some(&number(*x).map_err(S::Error::custom)?)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            f64::deserialize(d)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionHeader {
    pub version: u32,
    /// Rendered configuration the solution was computed from.
    pub config: String,
    pub config_hash: String,
    pub n: usize,
    pub scheme: Scheme,
    pub method: Method,
    pub outcome: OutcomeClass,
    pub iterations: usize,
    pub criteria_met: bool,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub header: SolutionHeader,
    #[serde(with = "exact::scalar")]
    pub lambda: f64,
    #[serde(with = "exact::scalar")]
    pub control_bound: f64,
    #[serde(with = "exact")]
    pub mu: Vec<f64>,
    #[serde(rename = "U", with = "exact")]
    pub value: Vec<f64>,
    #[serde(with = "exact")]
    pub beta: Vec<f64>,
}

impl SolutionFile {
    pub fn new(solution: &ErgodicSolution, config: &RunConfig) -> Self {
        Self {
            header: SolutionHeader {
                version: SOLUTION_VERSION,
                config: config.to_config_string(),
                config_hash: config.ergodic_hash(),
                n: solution.n,
                scheme: solution.scheme,
                method: solution.method,
                outcome: solution.outcome,
                iterations: solution.iterations,
                criteria_met: solution.criteria_met,
                params: solution.params,
            },
            lambda: solution.lambda,
            // the alternating method has no bound; store 0 to keep JSON finite
            control_bound: if solution.control_bound.is_finite() {
                solution.control_bound
            } else {
                0.0
            },
            mu: solution.mu.as_slice().to_vec(),
            value: solution.value.as_slice().to_vec(),
            beta: solution.beta.as_slice().to_vec(),
        }
    }

    pub fn into_solution(self) -> Result<ErgodicSolution> {
        let h = self.header;
        if h.version != SOLUTION_VERSION {
            return Err(Error::Solution(format!("unsupported version {}", h.version)));
        }
        let grid = PeriodicGrid::new(h.n)?;
        for len in [self.mu.len(), self.value.len(), self.beta.len()] {
            grid.check_len(len)?;
        }
        Ok(ErgodicSolution {
            params: h.params,
            n: h.n,
            mu: Density::from_values(self.mu),
            value: ValueField::from_values(self.value),
            lambda: self.lambda,
            beta: ControlField::from_values(self.beta),
            scheme: h.scheme,
            method: h.method,
            iterations: h.iterations,
            criteria_met: h.criteria_met,
            outcome: h.outcome,
            control_bound: if h.method == Method::Alternating {
                f64::NAN
            } else {
                self.control_bound
            },
        })
    }

    /// Errors unless the file was computed from settings equivalent to
    /// `config` for the stationary problem.
    pub fn check_matches(&self, config: &RunConfig) -> Result<()> {
        if self.header.n != config.n {
            return Err(Error::Solution(format!(
                "solution grid has n = {}, config has n = {}",
                self.header.n, config.n
            )));
        }
        if self.header.config_hash != config.ergodic_hash() {
            return Err(Error::Solution(
                "solution file is stale: it was computed with different model or solver settings"
                    .into(),
            ));
        }
        Ok(())
    }
}

pub fn save_solution(path: &Path, solution: &ErgodicSolution, config: &RunConfig) -> Result<()> {
    let file = SolutionFile::new(solution, config);
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &file)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_solution_file(path: &Path) -> Result<SolutionFile> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Solution(format!("{}: {e}", path.display())))
}

pub fn load_solution(path: &Path) -> Result<ErgodicSolution> {
    load_solution_file(path)?.into_solution()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_error)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Shortest text that parses back to the same value.
fn num(x: f64) -> String {
    format!("{x}")
}

/// One row per stored time: `t_hours,phi_0,...,phi_{n-1}`.
pub fn write_field_csv(path: &Path, times: &[f64], rows: &[Vec<f64>]) -> Result<()> {
    let n = rows.first().map_or(0, Vec::len);
    let mut w = csv_writer(path)?;
    let header: Vec<String> = std::iter::once("t_hours".to_string())
        .chain((0..n).map(|j| format!("phi_{j}")))
        .collect();
    w.write_record(&header).map_err(csv_error)?;
    for (t, row) in times.iter().zip(rows) {
        let rec: Vec<String> = std::iter::once(num(*t)).chain(row.iter().map(|v| num(*v))).collect();
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_z_csv(path: &Path, z_path: &[(f64, f64, f64)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t_hours", "re_z", "im_z"]).map_err(csv_error)?;
    for (t, re, im) in z_path {
        w.write_record([num(*t), num(*re), num(*im)]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_traces_csv(path: &Path, traces: &CostTraces) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t_hours", "f_alpha", "f_osc", "f_sun", "f_total"])
        .map_err(csv_error)?;
    for i in 0..traces.t_hours.len() {
        w.write_record([
            num(traces.t_hours[i]),
            num(traces.f_alpha[i]),
            num(traces.f_osc[i]),
            num(traces.f_sun[i]),
            num(traces.f_total[i]),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Scalar part of a [`RecoveryReport`], with units in the key names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub mode: String,
    pub p_hours: i32,
    pub p_radians: f64,
    pub tau_w_hours: Option<f64>,
    pub tau_z_hours: Option<f64>,
    pub tau_w_days: Option<f64>,
    pub tau_z_days: Option<f64>,
    pub f_alpha_costhours: f64,
    pub f_osc_costhours: f64,
    pub f_sun_costhours: f64,
    pub f_total_costhours: f64,
    pub converged: bool,
    pub iterations: Option<usize>,
}

impl ReportSummary {
    pub fn new(
        mode: &str,
        p_hours: i32,
        report: &RecoveryReport,
        converged: bool,
        iterations: Option<usize>,
    ) -> Self {
        Self {
            mode: mode.to_string(),
            p_hours,
            p_radians: report.p_radians,
            tau_w_hours: report.tau_w_hours,
            tau_z_hours: report.tau_z_hours,
            tau_w_days: report.tau_w_days(),
            tau_z_days: report.tau_z_days(),
            f_alpha_costhours: report.f_alpha_costhours,
            f_osc_costhours: report.f_osc_costhours,
            f_sun_costhours: report.f_sun_costhours,
            f_total_costhours: report.f_total_costhours,
            converged,
            iterations,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
