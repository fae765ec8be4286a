//! Run configuration read from `key = value` files.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::ergodic::{Method, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::{ModelParams, PeriodicGrid, SUN_FREQ};
use crate::metrics::Thresholds;
use crate::mfg::MfgOptions;
use crate::operators::Scheme;
use crate::recovery::RecoveryOptions;

const KEYS: &[&str] = &[
    "omega_S",
    "omega_0",
    "sigma",
    "K",
    "F",
    "p_hours",
    "n",
    "scheme",
    "method",
    "eps",
    "eps_w",
    "eps_z",
    "horizon_days",
    "T_days",
    "max_iter",
    "out_dir",
    "subsample_hours",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Model parameters; `time_zone` is always 0 here, trips use `p_hours`.
    pub params: ModelParams,
    /// Trip length in time zones, positive eastward.
    pub p_hours: i32,
    pub n: usize,
    pub scheme: Scheme,
    pub method: Method,
    pub eps: f64,
    pub eps_w: f64,
    pub eps_z: f64,
    pub horizon_days: f64,
    pub t_days: f64,
    /// Iteration cap for whichever solver runs; `None` keeps each default.
    pub max_iter: Option<usize>,
    pub out_dir: PathBuf,
    pub subsample_hours: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: ModelParams::reference(),
            p_hours: 9,
            n: 120,
            scheme: Scheme::Centered,
            method: Method::Alternating,
            eps: 1e-5,
            eps_w: 0.01,
            eps_z: 0.2,
            horizon_days: 20.0,
            t_days: 100.0,
            max_iter: None,
            out_dir: PathBuf::from("out"),
            subsample_hours: 1.0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl RunConfig {
    /// Parses a config file body. Blank lines and `#` comments are skipped;
    /// unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` given twice", lineno + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key from its textual value without validating the result.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "omega_S" => self.params.sun_freq = parse_num(key, value)?,
            "omega_0" => self.params.intrinsic_freq = parse_num(key, value)?,
            "sigma" => self.params.sigma = parse_num(key, value)?,
            "K" => self.params.interaction_weight = parse_num(key, value)?,
            "F" => self.params.sun_weight = parse_num(key, value)?,
            "p_hours" => self.p_hours = parse_num(key, value)?,
            "n" => self.n = parse_num(key, value)?,
            "scheme" => self.scheme = value.parse()?,
            "method" => self.method = value.parse()?,
            "eps" => self.eps = parse_num(key, value)?,
            "eps_w" => self.eps_w = parse_num(key, value)?,
            "eps_z" => self.eps_z = parse_num(key, value)?,
            "horizon_days" => self.horizon_days = parse_num(key, value)?,
            "T_days" => self.t_days = parse_num(key, value)?,
            "max_iter" => self.max_iter = Some(parse_num(key, value)?),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "subsample_hours" => self.subsample_hours = parse_num(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key `{other}` (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.params
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.n < 3 {
            return Err(Error::Config(format!("n = {} is too small", self.n)));
        }
        if !(-12..=12).contains(&self.p_hours) {
            return Err(Error::Config(format!("p_hours = {} outside [-12, 12]", self.p_hours)));
        }
        if self.p_hours != 0 && !self.n.is_multiple_of(24) {
            return Err(Error::Config(format!(
                "n = {} must be a multiple of 24 for whole-hour trips",
                self.n
            )));
        }
        for (name, v) in [
            ("eps", self.eps),
            ("eps_w", self.eps_w),
            ("eps_z", self.eps_z),
            ("horizon_days", self.horizon_days),
            ("T_days", self.t_days),
            ("subsample_hours", self.subsample_hours),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iter == Some(0) {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<PeriodicGrid> {
        PeriodicGrid::new(self.n)
    }

    /// Trip angle `p = p_hours · ω_S`.
    pub fn trip_angle(&self) -> f64 {
        self.p_hours as f64 * SUN_FREQ
    }

    pub fn solver_options(&self) -> SolverOptions {
        let mut opts = SolverOptions::for_method(self.method);
        opts.eps = self.eps;
        if let Some(m) = self.max_iter {
            opts.max_iter = m;
        }
        opts
    }

    pub fn recovery_options(&self) -> RecoveryOptions {
        RecoveryOptions {
            horizon_hours: self.horizon_days * 24.0,
            sample_hours: self.subsample_hours,
            dt: None,
            scheme: None,
        }
    }

    pub fn mfg_options(&self) -> MfgOptions {
        let mut opts = MfgOptions {
            horizon_hours: self.t_days * 24.0,
            eps: self.eps,
            sample_hours: self.subsample_hours,
            ..MfgOptions::default()
        };
        if let Some(m) = self.max_iter {
            opts.max_iter = m;
        }
        opts
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            eps_w: self.eps_w,
            eps_z: self.eps_z,
        }
    }

    /// Canonical `key = value` rendering; parsing it gives back `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        let _ = writeln!(s, "omega_S = {:e}", p.sun_freq);
        let _ = writeln!(s, "omega_0 = {:e}", p.intrinsic_freq);
        let _ = writeln!(s, "sigma = {:e}", p.sigma);
        let _ = writeln!(s, "K = {:e}", p.interaction_weight);
        let _ = writeln!(s, "F = {:e}", p.sun_weight);
        let _ = writeln!(s, "p_hours = {}", self.p_hours);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "scheme = {}", self.scheme);
        let _ = writeln!(s, "method = {}", self.method);
        let _ = writeln!(s, "eps = {:e}", self.eps);
        let _ = writeln!(s, "eps_w = {:e}", self.eps_w);
        let _ = writeln!(s, "eps_z = {:e}", self.eps_z);
        let _ = writeln!(s, "horizon_days = {:e}", self.horizon_days);
        let _ = writeln!(s, "T_days = {:e}", self.t_days);
        if let Some(m) = self.max_iter {
            let _ = writeln!(s, "max_iter = {m}");
        }
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "subsample_hours = {:e}", self.subsample_hours);
        s
    }

    /// Hash of the settings that determine the stationary solution. Trip,
    /// recovery and output settings are left out.
    pub fn ergodic_hash(&self) -> String {
        let p = &self.params;
        let key = format!(
            "{:e}|{:e}|{:e}|{:e}|{:e}|{}|{}|{}|{:e}|{:?}",
            p.sun_freq,
            p.intrinsic_freq,
            p.sigma,
            p.interaction_weight,
            p.sun_weight,
            self.n,
            self.scheme,
            self.method,
            self.eps,
            self.max_iter
        );
        let digest = Sha256::digest(key.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
