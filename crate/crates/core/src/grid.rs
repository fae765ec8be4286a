//! Periodic phase grid, model parameters and the discrete fields living on
//! the grid.
//!
//! Densities are stored as values per radian, so every integral over the
//! circle is the Riemann sum `Σ values[j] * dphi`.

use std::f64::consts::{PI, TAU};
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on `[0, 2π)` with cyclic indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicGrid {
    n: usize,
    dphi: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PeriodicGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::GridTooSmall(n));
        }
        let dphi = TAU / n as f64;
        let (cos, sin) = (0..n)
            .map(|j| {
                let phi = j as f64 * dphi;
                (phi.cos(), phi.sin())
            })
            .unzip();
        Ok(Self { n, dphi, cos, sin })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dphi(&self) -> f64 {
        self.dphi
    }

    /// Phase of grid point `j` (taken mod n).
    #[inline]
    pub fn phi(&self, j: usize) -> f64 {
        (j % self.n) as f64 * self.dphi
    }

    /// Cyclic index: `wrap(-1) == n - 1`, `wrap(n) == 0`.
    #[inline]
    pub fn wrap(&self, j: isize) -> usize {
        j.rem_euclid(self.n as isize) as usize
    }

    #[inline]
    pub(crate) fn cos_table(&self) -> &[f64] {
        &self.cos
    }

    #[inline]
    pub(crate) fn sin_table(&self) -> &[f64] {
        &self.sin
    }

    /// Number of grid points a shift by `p` radians corresponds to, if it is
    /// integral (within 1e-9).
    pub fn rotation_steps(&self, p: f64) -> Result<isize> {
        let r = p / self.dphi;
        let rounded = r.round();
        if (r - rounded).abs() > 1e-9 {
            return Err(Error::NonIntegralRotation { p, n: self.n });
        }
        Ok(rounded as isize)
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got: len,
            });
        }
        Ok(())
    }
}

/// Reference sun frequency, one revolution per 24 hours.
pub const SUN_FREQ: f64 = TAU / 24.0;

/// Parameters of the oscillator model in the sun-rotating frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Sun frequency (rad/h).
    pub sun_freq: f64,
    /// Intrinsic oscillator frequency (rad/h).
    pub intrinsic_freq: f64,
    /// Noise intensity (rad/√h).
    pub sigma: f64,
    /// Weight of the mutual-synchronization cost.
    pub interaction_weight: f64,
    /// Weight of the sun-alignment cost.
    pub sun_weight: f64,
    /// Time-zone angle in `[-π, π)`.
    pub time_zone: f64,
}

impl ModelParams {
    /// The reference set: 24 h sun, 24.5 h intrinsic period, σ = 0.1,
    /// unit-hundredth weights, staying at home (`time_zone = 0`).
    pub fn reference() -> Self {
        Self {
            sun_freq: SUN_FREQ,
            intrinsic_freq: TAU / 24.5,
            sigma: 0.1,
            interaction_weight: 0.01,
            sun_weight: 0.01,
            time_zone: 0.0,
        }
    }

    /// Intrinsic drift in the sun frame, `ω₀ − ω_S`.
    #[inline]
    pub fn detuning(&self) -> f64 {
        self.intrinsic_freq - self.sun_freq
    }

    pub fn with_time_zone(mut self, p: f64) -> Self {
        self.time_zone = wrap_angle(p);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.sun_freq,
            self.intrinsic_freq,
            self.sigma,
            self.interaction_weight,
            self.sun_weight,
            self.time_zone,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite model parameter".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.interaction_weight < 0.0 || self.sun_weight < 0.0 {
            return Err(Error::InvalidParameter(
                "cost weights must be non-negative".into(),
            ));
        }
        if !(-PI..PI).contains(&self.time_zone) {
            return Err(Error::InvalidParameter(format!(
                "time zone {} outside [-pi, pi)",
                self.time_zone
            )));
        }
        Ok(())
    }
}

/// Maps an angle into `[-π, π)`.
pub fn wrap_angle(p: f64) -> f64 {
    let w = (p + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to TAU for inputs just below a multiple of it
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

macro_rules! field_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];

            fn deref(&self) -> &[f64] {
                &self.0
            }
        }
    };
}

field_newtype!(
    /// Probability density per radian sampled on the grid.
    Density
);
field_newtype!(
    /// Value function samples.
    ValueField
);
field_newtype!(
    /// Control samples, an approximation of `-∂V` (rad/h).
    ControlField
);

impl Density {
    /// Wraps values without normalizing. Used for iterates and path slices
    /// whose mass is conserved by construction.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn uniform(grid: &PeriodicGrid) -> Self {
        Self(vec![1.0 / TAU; grid.n()])
    }

    pub fn mass(&self, grid: &PeriodicGrid) -> f64 {
        self.0.iter().sum::<f64>() * grid.dphi()
    }

    pub fn min_value(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl ValueField {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Shifts the field so its entries sum to zero.
    pub fn centered(mut self) -> Self {
        let mean = self.0.iter().sum::<f64>() / self.0.len() as f64;
        self.0.iter_mut().for_each(|v| *v -= mean);
        self
    }
}

impl ControlField {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(grid: &PeriodicGrid) -> Self {
        Self(vec![0.0; grid.n()])
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Scales `values` so that `Σ values[j] * dphi = 1`.
pub fn normalize_density(grid: &PeriodicGrid, values: &[f64]) -> Result<Density> {
    grid.check_len(values.len())?;
    let mass = values.iter().sum::<f64>() * grid.dphi();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::NonPositiveMass(mass));
    }
    Ok(Density(values.iter().map(|v| v / mass).collect()))
}

/// Cyclic shift: `out[j] = field[(j - r) mod n]`.
pub fn rotate_field(field: &[f64], r: isize) -> Vec<f64> {
    let n = field.len();
    if n == 0 {
        return Vec::new();
    }
    let shift = r.rem_euclid(n as isize) as usize;
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&field[n - shift..]);
    out.extend_from_slice(&field[..n - shift]);
    out
}

/// Mirror `φ ↦ -φ`: `out[j] = field[(-j) mod n]`.
pub fn reflect_field(field: &[f64]) -> Vec<f64> {
    let n = field.len();
    (0..n).map(|j| field[(n - j) % n]).collect()
}
