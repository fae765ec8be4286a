//! Discrete transport-diffusion generator, running costs, control
//! extraction and the explicit-step CFL bound.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ControlField, ModelParams, PeriodicGrid};

/// First-derivative discretization used in the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Upwind differences chosen by the sign of the drift.
    Monotone,
    /// Symmetric `(U[j+1] - U[j-1]) / 2dphi`.
    Centered,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Monotone => "monotone",
            Scheme::Centered => "centered",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "monotone" | "upwind" => Ok(Scheme::Monotone),
            "centered" | "centred" => Ok(Scheme::Centered),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Cyclic tridiagonal generator `L_β`.
///
/// Row `j` reads `(L u)_j = lower[j] u[j-1] + diag[j] u[j] + upper[j] u[j+1]`
/// with wrap-around at both ends. Every row sums to zero, so the transpose
/// conserves `Σ m_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportOperator {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    scheme: Scheme,
}

impl TransportOperator {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// `out = L u`.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n();
        for j in 0..n {
            let jm = if j == 0 { n - 1 } else { j - 1 };
            let jp = if j + 1 == n { 0 } else { j + 1 };
            out[j] = self.lower[j] * u[jm] + self.diag[j] * u[j] + self.upper[j] * u[jp];
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.apply_into(u, &mut out);
        out
    }

    /// `out = Lᵀ m`.
    pub fn apply_transpose_into(&self, m: &[f64], out: &mut [f64]) {
        let n = self.n();
        for j in 0..n {
            let jm = if j == 0 { n - 1 } else { j - 1 };
            let jp = if j + 1 == n { 0 } else { j + 1 };
            out[j] = self.upper[jm] * m[jm] + self.diag[j] * m[j] + self.lower[jp] * m[jp];
        }
    }

    pub fn apply_transpose(&self, m: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.apply_transpose_into(m, &mut out);
        out
    }

    /// Dense row-major copy of the matrix.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n();
        let mut a = nalgebra::DMatrix::zeros(n, n);
        for j in 0..n {
            a[(j, (j + n - 1) % n)] += self.lower[j];
            a[(j, j)] += self.diag[j];
            a[(j, (j + 1) % n)] += self.upper[j];
        }
        a
    }
}

/// `½ sin²((p - φ_j)/2)` on the grid.
pub fn sun_cost(grid: &PeriodicGrid, p: f64) -> Vec<f64> {
    (0..grid.n())
        .map(|j| {
            let s = ((p - grid.phi(j)) / 2.0).sin();
            0.5 * s * s
        })
        .collect()
}

/// Mean interaction cost `c̄_j = ½ Σ_k sin²((φ_k - φ_j)/2) m_k dphi`.
///
/// Uses `½ sin²(x/2) = ¼ (1 - cos x)`, which reduces the convolution to the
/// first Fourier moments of `m`. Exact for any `m`, including unnormalized
/// or signed iterates.
pub fn interaction_cost(grid: &PeriodicGrid, m: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.n()];
    interaction_cost_into(grid, m, &mut out);
    out
}

pub(crate) fn interaction_cost_into(grid: &PeriodicGrid, m: &[f64], out: &mut [f64]) {
    let (cos, sin) = (grid.cos_table(), grid.sin_table());
    let (mut mass, mut re, mut im) = (0.0, 0.0, 0.0);
    for k in 0..m.len() {
        mass += m[k];
        re += m[k] * cos[k];
        im += m[k] * sin[k];
    }
    let h = grid.dphi();
    let (mass, re, im) = (mass * h, re * h, im * h);
    for j in 0..out.len() {
        out[j] = 0.25 * (mass - cos[j] * re - sin[j] * im);
    }
}

/// Builds `L_β` for the given control.
///
/// Monotone rows use `b⁺ D⁺ + b⁻ D⁻ + (σ²/2) D²` with `b = ω₀ - ω_S + β_j`,
/// `b⁺ = max(b, 0)` and `b⁻ = min(b, 0)`. Centered rows use `b D⁰ + (σ²/2) D²`.
pub fn build_transport_operator(
    grid: &PeriodicGrid,
    params: &ModelParams,
    beta: &[f64],
    scheme: Scheme,
) -> TransportOperator {
    let n = grid.n();
    let mut op = TransportOperator {
        lower: vec![0.0; n],
        diag: vec![0.0; n],
        upper: vec![0.0; n],
        scheme,
    };
    fill_operator(grid, params.detuning(), params.sigma, beta, &mut op);
    op
}

pub(crate) fn fill_operator(
    grid: &PeriodicGrid,
    detuning: f64,
    sigma: f64,
    beta: &[f64],
    op: &mut TransportOperator,
) {
    let h = grid.dphi();
    let diffusion = 0.5 * sigma * sigma / (h * h);
    for (j, bj) in beta.iter().enumerate() {
        let b = detuning + bj;
        let (lo, up) = match op.scheme {
            Scheme::Monotone => (diffusion - b.min(0.0) / h, diffusion + b.max(0.0) / h),
            Scheme::Centered => (diffusion - b / (2.0 * h), diffusion + b / (2.0 * h)),
        };
        op.lower[j] = lo;
        op.upper[j] = up;
        op.diag[j] = -(lo + up);
    }
}

pub(crate) fn empty_operator(n: usize, scheme: Scheme) -> TransportOperator {
    TransportOperator {
        lower: vec![0.0; n],
        diag: vec![0.0; n],
        upper: vec![0.0; n],
        scheme,
    }
}

/// Control implied by a value field.
///
/// Monotone: the one-sided slope is used only when the resulting drift
/// agrees in sign with the direction of that difference; otherwise the
/// control is zero. Centered: `β_j = -(U[j+1] - U[j-1]) / 2dphi`.
pub fn extract_control(
    value: &[f64],
    grid: &PeriodicGrid,
    params: &ModelParams,
    scheme: Scheme,
) -> ControlField {
    let mut out = vec![0.0; grid.n()];
    extract_control_into(value, grid, params.detuning(), scheme, &mut out);
    ControlField::from_values(out)
}

pub(crate) fn extract_control_into(
    u: &[f64],
    grid: &PeriodicGrid,
    detuning: f64,
    scheme: Scheme,
    out: &mut [f64],
) {
    let n = grid.n();
    let h = grid.dphi();
    for j in 0..n {
        let jm = if j == 0 { n - 1 } else { j - 1 };
        let jp = if j + 1 == n { 0 } else { j + 1 };
        out[j] = match scheme {
            Scheme::Centered => -(u[jp] - u[jm]) / (2.0 * h),
            Scheme::Monotone => {
                let back = (u[j] - u[jm]) / h;
                let fwd = (u[jp] - u[j]) / h;
                let l = detuning - back;
                let r = detuning - fwd;
                if l < 0.0 && r < 0.0 {
                    -back
                } else if l > 0.0 && r > 0.0 {
                    -fwd
                } else {
                    0.0
                }
            }
        };
    }
}

/// Largest stable explicit step for controls bounded by `bound` in absolute
/// value: `1 / (2 (σ²/dphi² + (|ω_S - ω₀| + A)/dphi))`.
pub fn cfl_dt(grid: &PeriodicGrid, params: &ModelParams, bound: f64) -> f64 {
    let h = grid.dphi();
    let s2 = params.sigma * params.sigma;
    1.0 / (2.0 * (s2 / (h * h) + (params.detuning().abs() + bound) / h))
}

/// Step that satisfies the CFL bound and divides one hour evenly, so that
/// hourly samples fall on step boundaries. Returns `(dt, steps_per_hour)`.
pub fn hourly_dt(grid: &PeriodicGrid, params: &ModelParams, bound: f64) -> (f64, usize) {
    let limit = cfl_dt(grid, params, bound);
    let steps = (1.0 / limit).ceil().max(1.0) as usize;
    (1.0 / steps as f64, steps)
}

pub(crate) fn check_dt(dt: f64, bound: f64) -> Result<()> {
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, bound });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{normalize_density, SUN_FREQ};
    use proptest::prelude::*;
    use std::f64::consts::{PI, TAU};

    fn brute_interaction(grid: &PeriodicGrid, m: &[f64]) -> Vec<f64> {
        let n = grid.n();
        (0..n)
            .map(|j| {
                (0..n)
                    .map(|k| {
                        let s = ((k as f64 - j as f64) * grid.dphi() / 2.0).sin();
                        0.5 * s * s * m[k] * grid.dphi()
                    })
                    .sum()
            })
            .collect()
    }

    fn params_with(detuning: f64, sigma: f64) -> ModelParams {
        ModelParams {
            sun_freq: SUN_FREQ,
            intrinsic_freq: SUN_FREQ + detuning,
            sigma,
            interaction_weight: 0.0,
            sun_weight: 0.0,
            time_zone: 0.0,
        }
    }

    #[test]
    fn sun_cost_values() {
        let g = PeriodicGrid::new(120).unwrap();
        let c = sun_cost(&g, 0.0);
        assert_eq!(c[0], 0.0);
        assert!((c[30] - 0.25).abs() < 1e-15);
        assert!((c[60] - 0.5).abs() < 1e-15);
        let p = 9.0 * SUN_FREQ;
        let c = sun_cost(&g, p);
        assert!(c[45].abs() < 1e-15);
        assert!((c[105] - 0.5).abs() < 1e-15);
        assert!(c.iter().all(|v| (0.0..=0.5).contains(v)));
    }

    #[test]
    fn interaction_uniform_and_atom() {
        let g = PeriodicGrid::new(120).unwrap();
        let uni = vec![1.0 / TAU; 120];
        assert!(interaction_cost(&g, &uni).iter().all(|v| (v - 0.25).abs() < 1e-14));

        let mut atom = vec![0.0; 120];
        atom[17] = 1.0 / g.dphi();
        let c = interaction_cost(&g, &atom);
        for (j, v) in c.iter().enumerate() {
            let s = ((g.phi(17) - g.phi(j)) / 2.0).sin();
            assert!((v - 0.5 * s * s).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_drift_is_laplacian() {
        let g = PeriodicGrid::new(12).unwrap();
        let p = params_with(0.0, 0.3);
        let zero = vec![0.0; 12];
        let a = build_transport_operator(&g, &p, &zero, Scheme::Monotone);
        let b = build_transport_operator(&g, &p, &zero, Scheme::Centered);
        assert_eq!(a.to_dense(), b.to_dense());
        let d = 0.5 * 0.09 / (g.dphi() * g.dphi());
        for j in 0..12 {
            assert!((a.lower()[j] - d).abs() < 1e-12);
            assert!((a.upper()[j] - d).abs() < 1e-12);
            assert!((a.diag()[j] + 2.0 * d).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_drift_upwinds_forward() {
        let g = PeriodicGrid::new(10).unwrap();
        let p = params_with(0.0, 0.0001);
        let beta = vec![0.7; 10];
        let op = build_transport_operator(&g, &p, &beta, Scheme::Monotone);
        let d = 0.5 * 1e-8 / (g.dphi() * g.dphi());
        for j in 0..10 {
            assert!((op.lower()[j] - d).abs() < 1e-15);
            assert!((op.upper()[j] - d - 0.7 / g.dphi()).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_vector_in_kernel() {
        let g = PeriodicGrid::new(30).unwrap();
        let p = ModelParams::reference();
        let beta: Vec<f64> = (0..30).map(|j| (j as f64 * 0.7).sin() * 0.2).collect();
        for scheme in [Scheme::Monotone, Scheme::Centered] {
            let op = build_transport_operator(&g, &p, &beta, scheme);
            assert!(op.apply(&vec![3.5; 30]).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn extract_flat_value() {
        let g = PeriodicGrid::new(24).unwrap();
        let p = ModelParams::reference();
        for scheme in [Scheme::Monotone, Scheme::Centered] {
            assert!(extract_control(&[1.3; 24], &g, &p, scheme)
                .iter()
                .all(|b| *b == 0.0));
        }
    }

    #[test]
    fn extract_monotone_branches() {
        let g = PeriodicGrid::new(8).unwrap();
        let h = g.dphi();
        // linear ramp locally: slope g_ at j = 3
        let slope = -0.2;
        let mut u = vec![0.0; 8];
        for (j, uj) in u.iter_mut().enumerate().take(5).skip(2) {
            *uj = slope * j as f64 * h;
        }
        let p = params_with(0.0, 0.1);
        let beta = extract_control(&u, &g, &p, Scheme::Monotone);
        // l = r = -slope > 0: forward branch
        assert!((beta[3] + slope).abs() < 1e-12);

        let mut down = vec![0.0; 8];
        for (j, dj) in down.iter_mut().enumerate().take(5).skip(2) {
            *dj = 0.2 * j as f64 * h;
        }
        let beta = extract_control(&down, &g, &p, Scheme::Monotone);
        // l = r < 0: backward branch
        assert!((beta[3] + 0.2).abs() < 1e-12);

        // local minimum of U: l < 0 < r -> zero
        let valley = [1.0, 0.5, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0];
        let beta = extract_control(&valley, &g, &p, Scheme::Monotone);
        assert_eq!(beta[2], 0.0);
    }

    #[test]
    fn cfl_values() {
        let g = PeriodicGrid::new(120).unwrap();
        let p = params_with(0.0, 0.1);
        let dt = cfl_dt(&g, &p, 0.0);
        let h = TAU / 120.0;
        assert!((dt - 1.0 / (2.0 * 0.01 / (h * h))).abs() < 1e-15);
        assert!((dt - 0.1371).abs() < 1e-4);
        assert!(cfl_dt(&g, &p, 0.5) < cfl_dt(&g, &p, 0.25));
        // reference parameters, A = 0.25; plug-in value of the formula
        let r = cfl_dt(&g, &ModelParams::reference(), 0.25);
        assert!((r - 0.058_656).abs() < 1e-6, "{r}");
        let (dt, k) = hourly_dt(&g, &ModelParams::reference(), 0.25);
        assert_eq!(k, 18);
        assert!(dt <= r);
    }

    #[test]
    fn centered_second_order_monotone_first_order() {
        // apply the first-order part to sin(φ); compare with cos(φ)
        let err = |n: usize, scheme: Scheme| {
            let g = PeriodicGrid::new(n).unwrap();
            let p = params_with(1.0, 1e-12);
            let u: Vec<f64> = (0..n).map(|j| g.phi(j).sin()).collect();
            let op = build_transport_operator(&g, &p, &vec![0.0; n], scheme);
            op.apply(&u)
                .iter()
                .enumerate()
                .map(|(j, v)| (v - g.phi(j).cos()).abs())
                .fold(0.0, f64::max)
        };
        let c = err(60, Scheme::Centered) / err(120, Scheme::Centered);
        let m = err(60, Scheme::Monotone) / err(120, Scheme::Monotone);
        assert!((c - 4.0).abs() < 0.1, "{c}");
        assert!((m - 2.0).abs() < 0.1, "{m}");
    }

    #[test]
    fn interaction_matches_brute_force_at_reference_shape() {
        let g = PeriodicGrid::new(120).unwrap();
        let raw: Vec<f64> = (0..120)
            .map(|j| (-(g.phi(j) - PI).powi(2) * 3.0).exp() + 1e-3)
            .collect();
        let m = normalize_density(&g, &raw).unwrap();
        let fast = interaction_cost(&g, &m);
        let slow = brute_interaction(&g, &m);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn interaction_equals_double_sum(raw in prop::collection::vec(0.0f64..5.0, 3..80)) {
            prop_assume!(raw.iter().sum::<f64>() > 1e-3);
            let g = PeriodicGrid::new(raw.len()).unwrap();
            let m = normalize_density(&g, &raw).unwrap();
            let fast = interaction_cost(&g, &m);
            let slow = brute_interaction(&g, &m);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!(*a >= -1e-12 && *a <= 0.5 + 1e-12);
            }
        }

        #[test]
        fn transpose_conserves_and_monotone_stays_positive(
            beta in prop::collection::vec(-0.5f64..0.5, 24),
            raw in prop::collection::vec(0.0f64..3.0, 24),
            detuning in -0.2f64..0.2,
        ) {
            prop_assume!(raw.iter().sum::<f64>() > 1e-3);
            let g = PeriodicGrid::new(24).unwrap();
            let p = params_with(detuning, 0.1);
            let m = normalize_density(&g, &raw).unwrap();
            let bound = beta.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let dt = cfl_dt(&g, &p, bound);
            for scheme in [Scheme::Monotone, Scheme::Centered] {
                let op = build_transport_operator(&g, &p, &beta, scheme);
                let lt = op.apply_transpose(&m);
                prop_assert!(lt.iter().sum::<f64>().abs() < 1e-11);
                if scheme == Scheme::Monotone {
                    for j in 0..24 {
                        prop_assert!(m[j] + dt * lt[j] >= 0.0);
                    }
                }
            }
        }

        #[test]
        fn monotone_extraction_respects_upwinding(u in prop::collection::vec(-1.0f64..1.0, 16), detuning in -0.3f64..0.3) {
            let g = PeriodicGrid::new(16).unwrap();
            let p = params_with(detuning, 0.1);
            let beta = extract_control(&u, &g, &p, Scheme::Monotone);
            let h = g.dphi();
            for j in 0..16 {
                let jm = (j + 15) % 16;
                let jp = (j + 1) % 16;
                let drift = detuning + beta[j];
                if beta[j] == -(u[j] - u[jm]) / h && beta[j] != 0.0 {
                    prop_assert!(drift < 0.0);
                } else if beta[j] == -(u[jp] - u[j]) / h && beta[j] != 0.0 {
                    prop_assert!(drift > 0.0);
                }
            }
        }
    }
}
