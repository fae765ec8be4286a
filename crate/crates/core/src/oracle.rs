//! Closed-form reference solutions for the ergodic problem.
//!
//! With no interaction and no detuning the HJB equation linearizes under
//! `W = exp(-V/σ²)` into a Mathieu equation, so the stationary density is the
//! square of the lowest even π-periodic Mathieu function. A first-order
//! expansion in the interaction weight gives the correction terms.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::{Density, PeriodicGrid};
use crate::operators::interaction_cost;

/// Change in the characteristic value below which truncation is accepted,
/// relative once the value exceeds one in magnitude.
const EIGEN_TOL: f64 = 1e-10;

const MAX_TRUNCATION: usize = 1024;

/// Lowest even π-periodic solution of `f'' + (a - 2q cos 2x) f = 0`,
/// stored as cosine coefficients `A_{2k}` normalized so `f(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MathieuEven {
    pub q: f64,
    pub a: f64,
    pub coeffs: Vec<f64>,
}

impl MathieuEven {
    pub fn new(q: f64) -> Result<Self> {
        if !q.is_finite() || q.abs() > 1e6 {
            return Err(Error::InvalidParameter(format!("Mathieu parameter {q} out of range")));
        }
        let mut size = 12 + (2.0 * q.abs().sqrt()) as usize;
        let mut a = lowest_mode(q, size).0;
        let mut v = loop {
            let next = (size * 3 / 2).max(size + 8);
            if next > MAX_TRUNCATION {
                return Err(Error::MathieuTruncation(size));
            }
            let (a_next, v_next) = lowest_mode(q, next);
            let settled = (a_next - a).abs() < EIGEN_TOL * a.abs().max(1.0);
            size = next;
            a = a_next;
            if settled {
                break v_next;
            }
        };
        // undo the symmetrizing scale on the constant term
        v[0] /= std::f64::consts::SQRT_2;
        let total: f64 = v.iter().sum();
        let mut coeffs: Vec<f64> = v.iter().map(|c| c / total).collect();
        while coeffs.len() > 1 && coeffs.last().is_some_and(|c| c.abs() < 1e-300) {
            coeffs.pop();
        }
        Ok(Self { q, a, coeffs })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * (2.0 * k as f64 * x).cos())
            .sum()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let w = 2.0 * k as f64;
                -c * w * (w * x).sin()
            })
            .sum()
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let w = 2.0 * k as f64;
                -c * w * w * (w * x).cos()
            })
            .sum()
    }

    /// `f'' + (a - 2q cos 2x) f` at `x`.
    pub fn residual(&self, x: f64) -> f64 {
        self.second_derivative(x) + (self.a - 2.0 * self.q * (2.0 * x).cos()) * self.eval(x)
    }
}

/// Smallest eigenpair of the symmetrized even-coefficient recurrence.
fn lowest_mode(q: f64, size: usize) -> (f64, Vec<f64>) {
    let mut m = DMatrix::zeros(size, size);
    for k in 0..size {
        m[(k, k)] = (2.0 * k as f64).powi(2);
        if k + 1 < size {
            let off = if k == 0 { std::f64::consts::SQRT_2 * q } else { q };
            m[(k, k + 1)] = off;
            m[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(m);
    let (idx, a) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("non-empty matrix");
    (a, eig.eigenvectors.column(idx).iter().copied().collect())
}

pub fn mathieu_char_value(q: f64) -> Result<f64> {
    MathieuEven::new(q).map(|m| m.a)
}

pub fn mathieu_eval(m: &MathieuEven, x: f64) -> f64 {
    m.eval(x)
}

/// Exact stationary solution without interaction and without detuning.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecialCaseSolution {
    pub mathieu: MathieuEven,
    /// Stationary density, `W²` normalized on the grid.
    pub mu: Density,
    /// `W(φ_j) = M(φ_j / 2)`, unnormalized.
    pub w: Vec<f64>,
    /// `W''(φ_j)`.
    pub w_second: Vec<f64>,
    /// `∂_φ V = -σ² W'/W`.
    pub dv: Vec<f64>,
    pub lambda: f64,
}

/// Mathieu parameter for a sun weight `f` and noise `sigma`.
///
/// With `c_sun = ½ sin²(φ/2)` the transformed equation has `q = -F/σ⁴`.
pub fn special_case_q(f: f64, sigma: f64) -> f64 {
    -f / sigma.powi(4)
}

/// Ergodic cost in terms of the characteristic value: `F/4 + σ⁴ a / 8`.
pub fn special_case_lambda(f: f64, sigma: f64, a: f64) -> f64 {
    f / 4.0 + sigma.powi(4) * a / 8.0
}

/// The alternative closed form `F/2 + (σ²/8) a(-2F/σ⁴)`, which corresponds to
/// a sun cost of `sin²(φ/2)` and a `σ²` scale. Kept for comparison only.
pub fn literal_special_case_lambda(f: f64, sigma: f64) -> Result<f64> {
    let a = mathieu_char_value(-2.0 * f / sigma.powi(4))?;
    Ok(f / 2.0 + sigma * sigma * a / 8.0)
}

pub fn special_case_solution(f: f64, sigma: f64, grid: &PeriodicGrid) -> Result<SpecialCaseSolution> {
    if !(f >= 0.0) || !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "special case needs F >= 0 and sigma > 0, got F={f}, sigma={sigma}"
        )));
    }
    let mathieu = MathieuEven::new(special_case_q(f, sigma))?;
    let n = grid.n();
    let mut w = Vec::with_capacity(n);
    let mut w_second = Vec::with_capacity(n);
    let mut dv = Vec::with_capacity(n);
    for j in 0..n {
        let x = grid.phi(j) / 2.0;
        let value = mathieu.eval(x);
        w.push(value);
        w_second.push(0.25 * mathieu.second_derivative(x));
        dv.push(-sigma * sigma * 0.5 * mathieu.derivative(x) / value);
    }
    let norm: f64 = w.iter().map(|v| v * v).sum::<f64>() * grid.dphi();
    let mu = Density::from_values(w.iter().map(|v| v * v / norm).collect());
    let lambda = special_case_lambda(f, sigma, mathieu.a);
    Ok(SpecialCaseSolution {
        mathieu,
        mu,
        w,
        w_second,
        dv,
        lambda,
    })
}

/// First-order ergodic cost correction, in two readings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambda1 {
    /// `∫ (½ sin²(·/2) * μ₀)(φ) dφ`.
    pub literal: f64,
    /// `∫ (½ sin²(·/2) * μ₀)(φ) μ₀(φ) dφ`, the solvability condition of the
    /// first-order equations.
    pub weighted: f64,
}

pub fn perturbation_lambda1(mu0: &[f64], grid: &PeriodicGrid) -> Result<Lambda1> {
    grid.check_len(mu0.len())?;
    let conv = interaction_cost(grid, mu0);
    let dphi = grid.dphi();
    Ok(Lambda1 {
        literal: conv.iter().sum::<f64>() * dphi,
        weighted: conv.iter().zip(mu0).map(|(c, m)| c * m).sum::<f64>() * dphi,
    })
}

fn check_positive(mu0: &[f64]) -> Result<()> {
    let min = mu0.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "base density must stay above 1e-12, minimum is {min:e}"
        )));
    }
    Ok(())
}

/// `μ₀ (λ₁ - conv)`, the source term shared by the first-order equations.
fn first_order_source(mu0: &[f64], lambda1: f64, grid: &PeriodicGrid) -> Vec<f64> {
    interaction_cost(grid, mu0)
        .iter()
        .zip(mu0)
        .map(|(c, m)| m * (lambda1 - c))
        .collect()
}

/// `∂_φ V₁` by the integrating factor, with the additive constant chosen so
/// the discrete integral of the result vanishes.
pub fn perturbation_dv1(
    mu0: &[f64],
    lambda1: f64,
    sigma: f64,
    grid: &PeriodicGrid,
) -> Result<Vec<f64>> {
    grid.check_len(mu0.len())?;
    check_positive(mu0)?;
    let g = first_order_source(mu0, lambda1, grid);
    let half = 0.5 * grid.dphi();
    let mut running = vec![0.0; g.len()];
    for j in 1..g.len() {
        running[j] = running[j - 1] + half * (g[j - 1] + g[j]);
    }
    let num: f64 = running.iter().zip(mu0).map(|(i, m)| i / m).sum();
    let den: f64 = mu0.iter().map(|m| 1.0 / m).sum();
    let c = -num / den;
    let scale = 2.0 / (sigma * sigma);
    Ok(running
        .iter()
        .zip(mu0)
        .map(|(i, m)| scale * (c + i) / m)
        .collect())
}

/// `μ₁ = Γ W₀` where `(σ²/2)(Γ W₀'' - W₀ Γ'') = (2/σ²) μ₀ (λ₁ - conv)`.
///
/// `Γ''` uses the periodic second difference and `W₀''` the same stencil
/// applied to `W₀`, so `Γ = W₀` spans the discrete null space exactly; that
/// direction is fixed by requiring `Σ μ₁ dphi = 0`.
pub fn perturbation_mu1(
    mu0: &[f64],
    w0: &[f64],
    lambda1: f64,
    sigma: f64,
    grid: &PeriodicGrid,
) -> Result<Vec<f64>> {
    grid.check_len(mu0.len())?;
    grid.check_len(w0.len())?;
    check_positive(mu0)?;
    let n = grid.n();
    let dphi = grid.dphi();
    let inv_h2 = 1.0 / (dphi * dphi);
    let half_s2 = 0.5 * sigma * sigma;
    let d2 = |v: &[f64], j: usize| {
        (v[grid.wrap(j as isize + 1)] - 2.0 * v[j] + v[grid.wrap(j as isize - 1)]) * inv_h2
    };

    let mut a = DMatrix::zeros(n + 1, n);
    let mut b = DVector::zeros(n + 1);
    let source = first_order_source(mu0, lambda1, grid);
    for j in 0..n {
        let up = grid.wrap(j as isize + 1);
        let down = grid.wrap(j as isize - 1);
        a[(j, j)] = half_s2 * (d2(w0, j) + 2.0 * w0[j] * inv_h2);
        a[(j, up)] -= half_s2 * w0[j] * inv_h2;
        a[(j, down)] -= half_s2 * w0[j] * inv_h2;
        b[j] = 2.0 / (sigma * sigma) * source[j];
        a[(n, j)] = w0[j] * dphi;
    }
    let qr = a.qr();
    let qtb = qr.q().transpose() * &b;
    let gamma = qr
        .r()
        .solve_upper_triangular(&qtb)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or(Error::SingularSystem { iteration: 0 })?;

    let mut mu1: Vec<f64> = gamma.iter().zip(w0).map(|(g, w)| g * w).collect();
    let drift = mu1.iter().sum::<f64>() * dphi;
    for (m, base) in mu1.iter_mut().zip(mu0) {
        *m -= drift * base;
    }
    Ok(mu1)
}

/// First-order density correction from the Gibbs form `μ ∝ exp(-2V/σ²)`:
/// `μ₁ = -(2/σ²) μ₀ (V₁ - ⟨V₁⟩_{μ₀})`, with `V₁` integrated from `∂_φ V₁`.
pub fn gibbs_mu1(mu0: &[f64], dv1: &[f64], sigma: f64, grid: &PeriodicGrid) -> Result<Vec<f64>> {
    grid.check_len(mu0.len())?;
    grid.check_len(dv1.len())?;
    let dphi = grid.dphi();
    let mut v1 = vec![0.0; dv1.len()];
    for j in 1..dv1.len() {
        v1[j] = v1[j - 1] + 0.5 * dphi * (dv1[j - 1] + dv1[j]);
    }
    let mean = v1.iter().zip(mu0).map(|(v, m)| v * m).sum::<f64>() * dphi;
    let scale = -2.0 / (sigma * sigma);
    Ok(v1
        .iter()
        .zip(mu0)
        .map(|(v, m)| scale * m * (v - mean))
        .collect())
}
