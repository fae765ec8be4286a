//! Recovery metrics: order parameter, circular 2-Wasserstein distance,
//! recovery times and accrued-cost traces.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ModelParams, PeriodicGrid};
use crate::operators::{interaction_cost, sun_cost};

/// Entries below this are rejected by [`circular_w2`]; entries in
/// `(-NEGATIVE_TOLERANCE, 0)` are clamped to zero.
pub const NEGATIVE_TOLERANCE: f64 = 1e-5;

/// Window over which accrued costs are integrated (10 days).
pub const COST_WINDOW_HOURS: f64 = 240.0;

/// `z = Σ_j e^{iφ_j} m_j dphi`.
pub fn order_parameter(m: &[f64], grid: &PeriodicGrid) -> Complex64 {
    let (cos, sin) = (grid.cos_table(), grid.sin_table());
    let (mut re, mut im) = (0.0, 0.0);
    for j in 0..m.len() {
        re += m[j] * cos[j];
        im += m[j] * sin[j];
    }
    Complex64::new(re * grid.dphi(), im * grid.dphi())
}

/// Atom masses and their running sums, with the last running sum pinned to 1.
struct Atoms {
    cum: Vec<f64>,
}

impl Atoms {
    fn from_density(m: &[f64], grid: &PeriodicGrid, strict: bool) -> Result<Self> {
        let mut mass = Vec::with_capacity(m.len());
        for (index, &value) in m.iter().enumerate() {
            if strict && value < -NEGATIVE_TOLERANCE {
                return Err(Error::NegativeDensity { index, value });
            }
            mass.push(value.max(0.0) * grid.dphi());
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::NonPositiveMass(total));
        }
        let mut acc = 0.0;
        let mut cum: Vec<f64> = mass
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        let last = cum.len() - 1;
        cum[last] = 1.0;
        // rounding can overshoot 1 just before the end
        for c in cum.iter_mut() {
            *c = c.min(1.0);
        }
        Ok(Self { cum })
    }
}

/// Quadratic cost of the monotone coupling between the quantile function of
/// `a` and the quantile function of `b` shifted by `theta`, with the real
/// line as a lift of the circle.
fn lifted_cost(a: &Atoms, b: &Atoms, dphi: f64, theta: f64) -> f64 {
    let n = a.cum.len();
    let mut wraps = theta.floor();
    let start = theta - wraps;
    let mut jb = b.cum.partition_point(|&c| c <= start);
    if jb == n {
        jb = 0;
        wraps += 1.0;
    }
    let mut ia = a.cum.partition_point(|&c| c <= 0.0).min(n - 1);
    let mut t = 0.0;
    let mut cost = 0.0;
    let mut guard = 0;
    while t < 1.0 && guard < 4 * n + 8 {
        guard += 1;
        let next_a = a.cum[ia];
        let next_b = b.cum[jb] + wraps - theta;
        let next = next_a.min(next_b).min(1.0);
        let d = ia as f64 * dphi - (jb as f64 * dphi + TAU * wraps);
        cost += (next - t).max(0.0) * d * d;
        t = next;
        while ia + 1 < n && a.cum[ia] <= t {
            ia += 1;
        }
        while b.cum[jb] + wraps - theta <= t {
            jb += 1;
            if jb == n {
                jb = 0;
                wraps += 1.0;
            }
        }
    }
    cost
}

fn w2_squared(a: &Atoms, b: &Atoms, dphi: f64) -> f64 {
    // The lifted cost is convex and piecewise linear in the shift; its
    // minimum sits on a breakpoint where a cumulative level of `a` meets one
    // of `b`.
    let f = |theta: f64| lifted_cost(a, b, dphi, theta);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..90 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let mut best = f(lo).min(f(hi)).min(f1).min(f2);
    let slack = 1e-12;
    let levels = |c: &[f64]| std::iter::once(0.0).chain(c.iter().copied()).collect::<Vec<_>>();
    let (la, lb) = (levels(&a.cum), levels(&b.cum));
    for &ca in &la {
        for &cb in &lb {
            for k in [-1.0, 0.0, 1.0] {
                let theta = cb - ca + k;
                if theta >= lo - slack && theta <= hi + slack {
                    best = best.min(f(theta));
                }
            }
        }
    }
    best.max(0.0)
}

/// 2-Wasserstein distance between the discrete measures `a dphi` and
/// `b dphi` on the circle with geodesic ground distance.
///
/// Entries in `(-1e-5, 0)` are clamped to zero and the measures renormalized
/// for the transport computation; anything more negative is an error.
pub fn circular_w2(a: &[f64], b: &[f64], grid: &PeriodicGrid) -> Result<f64> {
    grid.check_len(a.len())?;
    grid.check_len(b.len())?;
    let a = Atoms::from_density(a, grid, true)?;
    let b = Atoms::from_density(b, grid, true)?;
    Ok(w2_squared(&a, &b, grid.dphi()).sqrt())
}

/// Same as [`circular_w2`] but clamps any negative entry. Used for solver
/// iterates, which may transiently dip below the tolerance.
pub(crate) fn circular_w2_clamped(a: &[f64], b: &[f64], grid: &PeriodicGrid) -> Result<f64> {
    let a = Atoms::from_density(a, grid, false)?;
    let b = Atoms::from_density(b, grid, false)?;
    Ok(w2_squared(&a, &b, grid.dphi()).sqrt())
}

/// Whether the clamped distance of [`circular_w2_clamped`] is below `eps`.
///
/// The circular `W₁` distance of grid measures is `min_c Σ |F_j - c| dphi`
/// with `F` the cumulative difference, and `W₁ ≤ W₂ ≤ √(π W₁)`; the exact
/// distance is only computed when these bounds straddle `eps`.
pub(crate) fn circular_w2_below(a: &[f64], b: &[f64], grid: &PeriodicGrid, eps: f64) -> Result<bool> {
    let a = Atoms::from_density(a, grid, false)?;
    let b = Atoms::from_density(b, grid, false)?;
    let mut diff: Vec<f64> = a.cum.iter().zip(&b.cum).map(|(x, y)| x - y).collect();
    let mut sorted = diff.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    diff.iter_mut().for_each(|d| *d = (*d - median).abs());
    let w1 = diff.iter().sum::<f64>() * grid.dphi();
    // margins keep rounding in the bounds from deciding borderline cases
    if w1 > eps * (1.0 + 1e-9) {
        return Ok(false);
    }
    if std::f64::consts::PI * w1 < eps * eps * (1.0 - 1e-9) {
        return Ok(true);
    }
    Ok(w2_squared(&a, &b, grid.dphi()).sqrt() < eps)
}

/// First sample time at which `W₂(m(t), target) < eps_w`.
pub fn recovery_time_w(
    times: &[f64],
    densities: &[Vec<f64>],
    target: &[f64],
    grid: &PeriodicGrid,
    eps_w: f64,
) -> Result<Option<f64>> {
    for (t, m) in times.iter().zip(densities) {
        if circular_w2(m, target, grid)? < eps_w {
            return Ok(Some(*t));
        }
    }
    Ok(None)
}

/// First sample time at which `|z(t) - e^{ip} z*| < eps_z`.
pub fn recovery_time_z(
    times: &[f64],
    densities: &[Vec<f64>],
    grid: &PeriodicGrid,
    z_star: Complex64,
    p: f64,
    eps_z: f64,
) -> Option<f64> {
    let target = Complex64::from_polar(1.0, p) * z_star;
    times
        .iter()
        .zip(densities)
        .find(|(_, m)| (order_parameter(m, grid) - target).norm() < eps_z)
        .map(|(t, _)| *t)
}

/// Control used while recovering.
#[derive(Debug, Clone, Copy)]
pub enum ControlSource<'a> {
    /// A single time-independent control (recovery under the ergodic control).
    Fixed(&'a [f64]),
    /// One control per stored sample (recovery mean field game).
    PerSample(&'a [Vec<f64>]),
}

impl<'a> ControlSource<'a> {
    fn at(&self, i: usize) -> &'a [f64] {
        match *self {
            ControlSource::Fixed(b) => b,
            ControlSource::PerSample(bs) => &bs[i],
        }
    }
}

/// Instantaneous population costs at each sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostTraces {
    pub t_hours: Vec<f64>,
    pub f_alpha: Vec<f64>,
    pub f_osc: Vec<f64>,
    pub f_sun: Vec<f64>,
    pub f_total: Vec<f64>,
}

/// Computes the instantaneous cost traces along a sampled path.
pub fn cost_traces(
    times: &[f64],
    densities: &[Vec<f64>],
    controls: ControlSource<'_>,
    params: &ModelParams,
    grid: &PeriodicGrid,
) -> Result<CostTraces> {
    if let ControlSource::PerSample(bs) = controls {
        if bs.len() != densities.len() {
            return Err(Error::LengthMismatch {
                expected: densities.len(),
                got: bs.len(),
            });
        }
    }
    let h = grid.dphi();
    let sun = sun_cost(grid, params.time_zone);
    let norm = 1.0 + params.interaction_weight + params.sun_weight;
    let mut out = CostTraces::default();
    for (i, (t, m)) in times.iter().zip(densities).enumerate() {
        grid.check_len(m.len())?;
        let beta = controls.at(i);
        grid.check_len(beta.len())?;
        let osc = interaction_cost(grid, m);
        let (mut fa, mut fo, mut fs) = (0.0, 0.0, 0.0);
        for j in 0..m.len() {
            fa += 0.5 * beta[j] * beta[j] * m[j];
            fo += osc[j] * m[j];
            fs += sun[j] * m[j];
        }
        let (fa, fo, fs) = (fa * h, fo * h, fs * h);
        out.t_hours.push(*t);
        out.f_alpha.push(fa);
        out.f_osc.push(fo);
        out.f_sun.push(fs);
        out.f_total
            .push((fa + params.interaction_weight * fo + params.sun_weight * fs) / norm);
    }
    Ok(out)
}

/// Trapezoid integral of `values` over `[0, upto]` hours.
pub fn integrate_window(times: &[f64], values: &[f64], upto: f64) -> f64 {
    let mut acc = 0.0;
    for i in 1..times.len().min(values.len()) {
        if times[i] > upto + 1e-9 {
            break;
        }
        acc += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
    }
    acc
}

/// Summary of one recovery run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub p_radians: f64,
    pub tau_w_hours: Option<f64>,
    pub tau_z_hours: Option<f64>,
    pub f_alpha_costhours: f64,
    pub f_osc_costhours: f64,
    pub f_sun_costhours: f64,
    pub f_total_costhours: f64,
    pub traces: CostTraces,
    /// `(t_hours, re z, im z)` at each sample.
    pub z_path: Vec<(f64, f64, f64)>,
}

impl RecoveryReport {
    pub fn tau_w_days(&self) -> Option<f64> {
        self.tau_w_hours.map(|h| h / 24.0)
    }

    pub fn tau_z_days(&self) -> Option<f64> {
        self.tau_z_hours.map(|h| h / 24.0)
    }
}

/// Recovery thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub eps_w: f64,
    pub eps_z: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            eps_w: 0.01,
            eps_z: 0.2,
        }
    }
}

/// Full metric evaluation of a sampled recovery path against the entrained
/// density `mu_star` (the home-zone solution, rotated internally by `p`).
#[allow(clippy::too_many_arguments)]
pub fn recovery_report(
    times: &[f64],
    densities: &[Vec<f64>],
    controls: ControlSource<'_>,
    mu_star: &[f64],
    params: &ModelParams,
    grid: &PeriodicGrid,
    thresholds: Thresholds,
) -> Result<RecoveryReport> {
    let p = params.time_zone;
    let r = grid.rotation_steps(p)?;
    let target = crate::grid::rotate_field(mu_star, r);
    let z_star = order_parameter(mu_star, grid);
    let tau_w = recovery_time_w(times, densities, &target, grid, thresholds.eps_w)?;
    let tau_z = recovery_time_z(times, densities, grid, z_star, p, thresholds.eps_z);
    let traces = cost_traces(times, densities, controls, params, grid)?;
    let integral = |v: &[f64]| integrate_window(&traces.t_hours, v, COST_WINDOW_HOURS);
    let z_path = times
        .iter()
        .zip(densities)
        .map(|(t, m)| {
            let z = order_parameter(m, grid);
            (*t, z.re, z.im)
        })
        .collect();
    Ok(RecoveryReport {
        p_radians: p,
        tau_w_hours: tau_w,
        tau_z_hours: tau_z,
        f_alpha_costhours: integral(&traces.f_alpha),
        f_osc_costhours: integral(&traces.f_osc),
        f_sun_costhours: integral(&traces.f_sun),
        f_total_costhours: integral(&traces.f_total),
        traces,
        z_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{normalize_density, rotate_field};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn atom(grid: &PeriodicGrid, j: usize) -> Vec<f64> {
        let mut m = vec![0.0; grid.n()];
        m[j] = 1.0 / grid.dphi();
        m
    }

    /// Min-cost flow on the complete bipartite graph (successive shortest
    /// paths with Bellman-Ford). Solves the transport linear program exactly
    /// and shares nothing with the quantile construction.
    fn transport_lp(a: &[f64], b: &[f64], cost: &dyn Fn(usize, usize) -> f64) -> f64 {
        let n = a.len();
        let m = b.len();
        // nodes: 0 source, 1..=n supply, n+1..=n+m demand, n+m+1 sink
        let nodes = n + m + 2;
        let sink = n + m + 1;
        let mut cap = vec![vec![0.0; nodes]; nodes];
        let mut w = vec![vec![0.0; nodes]; nodes];
        for i in 0..n {
            cap[0][1 + i] = a[i];
            for j in 0..m {
                cap[1 + i][n + 1 + j] = f64::INFINITY;
                w[1 + i][n + 1 + j] = cost(i, j);
                w[n + 1 + j][1 + i] = -cost(i, j);
            }
        }
        for j in 0..m {
            cap[n + 1 + j][sink] = b[j];
        }
        let mut total = 0.0;
        loop {
            let mut dist = vec![f64::INFINITY; nodes];
            let mut prev = vec![usize::MAX; nodes];
            dist[0] = 0.0;
            for _ in 0..nodes {
                let mut changed = false;
                for u in 0..nodes {
                    if dist[u] == f64::INFINITY {
                        continue;
                    }
                    for v in 0..nodes {
                        if cap[u][v] > 1e-15 && dist[u] + w[u][v] < dist[v] - 1e-12 {
                            dist[v] = dist[u] + w[u][v];
                            prev[v] = u;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[sink] == f64::INFINITY {
                break;
            }
            let mut flow = f64::INFINITY;
            let mut v = sink;
            while v != 0 {
                let u = prev[v];
                flow = flow.min(cap[u][v]);
                v = u;
            }
            let mut v = sink;
            while v != 0 {
                let u = prev[v];
                cap[u][v] -= flow;
                if cap[v][u] != f64::INFINITY {
                    cap[v][u] += flow;
                }
                v = u;
            }
            total += flow * dist[sink];
        }
        total
    }

    #[test]
    fn below_threshold_agrees_with_exact_distance() {
        let g = PeriodicGrid::new(30).unwrap();
        let base: Vec<f64> = (0..30).map(|j| (g.phi(j).cos() * 2.0).exp()).collect();
        let base = normalize_density(&g, &base).unwrap();
        for r in 0..30isize {
            for mix in [1e-6, 1e-3, 0.1, 1.0] {
                let shifted = rotate_field(&base, r);
                let m: Vec<f64> = base.iter().zip(&shifted).map(|(x, y)| (1.0 - mix) * x + mix * y).collect();
                let exact = circular_w2(&base, &m, &g).unwrap();
                for eps in [1e-5, 1e-3, 1e-2, 0.3] {
                    if (exact - eps).abs() > 1e-9 {
                        assert_eq!(circular_w2_below(&base, &m, &g, eps).unwrap(), exact < eps);
                    }
                }
            }
        }
    }

    #[test]
    fn order_parameter_examples() {
        let g = PeriodicGrid::new(120).unwrap();
        let z = order_parameter(&vec![1.0 / TAU; 120], &g);
        assert!(z.norm() < 1e-14);
        let z = order_parameter(&atom(&g, 30), &g);
        assert!((z - Complex64::new(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn w2_identity_and_atoms() {
        let g = PeriodicGrid::new(120).unwrap();
        let raw: Vec<f64> = (0..120).map(|j| 1.0 + (g.phi(j)).cos()).collect();
        let m = normalize_density(&g, &raw).unwrap();
        assert_eq!(circular_w2(&m, &m, &g).unwrap(), 0.0);
        for (i, j) in [(0, 1), (0, 60), (10, 100), (119, 3)] {
            let d = circular_w2(&atom(&g, i), &atom(&g, j), &g).unwrap();
            let gap = (i as f64 - j as f64).abs() * g.dphi();
            let expected = gap.min(TAU - gap);
            assert!((d - expected).abs() < 1e-12, "{i} {j}: {d} vs {expected}");
        }
    }

    #[test]
    fn w2_rejects_strong_negatives() {
        let g = PeriodicGrid::new(6).unwrap();
        let mut a = vec![1.0 / TAU; 6];
        a[0] = -1e-3;
        assert!(circular_w2(&a, &[1.0 / TAU; 6], &g).is_err());
        a[0] = -1e-7;
        assert!(circular_w2(&a, &[1.0 / TAU; 6], &g).is_ok());
    }

    #[test]
    fn w2_matches_transport_lp_on_six_points() {
        let g = PeriodicGrid::new(6).unwrap();
        let h = g.dphi();
        let geo = |i: usize, j: usize| {
            let d = (i as f64 - j as f64).abs() * h;
            let d = d.min(TAU - d);
            d * d
        };
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let a: Vec<f64> = (0..6).map(|_| next()).collect();
            let b: Vec<f64> = (0..6).map(|_| next()).collect();
            let a = normalize_density(&g, &a).unwrap();
            let b = normalize_density(&g, &b).unwrap();
            let ma: Vec<f64> = a.iter().map(|v| v * h).collect();
            let mb: Vec<f64> = b.iter().map(|v| v * h).collect();
            let lp = transport_lp(&ma, &mb, &geo).sqrt();
            let w = circular_w2(&a, &b, &g).unwrap();
            assert!((w - lp).abs() < 1e-8, "{w} vs {lp}");
        }
    }

    #[test]
    fn cost_traces_uniform() {
        let g = PeriodicGrid::new(120).unwrap();
        let uni = vec![vec![1.0 / TAU; 120]; 3];
        let beta = vec![0.0; 120];
        let params = ModelParams::reference().with_time_zone(1.0);
        let tr = cost_traces(&[0.0, 1.0, 2.0], &uni, ControlSource::Fixed(&beta), &params, &g)
            .unwrap();
        for i in 0..3 {
            assert_eq!(tr.f_alpha[i], 0.0);
            assert!((tr.f_osc[i] - 0.25).abs() < 1e-14);
            assert!((tr.f_sun[i] - 0.25).abs() < 1e-14);
            let k = params.interaction_weight;
            let f = params.sun_weight;
            assert!((tr.f_total[i] * (1.0 + k + f) - (k * 0.25 + f * 0.25)).abs() < 1e-14);
        }
    }

    #[test]
    fn trapezoid_window() {
        let t: Vec<f64> = (0..=300).map(|i| i as f64).collect();
        let v: Vec<f64> = t.iter().map(|x| 2.0 * x).collect();
        assert!((integrate_window(&t, &v, 240.0) - 240.0 * 240.0).abs() < 1e-9);
    }

    #[test]
    fn recovery_time_immediate() {
        let g = PeriodicGrid::new(24).unwrap();
        let raw: Vec<f64> = (0..24).map(|j| 1.5 + g.phi(j).cos()).collect();
        let m = normalize_density(&g, &raw).unwrap().into_inner();
        let path = vec![m.clone(); 4];
        let times = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(recovery_time_w(&times, &path, &m, &g, 0.01).unwrap(), Some(0.0));
        let z = order_parameter(&m, &g);
        assert_eq!(recovery_time_z(&times, &path, &g, z, 0.0, 0.2), Some(0.0));
        let far = rotate_field(&m, 12);
        assert_eq!(recovery_time_w(&times, &path, &far, &g, 0.01).unwrap(), None);
        assert_eq!(recovery_time_z(&times, &path, &g, z, PI, 0.2), None);
    }

    proptest! {
        #[test]
        fn w2_metric_properties(
            a in prop::collection::vec(0.0f64..1.0, 24),
            b in prop::collection::vec(0.0f64..1.0, 24),
            c in prop::collection::vec(0.0f64..1.0, 24),
            r in 0isize..24,
        ) {
            prop_assume!(a.iter().sum::<f64>() > 1e-3 && b.iter().sum::<f64>() > 1e-3 && c.iter().sum::<f64>() > 1e-3);
            let g = PeriodicGrid::new(24).unwrap();
            let a = normalize_density(&g, &a).unwrap();
            let b = normalize_density(&g, &b).unwrap();
            let c = normalize_density(&g, &c).unwrap();
            let ab = circular_w2(&a, &b, &g).unwrap();
            let ba = circular_w2(&b, &a, &g).unwrap();
            let ac = circular_w2(&a, &c, &g).unwrap();
            let cb = circular_w2(&c, &b, &g).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab <= ac + cb + 1e-8);
            prop_assert!(ab <= PI + 1e-12);
            let rab = circular_w2(&rotate_field(&a, r), &rotate_field(&b, r), &g).unwrap();
            prop_assert!((rab - ab).abs() < 1e-10);
        }

        #[test]
        fn order_parameter_rotation(a in prop::collection::vec(0.0f64..1.0, 24), r in 0isize..24) {
            prop_assume!(a.iter().sum::<f64>() > 1e-3);
            let g = PeriodicGrid::new(24).unwrap();
            let a = normalize_density(&g, &a).unwrap();
            let z = order_parameter(&a, &g);
            let zr = order_parameter(&rotate_field(&a, r), &g);
            prop_assert!(z.norm() <= 1.0 + 1e-10);
            prop_assert!((z.norm() - zr.norm()).abs() < 1e-12);
            let expected = z * Complex64::from_polar(1.0, r as f64 * g.dphi());
            prop_assert!((zr - expected).norm() < 1e-12);
        }
    }
}
