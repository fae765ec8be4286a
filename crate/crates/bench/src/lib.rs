//! Shared fixtures for the benchmarks.

use circadian_mfg::ergodic::{solve_alternating, ErgodicSolution, Method, SolverOptions};
use circadian_mfg::{ModelParams, PeriodicGrid, Scheme};

/// Stationary solution at the reference parameters on `n` points.
pub fn reference_solution(n: usize, scheme: Scheme) -> ErgodicSolution {
    let grid = PeriodicGrid::new(n).expect("valid grid");
    solve_alternating(
        &grid,
        &ModelParams::reference(),
        scheme,
        &SolverOptions::for_method(Method::Alternating),
    )
    .expect("reference solve")
}

/// A smooth single-peaked density on `grid`, centred at `center`.
pub fn bump(grid: &PeriodicGrid, center: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..grid.n())
        .map(|j| (2.0 * (grid.phi(j) - center).cos()).exp())
        .collect();
    circadian_mfg::normalize_density(grid, &raw)
        .expect("positive density")
        .into_inner()
}
