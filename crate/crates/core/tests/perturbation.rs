//! The solver at small K against the first-order expansion around the
//! analytic K = 0 solution: residuals must shrink like K².

use circadian_mfg::ergodic::{solve_alternating, ErgodicSolution, Method, SolverOptions};
use circadian_mfg::oracle::{gibbs_mu1, perturbation_dv1, perturbation_lambda1, special_case_solution};
use circadian_mfg::{ModelParams, PeriodicGrid, Scheme};

// wide enough noise for the base density to stay well away from zero
const SIGMA: f64 = 0.3;
const F: f64 = 0.05;
const KS: [f64; 3] = [0.02, 0.01, 0.005];

fn solve_k(grid: &PeriodicGrid, k: f64) -> ErgodicSolution {
    let mut p = ModelParams::reference();
    p.intrinsic_freq = p.sun_freq;
    p.sigma = SIGMA;
    p.sun_weight = F;
    p.interaction_weight = k;
    // W2 between atomic measures grows like the square root of a mass
    // change, so this still pins the density to about 1e-10
    let opts = SolverOptions {
        eps: 1e-6,
        ..SolverOptions::for_method(Method::Alternating)
    };
    let s = solve_alternating(grid, &p, Scheme::Centered, &opts).unwrap();
    assert!(s.outcome.is_converged(), "K={k}: {:?}", s.outcome);
    s
}

struct Residuals {
    weighted: Vec<f64>,
    literal: Vec<f64>,
    density: Vec<f64>,
}

fn residuals() -> Residuals {
    let g = PeriodicGrid::new(120).unwrap();
    let o = special_case_solution(F, SIGMA, &g).unwrap();
    let l1 = perturbation_lambda1(&o.mu, &g).unwrap();
    let dv1 = perturbation_dv1(&o.mu, l1.weighted, SIGMA, &g).unwrap();
    let mu1 = gibbs_mu1(&o.mu, &dv1, SIGMA, &g).unwrap();
    let s0 = solve_k(&g, 0.0);
    let mut r = Residuals {
        weighted: Vec::new(),
        literal: Vec::new(),
        density: Vec::new(),
    };
    for k in KS {
        let s = solve_k(&g, k);
        r.weighted.push((s.lambda - s0.lambda - k * l1.weighted).abs());
        r.literal.push((s.lambda - s0.lambda - k * l1.literal).abs());
        let dm = s
            .mu
            .iter()
            .zip(s0.mu.iter())
            .zip(&mu1)
            .map(|((a, b), d)| (a - b - k * d).abs())
            .fold(0.0, f64::max);
        r.density.push(dm);
    }
    r
}

fn ratios(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[0] / w[1]).collect()
}

#[test]
fn first_order_terms_leave_second_order_residuals() {
    let r = residuals();
    for (name, series) in [("lambda", &r.weighted), ("density", &r.density)] {
        for q in ratios(series) {
            assert!((3.0..=4.5).contains(&q), "{name}: {series:?}");
        }
    }
    // the unweighted constant misses a first-order term
    for q in ratios(&r.literal) {
        assert!((1.8..=2.2).contains(&q), "{:?}", r.literal);
    }
}
