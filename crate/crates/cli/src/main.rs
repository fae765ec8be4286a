//! `circadian-mfg`: stationary solves, jet-lag recovery runs, parameter
//! sweeps and analytic cross-checks driven by a `key = value` config file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use circadian_mfg::ergodic::{solve, ErgodicSolution, OutcomeClass};
use circadian_mfg::metrics::RecoveryReport;
use circadian_mfg::mfg::{evaluate_mfg, solve_recovery_mfg};
use circadian_mfg::oracle::{
    gibbs_mu1, literal_special_case_lambda, perturbation_dv1, perturbation_lambda1,
    special_case_solution,
};
use circadian_mfg::persist::{
    load_solution_file, save_solution, write_field_csv, write_json, write_traces_csv, write_z_csv,
    ReportSummary,
};
use circadian_mfg::recovery::{evaluate_recovery, run_recovery};
use circadian_mfg::sweep::{run_sweep, write_sweep_csv};
use circadian_mfg::{Error, RecoveryMode, RunConfig, SweepParam, SweepSpec};

const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_INVALID: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(version, about = "Mean field game solvers for circadian oscillators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines; reference settings when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set K=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the stationary game and save the solution.
    Ergodic {
        #[command(flatten)]
        common: Common,
        /// Output file; defaults to `<out_dir>/solution.json`.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Simulate recovery after a trip of `p_hours` time zones.
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ergodic")]
        mode: RecoveryMode,
        /// Stationary solution to start from; defaults to `<out_dir>/solution.json`.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Vary one parameter and record east and west recovery metrics.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long = "sweep-param")]
        sweep_param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "ergodic")]
        mode: RecoveryMode,
    },
    /// Compare the stationary solver with the analytic special case.
    OracleCheck {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for item in &common.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{item}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok(&cfg.out_dir)
}

fn solution_path(cfg: &RunConfig, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| cfg.out_dir.join("solution.json"))
}

fn outcome_code(outcome: &OutcomeClass) -> u8 {
    match outcome {
        OutcomeClass::Converged => 0,
        OutcomeClass::NotConverged => EXIT_NOT_CONVERGED,
        OutcomeClass::InvalidSolution(_) => EXIT_INVALID,
    }
}

fn summary_line(s: &ErgodicSolution) -> String {
    format!(
        "outcome={} lambda={:.10e} iterations={} psi={:.3e} min_mu={:.3e}",
        s.outcome.label(),
        s.lambda,
        s.iterations,
        s.mean_phase(),
        s.mu.min_value()
    )
}

fn cmd_ergodic(common: &Common, solution: Option<PathBuf>) -> Result<u8> {
    let cfg = load_config(common)?;
    let grid = cfg.grid()?;
    let s = solve(&grid, &cfg.params, cfg.scheme, cfg.method, &cfg.solver_options())?;
    out_dir(&cfg)?;
    let path = solution_path(&cfg, solution);
    save_solution(&path, &s, &cfg)?;
    println!("{}", summary_line(&s));
    info!("solution written to {}", path.display());
    Ok(outcome_code(&s.outcome))
}

fn write_report(
    dir: &Path,
    stem: &str,
    summary: &ReportSummary,
    report: &RecoveryReport,
    times: &[f64],
    densities: &[Vec<f64>],
) -> Result<()> {
    write_field_csv(&dir.join(format!("{stem}_path.csv")), times, densities)?;
    write_z_csv(&dir.join(format!("{stem}_z.csv")), &report.z_path)?;
    write_traces_csv(&dir.join(format!("{stem}_traces.csv")), &report.traces)?;
    write_json(&dir.join(format!("{stem}_report.json")), summary)?;
    Ok(())
}

fn cmd_recover(common: &Common, mode: RecoveryMode, solution: Option<PathBuf>) -> Result<u8> {
    let cfg = load_config(common)?;
    let path = solution_path(&cfg, solution);
    let file = load_solution_file(&path)
        .with_context(|| format!("reading stationary solution {}", path.display()))?;
    file.check_matches(&cfg)?;
    let ergodic = file.into_solution()?;
    let code = outcome_code(&ergodic.outcome);
    if code != 0 {
        eprintln!("stationary solution is {}; nothing to recover towards", ergodic.outcome.label());
        return Ok(code);
    }
    let p = cfg.trip_angle();
    let dir = out_dir(&cfg)?;
    let stem = format!("recover_{mode}_p{}", cfg.p_hours);
    let converged = match mode {
        RecoveryMode::Ergodic => {
            let run = run_recovery(&ergodic, p, &cfg.recovery_options())?;
            let report = evaluate_recovery(&ergodic, &run, cfg.thresholds())?;
            let summary = ReportSummary::new("ergodic", cfg.p_hours, &report, true, None);
            write_report(dir, &stem, &summary, &report, &run.times, &run.densities)?;
            print_summary(&summary);
            true
        }
        RecoveryMode::Mfg => {
            let run = solve_recovery_mfg(&ergodic, p, &cfg.mfg_options())?;
            let report = evaluate_mfg(&ergodic, &run, cfg.thresholds())?;
            let summary =
                ReportSummary::new("mfg", cfg.p_hours, &report, run.converged, Some(run.iterations));
            write_report(dir, &stem, &summary, &report, &run.times, &run.densities)?;
            print_summary(&summary);
            run.converged
        }
    };
    Ok(if converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn print_summary(s: &ReportSummary) {
    let days = |x: Option<f64>| x.map_or_else(|| "none".to_string(), |d| format!("{d:.4}"));
    println!(
        "mode={} p_hours={} tau_w_days={} tau_z_days={} f_alpha={:.6} f_osc={:.6} f_sun={:.6} f_total={:.6} converged={}",
        s.mode,
        s.p_hours,
        days(s.tau_w_days),
        days(s.tau_z_days),
        s.f_alpha_costhours,
        s.f_osc_costhours,
        s.f_sun_costhours,
        s.f_total_costhours,
        s.converged
    );
}

fn cmd_sweep(common: &Common, param: SweepParam, values: Vec<f64>, mode: RecoveryMode) -> Result<u8> {
    let base = load_config(common)?;
    let spec = SweepSpec { param, values, base, mode };
    let rows = run_sweep(&spec);
    let dir = out_dir(&spec.base)?;
    let path = dir.join(format!("sweep_{param}_{mode}.csv"));
    write_sweep_csv(&path, &rows)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!("{} points, {failed} without metrics, written to {}", rows.len(), path.display());
    Ok(0)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn solve_at(cfg: &RunConfig, n: usize) -> Result<ErgodicSolution> {
    let grid = circadian_mfg::PeriodicGrid::new(n)?;
    Ok(solve(&grid, &cfg.params, cfg.scheme, cfg.method, &cfg.solver_options())?)
}

fn cmd_oracle_check(common: &Common) -> Result<u8> {
    let cfg = load_config(common)?;
    let p = &cfg.params;
    if (p.intrinsic_freq - p.sun_freq).abs() > 1e-12 {
        return Err(Error::Config("the analytic case needs omega_0 = omega_S".into()).into());
    }
    let (f, sigma) = (p.sun_weight, p.sigma);
    let mut base = cfg.clone();
    base.params.interaction_weight = 0.0;

    println!("special case F={f} sigma={sigma} scheme={}", cfg.scheme);
    let mut errors = Vec::new();
    for n in [cfg.n / 2, cfg.n] {
        let s = solve_at(&base, n)?;
        let o = special_case_solution(f, sigma, &s.grid())?;
        let err = max_abs_diff(&s.mu, &o.mu);
        println!(
            "n={n} outcome={} |mu - oracle|inf={err:.4e} lambda={:.10e} oracle={:.10e}",
            s.outcome.label(),
            s.lambda,
            o.lambda
        );
        errors.push(err);
    }
    if errors[1] > 0.0 {
        let ratio = errors[0] / errors[1];
        println!("refinement ratio {ratio:.3} (order {:.2})", ratio.log2());
    }
    println!("literal-constant lambda {:.10e}", literal_special_case_lambda(f, sigma)?);

    let k = cfg.params.interaction_weight;
    if k > 0.0 {
        // first-order check: the residual should shrink with K
        let s0 = solve_at(&base, cfg.n)?;
        let grid = s0.grid();
        let o = special_case_solution(f, sigma, &grid)?;
        let l1 = perturbation_lambda1(&o.mu, &grid)?;
        let mu1 = perturbation_dv1(&o.mu, l1.weighted, sigma, &grid)
            .and_then(|dv1| gibbs_mu1(&o.mu, &dv1, sigma, &grid));
        for kk in [k, k / 2.0] {
            let mut c = cfg.clone();
            c.params.interaction_weight = kk;
            let s = solve_at(&c, cfg.n)?;
            let dl = s.lambda - s0.lambda - kk * l1.weighted;
            match &mu1 {
                Ok(mu1) => {
                    let pred: Vec<f64> = s0.mu.iter().zip(mu1).map(|(m, d)| m + kk * d).collect();
                    println!(
                        "K={kk:e} lambda residual {dl:.4e} density residual {:.4e}",
                        max_abs_diff(&s.mu, &pred)
                    );
                }
                Err(e) => println!("K={kk:e} lambda residual {dl:.4e} (density term unavailable: {e})"),
            }
        }
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Ergodic { common, solution } => cmd_ergodic(&common, solution),
        Command::Recover { common, mode, solution } => cmd_recover(&common, mode, solution),
        Command::Sweep { common, sweep_param, values, mode } => {
            cmd_sweep(&common, sweep_param, values, mode)
        }
        Command::OracleCheck { common } => cmd_oracle_check(&common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = matches!(e.downcast_ref::<Error>(), Some(Error::Config(_)));
            ExitCode::from(if config_error { EXIT_CONFIG } else { 1 })
        }
    }
}
