//! `exomdp` command-line tool: event simulation, bound tables, LSTD evaluation, policy
//! iteration and the pendulum sweep. Exits with status 1 when an invariant checked during
//! the run fails, and 2 on usage or configuration errors.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use exomdp::bounds::{
    bellman_error_threshold, explain_lstd_bound, gram_eigenvalue_lower_bound, horizon_for_epsilon, policy_improvement_slack,
    state_cropping_bound, suboptimality_epsilon, tail_sum,
};
use exomdp::config::{self, BoundsConfig, EvaluateConfig, HawkesRunConfig, PolicyIterConfig};
use exomdp::event_process::{mark_tv_bound, rollout_events};
use exomdp::experiment::{self, collect_path, ground_truth_values, value_mse, ExperimentConfig};
use exomdp::lstd::{build_design, FeatureMap, LinearValueFunction, LstdReport};
use exomdp::mdp::finite::FiniteChainEnv;
use exomdp::policy_iter::run_policy_iteration;

#[derive(Parser, Debug)]
#[command(name = "exomdp", version, about = "MDPs perturbed by exogenous event processes")]
struct Cli {
    /// TOML configuration for the subcommand (defaults are used for missing keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; results are printed to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the number of trials (experiment).
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Worker threads (all cores when absent).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the marked Hawkes process and write its history as CSV.
    SimulateHawkes {
        /// Overrides the number of steps.
        #[arg(long)]
        length: Option<usize>,
    },
    /// Print every truncation, policy-iteration and LSTD bound.
    Bounds {
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Fit pathwise LSTD to one pendulum sample path and report its error.
    Evaluate {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Run policy iteration over event windows on a random finite chain.
    PolicyIter {
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
    },
    /// Run the pendulum sweep over sample count, event horizon and decay rate.
    Experiment,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

/// An invariant checked during the run.
struct Check {
    name: String,
    passed: bool,
    detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

fn output(out: Option<&Path>, file: &str) -> Result<Box<dyn Write>> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(file);
            Ok(Box::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
        }
        None => Ok(Box::new(io::stdout())),
    }
}

fn simulate_hawkes(cli: &Cli, length: Option<usize>) -> Result<Vec<Check>> {
    let mut cfg: HawkesRunConfig = config::load_or_default(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(l) = length {
        cfg.length = l;
    }
    let params = cfg.hawkes.build()?;
    let history = rollout_events(&params, cfg.length, cfg.seed);
    history.write_csv(output(cli.out.as_deref(), "events.csv")?)?;
    let mut err = io::stderr();
    writeln!(err, "steps {} events {} stable {}", history.len(), history.event_count(), params.is_stable())?;
    for &t in &cfg.report_lags {
        writeln!(err, "N_{t} = {:.6e}", mark_tv_bound(&params, t)?)?;
    }
    let non_events_zero = history.steps().iter().all(|s| s.indicator || s.mark == 0.0);
    Ok(vec![Check::new("non_event_marks_zero", non_events_zero, "")])
}

fn bounds(cli: &Cli, format: Format) -> Result<Vec<Check>> {
    let cfg: BoundsConfig = config::load_or_default(cli.config.as_deref())?;
    cfg.decay.validate()?;
    let g = cfg.gamma;
    let mut w = output(cli.out.as_deref(), if format == Format::Csv { "bounds.csv" } else { "bounds.txt" })?;
    let header = ["T", "tail_m", "tail_n", "integral_m", "integral_n", "state_cropping", "suboptimality", "improvement_slack", "bellman_threshold", "lstd_bound"];
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for &t in &cfg.horizons {
        let tm = tail_sum(&cfg.decay.m_kernel, t)?;
        let tn = tail_sum(&cfg.decay.n_kernel, t)?;
        for (k, ts) in [("m", tm), ("n", tn)] {
            if let Some(ib) = ts.integral_bound {
                checks.push(Check::new(format!("integral_bound_dominates_{k}_T{t}"), ib >= ts.exact, format!("{ib} >= {}", ts.exact)));
            }
        }
        let lstd = explain_lstd_bound(&exomdp::bounds::LstdBoundInputs { gamma: g, ..cfg.lstd }, &cfg.decay, t, &cfg.mixing)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into());
        rows.push(vec![
            t.to_string(),
            format!("{:.6e}", tm.exact),
            format!("{:.6e}", tn.exact),
            opt(tm.integral_bound),
            opt(tn.integral_bound),
            format!("{:.6e}", state_cropping_bound(&cfg.decay, g, t)?),
            format!("{:.6e}", suboptimality_epsilon(&cfg.decay, g, t)?),
            format!("{:.6e}", policy_improvement_slack(&cfg.decay, g, t)?),
            format!("{:.6e}", bellman_error_threshold(&cfg.decay, g, t)?),
            format!("{:.6e}", lstd.total),
        ]);
    }
    match format {
        Format::Csv => {
            writeln!(w, "{}", header.join(","))?;
            for r in &rows {
                writeln!(w, "{}", r.join(","))?;
            }
        }
        Format::Text => {
            let widths: Vec<usize> = (0..header.len())
                .map(|j| rows.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap_or(0))
                .collect();
            let line = |cells: Vec<&str>| cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ");
            writeln!(w, "{}", line(header.to_vec()))?;
            for r in &rows {
                writeln!(w, "{}", line(r.iter().map(|s| s.as_str()).collect()))?;
            }
            let gram = gram_eigenvalue_lower_bound(cfg.lstd.omega, cfg.lstd.n, cfg.lstd.d, cfg.lstd.delta, &cfg.mixing, cfg.lstd.feature_bound)?;
            writeln!(w, "gram_eigenvalue_lower_bound = {:.6e} (feasible: {})", gram.value, gram.feasible)?;
        }
    }
    match horizon_for_epsilon(&cfg.decay, g, cfg.epsilon) {
        Ok(t) => {
            let sub = suboptimality_epsilon(&cfg.decay, g, t)?;
            writeln!(io::stderr(), "horizon_for_epsilon(eps = {}) = {t}", cfg.epsilon)?;
            checks.push(Check::new("horizon_meets_epsilon", sub <= cfg.epsilon, format!("suboptimality {sub:.6e} <= {}", cfg.epsilon)));
        }
        Err(e) => writeln!(io::stderr(), "horizon_for_epsilon: {e}")?,
    }
    Ok(checks)
}

fn evaluate(cli: &Cli, samples: Option<usize>, horizon: Option<usize>) -> Result<Vec<Check>> {
    let mut cfg: EvaluateConfig = config::load_or_default(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.experiment.base_seed = s;
    }
    let n = samples.unwrap_or(cfg.samples);
    let t = horizon.unwrap_or(cfg.horizon);
    let exp = &cfg.experiment;
    exp.validate()?;
    let env = exp.env_for_decay(cfg.decay)?;
    let features = exp.features(t);
    let burn_in = exomdp::bounds::burn_in_length(n, exp.delta, &exp.mixing)?;
    let path = collect_path(&env, &exp.policy, n, t, burn_in, exp.base_seed)?;
    let design = build_design(&path, &features)?;
    let report = LstdReport::fit(&design, exomdp::mdp::PerturbedEnv::gamma(&env))?;
    let truth = ground_truth_values(&env, &exp.policy, &exp.ground_truth, exomdp::policy_iter::item_seed(exp.base_seed ^ 0x6A09_E667_F3BC_C908, 0))?;
    let v = LinearValueFunction::clipped(report.weights.clone(), exomdp::mdp::PerturbedEnv::gamma(&env));
    let mse = value_mse(&v, &features, t, &truth);
    let mut w = output(cli.out.as_deref(), "lstd.txt")?;
    write!(w, "{}", report.to_text())?;
    writeln!(w, "burn_in = {burn_in}")?;
    writeln!(w, "feature_bound = {}", features.bound())?;
    writeln!(w, "mse = {mse}")?;
    let full_rank = report.rank == report.d;
    Ok(vec![Check::new(
        "lstd_fixed_point",
        !full_rank || report.residual <= 1e-8,
        format!("residual {:.3e} (rank {} of {})", report.residual, report.rank, report.d),
    )])
}

fn policy_iter(cli: &Cli, horizon: Option<usize>, k_max: Option<usize>) -> Result<Vec<Check>> {
    let mut cfg: PolicyIterConfig = config::load_or_default(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.chain.seed = s;
        cfg.mc.seed = s;
    }
    let t = horizon.unwrap_or(cfg.horizon);
    let k = k_max.unwrap_or(cfg.k_max);
    let env = FiniteChainEnv::from_spec(&cfg.chain)?;
    let pool = rayon_pool(cli.jobs)?;
    let report = pool.install(|| run_policy_iteration(&env, t, k, cfg.monte_carlo.then_some(&cfg.mc)))?;
    report.write_csv(output(cli.out.as_deref(), "iterations.csv")?)?;
    let mut err = io::stderr();
    writeln!(
        err,
        "iterations {} converged {} bellman_threshold {:.6e} improvement_slack {:.6e} min_change {:.6e}",
        report.iterations.len() - 1,
        report.converged,
        report.bellman_threshold,
        report.improvement_slack,
        report.min_change()
    )?;
    Ok(vec![
        Check::new("improvement_or_small_bellman_error", report.guarantee_violations() == 0, format!("{} violations", report.guarantee_violations())),
        Check::new("decrease_within_slack", report.slack_respected(), format!("min change {:.6e} vs slack {:.6e}", report.min_change(), report.improvement_slack)),
    ])
}

fn rayon_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    Ok(builder.build()?)
}

fn run_experiment(cli: &Cli) -> Result<Vec<Check>> {
    let mut cfg: ExperimentConfig = match cli.config.as_deref() {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    if let Some(t) = cli.trials {
        cfg.trials = t;
    }
    let sweep = experiment::run_sweep(&cfg, cli.jobs)?;
    let checks = experiment::trend_checks(&sweep.aggregates);
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("experiment-out"));
    for p in experiment::emit_report(&cfg, &sweep, &checks, &dir)? {
        writeln!(io::stderr(), "wrote {}", p.display())?;
    }
    let mut out = io::stdout();
    for a in &sweep.aggregates {
        writeln!(out, "{:<8} N={:<6} T={} rate={:<4} median_mse={:.6e} failures={}", a.point.panel.name(), a.point.n, a.point.horizon, a.point.decay, a.median, a.failures)?;
    }
    Ok(checks.into_iter().map(|c| Check::new(c.name, c.passed, c.detail)).collect())
}

fn run(cli: &Cli) -> Result<Vec<Check>> {
    match &cli.command {
        Command::SimulateHawkes { length } => simulate_hawkes(cli, *length),
        Command::Bounds { format } => bounds(cli, *format),
        Command::Evaluate { samples, horizon } => evaluate(cli, *samples, *horizon),
        Command::PolicyIter { horizon, k_max } => policy_iter(cli, *horizon, *k_max),
        Command::Experiment => run_experiment(cli),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(checks) => {
            let mut failed = false;
            for c in &checks {
                eprintln!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed |= !c.passed;
            }
            if failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
