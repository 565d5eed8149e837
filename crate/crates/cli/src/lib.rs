//! Command-line front end.
//!
//! Exit codes: `0` success, `2` invalid input or configuration (one-line JSON
//! error on stderr), `3` no convergence (the partial result is still
//! written), `1` any other numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use coordlab::attack::{AttackFunction, EquilibriumReport};
use coordlab::benchmark::{solve_benchmark, verify_benchmark_numerically};
use coordlab::dist::ErrorDistribution;
use coordlab::netsignal::{
    attack_fixed_points, bifurcation, find_equilibrium_cutoffs, multiplicity_region, Branch,
    CutoffScan,
};
use coordlab::onesignal::{attack_cutoff, check_one_signal_conditions, run_iteration_1s};
use coordlab::parallel::default_workers;
use coordlab::simlab::{run_unchecked, SimConfig, SimTrace, Strategy};
use coordlab::twosignal::{
    attack_set, build_step_equilibrium, check_two_signal_conditions, run_iteration, verify_consistency,
    GameParams,
};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

pub mod config;
pub mod output;

use config::{ExperimentConfig, Format, Model};
use output::{to_csv, to_json};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] coordlab::Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_domain() => 2,
            CliError::Core(coordlab::Error::Convergence { .. }) => 3,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Core(e) => match e {
                coordlab::Error::Domain(_) => "domain",
                coordlab::Error::Convergence { .. } => "convergence",
                coordlab::Error::Integration { .. } => "integration",
                coordlab::Error::Numerical(_) => "numerical",
                coordlab::Error::InvariantViolation(_) => "invariant",
            },
        }
    }

    fn to_line(&self) -> String {
        let mut v = json!({"error": self.kind(), "message": self.to_string()});
        if let CliError::Core(coordlab::Error::Convergence { iterations, last_delta, .. }) = self {
            v["iterations"] = json!(iterations);
            v["last_delta"] = json!(last_delta);
        }
        to_json(&v)
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "coordlab", version, about = "Equilibria of coordination games with private signals")]
struct Cli {
    /// Experiment configuration file (.json or .toml).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output format; defaults to json, or csv for simulate and `.csv` outputs.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write results here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to COORDLAB_WORKERS, else available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form benchmark without action signals.
    Benchmark {
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        alpha_x: Option<f64>,
    },
    /// Single signal over the net attack with normal noise.
    #[command(subcommand)]
    Netsignal(NetCmd),
    /// Separate signals over the fundamental and the attack.
    #[command(subcommand)]
    Twosignal(TwoCmd),
    /// Single net signal with a general error law.
    #[command(subcommand)]
    Onesignal(OneCmd),
    /// Agent-based simulation of the steady state.
    Simulate(SimArgs),
}

#[derive(Debug, Subcommand)]
enum NetCmd {
    /// All attack masses consistent with a cutoff at one fundamental.
    FixedPoints {
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        z_star: Option<f64>,
        #[arg(long)]
        alpha_z: Option<f64>,
    },
    /// Fixed points over a range of fundamentals plus the multiplicity window.
    Bifurcation {
        #[arg(long, allow_hyphen_values = true)]
        z_star: Option<f64>,
        #[arg(long)]
        alpha_z: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        theta_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        theta_max: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Equilibrium cutoffs where the posterior success probability equals c.
    Cutoffs {
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        alpha_z: Option<f64>,
        /// `relative:S` (fraction of the window) or `absolute:T` (fundamental).
        #[arg(long, value_parser = parse_branch)]
        branch: Option<Branch>,
        #[arg(long, allow_hyphen_values = true)]
        z_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        z_max: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
enum TwoCmd {
    /// Evaluate the sufficient conditions.
    Check {
        #[arg(long)]
        eta_max: Option<f64>,
    },
    /// Best-response iteration from the step at t.
    Iterate(IterArgs),
    /// Check the indicator step against uniform action noise of half-width sigma.
    Step {
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
    },
}

#[derive(Debug, Subcommand)]
enum OneCmd {
    /// Evaluate the sufficient conditions.
    Check {
        #[arg(long)]
        xi_max: Option<f64>,
    },
    /// Cutoff and best-response iteration from the step at t.
    Iterate(IterArgs),
}

#[derive(Debug, Args)]
struct IterArgs {
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    sup_tol: Option<f64>,
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Which equilibrium strategy the agents play.
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of agents.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Aggregate attack before the first round.
    #[arg(long)]
    init: Option<f64>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    max_rounds: Option<usize>,
}

fn parse_branch(s: &str) -> Result<Branch, String> {
    let (kind, value) = s
        .split_once(':')
        .ok_or_else(|| format!("expected relative:S or absolute:T, got {s}"))?;
    let v: f64 = value.parse().map_err(|e| format!("{value}: {e}"))?;
    match kind {
        "relative" => Ok(Branch::Relative(v)),
        "absolute" => Ok(Branch::Absolute(v)),
        _ => Err(format!("unknown branch kind {kind}")),
    }
}

/// Resolved output destination and format.
struct Sink {
    out: Option<PathBuf>,
    format: Format,
}

impl Sink {
    fn emit(&self, text: &str) -> CliResult<()> {
        match &self.out {
            Some(path) => write_file(path, text),
            None => {
                print!("{text}");
                if !text.ends_with('\n') {
                    println!();
                }
                Ok(())
            }
        }
    }

    fn report<T: Serialize>(&self, value: &T, csv: impl FnOnce() -> String) -> CliResult<()> {
        match self.format {
            Format::Json => self.emit(&to_json(value)),
            Format::Csv => self.emit(&csv()),
        }
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

struct Ctx {
    cfg: ExperimentConfig,
    sink: Sink,
    workers: usize,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{e}");
                return 2;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let err = CliError::Usage(first.to_string());
            eprintln!("{}", err.to_line());
            return err.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let out = cli.out.clone().or_else(|| cfg.out.clone());
    let is_sim = matches!(cli.command, Command::Simulate(_));
    let from_ext = out
        .as_ref()
        .and_then(|p| p.extension())
        .and_then(|e| e.to_str())
        .and_then(|e| match e {
            "csv" => Some(Format::Csv),
            "json" => Some(Format::Json),
            _ => None,
        });
    let format = cli
        .format
        .or(cfg.format)
        .or(from_ext)
        .unwrap_or(if is_sim { Format::Csv } else { Format::Json });
    let workers = cli.workers.or(cfg.workers).unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(CliError::Usage("workers must be at least 1".into()));
    }
    let ctx = Ctx {
        cfg,
        sink: Sink { out, format },
        workers,
    };
    match cli.command {
        Command::Benchmark { c, alpha_x } => benchmark(&ctx, c, alpha_x),
        Command::Netsignal(cmd) => netsignal(&ctx, cmd),
        Command::Twosignal(cmd) => twosignal(&ctx, cmd),
        Command::Onesignal(cmd) => onesignal(&ctx, cmd),
        Command::Simulate(args) => simulate(&ctx, args),
    }
}

fn benchmark(ctx: &Ctx, c: Option<f64>, alpha_x: Option<f64>) -> CliResult<()> {
    let sec = &ctx.cfg.benchmark;
    let c = c.or(sec.c).unwrap_or(0.5);
    let alpha_x = alpha_x.or(sec.alpha_x).unwrap_or(1.0);
    let s = solve_benchmark(c, alpha_x)?;
    let n = verify_benchmark_numerically(c, alpha_x)?;
    let value = json!({
        "c": s.c,
        "alpha_x": s.alpha_x,
        "theta_star": s.theta_star,
        "x_star": s.x_star,
        "numerical_theta_star": n.solution.theta_star,
        "numerical_x_star": n.solution.x_star,
    });
    ctx.sink.report(&value, || {
        to_csv(
            &["c", "alpha_x", "theta_star", "x_star", "numerical_theta_star", "numerical_x_star"],
            [vec![
                s.c.into(),
                s.alpha_x.into(),
                s.theta_star.into(),
                s.x_star.into(),
                n.solution.theta_star.into(),
                n.solution.x_star.into(),
            ]],
        )
    })
}

fn netsignal(ctx: &Ctx, cmd: NetCmd) -> CliResult<()> {
    let sec = &ctx.cfg.netsignal;
    let alpha_default = sec.alpha_z.unwrap_or(16.0);
    let z_default = sec.z_star.unwrap_or(0.25);
    match cmd {
        NetCmd::FixedPoints { theta, z_star, alpha_z } => {
            let theta = theta.or(sec.theta).unwrap_or(0.25);
            let set = attack_fixed_points(theta, z_star.unwrap_or(z_default), alpha_z.unwrap_or(alpha_default))?;
            ctx.sink.report(&set, || {
                to_csv(
                    &["theta", "z_star", "alpha_z", "attack", "slope", "stability"],
                    set.solutions.iter().map(|s| {
                        vec![
                            set.theta.into(),
                            set.z_star.into(),
                            set.alpha_z.into(),
                            s.attack.into(),
                            s.slope.into(),
                            stability_name(s.stability).into(),
                        ]
                    }),
                )
            })
        }
        NetCmd::Bifurcation { z_star, alpha_z, theta_min, theta_max, points } => {
            let z = z_star.unwrap_or(z_default);
            let alpha = alpha_z.unwrap_or(alpha_default);
            let lo = theta_min.or(sec.theta_min).unwrap_or(-0.5);
            let hi = theta_max.or(sec.theta_max).unwrap_or(1.5);
            let n = points.or(sec.points).unwrap_or(201);
            if n < 2 || !(hi > lo) {
                return Err(CliError::Usage("bifurcation needs theta_max > theta_min and points >= 2".into()));
            }
            let thetas: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
            let rows = bifurcation(z, alpha, &thetas, ctx.workers)?;
            let region = multiplicity_region(z, alpha)?;
            let value = json!({"region": region, "rows": rows});
            ctx.sink.report(&value, || {
                to_csv(
                    &["theta", "attack", "stability"],
                    rows.iter()
                        .map(|r| vec![r.theta.into(), r.attack.into(), stability_name(r.stability).into()]),
                )
            })
        }
        NetCmd::Cutoffs { c, alpha_z, branch, z_min, z_max, points } => {
            let d = CutoffScan::default();
            let scan = CutoffScan {
                lo: z_min.or(sec.z_min).unwrap_or(d.lo),
                hi: z_max.or(sec.z_max).unwrap_or(d.hi),
                points: points.or(sec.scan_points).unwrap_or(d.points),
                ..d
            };
            let branch = branch.or(sec.branch).unwrap_or_default();
            let c = c.or(sec.c).unwrap_or(0.5);
            let search = find_equilibrium_cutoffs(c, alpha_z.unwrap_or(alpha_default), branch, &scan)?;
            ctx.sink.report(&search, || {
                to_csv(
                    &["z_star", "kind", "below", "above"],
                    search.cutoffs.iter().map(|x| {
                        let kind = match x.kind {
                            coordlab::netsignal::CrossingKind::Root => "root",
                            coordlab::netsignal::CrossingKind::Discontinuity => "discontinuity",
                        };
                        vec![x.z.into(), kind.into(), x.below.into(), x.above.into()]
                    }),
                )
            })
        }
    }
}

fn stability_name(s: coordlab::netsignal::Stability) -> &'static str {
    match s {
        coordlab::netsignal::Stability::Stable => "stable",
        coordlab::netsignal::Stability::Unstable => "unstable",
    }
}

fn curve_csv(a: &AttackFunction) -> String {
    to_csv(
        &["theta", "attack"],
        a.samples().into_iter().map(|(t, v)| vec![t.into(), v.into()]),
    )
}

/// Writes the report (partial when not converged) and maps non-convergence
/// to a convergence error.
fn finish_iteration(ctx: &Ctx, report: EquilibriumReport) -> CliResult<()> {
    ctx.sink.report(&report, || curve_csv(&report.limit))?;
    report.into_result()?;
    Ok(())
}

fn twosignal(ctx: &Ctx, cmd: TwoCmd) -> CliResult<()> {
    let sec = &ctx.cfg.twosignal;
    let p = sec.params();
    let cgrid = sec.condition_grid.unwrap_or_default();
    let mut grid = sec.grid.unwrap_or_default();
    if grid.workers == 0 {
        grid.workers = ctx.workers;
    }
    match cmd {
        TwoCmd::Check { eta_max } => {
            p.validate()?;
            let eta_max = eta_max.or(sec.eta_max).unwrap_or_else(|| p.default_eta_max());
            let check = check_two_signal_conditions(&p, eta_max, &cgrid)?;
            ctx.sink.report(&check, || {
                to_csv(
                    &["odds_margin", "mass_margin", "satisfied", "worst_eta", "eta_max", "tail_monotone"],
                    [vec![
                        check.odds_margin.into(),
                        check.mass_margin.into(),
                        check.satisfied.into(),
                        check.worst_eta.into(),
                        check.eta_max.into(),
                        check.tail_monotone.into(),
                    ]],
                )
            })
        }
        TwoCmd::Iterate(args) => {
            let t = args.t.or(sec.t).unwrap_or(0.5);
            let max_iter = args.max_iter.or(sec.max_iter).unwrap_or(200);
            let sup_tol = args.sup_tol.or(sec.sup_tol).unwrap_or(1e-6);
            let report = run_iteration(t, &p, max_iter, sup_tol, &grid)?;
            finish_iteration(ctx, report)
        }
        TwoCmd::Step { t, sigma } => {
            let t = t.or(sec.t).unwrap_or(0.5);
            let sigma = sigma.or(sec.sigma).unwrap_or(0.4);
            let a = build_step_equilibrium(t, sigma)?;
            let game = GameParams::new(p.c, p.dist_x.clone(), ErrorDistribution::uniform(sigma)?)?;
            let r = verify_consistency(&a, &game, &grid, 1e-10)?;
            let value = json!({
                "t": t,
                "sigma": sigma,
                "max_residual": r.max_residual,
                "worst_theta": r.worst_theta,
                "tol": r.tol,
                "passed": r.passed,
            });
            ctx.sink.report(&value, || {
                to_csv(
                    &["theta", "attack", "induced", "residual"],
                    r.rows
                        .iter()
                        .map(|x| vec![x.theta.into(), x.attack.into(), x.induced.into(), x.residual.into()]),
                )
            })
        }
    }
}

fn onesignal(ctx: &Ctx, cmd: OneCmd) -> CliResult<()> {
    let sec = &ctx.cfg.onesignal;
    let p = sec.params();
    match cmd {
        OneCmd::Check { xi_max } => {
            p.validate()?;
            let xi_max = xi_max.or(sec.xi_max).unwrap_or_else(|| p.default_xi_max());
            let check = check_one_signal_conditions(&p, xi_max, &sec.condition_grid.unwrap_or_default())?;
            ctx.sink.report(&check, || {
                to_csv(
                    &["odds_margin", "mass_margin", "density_margin", "satisfied", "worst_xi", "xi_max"],
                    [vec![
                        check.odds_margin.into(),
                        check.mass_margin.into(),
                        check.density_margin.into(),
                        check.satisfied.into(),
                        check.worst_xi.into(),
                        check.xi_max.into(),
                    ]],
                )
            })
        }
        OneCmd::Iterate(args) => {
            let t = args.t.or(sec.t).unwrap_or(0.5);
            let max_iter = args.max_iter.or(sec.max_iter).unwrap_or(200);
            let sup_tol = args.sup_tol.or(sec.sup_tol).unwrap_or(1e-10);
            let report = run_iteration_1s(t, &p, max_iter, sup_tol, &sec.grid.unwrap_or_default())?;
            finish_iteration(ctx, report)
        }
    }
}

fn simulate(ctx: &Ctx, args: SimArgs) -> CliResult<()> {
    let sec = &ctx.cfg.simulate;
    let model = args.model.or(sec.model).unwrap_or(Model::Netsignal);
    let strategy = match model {
        Model::Netsignal => {
            let net = &ctx.cfg.netsignal;
            Strategy::normal_cutoff(net.z_star.unwrap_or(0.25), net.alpha_z.unwrap_or(16.0))?
        }
        Model::Onesignal => {
            let one = &ctx.cfg.onesignal;
            let p = one.params();
            let t = one.t.unwrap_or(0.5);
            let report = run_iteration_1s(
                t,
                &p,
                one.max_iter.unwrap_or(200),
                one.sup_tol.unwrap_or(1e-10),
                &one.grid.unwrap_or_default(),
            )?
            .into_result()?;
            let cutoff = attack_cutoff(&report.limit, &p, t)?;
            Strategy::Cutoff {
                cutoff: cutoff.z,
                noise: p.dist_rho,
            }
        }
        Model::Twosignal => {
            let two = &ctx.cfg.twosignal;
            let p = two.params();
            let mut grid = two.grid.unwrap_or_default();
            if grid.workers == 0 {
                grid.workers = ctx.workers;
            }
            let report = run_iteration(
                two.t.unwrap_or(0.5),
                &p,
                two.max_iter.unwrap_or(200),
                two.sup_tol.unwrap_or(1e-6),
                &grid,
            )?
            .into_result()?;
            let set = attack_set(&report.limit, &p.game(), &grid)?;
            Strategy::SignalPair {
                set: Arc::new(set),
                dist_x: p.dist_x,
                dist_y: p.dist_y,
            }
        }
        Model::Benchmark | Model::Simulate => {
            return Err(CliError::Usage("simulate --model must be netsignal, twosignal or onesignal".into()));
        }
    };
    let n = args.n.or(sec.n).unwrap_or(100_000);
    let theta = args.theta.or(sec.theta).unwrap_or(0.25);
    let seed = args.seed.or(sec.seed).unwrap_or(42);
    let mut cfg = SimConfig::new(n, theta, strategy, seed);
    cfg.init = args.init.or(sec.init).unwrap_or(cfg.init);
    cfg.damping = args.damping.or(sec.damping).unwrap_or(cfg.damping);
    cfg.max_rounds = args.max_rounds.or(sec.max_rounds).unwrap_or(cfg.max_rounds);
    cfg.min_rounds = sec.min_rounds.unwrap_or(cfg.min_rounds.min(cfg.max_rounds));
    cfg.tol = sec.tol;
    cfg.workers = ctx.workers;
    let trace = run_unchecked(&cfg)?;
    ctx.sink.report(&trace, || trace_csv(&trace))?;
    if !trace.converged {
        let last = trace.path.windows(2).last().map_or(f64::NAN, |w| (w[1] - w[0]).abs());
        return Err(coordlab::Error::Convergence {
            iterations: trace.rounds,
            last_delta: last,
            trace: trace.path,
        }
        .into());
    }
    Ok(())
}

fn trace_csv(trace: &SimTrace) -> String {
    to_csv(
        &["round", "A_hat"],
        trace.path.iter().enumerate().map(|(i, &a)| vec![i.into(), a.into()]),
    )
}
