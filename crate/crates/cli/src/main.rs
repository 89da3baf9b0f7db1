//! `etoc`: solve, simulate and analyze event-triggered LQ problems from the
//! command line.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 infeasible,
//! 3 no convergence.

mod instance;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use etoc::admm::{solve_admm_traced, AdmmConfig};
use etoc::exact::{solve_exact, ExactOptions};
use etoc::greedy::{solve_greedy_with, GreedyOptions, GreedyTail};
use etoc::rhc::{
    compute_stability_constants, run_rhc, spearman, tradeoff_sweep, InitialState, InnerSolver, RhcConfig,
    StabilityOptions,
};
use etoc::{Matrix, ProblemInstance, SolveStatus, Tolerances};
use serde_json::{json, Value};

use instance::InstanceFile;
use output::{num, Output};

#[derive(Debug, Parser)]
#[command(name = "etoc", version, about = "Event-triggered finite-horizon LQ control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one finite-horizon problem.
    Solve(SolveArgs),
    /// Closed-loop receding-horizon simulation.
    Rhc(RhcArgs),
    /// Monte Carlo sweep of the trigger threshold.
    Tradeoff(TradeoffArgs),
    /// Ultimate-bound constants of the receding-horizon loop.
    Constants(ConstantsArgs),
    /// Print a built-in instance as an instance file.
    Example {
        #[arg(value_enum)]
        name: Example,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Example {
    /// Second-order plant, `N = 7`, `eps = 0.25`.
    SecondOrder,
    /// Third-order unstable plant, `N = 6`, `eps = 0.4`.
    ThirdOrder,
}

#[derive(Debug, Args)]
struct Common {
    /// Instance file (TOML).
    instance: PathBuf,
    /// Worker threads for the exact solver (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for CSV artifacts and `summary.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// ADMM penalty (default depends on eps).
    #[arg(long)]
    rho: Option<f64>,
    /// ADMM iteration budget.
    #[arg(long, default_value_t = 300)]
    iters: usize,
    /// ADMM dynamics-residual tolerance.
    #[arg(long, default_value_t = 1e-4)]
    eps_tol: f64,
    /// Double the ADMM budget while polishing keeps failing.
    #[arg(long)]
    adapt: Option<bool>,
    /// Greedy scoring horizon: `truncated` or `free`.
    #[arg(long, default_value_t = GreedyTail::Truncated)]
    greedy_tail: GreedyTail,
}

impl SolverArgs {
    fn admm(&self, eps: f64, seed: u64, adapt_default: bool) -> AdmmConfig {
        AdmmConfig {
            rho: self.rho.unwrap_or_else(|| AdmmConfig::default_rho(eps)),
            max_iter: self.iters,
            eps_tol: self.eps_tol,
            adapt: self.adapt.unwrap_or(adapt_default),
            seed,
            ..AdmmConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Method {
    Exact,
    Greedy,
    Admm,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value_t = Method::Exact)]
    method: Method,
    #[command(flatten)]
    solver: SolverArgs,
    /// Seed of the ADMM initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reference cost; the record then carries the relative gap.
    #[arg(long)]
    reference: Option<f64>,
    /// Exact solver only: write every sequence with its outcome to this CSV.
    #[arg(long)]
    dump_sequences: Option<PathBuf>,
    /// Exact solver only: skip sequences whose prefix is infeasible.
    #[arg(long)]
    prune: bool,
}

#[derive(Debug, Args)]
struct Simulation {
    /// Inner solver used whenever the trigger fires.
    #[arg(long, value_enum, default_value_t = Method::Exact)]
    inner: Method,
    /// Simulation length.
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Process noise variance (covariance `v I`); 0 for a noiseless run.
    #[arg(long, default_value_t = 0.0)]
    noise_var: f64,
    /// Draw `x0 ~ N(0, v I)` instead of using the instance's `x0`.
    #[arg(long)]
    x0_var: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
}

impl Simulation {
    fn config(&self, inst: &ProblemInstance, workers: Option<usize>, tol: Tolerances) -> Result<RhcConfig> {
        let n = inst.state_dim();
        if self.noise_var < 0.0 || self.x0_var.is_some_and(|v| v < 0.0) {
            bail!("variances must be non-negative");
        }
        let mut cfg = RhcConfig::noiseless(inner_solver(self.inner), self.steps, n);
        cfg.noise_cov = (self.noise_var > 0.0).then(|| Matrix::identity(n, n) * self.noise_var);
        cfg.x0 = match self.x0_var {
            Some(v) => InitialState::Gaussian(Matrix::identity(n, n) * v),
            None => InitialState::Fixed,
        };
        cfg.seed = self.seed;
        cfg.admm = self.solver.admm(inst.eps(), self.seed, true);
        cfg.greedy = GreedyOptions { tail: self.solver.greedy_tail, tolerances: tol };
        cfg.workers = workers;
        cfg.tolerances = tol;
        Ok(cfg)
    }

    fn header(&self, cfg: &RhcConfig) -> Value {
        json!({
            "inner": self.inner_name(),
            "steps": self.steps,
            "noise_var": self.noise_var,
            "x0_var": self.x0_var,
            "seed": self.seed,
            "admm": cfg.admm,
            "greedy_tail": self.solver.greedy_tail,
        })
    }

    fn inner_name(&self) -> String {
        inner_solver(self.inner).to_string()
    }
}

#[derive(Debug, Args)]
struct RhcArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sim: Simulation,
}

#[derive(Debug, Args)]
struct TradeoffArgs {
    #[command(flatten)]
    common: Common,
    /// Thresholds as `start:stop:step` (inclusive).
    #[arg(long, default_value = "0.5:4.0:0.25")]
    eps: String,
    /// Monte Carlo runs per threshold.
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[command(flatten)]
    sim: Simulation,
}

#[derive(Debug, Args)]
struct ConstantsArgs {
    #[command(flatten)]
    common: Common,
    /// Constant of the bound (default: the largest schedule eigenvalue).
    #[arg(long)]
    kappa: Option<f64>,
    /// Use `P` instead of `Q` as terminal weight of the schedule matrices.
    #[arg(long)]
    terminal_p: bool,
}

fn inner_solver(m: Method) -> InnerSolver {
    match m {
        Method::Exact => InnerSolver::Exact,
        Method::Greedy => InnerSolver::Greedy,
        Method::Admm => InnerSolver::Admm,
    }
}

fn status_code(status: SolveStatus) -> ExitCode {
    match status {
        SolveStatus::Optimal | SolveStatus::Feasible => ExitCode::SUCCESS,
        SolveStatus::Infeasible => ExitCode::from(2),
        SolveStatus::NoConvergence => ExitCode::from(3),
    }
}

fn load(common: &Common) -> Result<(InstanceFile, ProblemInstance, Tolerances)> {
    let tol = Tolerances::from_env();
    let file = InstanceFile::read(&common.instance)?;
    let inst = file.build(&tol).with_context(|| format!("invalid instance {}", common.instance.display()))?;
    Ok((file, inst, tol))
}

fn header(command: &str, common: &Common, file: &InstanceFile, tol: &Tolerances, options: Value) -> Value {
    json!({
        "command": command,
        "instance_path": common.instance,
        "instance": file,
        "workers": common.workers,
        "tolerances": tol,
        "options": options,
    })
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn state_columns(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

fn cmd_solve(args: &SolveArgs) -> Result<ExitCode> {
    let (file, inst, tol) = load(&args.common)?;
    if args.dump_sequences.is_some() && args.method != Method::Exact {
        bail!("--dump-sequences requires --method exact");
    }
    let admm = args.solver.admm(inst.eps(), args.seed, false);
    let options = json!({
        "method": inner_solver(args.method).to_string(),
        "seed": args.seed,
        "admm": admm,
        "greedy_tail": args.solver.greedy_tail,
        "prune": args.prune,
        "reference": args.reference,
    });
    let out = Output::new(args.common.out.clone(), header("solve", &args.common, &file, &tol, options))?;

    let mut extra = json!({});
    let sol = match args.method {
        Method::Exact => {
            let opts = ExactOptions {
                workers: args.common.workers,
                prune: args.prune,
                record: args.dump_sequences.is_some(),
                tolerances: tol,
            };
            let report = solve_exact(&inst, &opts)?;
            extra = json!({
                "total_sequences": report.total_sequences,
                "feasible_count": report.feasible_count,
                "infeasible_count": report.infeasible_count,
                "pruned_count": report.pruned_count,
            });
            if let (Some(path), Some(rows)) = (&args.dump_sequences, &report.per_sequence) {
                let mut w = out.csv_at(path)?;
                w.write_record(["sigma", "status", "cost", "max_violation"])?;
                for r in rows {
                    w.write_record([join(r.sigma.labels()), r.status.to_string(), r.cost.to_string(), r.max_violation.to_string()])?;
                }
                w.flush()?;
            }
            report.best
        }
        Method::Greedy => solve_greedy_with(&inst, &GreedyOptions { tail: args.solver.greedy_tail, tolerances: tol })?,
        Method::Admm => solve_admm_traced(&inst, &admm, &tol, false)?.0,
    };

    if let (Some(mut w), Some(traj)) = (out.csv("trajectory.csv")?, sol.trajectory.as_ref()) {
        let (n, m) = (inst.state_dim(), inst.input_dim());
        let mut cols = vec!["t".to_string()];
        cols.extend(state_columns("x", n));
        cols.extend(state_columns("u", m));
        cols.push("sigma".into());
        w.write_record(&cols)?;
        for (t, x) in traj.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(f64::to_string));
            match traj.inputs.get(t) {
                Some(u) => row.extend(u.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), m)),
            }
            row.push(sol.sigma.labels().get(t).map(usize::to_string).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush()?;
    }

    let mut record = json!({
        "status": sol.status.to_string(),
        "cost": num(sol.cost),
        "sigma": sol.sigma,
        "event_set": sol.event_set,
        "qp_count": sol.stats.qp_count,
        "iterations": sol.stats.iterations,
        "wall_time_s": sol.stats.wall_time.as_secs_f64(),
    });
    if let Some(reference) = args.reference {
        record["reference"] = num(reference);
        record["gap"] = num((sol.cost - reference) / reference);
    }
    if let (Value::Object(r), Value::Object(e)) = (&mut record, extra) {
        r.extend(e);
    }
    out.summary(record)?;
    Ok(status_code(sol.status))
}

fn cmd_rhc(args: &RhcArgs) -> Result<ExitCode> {
    let (file, inst, tol) = load(&args.common)?;
    let cfg = args.sim.config(&inst, args.common.workers, tol)?;
    let out = Output::new(args.common.out.clone(), header("rhc", &args.common, &file, &tol, args.sim.header(&cfg)))?;
    let run = run_rhc(&inst, &cfg)?;

    if let Some(mut w) = out.csv("rhc_trace.csv")? {
        let (n, m) = (inst.state_dim(), inst.input_dim());
        let mut cols = vec!["t".to_string()];
        cols.extend(state_columns("x", n));
        cols.extend(state_columns("u", m));
        cols.push("transmit".into());
        w.write_record(&cols)?;
        for (t, x) in run.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(f64::to_string));
            match run.inputs.get(t) {
                Some(u) => row.extend(u.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), m)),
            }
            row.push(run.transmissions.get(t).map(|&b| (b as u8).to_string()).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush()?;
    }

    out.summary(json!({
        "steps": run.inputs.len(),
        "transmissions": run.transmission_count(),
        "total_cost": num(run.total_cost),
        "j_inf": num(run.j_inf),
        "pi_inf": num(run.pi_inf),
        "failure": run.failure,
    }))?;
    Ok(run.failure.map_or(ExitCode::SUCCESS, |f| status_code(f.status)))
}

fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("--eps: `{p}` is not a number")))
        .collect::<Result<_>>()?;
    let [start, stop, step] = parts[..] else {
        bail!("--eps: expected start:stop:step, got `{spec}`");
    };
    if !(step > 0.0) || !(stop >= start) || !(start > 0.0) {
        bail!("--eps: need 0 < start <= stop and step > 0, got `{spec}`");
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

fn cmd_tradeoff(args: &TradeoffArgs) -> Result<ExitCode> {
    let (file, inst, tol) = load(&args.common)?;
    let eps = parse_range(&args.eps)?;
    let cfg = args.sim.config(&inst, args.common.workers, tol)?;
    let mut options = args.sim.header(&cfg);
    options["eps"] = json!(eps);
    options["runs"] = json!(args.runs);
    let out = Output::new(args.common.out.clone(), header("tradeoff", &args.common, &file, &tol, options))?;
    let rows = tradeoff_sweep(&inst, &eps, args.runs, &cfg)?;

    if let Some(mut w) = out.csv("tradeoff.csv")? {
        w.write_record(["eps", "mean_j_inf", "mean_pi_inf", "runs", "failures"])?;
        for r in &rows {
            w.write_record([r.eps.to_string(), r.mean_j_inf.to_string(), r.mean_pi_inf.to_string(), r.runs.to_string(), r.failures.to_string()])?;
        }
        w.flush()?;
    }

    let done: Vec<_> = rows.iter().filter(|r| r.runs > 0).collect();
    let trend = |f: fn(&etoc::rhc::TradeoffRow) -> f64| -> Value {
        let x: Vec<f64> = done.iter().map(|r| r.eps).collect();
        let y: Vec<f64> = done.iter().map(|r| f(r)).collect();
        match spearman(&x, &y) {
            Ok(s) => json!({ "rho": num(s.rho), "p_value": num(s.p_value) }),
            Err(_) => Value::Null,
        }
    };
    out.summary(json!({
        "rows": rows.iter().map(|r| json!({
            "eps": r.eps,
            "mean_j_inf": num(r.mean_j_inf),
            "mean_pi_inf": num(r.mean_pi_inf),
            "runs": r.runs,
            "failures": r.failures,
        })).collect::<Vec<_>>(),
        "spearman_pi": trend(|r| r.mean_pi_inf),
        "spearman_j": trend(|r| r.mean_j_inf),
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_constants(args: &ConstantsArgs) -> Result<ExitCode> {
    let (file, inst, tol) = load(&args.common)?;
    let opts = StabilityOptions { kappa: args.kappa, terminal_p: args.terminal_p };
    let options = json!({ "kappa": args.kappa, "terminal_p": args.terminal_p });
    let out = Output::new(args.common.out.clone(), header("constants", &args.common, &file, &tol, options))?;
    let c = compute_stability_constants(&inst, &opts)?;
    if let Some(mut w) = out.csv("schedules.csv")? {
        w.write_record(["schedule", "lambda_max"])?;
        for (schedule, s) in &c.s_table {
            let bits: String = schedule.iter().map(|&on| if on { '1' } else { '0' }).collect();
            w.write_record([bits, etoc::model::max_eigenvalue(s).to_string()])?;
        }
        w.flush()?;
    }
    out.summary(json!({
        "a2": num(c.a2),
        "a3": num(c.a3),
        "gamma": num(c.gamma),
        "eta": num(c.eta),
        "kappa": num(c.kappa),
        "mu": num(c.mu),
        "k_gain": c.k_gain.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        "schedules": c.s_table.len(),
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_example(name: Example) -> Result<ExitCode> {
    let inst = match name {
        Example::SecondOrder => etoc::benchmarks::example2(),
        Example::ThirdOrder => etoc::benchmarks::third_order(etoc::benchmarks::third_order_mpc_x0(), 0.4, 6),
    };
    print!("{}", InstanceFile::from_instance(&inst).to_toml()?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Rhc(a) => cmd_rhc(a),
        Command::Tradeoff(a) => cmd_tradeoff(a),
        Command::Constants(a) => cmd_constants(a),
        Command::Example { name } => cmd_example(*name),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
