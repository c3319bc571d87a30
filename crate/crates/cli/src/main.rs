//! `negcorr-sched`: generate instances, solve relaxations, round and verify.
//!
//! Exit codes: 0 success, 1 internal error, 2 input or usage error,
//! 3 solver did not converge (the solution is still written),
//! 4 verification found violations.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use negcorr_core::error::Error;
use negcorr_core::instances::{
    class_instance, gap_instance, poisson_instance, random_instance, schedule_cost, Instance, RandomParams, Schedule,
    DEFAULT_ENUMERATION_CAP,
};
use negcorr_core::relaxations::{solve_cp, solve_sdp, CpConfig, SolverConfig, StoredSolution};
use negcorr_core::rounding::{build_groups, independent_round, round, round_traced};
use negcorr_core::verification::{verify, Algorithm, VerifyConfig};

use output::{Format, Summary};

#[derive(Parser, Debug)]
#[command(
    name = "negcorr-sched",
    version,
    about = "Scheduling on unrelated machines via negatively correlated rounding"
)]
struct Cli {
    /// Worker threads for solvers and Monte Carlo (0 = all cores).
    #[arg(long, global = true, env = "NEGCORR_SCHED_THREADS", default_value_t = 0)]
    threads: usize,

    /// Format of the report printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// File receiving the command's primary output (instance, solution,
    /// schedule or JSON report).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write an instance from one of the built-in families.
    Generate {
        #[command(subcommand)]
        generator: Generator,
    },
    /// Solve a relaxation of an instance.
    Solve(SolveArgs),
    /// Round a relaxation solution once into a schedule.
    Round(RoundArgs),
    /// Estimate correlations, costs and ratio bounds by Monte Carlo.
    Verify(VerifyArgs),
}

#[derive(Subcommand, Debug)]
enum Generator {
    /// k unit jobs on machine 0 and one k^2 job on machines 1..=k.
    Gap {
        #[arg(long)]
        k: usize,
    },
    /// m unit jobs on m unit machines.
    Poisson {
        #[arg(long)]
        m: usize,
    },
    /// Classes of identical jobs with geometric weights and sizes.
    Class {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        scale: f64,
        #[arg(long)]
        jobs_per_class: usize,
        #[arg(long)]
        machines: usize,
    },
    /// Seeded random integer instance.
    Random {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0.0)]
        forbidden_prob: f64,
        #[arg(long, default_value_t = 1)]
        ptime_min: u32,
        #[arg(long, default_value_t = 100)]
        ptime_max: u32,
        #[arg(long, default_value_t = 1)]
        weight_min: u32,
        #[arg(long, default_value_t = 10)]
        weight_max: u32,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Relaxation {
    Sdp,
    Cp,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Negcorr,
    Independent,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Negcorr => Algorithm::NegCorr,
            AlgorithmArg::Independent => Algorithm::Independent,
        }
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    instance: PathBuf,
    #[arg(long, value_enum)]
    relaxation: Relaxation,
    #[arg(long, default_value_t = SolverConfig::default().tol)]
    sdp_tol: f64,
    #[arg(long, default_value_t = SolverConfig::default().max_iters)]
    sdp_max_iters: usize,
    #[arg(long, default_value_t = SolverConfig::default().rho)]
    sdp_rho: f64,
    #[arg(long, default_value_t = CpConfig::default().max_iters)]
    cp_max_iters: usize,
    #[arg(long, default_value_t = CpConfig::default().step)]
    cp_step: f64,
}

#[derive(Args, Debug)]
struct RoundArgs {
    instance: PathBuf,
    solution: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Negcorr)]
    algorithm: AlgorithmArg,
    /// Write the pipage event log as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    instance: PathBuf,
    solution: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Negcorr)]
    algorithm: AlgorithmArg,
    /// Largest number of feasible assignments enumerated for the exact optimum.
    #[arg(long, default_value_t = 1_000_000)]
    opt_cap: u128,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::DegenerateStep { .. } => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<u8, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn load_instance(path: &Path) -> Result<Instance, Failure> {
    Instance::from_json(&read(path)?).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_solution(inst: &Instance, path: &Path) -> Result<StoredSolution, Failure> {
    StoredSolution::from_json(inst, &read(path)?).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn generate(cli: &Cli, generator: &Generator) -> CmdResult {
    let inst = match *generator {
        Generator::Gap { k } => gap_instance(k)?,
        Generator::Poisson { m } => poisson_instance(m)?,
        Generator::Class {
            classes,
            scale,
            jobs_per_class,
            machines,
        } => class_instance(classes, scale, jobs_per_class, machines)?,
        Generator::Random {
            seed,
            n,
            m,
            forbidden_prob,
            ptime_min,
            ptime_max,
            weight_min,
            weight_max,
        } => random_instance(
            seed,
            &RandomParams {
                jobs: n,
                machines: m,
                forbidden_prob,
                ptime_range: (ptime_min, ptime_max),
                weight_range: (weight_min, weight_max),
            },
        )?,
    };
    let json = inst.to_json();
    match &cli.out {
        Some(path) => write(path, &json)?,
        None => println!("{json}"),
    }
    Ok(0)
}

fn solve(cli: &Cli, args: &SolveArgs) -> CmdResult {
    let inst = load_instance(&args.instance)?;
    let sol = match args.relaxation {
        Relaxation::Sdp => {
            let cfg = SolverConfig {
                max_iters: args.sdp_max_iters,
                rho: args.sdp_rho,
                tol: args.sdp_tol,
            };
            if !(cfg.tol > 0.0 && cfg.rho > 0.0) {
                return Err(Failure::input("--sdp-tol and --sdp-rho must be positive"));
            }
            StoredSolution::Sdp(solve_sdp(&inst, &cfg))
        }
        Relaxation::Cp => {
            let cfg = CpConfig {
                max_iters: args.cp_max_iters,
                step: args.cp_step,
                ..CpConfig::default()
            };
            if !(cfg.step > 0.0) {
                return Err(Failure::input("--cp-step must be positive"));
            }
            StoredSolution::Cp(solve_cp(&inst, &cfg))
        }
    };
    if let Some(path) = &cli.out {
        write(path, &sol.to_json())?;
    }
    let mut s = Summary::new();
    s.text("relaxation", if sol.sdp().is_some() { "sdp" } else { "cp" });
    s.num("objective", sol.objective());
    s.flag("converged", sol.converged());
    match &sol {
        StoredSolution::Sdp(sdp) => {
            s.int("iterations", sdp.stats.iterations as u64);
            s.num("primal_residual", sdp.stats.primal_residual);
            s.num("dual_residual", sdp.stats.dual_residual);
            s.num("psd_repair_weight", sdp.stats.psd_repair_weight);
        }
        StoredSolution::Cp(cp) => s.int("iterations", cp.iterations as u64),
    }
    print!("{}", s.render(cli.format));
    Ok(if sol.converged() { 0 } else { 3 })
}

fn round_cmd(cli: &Cli, args: &RoundArgs) -> CmdResult {
    let inst = load_instance(&args.instance)?;
    let sol = load_solution(&inst, &args.solution)?;
    let (scaled, _) = inst.normalized();
    let b = build_groups(&scaled, sol.x())?;
    let outcome = match (args.algorithm, &args.trace) {
        (AlgorithmArg::Negcorr, Some(path)) => {
            let traced = round_traced(&b, args.seed)?;
            let mut lines = String::new();
            for ev in &traced.events {
                lines.push_str(&serde_json::to_string(ev).expect("event serializes"));
                lines.push('\n');
            }
            write(path, &lines)?;
            traced.outcome
        }
        (AlgorithmArg::Negcorr, None) => round(&b, args.seed)?,
        (AlgorithmArg::Independent, _) => independent_round(&b, args.seed),
    };
    let schedule = Schedule::new(outcome.machine_of);
    let cost = schedule_cost(&inst, &schedule)?;
    if let Some(path) = &cli.out {
        write(path, &serde_json::to_string(&schedule).expect("schedule serializes"))?;
    }
    let mut s = Summary::new();
    s.text("algorithm", &Algorithm::from(args.algorithm).to_string());
    s.int("seed", args.seed);
    s.num("cost", cost);
    s.list("assignment", &schedule.assignment);
    print!("{}", s.render(cli.format));
    Ok(0)
}

fn verify_cmd(cli: &Cli, args: &VerifyArgs) -> CmdResult {
    let inst = load_instance(&args.instance)?;
    let sol = load_solution(&inst, &args.solution)?;
    let cfg = VerifyConfig {
        trials: args.trials,
        seed: args.seed,
        algorithm: args.algorithm.into(),
        opt_cap: args.opt_cap.min(DEFAULT_ENUMERATION_CAP),
    };
    let report = verify(&inst, &sol, &cfg)?;
    if let Some(path) = &cli.out {
        write(path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    print!("{}", output::render_verify(&report, cli.format));
    Ok(if report.violations == 0 { 0 } else { 4 })
}

fn dispatch(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Generate { generator } => generate(cli, generator),
        Command::Solve(a) => solve(cli, a),
        Command::Round(a) => round_cmd(cli, a),
        Command::Verify(a) => verify_cmd(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
