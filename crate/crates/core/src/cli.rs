//! Command-line front end. Every command reads a scenario JSON file and
//! writes plain CSV/JSON into an output directory.
//!
//! Exit codes: 0 success, 2 invalid input, 3 no convergence, 4 enumeration
//! cap exceeded, 1 anything else.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

use crate::centralized::exact_social_optimum;
use crate::error::{Error, Result};
use crate::meanfield::{
    asymptotic_social_cost, check_assumptions, expected_branch_cost, find_fixed_point,
    MeanFieldSolution,
};
use crate::numerics::SampledPath;
use crate::population::{mean_path_residual, sample_population, simulate_decentralized, PopulationRun};
use crate::scenario::{AgentsFile, CouplingMode, Scenario};
use crate::uniform::UniformSolver;

#[derive(Debug, Parser)]
#[command(name = "collective-choice", version, about = "Dynamic collective choice solvers")]
pub struct Cli {
    /// Directory for result files.
    #[arg(long, global = true, env = "DCC_OUT_DIR", default_value = ".")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the existence diagnostics (k1, k2, k3 and the spectrum of L).
    Check(ScenarioArg),
    /// Solve for the mean path and the limiting choice split.
    SolveMf {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Bisection on the split instead of Picard iteration (one type, two destinations).
        #[arg(long)]
        uniform: bool,
        /// Tolerance on `F(λ) - λ` for --uniform.
        #[arg(long, default_value_t = 1e-10)]
        lambda_tol: f64,
    },
    /// Exact social optimum of a small population by enumeration.
    SolveExact {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// JSON file listing the agents: {"agents": [{"atom": 0, "x0": [..]}, ..]}.
        #[arg(long)]
        agents: PathBuf,
        /// Also write the cost of every assignment.
        #[arg(long)]
        table: bool,
    },
    /// Sample a finite population and run the decentralized strategies.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(short = 'N', long = "agents", default_value_t = 400)]
        n: usize,
        /// Sampling seed; defaults to the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Repeat solve + simulate over a list of parameter values and modes.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value = "q")]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "coop,noncoop")]
        modes: Vec<ModeArg>,
        #[arg(short = 'N', long = "agents", default_value_t = 400)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArg {
    /// Scenario JSON file.
    pub scenario: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(alias = "cooperative")]
    Coop,
    #[value(alias = "noncooperative")]
    Noncoop,
}

impl From<ModeArg> for CouplingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Coop => CouplingMode::Cooperative,
            ModeArg::Noncoop => CouplingMode::Noncooperative,
        }
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main_from_env() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Check(arg) => check(&Scenario::load(&arg.scenario)?, out),
        Command::SolveMf {
            scenario,
            uniform,
            lambda_tol,
        } => solve_mf(&Scenario::load(&scenario.scenario)?, *uniform, *lambda_tol, out),
        Command::SolveExact {
            scenario,
            agents,
            table,
        } => solve_exact(&Scenario::load(&scenario.scenario)?, agents, *table, out),
        Command::Simulate { scenario, n, seed } => {
            let s = Scenario::load(&scenario.scenario)?;
            let seed = seed.unwrap_or(s.seed);
            simulate(&s, *n, seed, out)
        }
        Command::Sweep {
            scenario,
            param,
            values,
            modes,
            n,
            seed,
        } => {
            let s = Scenario::load(&scenario.scenario)?;
            let seed = seed.unwrap_or(s.seed);
            sweep(&s, param, values, modes, *n, seed, out)
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_path_csv(path: &Path, xbar: &SampledPath<DVector<f64>>) -> Result<()> {
    let n = xbar.first().len();
    let mut text = String::from("t");
    for i in 1..=n {
        let _ = write!(text, ",x{i}");
    }
    text.push('\n');
    for (k, t) in xbar.grid().times().enumerate() {
        let _ = write!(text, "{t}");
        for v in xbar.value(k).iter() {
            let _ = write!(text, ",{v}");
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn trajectory_header(n: usize, m: usize) -> String {
    let mut text = String::from("t,agent");
    for i in 1..=n {
        let _ = write!(text, ",x{i}");
    }
    for i in 1..=m {
        let _ = write!(text, ",u{i}");
    }
    text.push_str(",choice\n");
    text
}

fn push_trajectory(
    text: &mut String,
    agent: usize,
    choice: usize,
    states: &SampledPath<DVector<f64>>,
    controls: &SampledPath<DVector<f64>>,
) {
    for (k, t) in states.grid().times().enumerate() {
        let _ = write!(text, "{t},{agent}");
        for v in states.value(k).iter().chain(controls.value(k).iter()) {
            let _ = write!(text, ",{v}");
        }
        let _ = writeln!(text, ",{choice}");
    }
}

fn check(scenario: &Scenario, out: &Path) -> Result<()> {
    let report = check_assumptions(scenario)?;
    println!("k1 = {:.6e}", report.k1);
    println!("k2 = {:.6e}", report.k2);
    println!("k3 = {:.6e}", report.k3);
    println!(
        "sqrt(max(k1 + k2, k3)) T = {:.6} ({} pi/2): contraction bound {}",
        report.bound,
        if report.bound_holds { "<" } else { ">=" },
        verdict(report.bound_holds)
    );
    let eig: Vec<String> = report.l_eigenvalues.iter().map(|v| format!("{v:.6}")).collect();
    println!("eig(L) = [{}]: L positive semidefinite {}", eig.join(", "), verdict(report.l_psd));
    println!(
        "E|x0|^2 = {:.6}: finite second moment {}",
        report.second_moment,
        verdict(report.second_moment_finite)
    );
    write_json(&out.join("check.json"), &report)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "holds"
    } else {
        "fails"
    }
}

/// Picard or bisection, whichever applies.
fn mean_field(scenario: &Scenario, uniform: bool, lambda_tol: f64) -> Result<(MeanFieldSolution, serde_json::Value)> {
    if uniform && scenario.destination_count() == 2 {
        let solver = UniformSolver::new(scenario)?;
        let lambda = solver.solve_lambda_bisection(lambda_tol)?;
        let info = json!({
            "method": "bisection",
            "lambda": lambda.lambda,
            "gap": lambda.gap,
            "steps": lambda.steps,
            "endpoint": lambda.endpoint,
        });
        return Ok((solver.solution(&lambda)?, info));
    }
    let mf = find_fixed_point(scenario)?;
    let info = json!({
        "method": "picard",
        "lambda": mf.fractions(),
    });
    Ok((mf, info))
}

fn solve_mf(scenario: &Scenario, uniform: bool, lambda_tol: f64, out: &Path) -> Result<()> {
    let (mf, lambda) = match mean_field(scenario, uniform, lambda_tol) {
        Ok(v) => v,
        Err(Error::NonConvergence { residuals }) => {
            write_json(&out.join("residuals.json"), &json!({ "residual_history": residuals }))?;
            return Err(Error::NonConvergence { residuals });
        }
        Err(e) => return Err(e),
    };
    write_path_csv(&out.join("xbar.csv"), &mf.xbar)?;
    write_json(&out.join("basins.json"), &mf.classifier)?;
    write_json(&out.join("lambda.json"), &lambda)?;
    let cost = asymptotic_social_cost(&mf);
    write_json(
        &out.join("cost.json"),
        &json!({
            "asymptotic_cost": cost,
            "expected_branch_cost": expected_branch_cost(&mf),
        }),
    )?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "residual": mf.residual,
            "iterations": mf.iterations,
            "residual_history": mf.residual_history,
            "fractions": mf.fractions(),
        }),
    )?;
    println!("fractions = {:?}", mf.fractions());
    println!("residual = {:.3e} after {} iterations", mf.residual, mf.iterations);
    println!("asymptotic per-agent cost = {cost:.6}");
    Ok(())
}

fn solve_exact(scenario: &Scenario, agents: &Path, table: bool, out: &Path) -> Result<()> {
    let agents = AgentsFile::load(agents)?.resolve(scenario)?;
    let solution = exact_social_optimum(scenario, &agents)?;
    let system = &solution.system;
    write_json(
        &out.join("assignment.json"),
        &json!({
            "assignment": solution.assignment(),
            "cost": solution.cost(),
            "per_agent_cost": solution.per_agent_cost(),
        }),
    )?;
    let states = solution.optimum.trajectory(system)?;
    let controls = solution.optimum.controls(system, &states)?;
    let (n, m) = (system.n, system.m);
    let mut text = trajectory_header(n, m);
    for (i, &choice) in solution.assignment().iter().enumerate() {
        let xi = states.map(|v| v.rows(i * n, n).into_owned())?;
        let ui = controls.map(|v| v.rows(i * m, m).into_owned())?;
        push_trajectory(&mut text, i, choice, &xi, &ui);
    }
    fs::write(out.join("trajectories.csv"), text)?;
    if table {
        let mut text = String::from("assignment,cost\n");
        for (d, cost) in &solution.table {
            let d: Vec<String> = d.iter().map(|j| j.to_string()).collect();
            let _ = writeln!(text, "{},{cost}", d.join(" "));
        }
        fs::write(out.join("cost_table.csv"), text)?;
    }
    println!("assignment = {:?}", solution.assignment());
    println!("J* = {:.6} ({:.6} per agent)", solution.cost(), solution.per_agent_cost());
    Ok(())
}

fn run_population(scenario: &Scenario, mf: &MeanFieldSolution, n: usize, seed: u64) -> Result<PopulationRun> {
    let sample = sample_population(scenario, n, seed)?;
    simulate_decentralized(&sample, mf, &scenario.grid)
}

fn simulate(scenario: &Scenario, n: usize, seed: u64, out: &Path) -> Result<()> {
    let mf = find_fixed_point(scenario)?;
    let run = run_population(scenario, &mf, n, seed)?;
    let residual = mean_path_residual(&run, &mf)?;
    let mut text = trajectory_header(scenario.state_dim(), scenario.input_dim());
    for i in 0..run.len() {
        push_trajectory(&mut text, i, run.choices[i], &run.state_path(i)?, &run.control_path(i)?);
    }
    fs::write(out.join("trajectories.csv"), text)?;
    write_path_csv(&out.join("mean_path.csv"), &run.mean_path)?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "agents": n,
            "seed": seed,
            "fractions": run.fractions(),
            "social_cost": run.social_cost,
            "per_agent_cost": run.per_agent_cost(),
            "mean_path_residual": residual,
            "limit_fractions": mf.fractions(),
            "limit_cost": asymptotic_social_cost(&mf),
            "fixed_point_residual": mf.residual,
            "sample_second_moment": run.sample.second_moment,
        }),
    )?;
    println!("fractions = {:?}", run.fractions());
    println!("per-agent social cost = {:.6}", run.per_agent_cost());
    println!("mean path residual = {residual:.6e}");
    Ok(())
}

fn sweep(
    scenario: &Scenario,
    param: &str,
    values: &[f64],
    modes: &[ModeArg],
    n: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    if param != "q" {
        return Err(Error::Validation {
            field: "param".into(),
            message: format!("unsupported sweep parameter `{param}`; only `q` is available"),
        });
    }
    let l = scenario.destination_count();
    let mut text = String::from("q,mode");
    for j in 0..l {
        let _ = write!(text, ",lambda_{j}");
    }
    for j in 0..l {
        let _ = write!(text, ",realized_{j}");
    }
    text.push_str(",per_agent_cost,asymptotic_cost,residual,iterations\n");
    for &q in values {
        for &mode in modes {
            let coupling = scenario.coupling.with_q(q).with_mode(mode.into());
            let s = scenario.with_coupling(coupling);
            s.validate()?;
            let mf = find_fixed_point(&s)?;
            let run = run_population(&s, &mf, n, seed)?;
            let mode = CouplingMode::from(mode).label();
            let _ = write!(text, "{q},{mode}");
            for v in mf.fractions().iter().chain(run.fractions().iter()) {
                let _ = write!(text, ",{v}");
            }
            let _ = writeln!(
                text,
                ",{},{},{},{}",
                run.per_agent_cost(),
                asymptotic_social_cost(&mf),
                mf.residual,
                mf.iterations
            );
            println!("q = {q} {mode}: fractions {:?}, per-agent cost {:.3}", run.fractions(), run.per_agent_cost());
        }
    }
    fs::write(out.join("sweep.csv"), text)?;
    Ok(())
}
