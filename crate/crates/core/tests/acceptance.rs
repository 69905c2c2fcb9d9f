//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use collective_choice::centralized::reachability_probe;
use collective_choice::meanfield::{
    asymptotic_social_cost, expected_branch_cost, find_fixed_point, MeanFieldSolution,
};
use collective_choice::numerics::TimeGrid;
use collective_choice::population::{
    convergence_experiment, mean_path_residual, monte_carlo_social_cost, sample_population,
    simulate_decentralized, PopulationRun,
};
use collective_choice::riccati::RiccatiBundle;
use collective_choice::scenario::{
    AgentTypeAtom, AgentsFile, CouplingMode, CouplingSpec, InitialDistribution, Scenario,
};
use collective_choice::uniform::UniformSolver;
use nalgebra::{DMatrix, DVector};

type Outcome = Result<String, String>;

const K: usize = 2000;
const SEED: u64 = 2016;

fn two_site(q: f64, mode: CouplingMode) -> Scenario {
    Scenario::two_site_example(q, mode, K)
}

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn solve(s: &Scenario) -> Result<MeanFieldSolution, String> {
    find_fixed_point(s).map_err(|e| e.to_string())
}

fn population(s: &Scenario, mf: &MeanFieldSolution, n: usize, seed: u64) -> Result<PopulationRun, String> {
    let sample = sample_population(s, n, seed).map_err(|e| e.to_string())?;
    simulate_decentralized(&sample, mf, &s.grid).map_err(|e| e.to_string())
}

fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn split_at_zero_coupling() -> Outcome {
    let start = Instant::now();
    let s = two_site(0.0, CouplingMode::Cooperative);
    let mf = solve(&s)?;
    let run = population(&s, &mf, 400, SEED)?;
    let elapsed = start.elapsed().as_secs_f64();
    let single = run.fractions()[1];
    let mut total = 0.0;
    for seed in 0..20 {
        total += population(&s, &mf, 400, seed)?.fractions()[1];
    }
    let mean = total / 20.0;
    ensure(
        (0.78..=0.86).contains(&single) && (0.80..=0.84).contains(&mean) && elapsed < 60.0,
        format!("fraction to p2 {single:.4} (seed {SEED}), 20-seed mean {mean:.4}, {elapsed:.2}s"),
    )
}

fn noncooperative_consensus() -> Outcome {
    let s = two_site(40.0, CouplingMode::Noncooperative);
    let mf = solve(&s)?;
    let realized = population(&s, &mf, 400, SEED)?.fractions()[1];
    let limit = mf.fractions()[1];
    ensure(
        realized >= 0.99 && limit >= 0.99,
        format!("fraction to p2: N=400 {realized:.4}, limit {limit:.5}"),
    )
}

fn cooperative_evens_out() -> Outcome {
    let coop = solve(&two_site(40.0, CouplingMode::Cooperative))?.fractions()[0];
    let free = solve(&two_site(0.0, CouplingMode::Cooperative))?.fractions()[0];
    ensure(
        (coop - 0.5).abs() < (free - 0.5).abs(),
        format!("lambda_1 = {coop:.4} at q=40 vs {free:.4} at q=0"),
    )
}

fn cooperation_is_cheaper() -> Outcome {
    let mut rows = Vec::new();
    let mut ok = true;
    for q in [0.0, 10.0, 20.0, 30.0, 40.0] {
        let mut cost = [0.0; 2];
        for (i, mode) in [CouplingMode::Cooperative, CouplingMode::Noncooperative].into_iter().enumerate() {
            let s = two_site(q, mode);
            let mf = solve(&s)?;
            cost[i] = population(&s, &mf, 400, SEED)?.per_agent_cost();
        }
        ok &= cost[0] <= cost[1];
        rows.push(format!("q={q}: {:.1} <= {:.1}", cost[0], cost[1]));
    }
    ensure(ok, rows.join("; "))
}

fn finite_population_gap() -> Outcome {
    let s = Scenario::load(shipped("scalar_pair.json")).map_err(|e| e.to_string())?;
    let table = convergence_experiment(&s, &[2, 4, 6, 8], 0).map_err(|e| e.to_string())?;
    let gaps: Vec<f64> = table.rows.iter().map(|r| r.gap).collect();
    ensure(
        table.lower_bound_holds(1e-6) && gaps[3] <= gaps[0] + 1e-4,
        format!("gap(N) for N=2,4,6,8: {}", sci(&gaps)),
    )
}

fn mean_path_converges() -> Outcome {
    let s = two_site(40.0, CouplingMode::Cooperative);
    let mf = solve(&s)?;
    let mut avg = [0.0; 2];
    for (i, n) in [400, 10_000].into_iter().enumerate() {
        for seed in 0..5 {
            let run = population(&s, &mf, n, seed)?;
            avg[i] += mean_path_residual(&run, &mf).map_err(|e| e.to_string())? / 5.0;
        }
    }
    ensure(
        avg[1] <= 0.5 * avg[0],
        format!("mean residual {:.4e} at N=400, {:.4e} at N=10^4", avg[0], avg[1]),
    )
}

fn fixed_point_certificate() -> Outcome {
    let coop = solve(&two_site(40.0, CouplingMode::Cooperative))?;
    let noncoop = solve(&two_site(40.0, CouplingMode::Noncooperative))?;
    let free = solve(&two_site(0.0, CouplingMode::Cooperative))?;
    ensure(
        coop.residual <= 1e-3 && noncoop.residual <= 1e-3 && free.iterations == 1,
        format!(
            "residual {:.2e} (coop), {:.2e} (noncoop); q=0 took {} iteration(s)",
            coop.residual, noncoop.residual, free.iterations
        ),
    )
}

fn uniform_agrees_with_picard() -> Outcome {
    let s = two_site(40.0, CouplingMode::Cooperative);
    let mf = solve(&s)?;
    let solver = UniformSolver::new(&s).map_err(|e| e.to_string())?;
    let lambda = solver.solve_lambda_bisection(1e-10).map_err(|e| e.to_string())?;
    let diff = (lambda.lambda[0] - mf.fractions()[0]).abs();
    let path = lambda.xbar.sup_distance(&mf.xbar);
    ensure(
        diff <= 5e-3 && path <= 1e-3,
        format!("|lambda_bisect - lambda_picard| = {diff:.2e}, path sup gap {path:.2e}"),
    )
}

/// `E[min_j branch cost]` under the Gaussian, by Simpson quadrature in
/// whitened coordinates split along the basin boundary.
fn quadrature_min_branch_cost(mf: &MeanFieldSolution) -> f64 {
    let InitialDistribution::Gaussian { mean, covariance } = &mf.scenario.initial else {
        panic!("gaussian initial distribution expected");
    };
    let chol = covariance.clone().cholesky().expect("positive definite").l();
    let row = &mf.classifier.atoms[0].rows[0];
    // Boundary w·x + c = 0 becomes (Lᵀw)·z + (w·μ + c) = 0.
    let w = DVector::from_column_slice(&row.linear);
    let lw = chol.transpose() * &w;
    let scale = lw.norm();
    let e1 = &lw / scale;
    let e2 = DVector::from_vec(vec![-e1[1], e1[0]]);
    let cut = -(w.dot(mean) + row.offset) / scale;
    let b0 = mf.bundle(0, 0);
    let b1 = mf.bundle(0, 1);
    let phi = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let f = |u: f64, v: f64| {
        let z = &e1 * u + &e2 * v;
        let x = mean + &chol * z;
        b0.branch_cost_slice(x.as_slice()).min(b1.branch_cost_slice(x.as_slice())) * phi(u) * phi(v)
    };
    let simpson = |a: f64, b: f64, n: usize, g: &dyn Fn(f64) -> f64| {
        let h = (b - a) / n as f64;
        let mut sum = g(a) + g(b);
        for i in 1..n {
            sum += g(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * h / 3.0
    };
    let r = 12.0;
    let inner = |u: f64| simpson(-r, r, 800, &|v| f(u, v));
    let cut = cut.clamp(-r, r);
    simpson(-r, cut, 1200, &inner) + simpson(cut, r, 1200, &inner)
}

fn asymptotic_cost_formula() -> Outcome {
    let s = two_site(40.0, CouplingMode::Cooperative);
    let mf = solve(&s)?;
    let formula = asymptotic_social_cost(&mf);
    let mc = monte_carlo_social_cost(&mf, 10_000, SEED).map_err(|e| e.to_string())?;
    let rel = (mc - formula).abs() / formula.abs();

    let free = solve(&two_site(0.0, CouplingMode::Cooperative))?;
    let exact = quadrature_min_branch_cost(&free);
    let at_zero = asymptotic_social_cost(&free);
    let rel_zero = (at_zero - exact).abs() / exact.abs();
    let rel_branch = (expected_branch_cost(&free) - at_zero).abs() / exact.abs();
    ensure(
        rel <= 0.01 && rel_zero <= 1e-6 && rel_branch <= 1e-6,
        format!(
            "q=40: formula {formula:.2} vs Monte Carlo {mc:.2} ({:.3}%); q=0: {at_zero:.6} vs quadrature {exact:.6} (rel {rel_zero:.1e})",
            100.0 * rel
        ),
    )
}

fn closed_form_oracles() -> Outcome {
    let grid = TimeGrid::new(1.0, 1000).map_err(|e| e.to_string())?;
    let atom = AgentTypeAtom::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1), 1.0, vec![1.0]);
    let coupling = CouplingSpec::new(0.0, DMatrix::zeros(1, 1), CouplingMode::Cooperative);
    let p = DVector::from_element(1, 1.0);
    let b = RiccatiBundle::solve(&atom, 0, &p, &coupling, None, &grid).map_err(|e| e.to_string())?;
    let zero = DVector::zeros(1);
    let errors = [
        (b.gamma.first()[(0, 0)] - 0.5).abs(),
        (b.beta.first()[0] + 0.5).abs(),
        (b.delta.first() - 0.25).abs(),
        (b.branch_cost(&zero) - 0.25).abs(),
    ];
    let worst = errors.iter().copied().fold(0.0, f64::max);

    // HJB residual of a coupled two-dimensional bundle at two resolutions.
    let s = two_site(40.0, CouplingMode::Cooperative);
    let hjb = |steps: usize| -> Result<f64, String> {
        let grid = TimeGrid::new(2.0, steps).map_err(|e| e.to_string())?;
        let xbar = collective_choice::numerics::SampledPath::from_fn(grid, |t| {
            DVector::from_vec(vec![-5.0 + 3.0 * t, 10.0 - 4.0 * t])
        })
        .map_err(|e| e.to_string())?;
        let b = RiccatiBundle::solve(&s.atoms[0], 1, &s.destinations[1], &s.coupling, Some(&xbar), &grid)
            .map_err(|e| e.to_string())?;
        let x = DVector::from_vec(vec![-4.0, 8.0]);
        Ok((1..steps)
            .step_by(steps / 8)
            .map(|k| b.hjb_residual(k, &x).abs())
            .fold(0.0, f64::max))
    };
    let coarse = hjb(500)?;
    let fine = hjb(1000)?;
    ensure(
        worst <= 1e-6 && fine < coarse,
        format!("max closed-form error {worst:.1e}; HJB residual {coarse:.3e} (K=500) -> {fine:.3e} (K=1000)"),
    )
}

fn reachability() -> Outcome {
    let s = Scenario::load(shipped("scalar_pair.json")).map_err(|e| e.to_string())?;
    let agents = AgentsFile::load(shipped("scalar_pair_agents.json"))
        .and_then(|f| f.resolve(&s))
        .map_err(|e| e.to_string())?;
    let report = reachability_probe(&s, &agents, 0.05, &[1e2, 1e3, 1e4]).map_err(|e| e.to_string())?;
    let d: Vec<f64> = report.rows.iter().map(|r| r.assigned_distance).collect();
    ensure(
        d[0] > d[1] && d[1] > d[2] && d[2] < 0.05,
        format!("terminal distance at M=1e2,1e3,1e4: {}", sci(&d)),
    )
}

fn heavier_weight_repels() -> Outcome {
    let base = two_site(0.0, CouplingMode::Cooperative);
    let mut heavy = base.clone();
    heavy.atoms[0].terminal_weights[1] *= 10.0;
    let sample = sample_population(&base, 400, SEED).map_err(|e| e.to_string())?;
    let count = |s: &Scenario| -> Result<usize, String> {
        let mf = solve(s)?;
        Ok(sample.x0.iter().filter(|x| mf.classify(0, x.as_slice()) == 1).count())
    };
    let before = count(&base)?;
    let after = count(&heavy)?;
    ensure(after <= before, format!("agents choosing p2: {before} -> {after} after M2 x10"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("q=0 split", split_at_zero_coupling),
        ("noncooperative consensus", noncooperative_consensus),
        ("cooperative split evens out", cooperative_evens_out),
        ("cooperative cost ordering", cooperation_is_cheaper),
        ("finite population gap", finite_population_gap),
        ("mean path convergence", mean_path_converges),
        ("fixed point certificate", fixed_point_certificate),
        ("uniform fast path agreement", uniform_agrees_with_picard),
        ("asymptotic cost formula", asymptotic_cost_formula),
        ("closed-form oracles", closed_form_oracles),
        ("reachability", reachability),
        ("terminal weight monotonicity", heavier_weight_repels),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {} ({name}): {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failures > 0 {
        println!("{failures} criterion/criteria failed");
        std::process::exit(1);
    }
}
