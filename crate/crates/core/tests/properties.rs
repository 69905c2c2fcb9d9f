use collective_choice::centralized::exact_social_optimum;
use collective_choice::meanfield::find_fixed_point;
use collective_choice::numerics::TimeGrid;
use collective_choice::population::{sample_population, simulate_decentralized};
use collective_choice::scenario::{
    AgentTypeAtom, CouplingMode, CouplingSpec, InitialDistribution, Scenario, SolverConfig,
};
use collective_choice::uniform::UniformSolver;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn scalar(q: f64, z: f64, initial: InitialDistribution, steps: usize) -> Scenario {
    Scenario {
        grid: TimeGrid::new(1.0, steps).unwrap(),
        coupling: CouplingSpec::new(q, DMatrix::from_element(1, 1, z), CouplingMode::Cooperative),
        destinations: vec![DVector::from_element(1, -1.0), DVector::from_element(1, 1.0)],
        atoms: vec![AgentTypeAtom::new(
            DMatrix::from_element(1, 1, 0.1),
            DMatrix::from_element(1, 1, 1.0),
            1.0,
            vec![4.0, 4.0],
        )],
        initial,
        solver: SolverConfig {
            tol: 1e-9,
            ..SolverConfig::default()
        },
        seed: 3,
    }
}

fn points(xs: &[f64]) -> InitialDistribution {
    InitialDistribution::Points(xs.iter().map(|&x| DVector::from_element(1, x)).collect())
}

#[test]
fn balanced_point_mass_has_no_fixed_point() {
    // Everyone at the midpoint: any split the mean path implies is undone
    // by the best responses to it.
    let s = scalar(2.0, -0.5, points(&[0.0]), 100);
    let err = find_fixed_point(&s).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fraction_map_stays_on_the_simplex(
        lambda in 0.0..=1.0f64,
        q in 0.0..6.0f64,
        z in -2.0..0.0f64,
        mean in -1.0..1.0f64,
        var in 0.05..2.0f64,
    ) {
        let initial = InitialDistribution::Gaussian {
            mean: DVector::from_element(1, mean),
            covariance: DMatrix::from_element(1, 1, var),
        };
        let solver = UniformSolver::new(&scalar(q, z, initial, 100)).unwrap();
        let f = solver.fraction_map(&[lambda, 1.0 - lambda]).unwrap();
        prop_assert!(f.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((f[0] + f[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn runs_are_internally_consistent(
        xs in prop::collection::vec(-2.0..2.0f64, 1..6),
        n in 1usize..12,
        q in 0.0..4.0f64,
    ) {
        let s = scalar(q, -0.5, points(&xs), 100);
        let mf = find_fixed_point(&s);
        // A discrete measure need not admit a fixed point.
        prop_assume!(mf.is_ok());
        let mf = mf.unwrap();
        let sample = sample_population(&s, n, 0).unwrap();
        let run = simulate_decentralized(&sample, &mf, &s.grid).unwrap();
        prop_assert_eq!(run.social_cost, run.costs.iter().sum::<f64>());
        prop_assert!(run.costs.iter().all(|&c| c >= 0.0));
        let paths: Vec<_> = (0..n).map(|i| run.state_path(i).unwrap()).collect();
        for k in 0..s.grid.len() {
            let mean = paths.iter().map(|p| p.value(k)[0]).sum::<f64>() / n as f64;
            prop_assert!((mean - run.mean_path.value(k)[0]).abs() < 1e-12);
        }
        for (i, &c) in run.choices.iter().enumerate() {
            let best = (0..2)
                .map(|j| mf.bundle(0, j).branch_cost(&sample.x0[i]))
                .fold(f64::INFINITY, f64::min);
            prop_assert!(mf.bundle(0, c).branch_cost(&sample.x0[i]) <= best + 1e-9);
        }
    }

    #[test]
    fn exact_optimum_bounds_the_decentralized_cost(
        xs in prop::collection::vec(-1.5..1.5f64, 3),
        q in 0.1..4.0f64,
    ) {
        let s = scalar(q, -0.5, points(&xs), 200);
        let mf = find_fixed_point(&s);
        prop_assume!(mf.is_ok());
        let mf = mf.unwrap();
        let sample = sample_population(&s, 2, 0).unwrap();
        let run = simulate_decentralized(&sample, &mf, &s.grid).unwrap();
        let exact = exact_social_optimum(&s, &sample.agents(&s)).unwrap();
        prop_assert!(exact.per_agent_cost() <= run.per_agent_cost() + 1e-6,
            "{} > {}", exact.per_agent_cost(), run.per_agent_cost());
    }
}
