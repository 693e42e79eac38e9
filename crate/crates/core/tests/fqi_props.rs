use funcq::bspline::BSplineBasis;
use funcq::env::{generate_dataset, Environment, SyntheticEnv, SyntheticEnvSpec};
use funcq::fqe::resolve_spec;
use funcq::fqi::{
    fqi_run, pick_best, policy_eval, policy_update, roughness, second_moment, Candidate, FunctionalLinearPolicy, QuadraticQ,
};
use funcq::util::rng_from;
use funcq::{Grid, RunConfig, ScalingRecord, State};
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

struct Problem {
    basis: BSplineBasis,
    design: DMatrix<f64>,
    grid: std::sync::Arc<Grid>,
    z: Vec<Vec<f64>>,
    sigma: DMatrix<f64>,
}

fn problem(n: usize, seed: u64) -> Problem {
    let basis = BSplineBasis::uniform(2);
    let grid = Grid::uniform(51).unwrap();
    let design = basis.design_matrix(grid.points()).unwrap();
    let mut rng = rng_from(seed);
    let z: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            vec![a, b, 1.0]
        })
        .collect();
    let sigma = second_moment(&z).unwrap();
    Problem { basis, design, grid, z, sigma }
}

fn targets(p: &Problem, c: &DMatrix<f64>) -> QuadraticQ {
    let targets = p
        .z
        .iter()
        .map(|z| {
            let b = DMatrix::from_row_slice(1, z.len(), z) * c;
            (0..p.design.nrows())
                .map(|g| (0..c.ncols()).map(|k| p.design[(g, k)] * b[(0, k)]).sum())
                .collect()
        })
        .collect();
    QuadraticQ {
        targets,
        weights: p.grid.weights().to_vec(),
    }
}

fn planted(k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from(seed);
    DMatrix::from_fn(3, k, |_, _| StandardNormal.sample(&mut rng))
}

#[test]
fn quadratic_q_recovers_a_target_in_the_span() {
    let p = problem(60, 1);
    let c_star = planted(p.basis.dim(), 2);
    let q = targets(&p, &c_star);
    let c0 = DMatrix::zeros(3, p.basis.dim());
    let rep = policy_update(&q, &p.z, &p.design, &p.basis, &p.sigma, 1e-9, &c0).unwrap();
    let err = (&rep.coefficients - &c_star).amax();
    assert!(err < 1e-3, "max coefficient error {err}");
    assert!(rep.objective > rep.initial_objective);
    assert!(rep.trace.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn warm_start_at_the_optimum_barely_moves() {
    let p = problem(40, 3);
    let c_star = planted(p.basis.dim(), 4);
    let q = targets(&p, &c_star);
    let eta = 1e-4;
    let c0 = DMatrix::zeros(3, p.basis.dim());
    let first = policy_update(&q, &p.z, &p.design, &p.basis, &p.sigma, eta, &c0).unwrap();
    let again = policy_update(&q, &p.z, &p.design, &p.basis, &p.sigma, eta, &first.coefficients).unwrap();
    assert!(again.steps <= 2, "{} steps", again.steps);
    assert!((again.objective - first.objective).abs() < 1e-9);
}

#[test]
fn roughness_falls_as_eta_grows() {
    let p = problem(40, 5);
    // curved targets so the unpenalized optimum is rough
    let mut c_star = planted(p.basis.dim(), 6);
    for k in 0..p.basis.dim() {
        c_star[(2, k)] += if k % 2 == 0 { 2.0 } else { -2.0 };
    }
    let q = targets(&p, &c_star);
    let scaling = ScalingRecord::identity(2);
    let c0 = DMatrix::zeros(3, p.basis.dim());
    let mut last = f64::INFINITY;
    for eta in [1e-4, 1e-2, 1.0, 1e2, 1e6] {
        let rep = policy_update(&q, &p.z, &p.design, &p.basis, &p.sigma, eta, &c0).unwrap();
        let pol = FunctionalLinearPolicy::new(rep.coefficients, p.basis.clone(), scaling.clone(), p.grid.clone(), true)
            .unwrap();
        let r = roughness(&pol, &p.sigma);
        assert!(r <= last + 1e-12, "eta {eta}: {r} > {last}");
        last = r;
    }
    assert!(last < 1e-6, "{last}");
}

fn synthetic(n: usize, t: usize, seed: u64) -> (SyntheticEnv, funcq::Dataset) {
    let env = SyntheticEnv::new(SyntheticEnvSpec {
        state_dim: 3,
        grid_points: 51,
        ..SyntheticEnvSpec::default()
    })
    .unwrap();
    let data = generate_dataset(&env, &env.behavior_handle(), n, t, seed).unwrap();
    (env, data)
}

#[test]
fn fqi_bookkeeping_and_determinism() {
    let (_, data) = synthetic(20, 4, 11);
    let config = RunConfig {
        iterations: 6,
        seed: 11,
        ..RunConfig::default()
    };
    let spec = resolve_spec(&data, &config).unwrap();
    let basis = BSplineBasis::uniform(config.interior_knots);
    let a = fqi_run(&data, &config, spec, &basis, 1e-3).unwrap();
    let b = fqi_run(&data, &config, spec, &basis, 1e-3).unwrap();
    assert_eq!(a.optimizer_calls, config.iterations);
    assert_eq!(a.objectives.len(), config.iterations);
    assert_eq!(a.policy_changes.len(), config.iterations);
    assert_eq!(a.policy.coefficients(), b.policy.coefficients());
}

#[test]
fn myopic_fit_is_a_single_step_problem() {
    let (_, data) = synthetic(20, 3, 12);
    let config = RunConfig {
        gamma: 0.0,
        iterations: 3,
        seed: 12,
        ..RunConfig::default()
    };
    let spec = resolve_spec(&data, &config).unwrap();
    let basis = BSplineBasis::uniform(config.interior_knots);
    let res = fqi_run(&data, &config, spec, &basis, 1e-3).unwrap();
    // with no bootstrapping every iteration fits the same Q, so the policy settles
    assert!(res.policy_changes[2] < 1e-6 * (1.0 + res.policy_changes[0]), "{:?}", res.policy_changes);
}

#[test]
fn learned_actions_stay_near_the_behavior_range() {
    let (env, data) = synthetic(30, 4, 13);
    let config = RunConfig {
        iterations: 8,
        seed: 13,
        ..RunConfig::default()
    };
    let spec = resolve_spec(&data, &config).unwrap();
    let basis = BSplineBasis::uniform(config.interior_knots);
    let res = fqi_run(&data, &config, spec, &basis, 1e-3).unwrap();
    let vals: Vec<f64> = data.transitions().iter().flat_map(|t| t.action.values().to_vec()).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    for t in data.transitions() {
        let a = policy_eval(&res.policy, &t.state).unwrap();
        for v in a.values() {
            assert!(*v >= lo - 2.0 * sd && *v <= hi + 2.0 * sd, "{v} outside [{lo}, {hi}] ± 2·{sd}");
        }
    }
    assert_eq!(env.state_dim(), 3);
}

#[test]
fn selection_tie_breaks_are_deterministic() {
    let c = |lambda, eta| Candidate {
        lambda,
        eta,
        bandwidth_multiplier: 1.0,
    };
    assert_eq!(pick_best(&[(c(1e-3, 1e-3), 0.5)]), Some(0));
    assert_eq!(pick_best(&[]), None);
    let tied = [(c(1e-3, 1e-4), 0.5), (c(1e-3, 1e-3), 0.5), (c(1e-2, 1e-3), 0.5)];
    assert_eq!(pick_best(&tied), Some(2));
    let dup = [(c(1e-3, 1e-3), 0.5), (c(1e-3, 1e-3), 0.5)];
    assert_eq!(pick_best(&dup), Some(0));
    let clear = [(c(1e-3, 1e-3), 0.4), (c(1e-3, 1e-4), 0.6)];
    assert_eq!(pick_best(&clear), Some(1));
}

#[test]
fn policy_rejects_wrong_state_dimension() {
    let p = problem(5, 7);
    let pol = FunctionalLinearPolicy::zeros(p.basis.clone(), ScalingRecord::identity(2), p.grid.clone(), true);
    assert!(pol.features(&State::new(vec![1.0, 2.0, 3.0]).unwrap()).is_err());
}
