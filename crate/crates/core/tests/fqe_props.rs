use funcq::env::{exact_tabular_value, generate_dataset, TabularEmbedEnv, TabularSpec};
use funcq::fqe::{contraction_ratio, fqe_run, resolve_spec};
use funcq::RunConfig;

fn setup(seed: u64) -> (TabularEmbedEnv, funcq::Dataset, RunConfig) {
    let env = TabularEmbedEnv::new(TabularSpec::default()).unwrap();
    let data = generate_dataset(&env, &env.uniform_policy(), 30, 8, seed).unwrap();
    let config = RunConfig {
        gamma: 0.8,
        iterations: 60,
        state_bandwidth: Some(1.0),
        action_bandwidth: Some(0.5),
        seed,
        ..RunConfig::default()
    };
    (env, data, config)
}

#[test]
fn values_respect_the_reward_bound() {
    let (env, data, config) = setup(41);
    let spec = resolve_spec(&data, &config).unwrap();
    let r_max = env.spec().reward.iter().flatten().cloned().fold(0.0, f64::max);
    for handle in [env.uniform_policy(), env.deterministic_policy([0, 1]), env.deterministic_policy([1, 1])] {
        let v = fqe_run(&data, &handle, &config, spec).unwrap().value;
        assert!(v <= r_max / (1.0 - config.gamma) + 0.05, "{v}");
        assert!(v >= -0.05, "{v}");
    }
}

#[test]
fn residuals_contract_at_about_gamma() {
    let (env, data, config) = setup(42);
    let spec = resolve_spec(&data, &config).unwrap();
    let res = fqe_run(&data, &env.uniform_policy(), &config, spec).unwrap();
    assert_eq!(res.residuals.len(), config.iterations);
    let ratio = contraction_ratio(&res.residuals, 10).unwrap();
    assert!(ratio <= config.gamma + 0.05, "ratio {ratio}");
    assert!(res.residuals.last().unwrap() < &1e-3);
}

#[test]
fn point_mass_stochastic_policy_equals_deterministic() {
    let (env, data, config) = setup(43);
    let spec = resolve_spec(&data, &config).unwrap();
    let det = fqe_run(&data, &env.deterministic_policy([1, 0]), &config, spec).unwrap().value;
    let sto = fqe_run(&data, &env.policy([[0.0, 1.0], [1.0, 0.0]]), &config, spec).unwrap().value;
    assert!((det - sto).abs() < 1e-10, "{det} vs {sto}");
}

#[test]
fn uniform_policy_is_close_to_its_exact_value() {
    let (env, data, config) = setup(44);
    let spec = resolve_spec(&data, &config).unwrap();
    let mut init = [0.0; 2];
    for s in data.initial_states() {
        init[env.state_index(s).unwrap()] += 1.0 / data.initial_states().len() as f64;
    }
    let pi = [[0.5, 0.5], [0.5, 0.5]];
    let est = fqe_run(&data, &env.policy(pi), &config, spec).unwrap().value;
    let exact = exact_tabular_value(&env, pi, config.gamma, init).unwrap();
    assert!((est - exact).abs() <= 0.1 * exact, "{est} vs {exact}");
}

#[test]
fn zero_discount_is_the_fitted_reward() {
    let (env, data, config) = setup(45);
    let config = RunConfig { gamma: 0.0, iterations: 3, ..config };
    let spec = resolve_spec(&data, &config).unwrap();
    let res = fqe_run(&data, &env.uniform_policy(), &config, spec).unwrap();
    // after the first pass the targets no longer change
    assert!(res.residuals[1..].iter().all(|r| *r < 1e-12));
}

#[test]
fn same_seed_same_value() {
    let (env, data, config) = setup(46);
    let spec = resolve_spec(&data, &config).unwrap();
    let a = fqe_run(&data, &env.uniform_policy(), &config, spec).unwrap().value;
    let b = fqe_run(&data, &env.uniform_policy(), &config, spec).unwrap().value;
    assert_eq!(a.to_bits(), b.to_bits());
}
