use std::sync::Arc;

use funcq::env::{generate_dataset, SyntheticEnv, SyntheticEnvSpec};
use funcq::kernel::{k_action, k_state, k_tensor, krr_fit, median_heuristic, KernelSpec, TrainingSet};
use funcq::util::rng_from;
use funcq::{Grid, GridFunction, ScalingRecord, State};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_pairs(n: usize, p: usize, grid: &Arc<Grid>, seed: u64) -> Vec<(State, GridFunction)> {
    let mut rng = rng_from(seed);
    (0..n)
        .map(|_| {
            let s: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (a, b): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            let f = GridFunction::from_fn(grid.clone(), |u| a + b * (2.0 * u - 1.0).powi(2)).unwrap();
            (State::new(s).unwrap(), f)
        })
        .collect()
}

fn gram(pairs: &[(State, GridFunction)], spec: &KernelSpec) -> DMatrix<f64> {
    let n = pairs.len();
    DMatrix::from_fn(n, n, |i, j| {
        k_tensor(pairs[i].0.components(), &pairs[i].1, pairs[j].0.components(), &pairs[j].1, spec).unwrap()
    })
}

#[test]
fn gram_is_symmetric_unit_diagonal_psd() {
    let grid = Grid::uniform(41).unwrap();
    let pairs = random_pairs(20, 3, &grid, 5);
    let spec = KernelSpec::new(1.2, 0.7).unwrap();
    let g = gram(&pairs, &spec);
    assert!((&g - g.transpose()).amax() < 1e-15);
    assert!(g.diagonal().iter().all(|&d| (d - 1.0).abs() < 1e-15));
    let min = SymmetricEigen::new(g).eigenvalues.min();
    assert!(min >= -1e-9, "{min}");
}

#[test]
fn tensor_kernel_factorizes() {
    let grid = Grid::uniform(21).unwrap();
    let pairs = random_pairs(10, 2, &grid, 6);
    let spec = KernelSpec::new(0.9, 1.4).unwrap();
    for w in pairs.windows(2) {
        let (s1, a1) = &w[0];
        let (s2, a2) = &w[1];
        let t = k_tensor(s1.components(), a1, s2.components(), a2, &spec).unwrap();
        let p = k_state(s1.components(), s2.components(), 0.9).unwrap() * k_action(a1, a2, 1.4).unwrap();
        assert!((t - p).abs() <= 1e-15);
        assert_eq!(t, k_tensor(s2.components(), a2, s1.components(), a1, &spec).unwrap());
    }
}

fn objective(g: &DMatrix<f64>, y: &DVector<f64>, alpha: &DVector<f64>, lambda: f64) -> f64 {
    let n = y.len() as f64;
    let r = g * alpha - y;
    r.norm_squared() / n + lambda * alpha.dot(&(g * alpha))
}

#[test]
fn krr_solution_is_the_regularized_minimizer() {
    let grid = Grid::uniform(31).unwrap();
    let pairs = random_pairs(25, 2, &grid, 7);
    let spec = KernelSpec::new(1.0, 1.0).unwrap();
    let mut rng = rng_from(8);
    let y: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..4.0)).collect();
    let lambda = 1e-2;
    let q = krr_fit(&pairs, &y, lambda, spec).unwrap();
    let g = gram(&pairs, &spec);
    let yv = DVector::from_vec(y);
    let alpha = DVector::from_column_slice(q.alpha());
    let best = objective(&g, &yv, &alpha, lambda);
    for _ in 0..100 {
        let mut d = DVector::from_fn(25, |_, _| StandardNormal.sample(&mut rng));
        d *= 1e-3 / d.norm();
        assert!(objective(&g, &yv, &(&alpha + d), lambda) >= best - 1e-15);
    }
}

#[test]
fn larger_lambda_shrinks_fitted_values() {
    let grid = Grid::uniform(31).unwrap();
    let pairs = random_pairs(15, 2, &grid, 9);
    let spec = KernelSpec::new(1.0, 1.0).unwrap();
    let y: Vec<f64> = (0..15).map(|i| 1.0 + (i % 3) as f64).collect();
    let mut last = f64::INFINITY;
    for lambda in [1e-3, 1e-1, 1e1] {
        let q = krr_fit(&pairs, &y, lambda, spec).unwrap();
        let norm: f64 = pairs.iter().map(|(s, a)| q.eval(s, a).unwrap().powi(2)).sum::<f64>().sqrt();
        assert!(norm < last, "lambda {lambda}: {norm} >= {last}");
        last = norm;
    }
}

#[test]
fn gradient_vanishes_at_a_single_training_action() {
    let grid = Grid::uniform(21).unwrap();
    let pairs = random_pairs(1, 2, &grid, 10);
    let q = krr_fit(&pairs, &[2.0], 0.1, KernelSpec::new(1.0, 1.0).unwrap()).unwrap();
    assert!(q.alpha()[0] > 0.0);
    let g = q.grad_action(&pairs[0].0, &pairs[0].1).unwrap();
    assert!(g.values().iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn median_heuristic_matches_exhaustive_pairs() {
    let env = SyntheticEnv::new(SyntheticEnvSpec::default()).unwrap();
    let data = generate_dataset(&env, &env.behavior_handle(), 10, 5, 11).unwrap();
    assert_eq!(data.len(), 50);
    let (hs, ha) = median_heuristic(&data).unwrap();

    let scaling = ScalingRecord::fit(&data).unwrap();
    let train = TrainingSet::from_dataset(&data, &scaling).unwrap();
    let mut ds = Vec::new();
    let mut da = Vec::new();
    for i in 0..50 {
        for j in i + 1..50 {
            let s: f64 = train.state(i).iter().zip(train.state(j)).map(|(a, b)| (a - b).powi(2)).sum();
            ds.push(s.sqrt());
            da.push(data.grid().dist2(train.action(i), train.action(j)).sqrt());
        }
    }
    let med = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    assert!((hs - med(&mut ds)).abs() < 1e-12);
    assert!((ha - med(&mut da)).abs() < 1e-12);
}
