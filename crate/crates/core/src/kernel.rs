//! Gaussian state and action kernels, their tensor product, and kernel ridge
//! regression over `(state, action)` pairs.
//!
//! The ridge problem is `min_g (1/n) Σ (g(x_i) - y_i)² + λ ‖g‖²_H`, whose
//! minimizer is `g(x) = Σ_j α_j k(x, x_j)` with `α = (G + nλI)⁻¹ y`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Grid, GridFunction, ScalingRecord, State};
use crate::util::{self, median, par_map};

/// Largest training set accepted by the dense Cholesky solver.
pub const MAX_DENSE_PAIRS: usize = 5_000;

/// Pair budget for the median heuristic.
const MEDIAN_PAIR_BUDGET: usize = 2_000;
const MEDIAN_SEED: u64 = 0x6d65_6469_616e;

/// Bandwidths of the two Gaussian kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub state_bandwidth: f64,
    pub action_bandwidth: f64,
}

impl KernelSpec {
    pub fn new(state_bandwidth: f64, action_bandwidth: f64) -> Result<Self> {
        let spec = KernelSpec {
            state_bandwidth,
            action_bandwidth,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.state_bandwidth > 0.0 && self.state_bandwidth.is_finite())
            || !(self.action_bandwidth > 0.0 && self.action_bandwidth.is_finite())
        {
            return Err(Error::invalid("kernel bandwidths must be positive and finite"));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `exp(-‖s1 - s2‖² / (2σ²))`.
pub fn k_state(s1: &[f64], s2: &[f64], bandwidth: f64) -> Result<f64> {
    if s1.len() != s2.len() {
        return Err(Error::DimensionMismatch {
            expected: s1.len(),
            found: s2.len(),
        });
    }
    Ok((-sq_dist(s1, s2) / (2.0 * bandwidth * bandwidth)).exp())
}

/// `exp(-d² / (2σ²))` with `d²` the quadrature L² distance.
pub fn k_action(a1: &GridFunction, a2: &GridFunction, bandwidth: f64) -> Result<f64> {
    let d2 = a1.dist2(a2)?;
    Ok((-d2 / (2.0 * bandwidth * bandwidth)).exp())
}

pub fn k_tensor(
    s1: &[f64],
    a1: &GridFunction,
    s2: &[f64],
    a2: &GridFunction,
    spec: &KernelSpec,
) -> Result<f64> {
    Ok(k_state(s1, s2, spec.state_bandwidth)? * k_action(a1, a2, spec.action_bandwidth)?)
}

/// Training pairs in kernel coordinates (standardized states, raw action samples).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    grid: Arc<Grid>,
}

impl TrainingSet {
    pub fn new(states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>, grid: Arc<Grid>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if states.len() != actions.len() {
            return Err(Error::DimensionMismatch {
                expected: states.len(),
                found: actions.len(),
            });
        }
        let p = states[0].len();
        if let Some(s) = states.iter().find(|s| s.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: s.len(),
            });
        }
        if let Some(a) = actions.iter().find(|a| a.len() != grid.len()) {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: a.len(),
            });
        }
        Ok(TrainingSet {
            states,
            actions,
            grid,
        })
    }

    /// Observed `(S_{i,t}, A_{i,t})` pairs with states mapped through `scaling`.
    pub fn from_dataset(dataset: &Dataset, scaling: &ScalingRecord) -> Result<Self> {
        let states = dataset
            .transitions()
            .iter()
            .map(|t| scaling.apply_slice(t.state.components()))
            .collect();
        let actions = dataset
            .transitions()
            .iter()
            .map(|t| t.action.values().to_vec())
            .collect();
        TrainingSet::new(states, actions, dataset.grid().clone())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j]
    }

    pub fn action(&self, j: usize) -> &[f64] {
        &self.actions[j]
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    /// State-kernel values between `z` (kernel coordinates) and every training state.
    pub fn state_row(&self, z: &[f64], spec: &KernelSpec) -> Vec<f64> {
        let c = 1.0 / (2.0 * spec.state_bandwidth * spec.state_bandwidth);
        self.states.iter().map(|s| (-sq_dist(z, s) * c).exp()).collect()
    }

    /// Tensor-kernel values between `(z, a)` and every training pair, given a
    /// precomputed state row.
    pub fn tensor_row(&self, state_row: &[f64], a: &[f64], spec: &KernelSpec) -> Vec<f64> {
        let c = 1.0 / (2.0 * spec.action_bandwidth * spec.action_bandwidth);
        state_row
            .iter()
            .zip(&self.actions)
            .map(|(&ks, aj)| {
                if ks == 0.0 {
                    0.0
                } else {
                    ks * (-self.grid.dist2(a, aj) * c).exp()
                }
            })
            .collect()
    }

    /// Gram matrix of the tensor kernel over the training pairs.
    pub fn gram(&self, spec: &KernelSpec) -> DMatrix<f64> {
        let n = self.len();
        let rows = par_map(n, |i| {
            let srow = self.state_row(&self.states[i], spec);
            self.tensor_row(&srow, &self.actions[i], spec)
        });
        let mut g = DMatrix::zeros(n, n);
        for (i, row) in rows.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                g[(i, j)] = v;
            }
        }
        // symmetrize exactly; unit diagonal
        for i in 0..n {
            g[(i, i)] = 1.0;
            for j in 0..i {
                let v = 0.5 * (g[(i, j)] + g[(j, i)]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }
}

/// A factorized ridge system `(G + nλI)` reused across many right-hand sides.
#[derive(Clone)]
pub struct KrrSystem {
    train: Arc<TrainingSet>,
    spec: KernelSpec,
    lambda: f64,
    gram: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl std::fmt::Debug for KrrSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KrrSystem")
            .field("n", &self.train.len())
            .field("spec", &self.spec)
            .field("lambda", &self.lambda)
            .finish()
    }
}

impl KrrSystem {
    pub fn new(train: Arc<TrainingSet>, spec: KernelSpec, lambda: f64) -> Result<Self> {
        spec.validate()?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("ridge parameter lambda must be positive"));
        }
        let n = train.len();
        if n > MAX_DENSE_PAIRS {
            return Err(Error::TooLarge {
                n,
                limit: MAX_DENSE_PAIRS,
            });
        }
        let gram = train.gram(&spec);
        let mut system = gram.clone();
        let ridge = n as f64 * lambda;
        for i in 0..n {
            system[(i, i)] += ridge;
        }
        let factor = Cholesky::new(system).ok_or(Error::NotPositiveDefinite)?;
        Ok(KrrSystem {
            train,
            spec,
            lambda,
            gram,
            factor,
        })
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn train(&self) -> &Arc<TrainingSet> {
        &self.train
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `α = (G + nλI)⁻¹ y`.
    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.train.len() {
            return Err(Error::DimensionMismatch {
                expected: self.train.len(),
                found: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression targets"));
        }
        let alpha = self.factor.solve(&DVector::from_column_slice(y));
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ridge coefficients"));
        }
        Ok(alpha.as_slice().to_vec())
    }

    /// Fitted values `G α` at the training pairs.
    pub fn fitted(&self, alpha: &[f64]) -> Vec<f64> {
        (&self.gram * DVector::from_column_slice(alpha)).as_slice().to_vec()
    }

    pub fn fit(&self, y: &[f64], scaling: ScalingRecord) -> Result<KernelQ> {
        let alpha = self.solve(y)?;
        Ok(KernelQ {
            train: self.train.clone(),
            alpha,
            spec: self.spec,
            scaling,
            q_range: None,
        })
    }
}

/// A fitted Q-function in representer form.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelQ {
    train: Arc<TrainingSet>,
    alpha: Vec<f64>,
    spec: KernelSpec,
    scaling: ScalingRecord,
    q_range: Option<(f64, f64)>,
}

/// JSON form of a [`KernelQ`]; training pairs are referenced by dataset index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelQRecord {
    pub spec: KernelSpec,
    pub alpha: Vec<f64>,
    pub scaling: ScalingRecord,
    pub train_indices: Vec<usize>,
    pub q_range: Option<(f64, f64)>,
}

/// Kernel-ridge fit on explicit pairs, with states used as given.
pub fn krr_fit(
    pairs: &[(State, GridFunction)],
    targets: &[f64],
    lambda: f64,
    spec: KernelSpec,
) -> Result<KernelQ> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if pairs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: pairs.len(),
            found: targets.len(),
        });
    }
    let grid = pairs[0].1.grid().clone();
    if pairs.iter().any(|(_, a)| !a.on_grid(&grid)) {
        return Err(Error::GridMismatch);
    }
    let p = pairs[0].0.dim();
    let train = TrainingSet::new(
        pairs.iter().map(|(s, _)| s.components().to_vec()).collect(),
        pairs.iter().map(|(_, a)| a.values().to_vec()).collect(),
        grid,
    )?;
    KrrSystem::new(Arc::new(train), spec, lambda)?.fit(targets, ScalingRecord::identity(p))
}

impl KernelQ {
    /// A Q-function with given coefficients over a training set.
    pub fn from_parts(
        train: Arc<TrainingSet>,
        alpha: Vec<f64>,
        spec: KernelSpec,
        scaling: ScalingRecord,
    ) -> Result<Self> {
        if alpha.len() != train.len() {
            return Err(Error::DimensionMismatch {
                expected: train.len(),
                found: alpha.len(),
            });
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("ridge coefficients"));
        }
        Ok(KernelQ {
            train,
            alpha,
            spec,
            scaling,
            q_range: None,
        })
    }

    /// Declares the admissible Q range used by [`KernelQ::eval_flagged`].
    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.q_range = Some((lo, hi));
        self
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn scaling(&self) -> &ScalingRecord {
        &self.scaling
    }

    pub fn train(&self) -> &Arc<TrainingSet> {
        &self.train
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.train.grid()
    }

    pub fn q_range(&self) -> Option<(f64, f64)> {
        self.q_range
    }

    /// State in kernel coordinates.
    pub fn kernel_state(&self, s: &State) -> Result<Vec<f64>> {
        if s.dim() != self.scaling.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.scaling.dim(),
                found: s.dim(),
            });
        }
        Ok(self.scaling.apply_slice(s.components()))
    }

    /// Precomputes the state-kernel row for repeated evaluation at one state.
    pub fn state_row(&self, s: &State) -> Result<Vec<f64>> {
        Ok(self.train.state_row(&self.kernel_state(s)?, &self.spec))
    }

    pub fn state_row_kernel_coords(&self, z: &[f64]) -> Vec<f64> {
        self.train.state_row(z, &self.spec)
    }

    /// `Σ_j α_j k_S(s, S_j) k_A(a, A_j)` for a precomputed state row.
    pub fn eval_row(&self, state_row: &[f64], a: &[f64]) -> f64 {
        let c = 1.0 / (2.0 * self.spec.action_bandwidth * self.spec.action_bandwidth);
        let grid = self.train.grid();
        let mut total = 0.0;
        for (j, (&ks, &alpha)) in state_row.iter().zip(&self.alpha).enumerate() {
            if ks == 0.0 || alpha == 0.0 {
                continue;
            }
            total += alpha * ks * (-grid.dist2(a, self.train.action(j)) * c).exp();
        }
        total
    }

    /// Value and action gradient `∂Q/∂a_g` for a precomputed state row.
    pub fn value_grad_row(&self, state_row: &[f64], a: &[f64], grad: &mut [f64]) -> f64 {
        let inv_s2 = 1.0 / (self.spec.action_bandwidth * self.spec.action_bandwidth);
        let grid = self.train.grid();
        let w = grid.weights();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for (j, (&ks, &alpha)) in state_row.iter().zip(&self.alpha).enumerate() {
            if ks == 0.0 || alpha == 0.0 {
                continue;
            }
            let aj = self.train.action(j);
            let k = alpha * ks * (-0.5 * grid.dist2(a, aj) * inv_s2).exp();
            total += k;
            if k == 0.0 {
                continue;
            }
            for g in 0..a.len() {
                grad[g] -= k * w[g] * (a[g] - aj[g]) * inv_s2;
            }
        }
        total
    }

    pub fn eval(&self, s: &State, a: &GridFunction) -> Result<f64> {
        if !a.on_grid(self.grid()) {
            return Err(Error::GridMismatch);
        }
        Ok(self.eval_row(&self.state_row(s)?, a.values()))
    }

    /// Value plus a flag raised when it falls outside the declared Q range.
    /// The value itself is never clipped.
    pub fn eval_flagged(&self, s: &State, a: &GridFunction) -> Result<(f64, bool)> {
        let v = self.eval(s, a)?;
        let out = self.q_range.is_some_and(|(lo, hi)| v < lo || v > hi);
        Ok((v, out))
    }

    pub fn grad_action(&self, s: &State, a: &GridFunction) -> Result<GridFunction> {
        if !a.on_grid(self.grid()) {
            return Err(Error::GridMismatch);
        }
        let row = self.state_row(s)?;
        let mut grad = vec![0.0; a.values().len()];
        self.value_grad_row(&row, a.values(), &mut grad);
        GridFunction::new(a.grid().clone(), grad)
    }

    /// Serializable form; assumes the training pairs are the dataset's
    /// transitions in order.
    pub fn to_record(&self) -> KernelQRecord {
        KernelQRecord {
            spec: self.spec,
            alpha: self.alpha.clone(),
            scaling: self.scaling.clone(),
            train_indices: (0..self.train.len()).collect(),
            q_range: self.q_range,
        }
    }

    /// Rebuilds a Q-function from its record and the dataset it was fitted on.
    pub fn from_record(record: &KernelQRecord, dataset: &Dataset) -> Result<Self> {
        let tr = dataset.transitions();
        if let Some(&bad) = record.train_indices.iter().find(|&&i| i >= tr.len()) {
            return Err(Error::invalid(format!(
                "training index {bad} out of range for a dataset of {} transitions",
                tr.len()
            )));
        }
        let states = record
            .train_indices
            .iter()
            .map(|&i| record.scaling.apply_slice(tr[i].state.components()))
            .collect();
        let actions = record
            .train_indices
            .iter()
            .map(|&i| tr[i].action.values().to_vec())
            .collect();
        let train = TrainingSet::new(states, actions, dataset.grid().clone())?;
        let mut q = KernelQ::from_parts(
            Arc::new(train),
            record.alpha.clone(),
            record.spec,
            record.scaling.clone(),
        )?;
        q.q_range = record.q_range;
        Ok(q)
    }
}

/// Median pairwise distances of standardized states and of actions.
///
/// All pairs are used when there are at most 2000 of them; otherwise 2000
/// pairs are drawn with a fixed seed.
pub fn median_heuristic(dataset: &Dataset) -> Result<(f64, f64)> {
    let scaling = ScalingRecord::fit(dataset)?;
    let train = TrainingSet::from_dataset(dataset, &scaling)?;
    median_heuristic_train(&train)
}

pub fn median_heuristic_train(train: &TrainingSet) -> Result<(f64, f64)> {
    let (ms, ma) = median_distances(train)?;
    if !(ms > 0.0) {
        return Err(Error::DegenerateDistances("state"));
    }
    if !(ma > 0.0) {
        return Err(Error::DegenerateDistances("action"));
    }
    Ok((ms, ma))
}

/// Raw median state and action distances, possibly zero.
pub fn median_distances(train: &TrainingSet) -> Result<(f64, f64)> {
    let n = train.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, found: n });
    }
    let total = n * (n - 1) / 2;
    let pairs: Vec<(usize, usize)> = if total <= MEDIAN_PAIR_BUDGET {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    } else {
        let mut rng = util::rng_from(MEDIAN_SEED);
        (0..MEDIAN_PAIR_BUDGET)
            .map(|_| loop {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                if i != j {
                    break (i, j);
                }
            })
            .collect()
    };
    let mut ds: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| sq_dist(train.state(i), train.state(j)).sqrt())
        .collect();
    let mut da: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| train.grid().dist2(train.action(i), train.action(j)).sqrt())
        .collect();
    Ok((median(&mut ds), median(&mut da)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from;
    use rand_distr::{Distribution, StandardNormal};

    fn random_pairs(n: usize, p: usize, grid: &Arc<Grid>, seed: u64) -> Vec<(State, GridFunction)> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|_| {
                let s: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
                let c: [f64; 3] = [
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                ];
                let a = GridFunction::from_fn(grid.clone(), |u| {
                    c[0] + c[1] * u + c[2] * (3.0 * u).sin()
                })
                .unwrap();
                (State::new(s).unwrap(), a)
            })
            .collect()
    }

    #[test]
    fn state_kernel_values() {
        assert_eq!(k_state(&[1.0, 2.0], &[1.0, 2.0], 0.7).unwrap(), 1.0);
        let s = 0.8;
        let d = s * 2f64.sqrt();
        let v = k_state(&[0.0], &[d], s).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        assert!(k_state(&[0.0], &[0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn action_kernel_constant_offset() {
        let g = Grid::uniform(51).unwrap();
        let zero = GridFunction::zeros(g.clone());
        let c = GridFunction::from_fn(g.clone(), |_| 1.3).unwrap();
        let v = k_action(&zero, &c, 0.9).unwrap();
        assert!((v - (-1.3f64 * 1.3 / (2.0 * 0.81)).exp()).abs() < 1e-14);
        assert_eq!(k_action(&c, &c, 0.9).unwrap(), 1.0);
        let other = GridFunction::zeros(Grid::uniform(11).unwrap());
        assert!(matches!(k_action(&zero, &other, 1.0), Err(Error::GridMismatch)));
    }

    #[test]
    fn action_kernel_grid_refinement() {
        let f1 = |u: f64| (2.0 * u).sin();
        let f2 = |u: f64| u * u;
        let eval = |n| {
            let g = Grid::uniform(n).unwrap();
            k_action(
                &GridFunction::from_fn(g.clone(), f1).unwrap(),
                &GridFunction::from_fn(g, f2).unwrap(),
                0.5,
            )
            .unwrap()
        };
        assert!((eval(51) - eval(201)).abs() < 1e-4);
    }

    #[test]
    fn single_pair_closed_form() {
        let g = Grid::uniform(11).unwrap();
        let pairs = random_pairs(1, 2, &g, 3);
        let lambda = 0.25;
        let q = krr_fit(&pairs, &[1.0], lambda, KernelSpec::new(1.0, 1.0).unwrap()).unwrap();
        assert!((q.alpha()[0] - 1.0 / (1.0 + lambda)).abs() < 1e-15);
        let v = q.eval(&pairs[0].0, &pairs[0].1).unwrap();
        assert!((v - 1.0 / (1.0 + lambda)).abs() < 1e-15);
        let grad = q.grad_action(&pairs[0].0, &pairs[0].1).unwrap();
        assert!(grad.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_targets_give_zero_q() {
        let g = Grid::uniform(11).unwrap();
        let pairs = random_pairs(8, 3, &g, 4);
        let q = krr_fit(&pairs, &[0.0; 8], 0.1, KernelSpec::new(1.0, 1.0).unwrap()).unwrap();
        assert!(q.alpha().iter().all(|&a| a == 0.0));
        assert_eq!(q.eval(&pairs[2].0, &pairs[5].1).unwrap(), 0.0);
        let grad = q.grad_action(&pairs[1].0, &pairs[3].1).unwrap();
        assert!(grad.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn krr_rejects_bad_inputs() {
        let g = Grid::uniform(11).unwrap();
        let pairs = random_pairs(3, 2, &g, 5);
        let spec = KernelSpec::new(1.0, 1.0).unwrap();
        assert!(krr_fit(&pairs, &[0.0, 1.0], 0.1, spec).is_err());
        assert!(krr_fit(&pairs, &[0.0, 1.0, 2.0], 0.0, spec).is_err());
        assert!(matches!(
            krr_fit(&pairs, &[0.0, f64::NAN, 2.0], 0.1, spec),
            Err(Error::NonFinite(_))
        ));
        assert!(KernelSpec::new(0.0, 1.0).is_err());
    }

    #[test]
    fn q_range_flag_does_not_clip() {
        let g = Grid::uniform(11).unwrap();
        let pairs = random_pairs(1, 2, &g, 6);
        let q = krr_fit(&pairs, &[10.0], 0.01, KernelSpec::new(1.0, 1.0).unwrap())
            .unwrap()
            .with_range(0.0, 5.0);
        let (v, flagged) = q.eval_flagged(&pairs[0].0, &pairs[0].1).unwrap();
        assert!(flagged);
        assert!(v > 5.0);
    }

    #[test]
    fn eval_is_lipschitz_in_action() {
        let g = Grid::uniform(41).unwrap();
        let pairs = random_pairs(12, 2, &g, 7);
        let y: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let spec = KernelSpec::new(1.2, 0.7).unwrap();
        let q = krr_fit(&pairs, &y, 0.05, spec).unwrap();
        let lip = q.alpha().iter().map(|a| a.abs()).sum::<f64>()
            / (spec.action_bandwidth * std::f64::consts::E.sqrt());
        let (s, a) = &pairs[0];
        let eps = 1e-3;
        let shifted =
            GridFunction::new(g.clone(), a.values().iter().map(|x| x + eps).collect()).unwrap();
        let l2 = a.dist2(&shifted).unwrap().sqrt();
        let dq = (q.eval(s, a).unwrap() - q.eval(s, &shifted).unwrap()).abs();
        assert!(dq <= lip * l2 * (1.0 + 1e-9));
    }

    #[test]
    fn median_heuristic_two_states() {
        let g = Grid::uniform(5).unwrap();
        let train = TrainingSet::new(
            vec![vec![0.0, 0.0], vec![2.0, 0.0]],
            vec![vec![0.0; 5], vec![1.0; 5]],
            g,
        )
        .unwrap();
        let (ms, ma) = median_heuristic_train(&train).unwrap();
        assert_eq!(ms, 2.0);
        assert!((ma - 1.0).abs() < 1e-15);
    }

    #[test]
    fn median_heuristic_degenerate_actions() {
        let g = Grid::uniform(5).unwrap();
        let train = TrainingSet::new(
            vec![vec![0.0], vec![1.0], vec![3.0]],
            vec![vec![0.5; 5]; 3],
            g,
        )
        .unwrap();
        let err = median_heuristic_train(&train).unwrap_err();
        assert_eq!(err.to_string(), "degenerate action distances");
    }
}
