//! Functional policy optimization: fitted-Q iteration with a penalized
//! B-spline functional linear policy class.
//!
//! The policy maps a state to `u ↦ B(u)ᵀ Cᵀ z`, where `z` is the
//! standardized state with an appended intercept. Each outer iteration
//! refits `Q̂_m` by kernel ridge regression on `R + γ Q̂_{m-1}(S', π̂_{m-1}(S'))`
//! and then updates `C` once by maximizing
//! `mean_i Q̂_m(S'_i, π(S'_i)) - η tr(C R Cᵀ Σ̂)`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bspline::BSplineBasis;
use crate::error::{Error, Result};
use crate::fqe::{fqe_run, resolve_spec, ActionMap, PolicyHandle};
use crate::kernel::{KernelQ, KernelSpec, KrrSystem, TrainingSet};
use crate::model::{Dataset, Grid, GridFunction, RunConfig, ScalingRecord, State};
use crate::util::{derive_seed, par_map, rng_from};

/// A functional linear policy over a cubic B-spline basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalLinearPolicy {
    coefficients: DMatrix<f64>,
    basis: BSplineBasis,
    scaling: ScalingRecord,
    grid: Arc<Grid>,
    intercept: bool,
    design: DMatrix<f64>,
}

/// JSON form of a [`FunctionalLinearPolicy`]; `coefficients` is row-major `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub coefficients: Vec<Vec<f64>>,
    pub basis: BSplineBasis,
    pub scaling: ScalingRecord,
    pub grid: Vec<f64>,
    pub intercept: bool,
}

impl FunctionalLinearPolicy {
    /// `coefficients` has one row per (scaled) state component, plus one for
    /// the intercept when `intercept` is set, and one column per basis function.
    pub fn new(
        coefficients: DMatrix<f64>,
        basis: BSplineBasis,
        scaling: ScalingRecord,
        grid: Arc<Grid>,
        intercept: bool,
    ) -> Result<Self> {
        let rows = scaling.dim() + usize::from(intercept);
        if coefficients.nrows() != rows || coefficients.ncols() != basis.dim() {
            return Err(Error::invalid(format!(
                "coefficient matrix must be {rows}x{}, got {}x{}",
                basis.dim(),
                coefficients.nrows(),
                coefficients.ncols()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("policy coefficients"));
        }
        let design = basis.design_matrix(grid.points())?;
        Ok(FunctionalLinearPolicy {
            coefficients,
            basis,
            scaling,
            grid,
            intercept,
            design,
        })
    }

    pub fn zeros(basis: BSplineBasis, scaling: ScalingRecord, grid: Arc<Grid>, intercept: bool) -> Self {
        let rows = scaling.dim() + usize::from(intercept);
        let c = DMatrix::zeros(rows, basis.dim());
        FunctionalLinearPolicy::new(c, basis, scaling, grid, intercept).expect("zero policy is valid")
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn scaling(&self) -> &ScalingRecord {
        &self.scaling
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn intercept(&self) -> bool {
        self.intercept
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn with_coefficients(&self, c: DMatrix<f64>) -> Result<Self> {
        FunctionalLinearPolicy::new(c, self.basis.clone(), self.scaling.clone(), self.grid.clone(), self.intercept)
    }

    /// Policy-space state vector: scaled components plus the intercept.
    pub fn features(&self, s: &State) -> Result<Vec<f64>> {
        if s.dim() != self.scaling.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.scaling.dim(),
                found: s.dim(),
            });
        }
        let mut z = self.scaling.apply_slice(s.components());
        if self.intercept {
            z.push(1.0);
        }
        Ok(z)
    }

    pub fn eval_features(&self, z: &[f64]) -> Vec<f64> {
        action_values(&self.design, &self.coefficients, z)
    }

    pub fn to_record(&self) -> PolicyRecord {
        PolicyRecord {
            coefficients: (0..self.coefficients.nrows())
                .map(|r| self.coefficients.row(r).iter().cloned().collect())
                .collect(),
            basis: self.basis.clone(),
            scaling: self.scaling.clone(),
            grid: self.grid.points().to_vec(),
            intercept: self.intercept,
        }
    }

    pub fn from_record(record: &PolicyRecord) -> Result<Self> {
        let rows = record.coefficients.len();
        let cols = record.coefficients.first().map_or(0, |r| r.len());
        if record.coefficients.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("policy coefficient rows have unequal lengths"));
        }
        let c = DMatrix::from_fn(rows, cols, |i, j| record.coefficients[i][j]);
        FunctionalLinearPolicy::new(
            c,
            record.basis.clone(),
            record.scaling.clone(),
            Grid::new(record.grid.clone())?,
            record.intercept,
        )
    }
}

fn action_values(design: &DMatrix<f64>, c: &DMatrix<f64>, z: &[f64]) -> Vec<f64> {
    // b_k = Σ_j z_j c_jk, then a_g = Σ_k B_gk b_k
    let k = c.ncols();
    let mut b = vec![0.0; k];
    for (j, &zj) in z.iter().enumerate() {
        if zj != 0.0 {
            for (kk, bk) in b.iter_mut().enumerate() {
                *bk += zj * c[(j, kk)];
            }
        }
    }
    (0..design.nrows())
        .map(|g| (0..k).map(|kk| design[(g, kk)] * b[kk]).sum())
        .collect()
}

/// `π(s)` on the policy grid; `s` in original units.
pub fn policy_eval(policy: &FunctionalLinearPolicy, s: &State) -> Result<GridFunction> {
    let z = policy.features(s)?;
    GridFunction::new(policy.grid.clone(), policy.eval_features(&z))
}

impl ActionMap for FunctionalLinearPolicy {
    fn act(&self, state: &State) -> Result<GridFunction> {
        policy_eval(self, state)
    }
}

/// `Σ̂ = mean z zᵀ` over the given policy-space states.
pub fn second_moment(features: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if features.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let q = features[0].len();
    let mut s = DMatrix::zeros(q, q);
    for z in features {
        for i in 0..q {
            for j in 0..q {
                s[(i, j)] += z[i] * z[j];
            }
        }
    }
    Ok(s / features.len() as f64)
}

fn trace_penalty(c: &DMatrix<f64>, r: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    (c * r * c.transpose() * sigma).trace()
}

/// `tr(C R Cᵀ Σ̂)`: the mean over states of `∫ ([π(s)]'')² du`.
pub fn roughness(policy: &FunctionalLinearPolicy, sigma: &DMatrix<f64>) -> f64 {
    let r = policy.basis.penalty_matrix();
    trace_penalty(&policy.coefficients, r.matrix(), sigma)
}

/// A Q-function restricted to a fixed list of states, queried with actions.
pub trait PreparedQ: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Q(s_i, a)`, writing `∂Q/∂a_g` into `grad`.
    fn value_grad(&self, i: usize, a: &[f64], grad: &mut [f64]) -> f64;
}

/// A [`KernelQ`] at precomputed state-kernel rows.
pub struct KernelQAt<'a> {
    pub q: &'a KernelQ,
    pub rows: &'a [Vec<f64>],
}

impl PreparedQ for KernelQAt<'_> {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn value_grad(&self, i: usize, a: &[f64], grad: &mut [f64]) -> f64 {
        self.q.value_grad_row(&self.rows[i], a, grad)
    }
}

/// `Q(s_i, a) = -‖a - a*_i‖²` under quadrature weights.
pub struct QuadraticQ {
    pub targets: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl PreparedQ for QuadraticQ {
    fn len(&self) -> usize {
        self.targets.len()
    }

    fn value_grad(&self, i: usize, a: &[f64], grad: &mut [f64]) -> f64 {
        let t = &self.targets[i];
        let mut v = 0.0;
        for g in 0..a.len() {
            let d = a[g] - t[g];
            v -= self.weights[g] * d * d;
            grad[g] = -2.0 * self.weights[g] * d;
        }
        v
    }
}

/// Constant Q-function at `n` states.
pub struct ConstantQ {
    pub value: f64,
    pub n: usize,
}

impl PreparedQ for ConstantQ {
    fn len(&self) -> usize {
        self.n
    }

    fn value_grad(&self, _i: usize, _a: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.value
    }
}

/// The policy-update objective at one outer iteration.
pub struct PolicyProblem<'a, Q: PreparedQ> {
    pub q: &'a Q,
    /// Policy-space next states, one per entry of `q`.
    pub states: &'a [Vec<f64>],
    /// `G × K` basis values on the action grid.
    pub design: &'a DMatrix<f64>,
    pub penalty: &'a DMatrix<f64>,
    pub sigma: &'a DMatrix<f64>,
    pub eta: f64,
}

impl<Q: PreparedQ> PolicyProblem<'_, Q> {
    fn check(&self, c: &DMatrix<f64>) -> Result<()> {
        if self.q.len() != self.states.len() {
            return Err(Error::DimensionMismatch {
                expected: self.states.len(),
                found: self.q.len(),
            });
        }
        if self.states.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if c.ncols() != self.design.ncols() || c.nrows() != self.sigma.nrows() {
            return Err(Error::invalid("coefficient matrix shape does not match the problem"));
        }
        Ok(())
    }

    pub fn objective(&self, c: &DMatrix<f64>) -> Result<f64> {
        Ok(self.objective_grad(c)?.0)
    }

    /// Objective and its gradient with respect to `C`.
    pub fn objective_grad(&self, c: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        self.check(c)?;
        let n = self.states.len();
        let g_len = self.design.nrows();
        let parts = par_map(n, |i| {
            let z = &self.states[i];
            let a = action_values(self.design, c, z);
            let mut g = vec![0.0; g_len];
            let v = self.q.value_grad(i, &a, &mut g);
            // Bᵀ g
            let bg: Vec<f64> = (0..self.design.ncols())
                .map(|k| (0..g_len).map(|gg| self.design[(gg, k)] * g[gg]).sum())
                .collect();
            (v, bg)
        });
        let mut value = 0.0;
        let mut grad = DMatrix::zeros(c.nrows(), c.ncols());
        for (i, (v, bg)) in parts.into_iter().enumerate() {
            value += v;
            let z = &self.states[i];
            for j in 0..c.nrows() {
                if z[j] == 0.0 {
                    continue;
                }
                for k in 0..c.ncols() {
                    grad[(j, k)] += z[j] * bg[k];
                }
            }
        }
        value /= n as f64;
        grad /= n as f64;
        if self.eta > 0.0 {
            value -= self.eta * trace_penalty(c, self.penalty, self.sigma);
            grad -= (self.sigma * c * self.penalty) * (2.0 * self.eta);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("policy objective"));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("policy gradient"));
        }
        Ok((value, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub max_steps: usize,
    pub grad_tol: f64,
    pub armijo: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_steps: 500,
            grad_tol: 1e-5,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub coefficients: DMatrix<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub steps: usize,
    pub grad_norm: f64,
    /// Objective after each accepted step.
    pub trace: Vec<f64>,
}

/// Gradient ascent with Armijo backtracking. Trial steps use the
/// Barzilai–Borwein length; each accepted step increases the objective.
pub fn maximize<Q: PreparedQ>(
    problem: &PolicyProblem<'_, Q>,
    c_init: &DMatrix<f64>,
    options: &OptimizerOptions,
) -> Result<OptimizeReport> {
    let (mut f, mut g) = problem.objective_grad(c_init)?;
    let initial_objective = f;
    let mut c = c_init.clone();
    let mut t = 1.0;
    let mut trace = Vec::new();
    let mut steps = 0;
    while steps < options.max_steps {
        let gn2 = g.norm_squared();
        if gn2.sqrt() < options.grad_tol {
            break;
        }
        let mut accepted = None;
        let mut trial = t;
        while trial > 1e-30 {
            let c_new = &c + &g * trial;
            if let Ok((f_new, g_new)) = problem.objective_grad(&c_new) {
                if f_new >= f + options.armijo * trial * gn2 {
                    accepted = Some((c_new, f_new, g_new, trial));
                    break;
                }
            }
            trial *= 0.5;
        }
        let Some((c_new, f_new, g_new, used)) = accepted else {
            break;
        };
        let s = &c_new - &c;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        t = if sy < 0.0 {
            (s.norm_squared() / -sy).clamp(1e-12, 1e12)
        } else {
            (used * 2.0).min(1e12)
        };
        c = c_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        steps += 1;
    }
    Ok(OptimizeReport {
        coefficients: c,
        objective: f,
        initial_objective,
        grad_norm: g.norm(),
        steps,
        trace,
    })
}

/// `mean_i Q(S'_i, π_C(S'_i)) - η tr(C R Cᵀ Σ̂)`.
pub fn policy_objective<Q: PreparedQ>(
    c: &DMatrix<f64>,
    q: &Q,
    next_states: &[Vec<f64>],
    design: &DMatrix<f64>,
    basis: &BSplineBasis,
    sigma: &DMatrix<f64>,
    eta: f64,
) -> Result<f64> {
    let r = basis.penalty_matrix();
    PolicyProblem {
        q,
        states: next_states,
        design,
        penalty: r.matrix(),
        sigma,
        eta,
    }
    .objective(c)
}

/// One policy update from `c_init`.
pub fn policy_update<Q: PreparedQ>(
    q: &Q,
    next_states: &[Vec<f64>],
    design: &DMatrix<f64>,
    basis: &BSplineBasis,
    sigma: &DMatrix<f64>,
    eta: f64,
    c_init: &DMatrix<f64>,
) -> Result<OptimizeReport> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be positive for the policy update"));
    }
    let r = basis.penalty_matrix();
    let problem = PolicyProblem {
        q,
        states: next_states,
        design,
        penalty: r.matrix(),
        sigma,
        eta,
    };
    maximize(&problem, c_init, &OptimizerOptions::default())
}

/// Result of [`fqi_run`].
#[derive(Debug, Clone)]
pub struct FqiResult {
    pub policy: FunctionalLinearPolicy,
    pub q_hat: KernelQ,
    /// Policy objective after each update.
    pub objectives: Vec<f64>,
    /// `‖C_m - C_{m-1}‖_F`.
    pub policy_changes: Vec<f64>,
    /// Gradient steps taken by each update.
    pub optimizer_steps: Vec<usize>,
    /// Number of policy-update invocations.
    pub optimizer_calls: usize,
    /// Set when the objective fell for five consecutive iterations.
    pub diverged: bool,
}

/// One row per outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub objective: f64,
    pub policy_change: f64,
    pub optimizer_steps: usize,
}

impl FqiResult {
    pub fn diagnostics(&self) -> Vec<IterationDiagnostics> {
        (0..self.objectives.len())
            .map(|m| IterationDiagnostics {
                iteration: m + 1,
                objective: self.objectives[m],
                policy_change: self.policy_changes[m],
                optimizer_steps: self.optimizer_steps[m],
            })
            .collect()
    }
}

const RESTART_STREAM: u64 = 0x7265_7374;
const RESTARTS: usize = 3;
const RESTART_SD: f64 = 0.25;

/// Least-squares fit of the policy class to the observed actions:
/// `C = Σ̂⁺ H M⁻¹` with `H = mean z (Bᵀ W A)ᵀ`, `M = Bᵀ W B`.
pub fn behavior_cloning(
    features: &[Vec<f64>],
    actions: &[&[f64]],
    design: &DMatrix<f64>,
    grid: &Grid,
) -> Result<DMatrix<f64>> {
    let q = features[0].len();
    let k = design.ncols();
    let w = grid.weights();
    let wb = DMatrix::from_fn(design.nrows(), k, |g, kk| w[g] * design[(g, kk)]);
    let m = design.transpose() * &wb;
    let mut h = DMatrix::zeros(q, k);
    for (z, a) in features.iter().zip(actions) {
        let bwa: Vec<f64> = (0..k)
            .map(|kk| (0..a.len()).map(|g| wb[(g, kk)] * a[g]).sum())
            .collect();
        for j in 0..q {
            for kk in 0..k {
                h[(j, kk)] += z[j] * bwa[kk];
            }
        }
    }
    h /= features.len() as f64;
    let sigma = second_moment(features)?;
    let sigma_pinv = sigma
        .pseudo_inverse(1e-10)
        .map_err(|_| Error::NotPositiveDefinite)?;
    let m_inv = m.try_inverse().ok_or(Error::NotPositiveDefinite)?;
    Ok(sigma_pinv * h * m_inv)
}

/// Fitted-Q iteration with penalized functional linear policies.
pub fn fqi_run(
    dataset: &Dataset,
    config: &RunConfig,
    spec: KernelSpec,
    basis: &BSplineBasis,
    eta: f64,
) -> Result<FqiResult> {
    config.validate()?;
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    let scaling = ScalingRecord::fit(dataset)?;
    let train = Arc::new(TrainingSet::from_dataset(dataset, &scaling)?);
    let system = KrrSystem::new(train.clone(), spec, config.lambda)?;
    let grid = dataset.grid().clone();
    let template = FunctionalLinearPolicy::zeros(basis.clone(), scaling.clone(), grid.clone(), true);
    let design = template.design().clone();
    let r = basis.penalty_matrix();

    let feats = |s: &State| template.features(s);
    let state_z: Vec<Vec<f64>> = dataset.transitions().iter().map(|t| feats(&t.state)).collect::<Result<_>>()?;
    let next_z: Vec<Vec<f64>> = dataset
        .transitions()
        .iter()
        .map(|t| feats(&t.next_state))
        .collect::<Result<_>>()?;
    let sigma = second_moment(&state_z)?;
    let next_rows: Vec<Vec<f64>> = par_map(dataset.len(), |i| {
        train.state_row(&scaling.apply_slice(dataset.transitions()[i].next_state.components()), &spec)
    });
    let rewards: Vec<f64> = dataset.transitions().iter().map(|t| t.reward).collect();

    let calls = AtomicUsize::new(0);
    let update = |q: &KernelQ, starts: &[DMatrix<f64>]| -> Result<OptimizeReport> {
        calls.fetch_add(1, Ordering::Relaxed);
        let prepared = KernelQAt { q, rows: &next_rows };
        let problem = PolicyProblem {
            q: &prepared,
            states: &next_z,
            design: &design,
            penalty: r.matrix(),
            sigma: &sigma,
            eta,
        };
        let mut best: Option<OptimizeReport> = None;
        for c0 in starts {
            let rep = maximize(&problem, c0, &OptimizerOptions::default())?;
            if best.as_ref().is_none_or(|b| rep.objective > b.objective) {
                best = Some(rep);
            }
        }
        Ok(best.expect("at least one start"))
    };

    let mut c = DMatrix::zeros(sigma.nrows(), basis.dim());
    let mut q_prev: Option<KernelQ> = None;
    let mut objectives = Vec::with_capacity(config.iterations);
    let mut changes = Vec::with_capacity(config.iterations);
    let mut steps = Vec::with_capacity(config.iterations);
    let mut falls = 0usize;
    let mut diverged = false;
    let mut q_hat = None;
    for m in 1..=config.iterations {
        let y: Vec<f64> = match &q_prev {
            None => rewards.clone(),
            Some(q) => {
                let vals = par_map(dataset.len(), |i| {
                    let a = action_values(&design, &c, &next_z[i]);
                    q.eval_row(&next_rows[i], &a)
                });
                rewards.iter().zip(vals).map(|(r, v)| r + config.gamma * v).collect()
            }
        };
        let q = system.fit(&y, scaling.clone())?.with_range(0.0, config.q_max());
        let starts = if m == 1 {
            let actions: Vec<&[f64]> = dataset.transitions().iter().map(|t| t.action.values()).collect();
            let bc = behavior_cloning(&state_z, &actions, &design, &grid)?;
            let mut rng = rng_from(derive_seed(config.seed, &[RESTART_STREAM]));
            let mut starts = vec![c.clone(), bc.clone()];
            for _ in 0..RESTARTS {
                let noise = DMatrix::from_fn(bc.nrows(), bc.ncols(), |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    RESTART_SD * z
                });
                starts.push(&bc + noise);
            }
            starts
        } else {
            vec![c.clone()]
        };
        let rep = update(&q, &starts)?;
        changes.push((&rep.coefficients - &c).norm());
        if let Some(&last) = objectives.last() {
            if rep.objective < last {
                falls += 1;
                if falls >= 5 {
                    diverged = true;
                }
            } else {
                falls = 0;
            }
        }
        objectives.push(rep.objective);
        steps.push(rep.steps);
        c = rep.coefficients;
        q_prev = Some(q.clone());
        q_hat = Some(q);
    }
    if diverged {
        log::warn!("policy objective decreased for five consecutive iterations");
    }
    Ok(FqiResult {
        policy: template.with_coefficients(c)?,
        q_hat: q_hat.expect("at least one iteration"),
        objectives,
        policy_changes: changes,
        optimizer_steps: steps,
        optimizer_calls: calls.into_inner(),
        diverged,
    })
}

/// One point of the hyper-parameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lambda: f64,
    pub eta: f64,
    pub bandwidth_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: Candidate,
    /// Every candidate with its validation value, in grid order.
    pub scores: Vec<(Candidate, f64)>,
    pub train_subjects: Vec<String>,
    pub validation_subjects: Vec<String>,
}

const SPLIT_STREAM: u64 = 0x7370_6c69;

/// Seeded 1:1 split of subjects into training and validation halves.
pub fn split_subjects(dataset: &Dataset, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    let mut subjects = dataset.subjects();
    if subjects.len() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            found: subjects.len(),
        });
    }
    let mut rng = rng_from(derive_seed(seed, &[SPLIT_STREAM]));
    subjects.shuffle(&mut rng);
    let half = subjects.len().div_ceil(2);
    let valid = subjects.split_off(half);
    Ok((subjects, valid))
}

/// Index of the best score; ties go to larger `η`, then larger `λ`, then the
/// earlier grid position.
pub fn pick_best(scores: &[(Candidate, f64)]) -> Option<usize> {
    (0..scores.len()).reduce(|best, i| {
        let (a, sa) = &scores[best];
        let (b, sb) = &scores[i];
        let better = sb
            .total_cmp(sa)
            .then(b.eta.total_cmp(&a.eta))
            .then(b.lambda.total_cmp(&a.lambda));
        if better == std::cmp::Ordering::Greater {
            i
        } else {
            best
        }
    })
}

/// Grid search over `(λ, η, bandwidth multiplier)`, scoring each candidate by
/// the FQE value of its learned policy on held-out subjects. The scorer uses
/// `config`'s own `λ` and bandwidths so scores are comparable across candidates.
pub fn select_hyperparams(
    dataset: &Dataset,
    lambdas: &[f64],
    etas: &[f64],
    multipliers: &[f64],
    config: &RunConfig,
    basis: &BSplineBasis,
) -> Result<Selection> {
    if lambdas.is_empty() || etas.is_empty() || multipliers.is_empty() {
        return Err(Error::invalid("hyper-parameter grids must be non-empty"));
    }
    let (train_ids, valid_ids) = split_subjects(dataset, config.seed)?;
    let train = dataset.subset_subjects(&train_ids)?;
    let valid = dataset.subset_subjects(&valid_ids)?;
    let eval_spec = resolve_spec(&valid, config)?;
    let mut grid = Vec::new();
    for &lambda in lambdas {
        for &eta in etas {
            for &bandwidth_multiplier in multipliers {
                grid.push(Candidate {
                    lambda,
                    eta,
                    bandwidth_multiplier,
                });
            }
        }
    }
    let mut scores = Vec::with_capacity(grid.len());
    for cand in &grid {
        let score = score_candidate(&train, &valid, cand, config, basis, eval_spec)?;
        log::info!(
            "candidate lambda={} eta={} multiplier={} -> {score}",
            cand.lambda,
            cand.eta,
            cand.bandwidth_multiplier
        );
        scores.push((*cand, score));
    }
    let best = pick_best(&scores).expect("non-empty grid");
    Ok(Selection {
        chosen: scores[best].0,
        scores,
        train_subjects: train_ids,
        validation_subjects: valid_ids,
    })
}

/// Fits on `train` with the candidate's settings and returns the FQE value of
/// the learned policy on `valid`.
pub fn score_candidate(
    train: &Dataset,
    valid: &Dataset,
    cand: &Candidate,
    config: &RunConfig,
    basis: &BSplineBasis,
    eval_spec: KernelSpec,
) -> Result<f64> {
    let cfg = candidate_config(config, cand);
    let spec = resolve_spec(train, &cfg)?;
    let fit = fqi_run(train, &cfg, spec, basis, cand.eta)?;
    let handle = PolicyHandle::deterministic(fit.policy);
    Ok(fqe_run(valid, &handle, config, eval_spec)?.value)
}

pub fn candidate_config(config: &RunConfig, cand: &Candidate) -> RunConfig {
    RunConfig {
        lambda: cand.lambda,
        eta: cand.eta,
        state_bandwidth_multiplier: cand.bandwidth_multiplier,
        action_bandwidth_multiplier: cand.bandwidth_multiplier,
        ..config.clone()
    }
}
