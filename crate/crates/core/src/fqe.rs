//! Fitted-Q evaluation of a fixed functional policy.
//!
//! Starting from `Q̂₀ ≡ 0`, each iteration regresses the targets
//! `R + γ Ê_{A∼π(S')} Q̂_{m-1}(S', A)` on the observed pairs with kernel
//! ridge regression. Expectations over stochastic policies are Monte-Carlo
//! averages whose draws are fixed across iterations, so the target map is
//! `y = R + γ P̄ α` for a precomputed matrix `P̄`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{median_distances, KernelQ, KernelSpec, KrrSystem, TrainingSet};
use crate::model::{Dataset, GridFunction, RunConfig, ScalingRecord, State};
use crate::util::{derive_seed, hash_str, par_map, rng_from, try_par_map};

/// Deterministic policy: one action per state.
pub trait ActionMap: Send + Sync {
    fn act(&self, state: &State) -> Result<GridFunction>;
}

/// Stochastic policy: draws an action given a random stream.
pub trait ActionSampler: Send + Sync {
    fn sample(&self, state: &State, rng: &mut ChaCha8Rng) -> Result<GridFunction>;
}

#[derive(Clone)]
pub enum PolicyHandle {
    Deterministic(Arc<dyn ActionMap>),
    Stochastic(Arc<dyn ActionSampler>),
}

impl std::fmt::Debug for PolicyHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicyHandle::Deterministic(_) => f.write_str("PolicyHandle::Deterministic"),
            PolicyHandle::Stochastic(_) => f.write_str("PolicyHandle::Stochastic"),
        }
    }
}

impl PolicyHandle {
    pub fn deterministic(p: impl ActionMap + 'static) -> Self {
        PolicyHandle::Deterministic(Arc::new(p))
    }

    pub fn stochastic(p: impl ActionSampler + 'static) -> Self {
        PolicyHandle::Stochastic(Arc::new(p))
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, PolicyHandle::Deterministic(_))
    }

    /// One action; deterministic policies ignore the stream.
    pub fn draw(&self, state: &State, rng: &mut ChaCha8Rng) -> Result<GridFunction> {
        match self {
            PolicyHandle::Deterministic(p) => p.act(state),
            PolicyHandle::Stochastic(p) => p.sample(state, rng),
        }
    }

    /// The `l`-th Monte-Carlo action of stream `seed`.
    pub fn draw_indexed(&self, state: &State, seed: u64, l: usize) -> Result<GridFunction> {
        match self {
            PolicyHandle::Deterministic(p) => p.act(state),
            PolicyHandle::Stochastic(p) => {
                let mut rng = rng_from(derive_seed(seed, &[l as u64]));
                p.sample(state, &mut rng)
            }
        }
    }

    fn draws(&self, l: usize) -> usize {
        if self.is_deterministic() {
            1
        } else {
            l
        }
    }
}

impl<F> ActionMap for F
where
    F: Fn(&State) -> Result<GridFunction> + Send + Sync,
{
    fn act(&self, state: &State) -> Result<GridFunction> {
        self(state)
    }
}

/// `Ê_{A∼π(s)} Q(s, A)`: exact for deterministic policies, otherwise the mean
/// of `l` draws from streams derived from `seed`.
pub fn mc_expectation(
    q: &KernelQ,
    state: &State,
    policy: &PolicyHandle,
    l: usize,
    seed: u64,
) -> Result<f64> {
    if l == 0 {
        return Err(Error::invalid("Monte-Carlo sample count must be at least 1"));
    }
    let row = q.state_row(state)?;
    let k = policy.draws(l);
    let mut total = 0.0;
    for i in 0..k {
        let a = policy.draw_indexed(state, seed, i)?;
        if !a.on_grid(q.grid()) {
            return Err(Error::GridMismatch);
        }
        total += q.eval_row(&row, a.values());
    }
    Ok(total / k as f64)
}

/// Result of [`fqe_run`].
#[derive(Debug, Clone)]
pub struct FqeResult {
    pub q_hat: KernelQ,
    /// Mean of `Ê_A Q̂_M(s, A)` over the observed initial states.
    pub value: f64,
    /// `‖Q̂_m - Q̂_{m-1}‖∞` over the training pairs, one entry per iteration.
    pub residuals: Vec<f64>,
    /// Set when the value falls outside `[0, r_max / (1 - γ)]`.
    pub out_of_range: bool,
}

/// Serializable summary of an [`FqeResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FqeSummary {
    pub value: f64,
    pub residuals: Vec<f64>,
    pub out_of_range: bool,
    pub q_hat: crate::kernel::KernelQRecord,
}

impl FqeResult {
    pub fn summary(&self) -> FqeSummary {
        FqeSummary {
            value: self.value,
            residuals: self.residuals.clone(),
            out_of_range: self.out_of_range,
            q_hat: self.q_hat.to_record(),
        }
    }
}

/// Kernel bandwidths from the config, falling back to the median heuristic
/// scaled by the configured multipliers.
pub fn resolve_spec(dataset: &Dataset, config: &RunConfig) -> Result<KernelSpec> {
    let (ms, ma) = match (config.state_bandwidth, config.action_bandwidth) {
        (Some(s), Some(a)) => (s, a),
        (s, a) => {
            let scaling = ScalingRecord::fit(dataset)?;
            let (hs, ha) = median_distances(&TrainingSet::from_dataset(dataset, &scaling)?)?;
            let pick = |fixed: Option<f64>, h: f64, mult: f64, what: &'static str| match fixed {
                Some(v) => Ok(v),
                None if h > 0.0 => Ok(h * mult),
                None => Err(Error::DegenerateDistances(what)),
            };
            (
                pick(s, hs, config.state_bandwidth_multiplier, "state")?,
                pick(a, ha, config.action_bandwidth_multiplier, "action")?,
            )
        }
    };
    KernelSpec::new(ms, ma)
}

/// Stream id of the Monte-Carlo draws at transition `(subject, t)`.
pub fn transition_stream(seed: u64, subject: &str, t: usize) -> u64 {
    derive_seed(seed, &[hash_str(subject), t as u64])
}

const INITIAL_STREAM: u64 = 0x1417;

/// Row `i` of `P̄`: the mean over the MC next actions at transition `i` of the
/// tensor kernel against every training pair.
fn next_action_matrix(
    dataset: &Dataset,
    scaling: &ScalingRecord,
    train: &TrainingSet,
    spec: &KernelSpec,
    policy: &PolicyHandle,
    config: &RunConfig,
) -> Result<DMatrix<f64>> {
    let n = dataset.len();
    let l = policy.draws(config.mc_samples);
    let rows = try_par_map(n, |i| -> Result<Vec<f64>> {
        let tr = &dataset.transitions()[i];
        let srow = train.state_row(&scaling.apply_slice(tr.next_state.components()), spec);
        let stream = transition_stream(config.seed, &tr.subject_id, tr.time_index);
        let mut acc = vec![0.0; n];
        for k in 0..l {
            let a = policy.draw_indexed(&tr.next_state, stream, k)?;
            if !a.on_grid(dataset.grid()) {
                return Err(Error::GridMismatch);
            }
            for (o, v) in acc.iter_mut().zip(train.tensor_row(&srow, a.values(), spec)) {
                *o += v;
            }
        }
        acc.iter_mut().for_each(|v| *v /= l as f64);
        Ok(acc)
    })?;
    let mut p = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            p[(i, j)] = v;
        }
    }
    Ok(p)
}

/// Fitted-Q evaluation of `policy` on `dataset`.
pub fn fqe_run(
    dataset: &Dataset,
    policy: &PolicyHandle,
    config: &RunConfig,
    spec: KernelSpec,
) -> Result<FqeResult> {
    config.validate()?;
    let scaling = ScalingRecord::fit(dataset)?;
    let train = Arc::new(TrainingSet::from_dataset(dataset, &scaling)?);
    let system = KrrSystem::new(train.clone(), spec, config.lambda)?;
    let pbar = next_action_matrix(dataset, &scaling, &train, &spec, policy, config)?;
    let rewards = DVector::from_iterator(dataset.len(), dataset.transitions().iter().map(|t| t.reward));

    let n = dataset.len();
    let mut alpha = DVector::zeros(n);
    let mut fitted_prev = DVector::<f64>::zeros(n);
    let mut residuals = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let y = &rewards + (&pbar * &alpha) * config.gamma;
        alpha = DVector::from_vec(system.solve(y.as_slice())?);
        let fitted = DVector::from_vec(system.fitted(alpha.as_slice()));
        residuals.push((&fitted - &fitted_prev).amax());
        fitted_prev = fitted;
    }

    let q_hat = KernelQ::from_parts(train, alpha.as_slice().to_vec(), spec, scaling)?
        .with_range(0.0, config.q_max());
    let value = initial_value(&q_hat, dataset.initial_states(), policy, config)?;
    let out_of_range = !(0.0..=config.q_max()).contains(&value);
    if out_of_range {
        log::warn!("FQE value {value} outside [0, {}]", config.q_max());
    }
    Ok(FqeResult {
        q_hat,
        value,
        residuals,
        out_of_range,
    })
}

/// Mean of `Ê_A Q(s, A)` over `states`.
pub fn initial_value(
    q: &KernelQ,
    states: &[State],
    policy: &PolicyHandle,
    config: &RunConfig,
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vals = try_par_map(states.len(), |i| {
        let seed = derive_seed(config.seed, &[INITIAL_STREAM, i as u64]);
        mc_expectation(q, &states[i], policy, config.mc_samples, seed)
    })?;
    Ok(vals.iter().sum::<f64>() / states.len() as f64)
}

/// Geometric mean of successive residual ratios over the last `window` iterations.
pub fn contraction_ratio(residuals: &[f64], window: usize) -> Option<f64> {
    let ratios: Vec<f64> = residuals
        .windows(2)
        .map(|w| w[1] / w[0])
        .filter(|r| r.is_finite() && *r > 0.0)
        .collect();
    if ratios.is_empty() {
        return None;
    }
    let tail = &ratios[ratios.len().saturating_sub(window)..];
    Some((tail.iter().map(|r| r.ln()).sum::<f64>() / tail.len() as f64).exp())
}

/// FQE values of several policies sharing one factorized system.
pub fn fqe_many(
    dataset: &Dataset,
    policies: &[PolicyHandle],
    config: &RunConfig,
    spec: KernelSpec,
) -> Result<Vec<f64>> {
    let out = par_map(policies.len(), |k| fqe_run(dataset, &policies[k], config, spec).map(|r| r.value));
    out.into_iter().collect()
}
