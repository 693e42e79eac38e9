//! Synthetic functional-action MDPs with known answers, plus rollout and
//! exact-solve oracles.
//!
//! [`SyntheticEnv`] plants an optimal functional linear policy `π*`: the reward
//! `b(S) exp(-c ‖A - π*(S)‖²)` is maximized pointwise by `π*(S)`, and the
//! state components entering `b` evolve independently of the action, so `π*`
//! is optimal for every discount factor. [`TabularEmbedEnv`] embeds a
//! two-state, two-action MDP with two fixed action curves.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bspline::BSplineBasis;
use crate::density::{mean_steps, LqdFunction};
use crate::error::{Error, Result};
use crate::fqe::{ActionMap, ActionSampler, PolicyHandle};
use crate::fqi::FunctionalLinearPolicy;
use crate::model::{Dataset, Grid, GridFunction, ScalingRecord, State, Transition};
use crate::util::{derive_seed, par_map, rng_from, try_par_map};

/// A simulator with a functional action space.
pub trait Environment: Send + Sync {
    fn grid(&self) -> &Arc<Grid>;
    fn state_dim(&self) -> usize;
    fn initial_state(&self, rng: &mut ChaCha8Rng) -> State;
    /// Reward and next state.
    fn step(&self, state: &State, action: &GridFunction, rng: &mut ChaCha8Rng) -> Result<(f64, State)>;
}

/// Mean discounted return with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub episodes: usize,
    pub horizon: usize,
}

/// Smallest horizon with `γ^H < 1e-4` (one step when `γ = 0`).
pub fn default_horizon(gamma: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    let mut h = 1;
    let mut g = gamma;
    while g >= 1e-4 {
        g *= gamma;
        h += 1;
    }
    h
}

const ROLLOUT_STREAM: u64 = 0x726f_6c6c;
const DATA_STREAM: u64 = 0x6461_7461;

fn episode_return(
    env: &dyn Environment,
    policy: &PolicyHandle,
    start: State,
    horizon: usize,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut s = start;
    let mut total = 0.0;
    let mut disc = 1.0;
    for _ in 0..horizon {
        let a = policy.draw(&s, rng)?;
        let (r, next) = env.step(&s, &a, rng)?;
        total += disc * r;
        disc *= gamma;
        s = next;
    }
    Ok(total)
}

fn summarize(returns: &[f64], horizon: usize) -> RolloutEstimate {
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = if returns.len() > 1 {
        returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    RolloutEstimate {
        mean,
        stderr: (var / n).sqrt(),
        episodes: returns.len(),
        horizon,
    }
}

/// Monte-Carlo value of `policy` from the environment's initial distribution.
pub fn rollout_value(
    env: &dyn Environment,
    policy: &PolicyHandle,
    episodes: usize,
    horizon: Option<usize>,
    gamma: f64,
    seed: u64,
) -> Result<RolloutEstimate> {
    if episodes == 0 {
        return Err(Error::invalid("need at least one episode"));
    }
    let h = horizon.unwrap_or_else(|| default_horizon(gamma));
    let returns = try_par_map(episodes, |e| {
        let mut rng = rng_from(derive_seed(seed, &[ROLLOUT_STREAM, e as u64]));
        let s0 = env.initial_state(&mut rng);
        episode_return(env, policy, s0, h, gamma, &mut rng)
    })?;
    Ok(summarize(&returns, h))
}

/// Monte-Carlo value of `policy` with episode `e` starting at `starts[e % len]`.
pub fn rollout_value_from(
    env: &dyn Environment,
    policy: &PolicyHandle,
    starts: &[State],
    episodes: usize,
    horizon: Option<usize>,
    gamma: f64,
    seed: u64,
) -> Result<RolloutEstimate> {
    if episodes == 0 || starts.is_empty() {
        return Err(Error::invalid("need at least one episode and one start state"));
    }
    let h = horizon.unwrap_or_else(|| default_horizon(gamma));
    let returns = try_par_map(episodes, |e| {
        let mut rng = rng_from(derive_seed(seed, &[ROLLOUT_STREAM, e as u64]));
        episode_return(env, policy, starts[e % starts.len()].clone(), h, gamma, &mut rng)
    })?;
    Ok(summarize(&returns, h))
}

/// `n_subjects` trajectories of length `horizon` under `behavior`.
pub fn generate_dataset(
    env: &dyn Environment,
    behavior: &PolicyHandle,
    n_subjects: usize,
    horizon: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_subjects == 0 || horizon == 0 {
        return Err(Error::invalid("need at least one subject and one step"));
    }
    let width = n_subjects.to_string().len().max(3);
    let per_subject = try_par_map(n_subjects, |i| -> Result<(State, Vec<Transition>)> {
        let mut rng = rng_from(derive_seed(seed, &[DATA_STREAM, i as u64]));
        let id = format!("sim{i:0width$}");
        let s0 = env.initial_state(&mut rng);
        let mut s = s0.clone();
        let mut out = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let a = behavior.draw(&s, &mut rng)?;
            let (r, next) = env.step(&s, &a, &mut rng)?;
            out.push(Transition {
                state: s.clone(),
                action: a,
                reward: r,
                next_state: next.clone(),
                subject_id: id.clone(),
                time_index: t,
                action_anchor: None,
            });
            s = next;
        }
        Ok((s0, out))
    })?;
    let mut initial = Vec::with_capacity(n_subjects);
    let mut transitions = Vec::with_capacity(n_subjects * horizon);
    for (s0, trs) in per_subject {
        initial.push(s0);
        transitions.extend(trs);
    }
    Dataset::new(transitions, initial, env.grid().clone())
}

/// Serializable description of a [`SyntheticEnv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticEnvSpec {
    pub state_dim: usize,
    pub grid_points: usize,
    pub interior_knots: usize,
    /// AR(1) coefficient of every state component.
    pub phi: f64,
    /// Innovation sd; `None` gives the stationary unit-variance choice `√(1 - φ²)`.
    pub noise_sd: Option<f64>,
    /// Strength of the action's effect on the last state component.
    pub drive: f64,
    pub drive_offset: f64,
    /// States are clipped to `[-clip, clip]`.
    pub clip: f64,
    /// Reward sharpness `c`.
    pub reward_c: f64,
    /// Target ratio of the behavior policy's mean reward to the optimum's.
    pub behavior_ratio: f64,
    /// Explicit behavior noise sd; overrides `behavior_ratio`.
    pub behavior_sd: Option<f64>,
    /// Optimal coefficients (`(p + 1) × K`, intercept last); drawn from `seed` when absent.
    pub optimal_coefficients: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl Default for SyntheticEnvSpec {
    fn default() -> Self {
        SyntheticEnvSpec {
            state_dim: 6,
            grid_points: 101,
            interior_knots: 2,
            phi: 0.7,
            noise_sd: None,
            drive: 0.5,
            drive_offset: 1.0,
            clip: 4.0,
            reward_c: 1.0,
            behavior_ratio: 0.85,
            behavior_sd: None,
            optimal_coefficients: None,
            seed: 0,
        }
    }
}

/// Planted-optimum environment.
///
/// States: `S'_k = φ S_k + σ ε_k` for `k < p - 1` and
/// `S'_{p-1} = φ S_{p-1} + d tanh(⟨A, sin(π·)⟩ - o) + σ ε`, clipped to the box.
/// Reward: `b(S) exp(-c ‖A - π*(S)‖²)` with `b(S) = 0.5 + 0.5 exp(-(S_0² + S_1²)/8)`.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    spec: SyntheticEnvSpec,
    grid: Arc<Grid>,
    optimal: FunctionalLinearPolicy,
    beta: Vec<f64>,
    noise_sd: f64,
    behavior_sd: f64,
}

impl SyntheticEnv {
    pub fn new(spec: SyntheticEnvSpec) -> Result<Self> {
        let p = spec.state_dim;
        if p < 2 {
            return Err(Error::invalid("synthetic environment needs at least two state components"));
        }
        if !(spec.phi.abs() < 1.0) || !(spec.clip > 0.0) || !(spec.reward_c > 0.0) {
            return Err(Error::invalid("invalid synthetic environment parameters"));
        }
        let grid = Grid::uniform(spec.grid_points)?;
        let basis = BSplineBasis::uniform(spec.interior_knots);
        let k = basis.dim();
        let c = match &spec.optimal_coefficients {
            Some(rows) => {
                if rows.len() != p + 1 || rows.iter().any(|r| r.len() != k) {
                    return Err(Error::invalid(format!("optimal coefficients must be {}x{k}", p + 1)));
                }
                DMatrix::from_fn(p + 1, k, |i, j| rows[i][j])
            }
            None => default_optimal_coefficients(p, k, spec.seed),
        };
        let optimal = FunctionalLinearPolicy::new(c, basis, ScalingRecord::identity(p), grid.clone(), true)?;
        let beta = grid.points().iter().map(|u| (std::f64::consts::PI * u).sin()).collect();
        let noise_sd = spec.noise_sd.unwrap_or((1.0 - spec.phi * spec.phi).sqrt());
        let mut env = SyntheticEnv {
            spec,
            grid,
            optimal,
            beta,
            noise_sd,
            behavior_sd: 0.0,
        };
        env.behavior_sd = match env.spec.behavior_sd {
            Some(sd) => sd,
            None => env.solve_behavior_sd(env.spec.behavior_ratio)?,
        };
        Ok(env)
    }

    pub fn spec(&self) -> &SyntheticEnvSpec {
        &self.spec
    }

    pub fn optimal_policy(&self) -> &FunctionalLinearPolicy {
        &self.optimal
    }

    pub fn behavior_sd(&self) -> f64 {
        self.behavior_sd
    }

    /// `M = Bᵀ W B`, the Gram matrix of the basis under quadrature.
    fn basis_gram(&self) -> DMatrix<f64> {
        let b = self.optimal.design();
        let w = self.grid.weights();
        let wb = DMatrix::from_fn(b.nrows(), b.ncols(), |g, k| w[g] * b[(g, k)]);
        b.transpose() * wb
    }

    /// `E exp(-c ‖σ Σ z_k B_k‖²) = det(I + 2cσ² M)^(-1/2)` for `z ~ N(0, I)`.
    pub fn behavior_reward_ratio(&self, sd: f64) -> f64 {
        let m = self.basis_gram();
        let k = m.nrows();
        let a = DMatrix::identity(k, k) + m * (2.0 * self.spec.reward_c * sd * sd);
        a.determinant().powf(-0.5)
    }

    fn solve_behavior_sd(&self, ratio: f64) -> Result<f64> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::invalid("behavior_ratio must lie in (0, 1]"));
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        while self.behavior_reward_ratio(hi) > ratio {
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::invalid("cannot reach the requested behavior ratio"));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.behavior_reward_ratio(mid) > ratio {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn base(&self, s: &[f64]) -> f64 {
        0.5 + 0.5 * (-(s[0] * s[0] + s[1] * s[1]) / 8.0).exp()
    }

    pub fn reward(&self, state: &State, action: &GridFunction) -> Result<f64> {
        if !action.on_grid(&self.grid) {
            return Err(Error::GridMismatch);
        }
        let star = self.optimal.act(state)?;
        let d2 = self.grid.dist2(action.values(), star.values());
        Ok(self.base(state.components()) * (-self.spec.reward_c * d2).exp())
    }

    /// Mean reward of the behavior policy when states are standard normal.
    pub fn analytic_behavior_mean_reward(&self) -> f64 {
        // E exp(-X²/8) = (5/4)^(-1/2) per component
        let eb = 0.5 + 0.5 * 0.8;
        eb * self.behavior_reward_ratio(self.behavior_sd)
    }

    pub fn optimal_handle(&self) -> PolicyHandle {
        PolicyHandle::deterministic(self.optimal.clone())
    }

    pub fn behavior_handle(&self) -> PolicyHandle {
        PolicyHandle::stochastic(NoisyLinearPolicy {
            policy: self.optimal.clone(),
            sd: self.behavior_sd,
        })
    }

    /// A policy of the same class with coefficients `C* + N(0, scale²)`.
    pub fn random_linear_policy(&self, scale: f64, seed: u64) -> Result<FunctionalLinearPolicy> {
        let mut rng = rng_from(seed);
        let c = self.optimal.coefficients();
        let noisy = DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            c[(i, j)] + scale * z
        });
        self.optimal.with_coefficients(noisy)
    }

    /// `π*` with its intercept row shifted by `delta` (a constant offset in action space).
    pub fn shifted_optimal(&self, delta: f64) -> Result<FunctionalLinearPolicy> {
        let mut c = self.optimal.coefficients().clone();
        let last = c.nrows() - 1;
        for k in 0..c.ncols() {
            c[(last, k)] += delta;
        }
        self.optimal.with_coefficients(c)
    }
}

fn default_optimal_coefficients(p: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let intercept = [1.0, 1.2, 0.8, 1.5, 1.1, 1.3];
    let mut rng = rng_from(derive_seed(seed, &[0x6f70_74]));
    DMatrix::from_fn(p + 1, k, |i, j| {
        if i == p {
            intercept[j % intercept.len()]
        } else {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.35 * z
        }
    })
}

impl Environment for SyntheticEnv {
    fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn state_dim(&self) -> usize {
        self.spec.state_dim
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> State {
        let c = self.spec.clip;
        let v = (0..self.spec.state_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z.clamp(-c, c)
            })
            .collect();
        State::new(v).expect("finite draws")
    }

    fn step(&self, state: &State, action: &GridFunction, rng: &mut ChaCha8Rng) -> Result<(f64, State)> {
        let r = self.reward(state, action)?;
        let s = state.components();
        let p = self.spec.state_dim;
        let c = self.spec.clip;
        let drive = self.spec.drive
            * (self.grid.integrate(
                &action
                    .values()
                    .iter()
                    .zip(&self.beta)
                    .map(|(a, b)| a * b)
                    .collect::<Vec<_>>(),
            ) - self.spec.drive_offset)
                .tanh();
        let next = (0..p)
            .map(|k| {
                let e: f64 = StandardNormal.sample(rng);
                let mut v = self.spec.phi * s[k] + self.noise_sd * e;
                if k == p - 1 {
                    v += drive;
                }
                v.clamp(-c, c)
            })
            .collect();
        Ok((r, State::new(next)?))
    }
}

/// `π(s) + σ Σ_k z_k B_k` with `z ~ N(0, I)`.
#[derive(Debug, Clone)]
pub struct NoisyLinearPolicy {
    pub policy: FunctionalLinearPolicy,
    pub sd: f64,
}

impl ActionSampler for NoisyLinearPolicy {
    fn sample(&self, state: &State, rng: &mut ChaCha8Rng) -> Result<GridFunction> {
        let mut a = self.policy.act(state)?.into_values();
        let b = self.policy.design();
        for k in 0..b.ncols() {
            let z: f64 = StandardNormal.sample(rng);
            let zk = self.sd * z;
            for (g, v) in a.iter_mut().enumerate() {
                *v += zk * b[(g, k)];
            }
        }
        GridFunction::new(self.policy.grid().clone(), a)
    }
}

/// Serializable two-state, two-action MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabularSpec {
    /// `transition[s][a][s']`.
    pub transition: [[[f64; 2]; 2]; 2],
    /// `reward[s][a]`.
    pub reward: [[f64; 2]; 2],
    pub initial: [f64; 2],
    pub grid_points: usize,
}

impl Default for TabularSpec {
    fn default() -> Self {
        TabularSpec {
            transition: [[[0.8, 0.2], [0.3, 0.7]], [[0.6, 0.4], [0.1, 0.9]]],
            reward: [[0.2, 0.6], [0.9, 0.4]],
            initial: [0.5, 0.5],
            grid_points: 101,
        }
    }
}

/// A finite MDP whose actions are the curves `u ↦ u` and `u ↦ 1 - u` and whose
/// states are the scalars 0 and 1.
#[derive(Debug, Clone)]
pub struct TabularEmbedEnv {
    spec: TabularSpec,
    grid: Arc<Grid>,
    actions: [GridFunction; 2],
}

impl TabularEmbedEnv {
    pub fn new(spec: TabularSpec) -> Result<Self> {
        for row in spec.transition.iter().flatten() {
            if (row[0] + row[1] - 1.0).abs() > 1e-12 || row.iter().any(|&p| p < 0.0) {
                return Err(Error::invalid("transition rows must be probability vectors"));
            }
        }
        if (spec.initial[0] + spec.initial[1] - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("initial distribution must sum to one"));
        }
        let grid = Grid::uniform(spec.grid_points)?;
        let actions = [
            GridFunction::from_fn(grid.clone(), |u| u)?,
            GridFunction::from_fn(grid.clone(), |u| 1.0 - u)?,
        ];
        Ok(TabularEmbedEnv { spec, grid, actions })
    }

    pub fn spec(&self) -> &TabularSpec {
        &self.spec
    }

    pub fn action(&self, a: usize) -> &GridFunction {
        &self.actions[a]
    }

    pub fn state(&self, s: usize) -> State {
        State::new(vec![s as f64]).expect("finite")
    }

    pub fn state_index(&self, s: &State) -> Result<usize> {
        match s.components() {
            [v] if *v == 0.0 => Ok(0),
            [v] if *v == 1.0 => Ok(1),
            _ => Err(Error::invalid("tabular state must be 0 or 1")),
        }
    }

    pub fn action_index(&self, a: &GridFunction) -> Result<usize> {
        let d0 = a.dist2(&self.actions[0])?;
        let d1 = a.dist2(&self.actions[1])?;
        Ok(usize::from(d1 < d0))
    }

    /// Policy choosing action `choice[s]` in state `s`.
    pub fn deterministic_policy(&self, choice: [usize; 2]) -> PolicyHandle {
        PolicyHandle::deterministic(TabularPolicy {
            probs: choice.map(|c| if c == 0 { [1.0, 0.0] } else { [0.0, 1.0] }),
            actions: self.actions.clone(),
        })
    }

    /// Policy with `probs[s][a]`; stochastic unless every row is a point mass.
    pub fn policy(&self, probs: [[f64; 2]; 2]) -> PolicyHandle {
        PolicyHandle::stochastic(TabularPolicy {
            probs,
            actions: self.actions.clone(),
        })
    }

    pub fn uniform_policy(&self) -> PolicyHandle {
        self.policy([[0.5, 0.5], [0.5, 0.5]])
    }
}

#[derive(Debug, Clone)]
struct TabularPolicy {
    probs: [[f64; 2]; 2],
    actions: [GridFunction; 2],
}

impl TabularPolicy {
    fn index(s: &State) -> Result<usize> {
        match s.components() {
            [v] if *v == 0.0 => Ok(0),
            [v] if *v == 1.0 => Ok(1),
            _ => Err(Error::invalid("tabular state must be 0 or 1")),
        }
    }
}

impl ActionMap for TabularPolicy {
    fn act(&self, state: &State) -> Result<GridFunction> {
        let s = Self::index(state)?;
        let a = usize::from(self.probs[s][1] > self.probs[s][0]);
        Ok(self.actions[a].clone())
    }
}

impl ActionSampler for TabularPolicy {
    fn sample(&self, state: &State, rng: &mut ChaCha8Rng) -> Result<GridFunction> {
        let s = Self::index(state)?;
        let u: f64 = rng.random();
        let a = usize::from(u >= self.probs[s][0]);
        Ok(self.actions[a].clone())
    }
}

impl Environment for TabularEmbedEnv {
    fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> State {
        let u: f64 = rng.random();
        self.state(usize::from(u >= self.spec.initial[0]))
    }

    fn step(&self, state: &State, action: &GridFunction, rng: &mut ChaCha8Rng) -> Result<(f64, State)> {
        let s = self.state_index(state)?;
        let a = self.action_index(action)?;
        let u: f64 = rng.random();
        let next = usize::from(u >= self.spec.transition[s][a][0]);
        Ok((self.spec.reward[s][a], self.state(next)))
    }
}

/// Solves `(I - γ P^π) Q = r` for the 2×2 Q table; `policy[s][a]` are action probabilities.
pub fn exact_tabular_q(env: &TabularEmbedEnv, policy: [[f64; 2]; 2], gamma: f64) -> Result<[[f64; 2]; 2]> {
    let sp = &env.spec;
    let idx = |s: usize, a: usize| 2 * s + a;
    let mut m = DMatrix::<f64>::identity(4, 4);
    let mut r = DVector::<f64>::zeros(4);
    for s in 0..2 {
        for a in 0..2 {
            r[idx(s, a)] = sp.reward[s][a];
            for s2 in 0..2 {
                for a2 in 0..2 {
                    m[(idx(s, a), idx(s2, a2))] -= gamma * sp.transition[s][a][s2] * policy[s2][a2];
                }
            }
        }
    }
    let q = m.lu().solve(&r).ok_or(Error::NotPositiveDefinite)?;
    Ok([[q[0], q[1]], [q[2], q[3]]])
}

/// `Σ_s ρ(s) Σ_a π(a|s) Q(s, a)`.
pub fn exact_tabular_value(
    env: &TabularEmbedEnv,
    policy: [[f64; 2]; 2],
    gamma: f64,
    initial: [f64; 2],
) -> Result<f64> {
    let q = exact_tabular_q(env, policy, gamma)?;
    Ok((0..2)
        .map(|s| initial[s] * (policy[s][0] * q[s][0] + policy[s][1] * q[s][1]))
        .sum())
}

/// One transition with its action reduced to a scalar summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub subject_id: String,
    pub time_index: usize,
    pub state: Vec<f64>,
    /// Mean steps for anchored LQD actions, otherwise `∫ A`.
    pub action_summary: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Collapses each functional action to a scalar for external scalar-action baselines.
pub fn mean_action_dataset(dataset: &Dataset) -> Result<Vec<SummaryRow>> {
    let rows = par_map(dataset.len(), |i| {
        let t = &dataset.transitions()[i];
        let summary = match t.action_anchor {
            Some(anchor) => mean_steps(&LqdFunction::new(t.action.clone(), anchor)?)?,
            None => t.action.integral(),
        };
        Ok(SummaryRow {
            subject_id: t.subject_id.clone(),
            time_index: t.time_index,
            state: t.state.components().to_vec(),
            action_summary: summary,
            reward: t.reward,
            next_state: t.next_state.components().to_vec(),
        })
    });
    rows.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct UnitEnv(Arc<Grid>);
    impl Environment for UnitEnv {
        fn grid(&self) -> &Arc<Grid> {
            &self.0
        }
        fn state_dim(&self) -> usize {
            1
        }
        fn initial_state(&self, _rng: &mut ChaCha8Rng) -> State {
            State::new(vec![0.0]).unwrap()
        }
        fn step(&self, s: &State, _a: &GridFunction, _rng: &mut ChaCha8Rng) -> Result<(f64, State)> {
            Ok((1.0, s.clone()))
        }
    }

    fn zero_policy(grid: Arc<Grid>) -> PolicyHandle {
        PolicyHandle::deterministic(move |_s: &State| Ok(GridFunction::zeros(grid.clone())))
    }

    #[test]
    fn geometric_series_for_unit_reward() {
        let g = Grid::uniform(5).unwrap();
        let env = UnitEnv(g.clone());
        let est = rollout_value(&env, &zero_policy(g), 10, None, 0.8, 1).unwrap();
        let h = est.horizon as i32;
        assert!(0.8f64.powi(h) < 1e-4 && 0.8f64.powi(h - 1) >= 1e-4);
        assert!((est.mean - (1.0 - 0.8f64.powi(h)) / 0.2).abs() < 1e-12);
        assert!(est.stderr < 1e-12);
    }

    #[test]
    fn myopic_rollout_is_first_reward() {
        let env = SyntheticEnv::new(SyntheticEnvSpec::default()).unwrap();
        let pol = env.behavior_handle();
        let est = rollout_value(&env, &pol, 50, None, 0.0, 3).unwrap();
        assert_eq!(est.horizon, 1);
        let mut first = Vec::new();
        for e in 0..50u64 {
            let mut rng = rng_from(derive_seed(3, &[ROLLOUT_STREAM, e]));
            let s0 = env.initial_state(&mut rng);
            let a = pol.draw(&s0, &mut rng).unwrap();
            first.push(env.step(&s0, &a, &mut rng).unwrap().0);
        }
        assert!((est.mean - first.iter().sum::<f64>() / 50.0).abs() < 1e-12);
    }

    #[test]
    fn tabular_q_at_zero_discount_is_reward() {
        let env = TabularEmbedEnv::new(TabularSpec::default()).unwrap();
        let q = exact_tabular_q(&env, [[0.5, 0.5], [0.5, 0.5]], 0.0).unwrap();
        assert_eq!(q, env.spec().reward);
    }

    #[test]
    fn tabular_q_symmetry() {
        let spec = TabularSpec {
            transition: [[[0.7, 0.3], [0.4, 0.6]], [[0.3, 0.7], [0.6, 0.4]]],
            reward: [[0.1, 0.5], [0.1, 0.5]],
            ..TabularSpec::default()
        };
        let env = TabularEmbedEnv::new(spec).unwrap();
        let q = exact_tabular_q(&env, [[0.5, 0.5], [0.5, 0.5]], 0.8).unwrap();
        for a in 0..2 {
            assert!((q[0][a] - q[1][a]).abs() < 1e-12);
        }
    }

    #[test]
    fn tabular_bellman_residual() {
        let mut rng = rng_from(7);
        for _ in 0..10 {
            let mut tr = [[[0.0; 2]; 2]; 2];
            let mut rw = [[0.0; 2]; 2];
            for s in 0..2 {
                for a in 0..2 {
                    let p: f64 = rng.random();
                    tr[s][a] = [p, 1.0 - p];
                    rw[s][a] = rng.random();
                }
            }
            let p0: f64 = rng.random();
            let p1: f64 = rng.random();
            let pi = [[p0, 1.0 - p0], [p1, 1.0 - p1]];
            let env = TabularEmbedEnv::new(TabularSpec {
                transition: tr,
                reward: rw,
                ..TabularSpec::default()
            })
            .unwrap();
            let q = exact_tabular_q(&env, pi, 0.8).unwrap();
            for s in 0..2 {
                for a in 0..2 {
                    let next: f64 = (0..2)
                        .map(|s2| tr[s][a][s2] * (pi[s2][0] * q[s2][0] + pi[s2][1] * q[s2][1]))
                        .sum();
                    assert!((q[s][a] - rw[s][a] - 0.8 * next).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tabular_rollout_matches_exact() {
        let env = TabularEmbedEnv::new(TabularSpec::default()).unwrap();
        let pol = [[1.0, 0.0], [0.0, 1.0]];
        let exact = exact_tabular_value(&env, pol, 0.8, env.spec().initial).unwrap();
        let est = rollout_value(&env, &env.deterministic_policy([0, 1]), 4000, None, 0.8, 5).unwrap();
        assert!((est.mean - exact).abs() < 3.0 * est.stderr, "{est:?} vs {exact}");
    }

    #[test]
    fn dataset_shapes_and_determinism() {
        let env = SyntheticEnv::new(SyntheticEnvSpec::default()).unwrap();
        let beh = env.behavior_handle();
        let d = generate_dataset(&env, &beh, 1, 1, 9).unwrap();
        assert_eq!(d.len(), 1);
        let a = generate_dataset(&env, &beh, 5, 4, 11).unwrap();
        let b = generate_dataset(&env, &beh, 5, 4, 11).unwrap();
        assert_eq!(a, b);
        for t in a.transitions() {
            assert!(t.next_state.components().iter().all(|v| v.abs() <= 4.0));
        }
    }

    #[test]
    fn behavior_sd_hits_ratio() {
        let env = SyntheticEnv::new(SyntheticEnvSpec::default()).unwrap();
        assert!((env.behavior_reward_ratio(env.behavior_sd()) - 0.85).abs() < 1e-12);
        assert!(env.behavior_sd() > 0.55 && env.behavior_sd() < 0.65);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SyntheticEnvSpec::default();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<SyntheticEnvSpec>(&text).unwrap(), spec);
        let t = TabularSpec::default();
        let text = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<TabularSpec>(&text).unwrap(), t);
    }
}
