//! Shared data model: action grids, grid-sampled functions, states,
//! transitions, datasets and run configuration.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of grid points for the action domain `[0, 1]`.
pub const DEFAULT_GRID_POINTS: usize = 101;

/// Trapezoid quadrature weights for strictly increasing `points` spanning `[0, 1]`.
///
/// The weights sum to one, so `Σ w_g f(u_g)` approximates `∫₀¹ f(u) du` and is
/// exact for affine `f`.
pub fn trapezoid_weights(points: &[f64]) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            found: points.len(),
        });
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("grid points"));
    }
    if points.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("grid points must be strictly increasing"));
    }
    let n = points.len();
    let mut weights = vec![0.0; n];
    for i in 0..n - 1 {
        let half = 0.5 * (points[i + 1] - points[i]);
        weights[i] += half;
        weights[i + 1] += half;
    }
    Ok(weights)
}

/// A discretization of `[0, 1]` with trapezoid weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Arc<Grid>> {
        let weights = trapezoid_weights(&points)?;
        let (first, last) = (points[0], points[points.len() - 1]);
        if first != 0.0 || last != 1.0 {
            return Err(Error::invalid(format!(
                "grid must span [0, 1], got [{first}, {last}]"
            )));
        }
        Ok(Arc::new(Grid { points, weights }))
    }

    /// `n` equally spaced points including both endpoints.
    pub fn uniform(n: usize) -> Result<Arc<Grid>> {
        if n < 2 {
            return Err(Error::TooFewObservations { needed: 2, found: n });
        }
        let step = 1.0 / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        points[n - 1] = 1.0;
        Grid::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `∫ f` by quadrature for values sampled on this grid.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Squared quadrature L² distance between two sampled functions.
    pub fn dist2(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * (x - y) * (x - y))
            .sum()
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            points: Vec<f64>,
        }
        let raw = Raw::deserialize(de)?;
        Grid::new(raw.points)
            .map(|g| (*g).clone())
            .map_err(serde::de::Error::custom)
    }
}

fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || a.points == b.points
}

/// A function on `[0, 1]` sampled on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid function values"));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = vec![0.0; grid.len()];
        GridFunction { grid, values }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().iter().map(|&u| f(u)).collect();
        GridFunction::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        same_grid(&self.grid, &other.grid)
    }

    pub fn on_grid(&self, grid: &Arc<Grid>) -> bool {
        same_grid(&self.grid, grid)
    }

    /// Squared L² distance by quadrature.
    pub fn dist2(&self, other: &GridFunction) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        Ok(self.grid.dist2(&self.values, &other.values))
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }
}

/// A state vector. `includes_intercept` marks vectors whose last component is a
/// constant 1 appended for the linear policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    components: Vec<f64>,
    #[serde(default)]
    includes_intercept: bool,
}

impl State {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("state must have at least one component"));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("state components"));
        }
        Ok(State {
            components,
            includes_intercept: false,
        })
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn includes_intercept(&self) -> bool {
        self.includes_intercept
    }

    /// Appends the constant-1 intercept component.
    pub fn with_intercept(&self) -> State {
        if self.includes_intercept {
            return self.clone();
        }
        let mut components = self.components.clone();
        components.push(1.0);
        State {
            components,
            includes_intercept: true,
        }
    }
}

/// One observed `(S, A, R, S')` tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: State,
    pub action: GridFunction,
    pub reward: f64,
    pub next_state: State,
    pub subject_id: String,
    pub time_index: usize,
    /// Support anchor `q(0)` when the action is a log-quantile-density function.
    pub action_anchor: Option<f64>,
}

/// A flat list of transitions plus one observed initial state per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    transitions: Vec<Transition>,
    initial_states: Vec<State>,
    grid: Arc<Grid>,
}

impl Dataset {
    pub fn new(
        transitions: Vec<Transition>,
        initial_states: Vec<State>,
        grid: Arc<Grid>,
    ) -> Result<Self> {
        if transitions.is_empty() || initial_states.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let p = transitions[0].state.dim();
        for tr in &transitions {
            if !tr.action.on_grid(&grid) {
                return Err(Error::GridMismatch);
            }
            if !tr.reward.is_finite() {
                return Err(Error::NonFinite("reward"));
            }
            for s in [&tr.state, &tr.next_state] {
                if s.dim() != p {
                    return Err(Error::DimensionMismatch {
                        expected: p,
                        found: s.dim(),
                    });
                }
            }
        }
        if let Some(s) = initial_states.iter().find(|s| s.dim() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: s.dim(),
            });
        }
        Ok(Dataset {
            transitions,
            initial_states,
            grid,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn initial_states(&self) -> &[State] {
        &self.initial_states
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.transitions[0].state.dim()
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.transitions
            .iter()
            .filter(|t| seen.insert(t.subject_id.clone()))
            .map(|t| t.subject_id.clone())
            .collect()
    }

    /// Keeps the transitions of the given subjects. Initial states are taken
    /// from each kept subject's earliest transition.
    pub fn subset_subjects(&self, keep: &[String]) -> Result<Dataset> {
        let keep: std::collections::HashSet<&String> = keep.iter().collect();
        let transitions: Vec<Transition> = self
            .transitions
            .iter()
            .filter(|t| keep.contains(&t.subject_id))
            .cloned()
            .collect();
        let mut first: Vec<(String, usize, State)> = Vec::new();
        for t in &transitions {
            match first.iter_mut().find(|(id, _, _)| *id == t.subject_id) {
                Some(entry) if t.time_index < entry.1 => {
                    entry.1 = t.time_index;
                    entry.2 = t.state.clone();
                }
                Some(_) => {}
                None => first.push((t.subject_id.clone(), t.time_index, t.state.clone())),
            }
        }
        let initial_states = first.into_iter().map(|(_, _, s)| s).collect();
        Dataset::new(transitions, initial_states, self.grid.clone())
    }

    /// Same dataset with every state mapped through `f`.
    pub fn map_states(&self, f: impl Fn(&State) -> State) -> Result<Dataset> {
        let transitions = self
            .transitions
            .iter()
            .map(|t| Transition {
                state: f(&t.state),
                next_state: f(&t.next_state),
                ..t.clone()
            })
            .collect();
        let initial_states = self.initial_states.iter().map(&f).collect();
        Dataset::new(transitions, initial_states, self.grid.clone())
    }
}

/// Per-component affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Zero-variance components; they pass through unchanged.
    pub constant: Vec<bool>,
}

impl ScalingRecord {
    pub fn identity(p: usize) -> Self {
        ScalingRecord {
            means: vec![0.0; p],
            scales: vec![1.0; p],
            constant: vec![false; p],
        }
    }

    /// Moments of the observed states `S_{i,t}` (population variance).
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let p = dataset.state_dim();
        let n = dataset.len() as f64;
        let mut means = vec![0.0; p];
        for t in dataset.transitions() {
            for (m, x) in means.iter_mut().zip(t.state.components()) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; p];
        for t in dataset.transitions() {
            for ((v, x), m) in vars.iter_mut().zip(t.state.components()).zip(&means) {
                *v += (x - m) * (x - m);
            }
        }
        let mut scales = Vec::with_capacity(p);
        let mut constant = Vec::with_capacity(p);
        for (v, m) in vars.iter().zip(means.iter_mut()) {
            let sd = (v / n).sqrt();
            if sd <= 1e-12 * m.abs().max(1.0) {
                constant.push(true);
                scales.push(1.0);
                *m = 0.0;
            } else {
                constant.push(false);
                scales.push(sd);
            }
        }
        Ok(ScalingRecord {
            means,
            scales,
            constant,
        })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn is_identity(&self) -> bool {
        self.means.iter().all(|&m| m == 0.0) && self.scales.iter().all(|&s| s == 1.0)
    }

    pub fn apply_slice(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, s: &State) -> Result<State> {
        self.check(s)?;
        State::new(self.apply_slice(s.components()))
    }

    pub fn invert(&self, s: &State) -> Result<State> {
        self.check(s)?;
        State::new(
            s.components()
                .iter()
                .zip(self.means.iter().zip(&self.scales))
                .map(|(v, (m, sc))| v * sc + m)
                .collect(),
        )
    }

    fn check(&self, s: &State) -> Result<()> {
        if s.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: s.dim(),
            });
        }
        Ok(())
    }
}

/// Rescales every state component to mean 0 and variance 1 over the observed
/// states; next and initial states go through the same map.
pub fn standardize_states(dataset: &Dataset) -> Result<(Dataset, ScalingRecord)> {
    let record = ScalingRecord::fit(dataset)?;
    let scaled = dataset.map_states(|s| {
        State::new(record.apply_slice(s.components())).expect("scaled state stays finite")
    })?;
    Ok((scaled, record))
}

fn default_gamma() -> f64 {
    0.8
}
fn default_iterations() -> usize {
    50
}
fn default_mc_samples() -> usize {
    20
}
fn default_reward_max() -> f64 {
    1.0
}
fn default_lambda() -> f64 {
    1e-3
}
fn default_eta() -> f64 {
    1e-3
}
fn default_interior_knots() -> usize {
    2
}
fn default_one() -> f64 {
    1.0
}

/// Settings shared by evaluation and optimization runs. Serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Upper end of the reward range; Q-bound checks use `[0, reward_max / (1 - gamma)]`.
    #[serde(default = "default_reward_max")]
    pub reward_max: f64,
    /// Ridge parameter, held constant across iterations.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Roughness penalty weight for the policy update.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Fixed bandwidths; the median heuristic is used when absent.
    #[serde(default)]
    pub state_bandwidth: Option<f64>,
    #[serde(default)]
    pub action_bandwidth: Option<f64>,
    /// Multipliers applied to median-heuristic bandwidths.
    #[serde(default = "default_one")]
    pub state_bandwidth_multiplier: f64,
    #[serde(default = "default_one")]
    pub action_bandwidth_multiplier: f64,
    #[serde(default = "default_interior_knots")]
    pub interior_knots: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gamma: default_gamma(),
            iterations: default_iterations(),
            mc_samples: default_mc_samples(),
            seed: 0,
            reward_max: default_reward_max(),
            lambda: default_lambda(),
            eta: default_eta(),
            state_bandwidth: None,
            action_bandwidth: None,
            state_bandwidth_multiplier: 1.0,
            action_bandwidth_multiplier: 1.0,
            interior_knots: default_interior_knots(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples must be at least 1"));
        }
        if !(self.reward_max > 0.0 && self.reward_max.is_finite()) {
            return Err(Error::invalid("reward_max must be positive"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::invalid("eta must be non-negative"));
        }
        for bw in [self.state_bandwidth, self.action_bandwidth].into_iter().flatten() {
            if !(bw > 0.0) {
                return Err(Error::invalid("bandwidths must be positive"));
            }
        }
        Ok(())
    }

    /// Upper end of the declared Q range.
    pub fn q_max(&self) -> f64 {
        self.reward_max / (1.0 - self.gamma)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
