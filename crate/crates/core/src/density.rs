//! Step samples, kernel density estimates, quantile functions and the
//! log-quantile-density (LQD) transform with its inverse.
//!
//! For a density `f` with quantile function `q`, the LQD function is
//! `A(p) = -log f(q(p))`. Since `q'(p) = 1 / f(q(p)) = exp(A(p))`, the
//! quantile function is recovered from `A` and the anchor `q(0)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Grid, GridFunction, ScalingRecord, State};
use crate::util::quantile_sorted;

/// Floor applied to densities before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-8;
/// LQD values are capped to `[-LQD_CAP, LQD_CAP]` before exponentiation.
pub const LQD_CAP: f64 = 30.0;
pub const DEFAULT_SUPPORT_POINTS: usize = 512;
pub const DEFAULT_MIN_DAYS: usize = 30;

/// Daily step counts from one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    pub values: Vec<f64>,
    pub window_id: String,
}

impl StepSample {
    pub fn new(values: Vec<f64>, window_id: impl Into<String>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("step counts"));
        }
        Ok(StepSample {
            values,
            window_id: window_id.into(),
        })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `0.9 · min(sd, IQR / 1.34) · n^(-1/5)`.
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeOptions {
    pub min_days: usize,
    pub bandwidth: BandwidthRule,
    pub support_points: usize,
}

impl Default for KdeOptions {
    fn default() -> Self {
        KdeOptions {
            min_days: DEFAULT_MIN_DAYS,
            bandwidth: BandwidthRule::Silverman,
            support_points: DEFAULT_SUPPORT_POINTS,
        }
    }
}

/// A density tabulated on an increasing support grid, integrating to one
/// under the trapezoid rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    support: Vec<f64>,
    values: Vec<f64>,
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (ys[0] + ys[1]) * (xs[1] - xs[0]))
        .sum()
}

fn cumulative_trapezoid(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..x.len() {
        acc += 0.5 * (y[i - 1] + y[i]) * (x[i] - x[i - 1]);
        out.push(acc);
    }
    out
}

/// Linear interpolation of `(xs, ys)` at `x`, clamped to the end values.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[k - 1], xs[k]);
    let t = (x - x0) / (x1 - x0);
    ys[k - 1] + t * (ys[k] - ys[k - 1])
}

impl DensityEstimate {
    /// Validates and renormalizes a tabulated density.
    pub fn new(support: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if support.len() < 2 || support.len() != values.len() {
            return Err(Error::invalid(
                "density needs at least two support points and matching values",
            ));
        }
        if support.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("density"));
        }
        if support.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("density support must be strictly increasing"));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("density values must be non-negative"));
        }
        let mass = trapezoid(&support, &values);
        if !(mass > 0.0) {
            return Err(Error::invalid("density has zero mass"));
        }
        let values = values.into_iter().map(|v| v / mass).collect();
        Ok(DensityEstimate { support, values })
    }

    /// Tabulates `f` on `n` equally spaced points of `[lo, hi]`.
    pub fn from_fn(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if !(hi > lo) || n < 2 {
            return Err(Error::invalid("density support must have hi > lo and n >= 2"));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let support: Vec<f64> = (0..n)
            .map(|i| if i == n - 1 { hi } else { lo + i as f64 * step })
            .collect();
        let values = support.iter().map(|&x| f(x)).collect();
        DensityEstimate::new(support, values)
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lo(&self) -> f64 {
        self.support[0]
    }

    pub fn hi(&self) -> f64 {
        self.support[self.support.len() - 1]
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.support, &self.values)
    }

    /// Piecewise-linear evaluation; zero outside the support.
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.lo() || x > self.hi() {
            return 0.0;
        }
        interp(&self.support, &self.values, x)
    }

    pub fn mean(&self) -> f64 {
        let xf: Vec<f64> = self.support.iter().zip(&self.values).map(|(x, f)| x * f).collect();
        trapezoid(&self.support, &xf)
    }
}

/// A non-decreasing quantile function on the `[0, 1]` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFunction {
    function: GridFunction,
}

impl QuantileFunction {
    pub fn new(function: GridFunction) -> Result<Self> {
        if function.values().windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("quantile function must be non-decreasing"));
        }
        Ok(QuantileFunction { function })
    }

    pub fn function(&self) -> &GridFunction {
        &self.function
    }

    pub fn values(&self) -> &[f64] {
        self.function.values()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.function.grid()
    }

    /// `∫₀¹ q(p) dp`, the mean of the distribution.
    pub fn mean(&self) -> f64 {
        self.function.integral()
    }

    /// Linear interpolation at quantile level `p ∈ [0, 1]`.
    pub fn at(&self, p: f64) -> f64 {
        interp(self.grid().points(), self.values(), p)
    }
}

/// An LQD function together with the support anchor `q(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqdFunction {
    function: GridFunction,
    anchor: f64,
}

impl LqdFunction {
    pub fn new(function: GridFunction, anchor: f64) -> Result<Self> {
        if !anchor.is_finite() {
            return Err(Error::NonFinite("LQD anchor"));
        }
        Ok(LqdFunction { function, anchor })
    }

    pub fn function(&self) -> &GridFunction {
        &self.function
    }

    pub fn values(&self) -> &[f64] {
        self.function.values()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.function.grid()
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }
}

/// Output of [`lqd_inverse`].
#[derive(Debug, Clone, PartialEq)]
pub struct LqdInverse {
    pub quantile: QuantileFunction,
    pub density: DensityEstimate,
    /// Set when some LQD value was outside `[-LQD_CAP, LQD_CAP]`.
    pub capped: bool,
}

/// Silverman's rule-of-thumb bandwidth.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, found: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// Gaussian kernel density estimate on `[min - 3h, max + 3h] ∩ [0, ∞)`.
pub fn kde(sample: &StepSample, options: &KdeOptions) -> Result<DensityEstimate> {
    let n = sample.values.len();
    if n < options.min_days.max(2) {
        return Err(Error::TooFewObservations {
            needed: options.min_days.max(2),
            found: n,
        });
    }
    let (min, max) = sample
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if max == min {
        return Err(Error::ZeroVariance);
    }
    let h = match options.bandwidth {
        BandwidthRule::Silverman => silverman_bandwidth(&sample.values)?,
        BandwidthRule::Fixed(h) if h > 0.0 && h.is_finite() => h,
        BandwidthRule::Fixed(_) => return Err(Error::invalid("KDE bandwidth must be positive")),
    };
    let lo = (min - 3.0 * h).max(0.0);
    let hi = max + 3.0 * h;
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    DensityEstimate::from_fn(lo, hi, options.support_points.max(2), |x| {
        sample
            .values
            .iter()
            .map(|&xi| {
                let z = (x - xi) / h;
                (-0.5 * z * z).exp()
            })
            .sum::<f64>()
            * norm
    })
}

/// Quantile function by inverting the cumulative-trapezoid CDF with linear
/// interpolation; `q(p) = inf { x : F(x) ≥ p }` on the interpolant.
pub fn quantile_from_density(f: &DensityEstimate, grid: &Arc<Grid>) -> Result<QuantileFunction> {
    let x = f.support();
    let mut cdf = cumulative_trapezoid(x, f.values());
    let total = cdf[cdf.len() - 1];
    cdf.iter_mut().for_each(|c| *c /= total);
    let last = cdf.len() - 1;
    cdf[last] = 1.0;
    let values: Vec<f64> = grid
        .points()
        .iter()
        .map(|&p| {
            let k = cdf.partition_point(|&c| c < p);
            if k == 0 {
                return x[0];
            }
            if k > last {
                return x[last];
            }
            let (c0, c1) = (cdf[k - 1], cdf[k]);
            let t = if c1 > c0 { (p - c0) / (c1 - c0) } else { 1.0 };
            x[k - 1] + t * (x[k] - x[k - 1])
        })
        .collect();
    // rounding guard; the construction is monotone in exact arithmetic
    let mut values = values;
    for i in 1..values.len() {
        if values[i] < values[i - 1] {
            values[i] = values[i - 1];
        }
    }
    QuantileFunction::new(GridFunction::new(grid.clone(), values)?)
}

/// `A(p) = -log max(f(q(p)), ε)` with the anchor `q(0)`.
///
/// The two end values are replaced by the edge density that makes the first
/// and last quantile spacings come out exactly under [`lqd_inverse`]. Edge
/// densities of tabulated estimates are typically near the floor, and the
/// end intervals would otherwise dominate the inversion error.
pub fn lqd_forward(f: &DensityEstimate, grid: &Arc<Grid>) -> Result<LqdFunction> {
    let q = quantile_from_density(f, grid)?;
    let qv = q.values();
    let mut values: Vec<f64> = qv.iter().map(|&x| -(f.eval(x).max(DENSITY_FLOOR)).ln()).collect();
    let p = grid.points();
    let n = p.len();
    if let Some(a) = edge_lqd(p[1] - p[0], qv[1] - qv[0], values[1]) {
        values[0] = a;
    }
    if n > 2 {
        if let Some(a) = edge_lqd(p[n - 1] - p[n - 2], qv[n - 1] - qv[n - 2], values[n - 2]) {
            values[n - 1] = a;
        }
    }
    LqdFunction::new(GridFunction::new(grid.clone(), values)?, qv[0])
}

/// LQD value `a` at an interval end such that `dp / L(e^-a, e^-inner) = dq`.
fn edge_lqd(dp: f64, dq: f64, inner: f64) -> Option<f64> {
    if !(dq > 0.0 && dp > 0.0) {
        return None;
    }
    let target = dp / dq;
    let f_inner = (-inner.clamp(-LQD_CAP, LQD_CAP)).exp();
    // L is increasing in the free endpoint; bisect on its log
    let (mut lo, mut hi) = (-LQD_CAP, LQD_CAP);
    let l = |a: f64| log_mean((-a).exp(), f_inner);
    if l(hi) >= target {
        return Some(hi);
    }
    if l(lo) <= target {
        return Some(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if l(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Logarithmic mean `(a - b) / ln(a / b)`.
fn log_mean(a: f64, b: f64) -> f64 {
    let r = a / b;
    if (r - 1.0).abs() < 1e-6 {
        // series around a = b: b · (1 + d/2 - d²/12), d = r - 1
        let d = r - 1.0;
        b * (1.0 + d / 2.0 - d * d / 12.0)
    } else {
        (a - b) / r.ln()
    }
}

/// Recovers the quantile function and density from an LQD function.
///
/// Between grid points the density is taken to vary geometrically in `q`,
/// which gives `Δq = Δp / L(f_g, f_{g+1})` with `L` the logarithmic mean and
/// `f = exp(-A)`. The rule is exact for exponential pieces and for uniform
/// densities.
pub fn lqd_inverse(a: &LqdFunction) -> Result<LqdInverse> {
    let grid = a.grid();
    let capped = a.values().iter().any(|v| v.abs() > LQD_CAP);
    let dens: Vec<f64> = a
        .values()
        .iter()
        .map(|v| (-v.clamp(-LQD_CAP, LQD_CAP)).exp())
        .collect();
    let p = grid.points();
    let mut q = Vec::with_capacity(p.len());
    q.push(a.anchor());
    for g in 1..p.len() {
        let step = (p[g] - p[g - 1]) / log_mean(dens[g - 1], dens[g]);
        q.push(q[g - 1] + step);
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("inverse LQD quantiles"));
    }
    let quantile = QuantileFunction::new(GridFunction::new(grid.clone(), q.clone())?)?;
    let density = DensityEstimate::new(q, dens)?;
    Ok(LqdInverse {
        quantile,
        density,
        capped,
    })
}

/// Mean of the distribution represented by an LQD function (steps/day for
/// step-count actions).
pub fn mean_steps(a: &LqdFunction) -> Result<f64> {
    Ok(lqd_inverse(a)?.quantile.mean())
}

/// Anchor `q(0)` for an LQD action without one: mean of the recorded anchors
/// of the `k` transitions whose (scaled) states are nearest to `state`.
pub fn neighbor_anchor(
    dataset: &Dataset,
    scaling: &ScalingRecord,
    state: &State,
    k: usize,
) -> Result<f64> {
    let z = scaling.apply_slice(state.components());
    let mut cands: Vec<(f64, f64)> = dataset
        .transitions()
        .iter()
        .filter_map(|t| {
            t.action_anchor.map(|anchor| {
                let d: f64 = scaling
                    .apply_slice(t.state.components())
                    .iter()
                    .zip(&z)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d, anchor)
            })
        })
        .collect();
    if cands.is_empty() {
        return Err(Error::invalid("dataset has no recorded LQD anchors"));
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = k.max(1).min(cands.len());
    Ok(cands[..k].iter().map(|c| c.1).sum::<f64>() / k as f64)
}

/// Step sample → KDE → LQD, the action-building pipeline.
pub fn sample_to_lqd(
    sample: &StepSample,
    options: &KdeOptions,
    grid: &Arc<Grid>,
) -> Result<LqdFunction> {
    lqd_forward(&kde(sample, options)?, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn normal_pdf(x: f64, m: f64, s: f64) -> f64 {
        (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * PI).sqrt())
    }

    fn normal_sample(n: usize, seed: u64) -> StepSample {
        let mut rng = rng_from(seed);
        let d = Normal::new(8000.0, 1000.0).unwrap();
        let values = (0..n)
            .map(|_| loop {
                let v: f64 = d.sample(&mut rng);
                if v > 100.0 {
                    break v;
                }
            })
            .collect();
        StepSample::new(values, "w").unwrap()
    }

    #[test]
    fn constant_sample_is_zero_variance() {
        let s = StepSample::new(vec![5000.0; 40], "w").unwrap();
        assert!(matches!(kde(&s, &KdeOptions::default()), Err(Error::ZeroVariance)));
    }

    #[test]
    fn too_few_days() {
        let s = StepSample::new(vec![5000.0, 6000.0], "w").unwrap();
        assert!(matches!(
            kde(&s, &KdeOptions::default()),
            Err(Error::TooFewObservations { .. })
        ));
    }

    #[test]
    fn two_point_sample_is_symmetric_mixture() {
        let s = StepSample::new(vec![5000.0, 10000.0], "w").unwrap();
        let opts = KdeOptions {
            min_days: 2,
            ..KdeOptions::default()
        };
        let f = kde(&s, &opts).unwrap();
        assert!((f.integral() - 1.0).abs() < 1e-6);
        let h = silverman_bandwidth(&s.values).unwrap();
        // closed form, truncated to ±3h and renormalized
        let g = |x: f64| 0.5 * normal_pdf(x, 5000.0, h) + 0.5 * normal_pdf(x, 10000.0, h);
        let oracle = DensityEstimate::from_fn(f.lo(), f.hi(), 4001, g).unwrap();
        for &x in &[5000.0, 6000.0, 7500.0, 9000.0, 10000.0] {
            assert!((f.eval(x) - oracle.eval(x)).abs() < 1e-3 * oracle.eval(5000.0));
            assert!((f.eval(x) - f.eval(15000.0 - x)).abs() < 1e-9 * f.eval(5000.0));
        }
        assert!(f.eval(7500.0) < f.eval(5000.0));
    }

    #[test]
    fn kde_recovers_normal_peak() {
        let f = kde(&normal_sample(10_000, 1), &KdeOptions::default()).unwrap();
        let target = 1.0 / (1000.0 * (2.0 * PI).sqrt());
        assert!((f.eval(8000.0) - target).abs() < 0.1 * target);
    }

    #[test]
    fn uniform_density_quantiles() {
        let grid = Grid::uniform(101).unwrap();
        let f = DensityEstimate::from_fn(0.0, 1.0, 512, |_| 1.0).unwrap();
        let q = quantile_from_density(&f, &grid).unwrap();
        for (p, v) in grid.points().iter().zip(q.values()) {
            assert!((p - v).abs() < 1e-3);
        }
    }

    #[test]
    fn symmetric_density_median() {
        let grid = Grid::uniform(101).unwrap();
        let f = DensityEstimate::from_fn(4000.0, 12000.0, 512, |x| normal_pdf(x, 8000.0, 1000.0))
            .unwrap();
        let q = quantile_from_density(&f, &grid).unwrap();
        assert!((q.values()[50] - 8000.0).abs() < 1e-6 * 8000.0);
    }

    #[test]
    fn kde_quantiles_match_empirical() {
        let s = normal_sample(10_000, 2);
        let grid = Grid::uniform(101).unwrap();
        let q = quantile_from_density(&kde(&s, &KdeOptions::default()).unwrap(), &grid).unwrap();
        let mut sorted = s.values.clone();
        sorted.sort_by(f64::total_cmp);
        for (idx, p) in [(25, 0.25), (50, 0.5), (75, 0.75)] {
            let emp = quantile_sorted(&sorted, p);
            assert!((q.values()[idx] - emp).abs() < 0.05 * emp);
        }
    }

    #[test]
    fn lqd_of_uniform_is_log_width() {
        let grid = Grid::uniform(101).unwrap();
        let f = DensityEstimate::from_fn(6000.0, 10000.0, 512, |_| 1.0).unwrap();
        let a = lqd_forward(&f, &grid).unwrap();
        assert!(a.values().iter().all(|v| (v - 4000f64.ln()).abs() < 1e-9));
        assert_eq!(a.anchor(), 6000.0);
        let unit = DensityEstimate::from_fn(0.0, 1.0, 512, |_| 1.0).unwrap();
        let a0 = lqd_forward(&unit, &grid).unwrap();
        assert!(a0.values().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn lqd_of_normal_at_median() {
        let grid = Grid::uniform(101).unwrap();
        let f = DensityEstimate::from_fn(3000.0, 13000.0, 4001, |x| normal_pdf(x, 8000.0, 1000.0))
            .unwrap();
        let a = lqd_forward(&f, &grid).unwrap();
        let expected = (1000.0 * (2.0 * PI).sqrt()).ln();
        assert!((a.values()[50] - expected).abs() < 1e-3);
        assert!((expected - 7.8267).abs() < 1e-4);
    }

    #[test]
    fn inverse_of_constant_lqd() {
        let grid = Grid::uniform(101).unwrap();
        let zero = LqdFunction::new(GridFunction::zeros(grid.clone()), 0.0).unwrap();
        let inv = lqd_inverse(&zero).unwrap();
        for (p, v) in grid.points().iter().zip(inv.quantile.values()) {
            assert!((p - v).abs() < 1e-12);
        }
        assert!((mean_steps(&zero).unwrap() - 0.5).abs() < 1e-12);
        let w = 4000.0;
        let a = LqdFunction::new(
            GridFunction::from_fn(grid.clone(), |_| f64::ln(w)).unwrap(),
            6000.0,
        )
        .unwrap();
        let inv = lqd_inverse(&a).unwrap();
        for (p, v) in grid.points().iter().zip(inv.quantile.values()) {
            assert!((6000.0 + w * p - v).abs() < 1e-8);
        }
        assert!(!inv.capped);
        assert!((mean_steps(&a).unwrap() - 8000.0).abs() < 1e-8);
    }

    #[test]
    fn inverse_flags_cap() {
        let grid = Grid::uniform(11).unwrap();
        let a = LqdFunction::new(GridFunction::from_fn(grid, |_| 40.0).unwrap(), 0.0).unwrap();
        let inv = lqd_inverse(&a).unwrap();
        assert!(inv.capped);
        assert!(inv.quantile.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn log_mean_limits() {
        assert!((log_mean(2.0, 2.0) - 2.0).abs() < 1e-15);
        let (a, b) = (3.0, 1.0);
        assert!((log_mean(a, b) - 2.0 / 3f64.ln()).abs() < 1e-15);
        assert!((log_mean(1.0 + 1e-8, 1.0) - (1.0 + 0.5e-8)).abs() < 1e-15);
    }
}
