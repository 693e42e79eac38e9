//! Browser bindings: LQD explorer, B-spline penalty explorer, reward curves.
//!
//! Each export returns a JSON string; the plain functions underneath are
//! usable (and tested) natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use funcq::bspline::BSplineBasis;
use funcq::density::{lqd_forward, lqd_inverse, DensityEstimate};
use funcq::reward::{reward_from, RiskTables};
use funcq::{Grid, State};

#[derive(Debug, Serialize)]
pub struct LqdView {
    pub p: Vec<f64>,
    pub lqd: Vec<f64>,
    pub quantile: Vec<f64>,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub recovered_density: Vec<f64>,
    pub anchor: f64,
    pub mean: f64,
    /// Sup-norm relative error of the recovered quantile function against
    /// the quantile function of the input density.
    pub round_trip_error: f64,
    pub capped: bool,
}

fn family_density(family: &str, a: f64, b: f64) -> Result<(f64, f64, Box<dyn Fn(f64) -> f64>), String> {
    match family {
        "normal" => {
            if !(b > 0.0) {
                return Err("sd must be positive".into());
            }
            Ok((a - 3.0 * b, a + 3.0 * b, Box::new(move |x| (-0.5 * ((x - a) / b).powi(2)).exp())))
        }
        "uniform" => {
            if !(b > a) {
                return Err("upper end must exceed lower end".into());
            }
            Ok((a, b, Box::new(|_| 1.0)))
        }
        "bimodal" => {
            if !(b > a) {
                return Err("second mode must exceed the first".into());
            }
            let s = (b - a) / 3.0;
            let lo = a - 2.0 * s;
            let hi = b + 2.0 * s;
            Ok((
                lo,
                hi,
                Box::new(move |x| {
                    (-0.5 * ((x - a) / s).powi(2)).exp() + (-0.5 * ((x - b) / s).powi(2)).exp() + 0.02
                }),
            ))
        }
        other => Err(format!("unknown family {other}; expected normal, uniform or bimodal")),
    }
}

/// Reference quantiles from a fine cumulative sum of the tabulated density.
fn reference_quantiles(f: &DensityEstimate, p: &[f64]) -> Vec<f64> {
    let xs = f.support();
    let fs = f.values();
    let mut cdf = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        cdf[i] = cdf[i - 1] + 0.5 * (fs[i] + fs[i - 1]) * (xs[i] - xs[i - 1]);
    }
    let total = *cdf.last().unwrap();
    p.iter()
        .map(|&pi| {
            let t = pi * total;
            let k = cdf.partition_point(|&c| c < t).clamp(1, xs.len() - 1);
            let (c0, c1) = (cdf[k - 1], cdf[k]);
            let w = if c1 > c0 { (t - c0) / (c1 - c0) } else { 0.0 };
            xs[k - 1] + w * (xs[k] - xs[k - 1])
        })
        .collect()
}

pub fn lqd_view(family: &str, a: f64, b: f64, grid_points: usize) -> Result<LqdView, String> {
    let (lo, hi, pdf) = family_density(family, a, b)?;
    let f = DensityEstimate::from_fn(lo, hi, 2001, pdf).map_err(|e| e.to_string())?;
    let grid = Grid::uniform(grid_points).map_err(|e| e.to_string())?;
    let lqd = lqd_forward(&f, &grid).map_err(|e| e.to_string())?;
    let inv = lqd_inverse(&lqd).map_err(|e| e.to_string())?;
    let truth = reference_quantiles(&f, grid.points());
    let scale = truth.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let err = inv
        .quantile
        .values()
        .iter()
        .zip(&truth)
        .map(|(q, t)| (q - t).abs())
        .fold(0.0, f64::max)
        / scale;
    let x: Vec<f64> = f.support().iter().step_by(10).copied().collect();
    Ok(LqdView {
        p: grid.points().to_vec(),
        lqd: lqd.values().to_vec(),
        quantile: inv.quantile.values().to_vec(),
        density: x.iter().map(|&v| f.eval(v)).collect(),
        recovered_density: x.iter().map(|&v| inv.density.eval(v)).collect(),
        x,
        anchor: lqd.anchor(),
        mean: inv.quantile.mean(),
        round_trip_error: err,
        capped: inv.capped,
    })
}

#[derive(Debug, Serialize)]
pub struct SplineView {
    pub u: Vec<f64>,
    pub knots: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub curve: Vec<f64>,
    pub second_derivative: Vec<f64>,
    /// `cᵀ R c`.
    pub roughness: f64,
    pub penalty: Vec<Vec<f64>>,
}

pub fn spline_view(interior_knots: usize, coefficients: &[f64], points: usize) -> Result<SplineView, String> {
    let basis = BSplineBasis::uniform(interior_knots);
    let k = basis.dim();
    if coefficients.len() != k {
        return Err(format!("expected {k} coefficients, got {}", coefficients.len()));
    }
    if points < 2 {
        return Err("need at least two points".into());
    }
    let u: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let mut rows = Vec::with_capacity(points);
    let mut curve = Vec::with_capacity(points);
    let mut dd = Vec::with_capacity(points);
    for &ui in &u {
        let b = basis.eval(ui).map_err(|e| e.to_string())?;
        let b2 = basis.eval_dd(ui).map_err(|e| e.to_string())?;
        curve.push(b.iter().zip(coefficients).map(|(x, c)| x * c).sum());
        dd.push(b2.iter().zip(coefficients).map(|(x, c)| x * c).sum());
        rows.push(b);
    }
    let basis_cols: Vec<Vec<f64>> = (0..k).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let r = basis.penalty_matrix();
    let m = r.matrix();
    Ok(SplineView {
        knots: basis.interior_knots().to_vec(),
        basis: basis_cols,
        curve,
        second_derivative: dd,
        roughness: r.quadratic_form(coefficients),
        penalty: (0..k).map(|i| (0..k).map(|j| m[(i, j)]).collect()).collect(),
        u,
    })
}

#[derive(Debug, Serialize)]
pub struct RewardView {
    pub mu: Vec<f64>,
    pub reward: Vec<f64>,
    pub risk: f64,
    /// BMI, glucose, SBP, DBP contributions.
    pub components: [f64; 4],
}

pub fn reward_view(glucose: f64, bmi: f64, sbp: f64, dbp: f64, mu_max: f64, points: usize) -> Result<RewardView, String> {
    let state = State::new(vec![glucose, bmi, sbp, dbp, 1.0, 50.0]).map_err(|e| e.to_string())?;
    let components = RiskTables::default().components(&state).map_err(|e| e.to_string())?;
    let risk: f64 = components.iter().sum();
    if points < 2 || !(mu_max > 0.0) {
        return Err("need a positive step range and at least two points".into());
    }
    let mu: Vec<f64> = (0..points).map(|i| mu_max * i as f64 / (points - 1) as f64).collect();
    Ok(RewardView {
        reward: mu.iter().map(|&m| reward_from(risk, m)).collect(),
        mu,
        risk,
        components,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

/// Density family `normal(a = mean, b = sd)`, `uniform(a, b)` or
/// `bimodal(a, b = modes)` through the LQD transform and back.
#[wasm_bindgen]
pub fn lqd_explore(family: &str, a: f64, b: f64, grid_points: usize) -> Result<String, JsValue> {
    to_js(lqd_view(family, a, b, grid_points))
}

/// Cubic B-spline basis, curve and roughness for the given coefficients.
#[wasm_bindgen]
pub fn spline_explore(interior_knots: usize, coefficients: Vec<f64>, points: usize) -> Result<String, JsValue> {
    to_js(spline_view(interior_knots, &coefficients, points))
}

/// Reward as a function of mean daily steps for fixed biomarkers.
#[wasm_bindgen]
pub fn reward_explore(glucose: f64, bmi: f64, sbp: f64, dbp: f64, mu_max: f64, points: usize) -> Result<String, JsValue> {
    to_js(reward_view(glucose, bmi, sbp, dbp, mu_max, points))
}
