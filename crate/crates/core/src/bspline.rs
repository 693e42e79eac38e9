//! Cubic B-spline basis on `[0, 1]` with clamped end knots, its second
//! derivatives, and the roughness penalty `R = ∫ B''(u) B''(u)ᵀ du`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEGREE: usize = 3;
const ORDER: usize = DEGREE + 1;

/// Cubic B-spline basis with endpoint knot multiplicity four.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct BSplineBasis {
    interior: Vec<f64>,
    knots: Vec<f64>,
}

/// Serialized form: only the interior knots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisSpec {
    pub interior_knots: Vec<f64>,
}

impl TryFrom<BasisSpec> for BSplineBasis {
    type Error = Error;
    fn try_from(spec: BasisSpec) -> Result<Self> {
        BSplineBasis::new(spec.interior_knots)
    }
}

impl From<BSplineBasis> for BasisSpec {
    fn from(b: BSplineBasis) -> Self {
        BasisSpec {
            interior_knots: b.interior,
        }
    }
}

impl BSplineBasis {
    pub fn new(interior: Vec<f64>) -> Result<Self> {
        if interior.iter().any(|&k| !(k > 0.0 && k < 1.0)) {
            return Err(Error::invalid("interior knots must lie strictly inside (0, 1)"));
        }
        if interior.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("interior knots must be non-decreasing"));
        }
        let mut knots = vec![0.0; ORDER];
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat_n(1.0, ORDER));
        Ok(BSplineBasis { interior, knots })
    }

    /// `n` equally spaced interior knots; `n = 2` gives the default `K = 6` basis.
    pub fn uniform(n: usize) -> Self {
        let interior = (1..=n).map(|i| i as f64 / (n + 1) as f64).collect();
        BSplineBasis::new(interior).expect("uniform knots are valid")
    }

    /// Basis dimension `K`.
    pub fn dim(&self) -> usize {
        self.interior.len() + ORDER
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    /// Greville abscissae; coefficients equal to them reproduce `u ↦ u`.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| (self.knots[k + 1] + self.knots[k + 2] + self.knots[k + 3]) / 3.0)
            .collect()
    }

    fn span(&self, u: f64) -> usize {
        let k = self.dim();
        if u >= 1.0 {
            return k - 1;
        }
        // last i in [DEGREE, K-1] with knots[i] <= u
        let mut i = DEGREE;
        while i + 1 < k && self.knots[i + 1] <= u {
            i += 1;
        }
        i
    }

    /// Non-zero basis functions at `u` and their first two derivatives.
    /// Returns the span index and `ders[d][j]` for `B_{span-3+j}`.
    fn ders(&self, u: f64) -> (usize, [[f64; ORDER]; 3]) {
        let t = &self.knots;
        let span = self.span(u);
        let mut ndu = [[0.0f64; ORDER]; ORDER];
        let mut left = [0.0f64; ORDER];
        let mut right = [0.0f64; ORDER];
        ndu[0][0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = u - t[span + 1 - j];
            right[j] = t[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut out = [[0.0f64; ORDER]; 3];
        for j in 0..=DEGREE {
            out[0][j] = ndu[j][DEGREE];
        }
        let mut a = [[0.0f64; ORDER]; 2];
        for r in 0..=DEGREE {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0] = [0.0; ORDER];
            a[0][0] = 1.0;
            for k in 1..=2usize {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = DEGREE - k;
                a[s2] = [0.0; ORDER];
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { DEGREE - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                out[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        // derivative factors p!/(p-k)!
        let mut fac = DEGREE as f64;
        for k in 1..=2 {
            for j in 0..=DEGREE {
                out[k][j] *= fac;
            }
            fac *= (DEGREE - k) as f64;
        }
        (span, out)
    }

    fn check_domain(u: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::OutOfDomain {
                value: u,
                domain: "[0, 1]",
            });
        }
        Ok(())
    }

    fn scatter(&self, u: f64, order: usize) -> Result<Vec<f64>> {
        Self::check_domain(u)?;
        let (span, d) = self.ders(u);
        let mut out = vec![0.0; self.dim()];
        for j in 0..ORDER {
            out[span - DEGREE + j] = d[order][j];
        }
        Ok(out)
    }

    /// `(B_1(u), …, B_K(u))`.
    pub fn eval(&self, u: f64) -> Result<Vec<f64>> {
        self.scatter(u, 0)
    }

    /// `(B_1''(u), …, B_K''(u))`.
    pub fn eval_dd(&self, u: f64) -> Result<Vec<f64>> {
        self.scatter(u, 2)
    }

    /// `G × K` matrix of basis values at the points.
    pub fn design_matrix(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(points.len(), self.dim());
        for (g, &u) in points.iter().enumerate() {
            for (k, v) in self.eval(u)?.into_iter().enumerate() {
                m[(g, k)] = v;
            }
        }
        Ok(m)
    }

    /// Exact roughness penalty. `B''` is piecewise linear, so two-point
    /// Gauss–Legendre on each knot interval integrates the products exactly.
    pub fn penalty_matrix(&self) -> PenaltyMatrix {
        let k = self.dim();
        let mut r = DMatrix::zeros(k, k);
        let node = 0.5 / 3f64.sqrt();
        for w in self.knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let (mid, half) = (0.5 * (a + b), b - a);
            for x in [mid - node * half, mid + node * half] {
                let (span, d) = self.ders(x);
                let base = span - DEGREE;
                for i in 0..ORDER {
                    for j in 0..ORDER {
                        r[(base + i, base + j)] += 0.5 * half * d[2][i] * d[2][j];
                    }
                }
            }
        }
        // exact symmetry
        let r = (&r + r.transpose()) * 0.5;
        PenaltyMatrix(r)
    }
}

impl Default for BSplineBasis {
    fn default() -> Self {
        BSplineBasis::uniform(2)
    }
}

/// Symmetric PSD roughness matrix; `cᵀ R c = ∫ (Σ c_k B_k'')²`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix(pub DMatrix<f64>);

impl PenaltyMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn quadratic_form(&self, c: &[f64]) -> f64 {
        let v = DVector::from_column_slice(c);
        (v.transpose() * &self.0 * &v)[(0, 0)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook Cox–de Boor recursion with half-open supports; the last basis
    /// function is closed at u = 1.
    fn cox_de_boor(t: &[f64], k: usize, deg: usize, u: f64) -> f64 {
        if deg == 0 {
            let n_last = t.len() - 2;
            let last_nonempty = (0..=n_last).rev().find(|&i| t[i + 1] > t[i]).unwrap();
            return if (t[k] <= u && u < t[k + 1]) || (u == t[k + 1] && k == last_nonempty) {
                1.0
            } else {
                0.0
            };
        }
        let mut v = 0.0;
        let d1 = t[k + deg] - t[k];
        if d1 > 0.0 {
            v += (u - t[k]) / d1 * cox_de_boor(t, k, deg - 1, u);
        }
        let d2 = t[k + deg + 1] - t[k + 1];
        if d2 > 0.0 {
            v += (t[k + deg + 1] - u) / d2 * cox_de_boor(t, k + 1, deg - 1, u);
        }
        v
    }

    #[test]
    fn endpoints() {
        let b = BSplineBasis::default();
        assert_eq!(b.dim(), 6);
        let v0 = b.eval(0.0).unwrap();
        assert_eq!(v0, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let v1 = b.eval(1.0).unwrap();
        assert!((v1[5] - 1.0).abs() < 1e-15);
        assert!(v1[..5].iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn matches_recursion_oracle() {
        for basis in [BSplineBasis::uniform(0), BSplineBasis::uniform(2), BSplineBasis::new(vec![0.2, 0.2, 0.7]).unwrap()] {
            for i in 0..=200 {
                let u = i as f64 / 200.0;
                let v = basis.eval(u).unwrap();
                for (k, vk) in v.iter().enumerate() {
                    let want = cox_de_boor(basis.knots(), k, 3, u);
                    assert!((vk - want).abs() < 1e-12, "u={u} k={k}: {vk} vs {want}");
                }
            }
        }
        let v = BSplineBasis::uniform(2).eval(0.5).unwrap();
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(v.iter().filter(|&&x| x != 0.0).count() <= 4);
    }

    #[test]
    fn bernstein_second_derivative() {
        let b = BSplineBasis::uniform(0);
        let dd = b.eval_dd(0.5).unwrap();
        // B_1 = (1-u)^3, B_1'' = 6(1-u)
        assert!((dd[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let b = BSplineBasis::new(vec![0.25, 0.5, 0.75]).unwrap();
        let h = 1e-4;
        for &u in &[0.1, 0.33, 0.6, 0.9] {
            let dd = b.eval_dd(u).unwrap();
            let (lo, mid, hi) = (b.eval(u - h).unwrap(), b.eval(u).unwrap(), b.eval(u + h).unwrap());
            for k in 0..b.dim() {
                let fd = (lo[k] - 2.0 * mid[k] + hi[k]) / (h * h);
                let scale = dd[k].abs().max(1.0);
                assert!((fd - dd[k]).abs() / scale < 1e-4, "u={u} k={k}");
            }
            assert!(dd.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn domain_errors() {
        let b = BSplineBasis::default();
        assert!(b.eval(-0.01).is_err());
        assert!(b.eval_dd(1.01).is_err());
        assert!(BSplineBasis::new(vec![0.0]).is_err());
        assert!(BSplineBasis::new(vec![0.6, 0.3]).is_err());
    }

    #[test]
    fn penalty_annihilates_affine_functions() {
        let b = BSplineBasis::default();
        let r = b.penalty_matrix();
        let ones = vec![1.0; b.dim()];
        assert!(r.quadratic_form(&ones).abs() < 1e-9);
        let rv = r.matrix() * DVector::from_element(b.dim(), 1.0);
        assert!(rv.amax() < 1e-9);
        assert!(r.quadratic_form(&b.greville()).abs() < 1e-9);
    }
}
