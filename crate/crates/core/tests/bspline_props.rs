use funcq::bspline::BSplineBasis;
use funcq::util::rng_from;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

proptest! {
    #[test]
    fn basis_is_a_nonnegative_partition_of_unity(u in 0.0f64..=1.0, interior in 0usize..6) {
        let b = BSplineBasis::uniform(interior).eval(u).unwrap();
        prop_assert!(b.iter().all(|&v| v >= -1e-15));
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(b.iter().filter(|&&v| v > 0.0).count() <= 4);
    }

    #[test]
    fn second_derivatives_sum_to_zero(u in 0.0f64..=1.0, interior in 0usize..6) {
        let d = BSplineBasis::uniform(interior).eval_dd(u).unwrap();
        prop_assert!(d.iter().sum::<f64>().abs() < 1e-9);
    }
}

#[test]
fn penalty_is_psd_with_affine_nullspace() {
    for interior in 0..=4 {
        let basis = BSplineBasis::uniform(interior);
        let r = basis.penalty_matrix().matrix().clone();
        assert!((&r - r.transpose()).amax() < 1e-12);
        let eig = SymmetricEigen::new(r.clone());
        let scale = eig.eigenvalues.amax();
        let null = eig.eigenvalues.iter().filter(|&&l| l.abs() < 1e-9 * scale).count();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-9 * scale), "K={}", basis.dim());
        assert_eq!(null, 2, "K={}", basis.dim());
        // the null directions reproduce affine functions
        let xi = basis.greville();
        let ones = DVector::from_element(basis.dim(), 1.0);
        let lin = DVector::from_vec(xi);
        assert!((&r * ones).amax() < 1e-9 * scale);
        assert!((&r * lin).amax() < 1e-9 * scale);
    }
}

#[test]
fn quadratic_form_matches_dense_quadrature() {
    let mut rng = rng_from(31);
    for interior in [1usize, 3] {
        let basis = BSplineBasis::uniform(interior);
        let r = basis.penalty_matrix();
        for _ in 0..5 {
            let c: Vec<f64> = (0..basis.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let m = 20_000;
            let h = 1.0 / m as f64;
            let mut integral = 0.0;
            for i in 0..=m {
                let d = basis.eval_dd(i as f64 * h).unwrap();
                let v: f64 = d.iter().zip(&c).map(|(a, b)| a * b).sum();
                let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                integral += w * h * v * v;
            }
            let qf = r.quadratic_form(&c);
            assert!((qf - integral).abs() <= 1e-6 * integral.max(1.0), "{qf} vs {integral}");
        }
    }
}

#[test]
fn design_matrix_rows_are_basis_values() {
    let basis = BSplineBasis::uniform(2);
    let pts = [0.0, 0.25, 0.5, 1.0];
    let d: DMatrix<f64> = basis.design_matrix(&pts).unwrap();
    for (i, &u) in pts.iter().enumerate() {
        let b = basis.eval(u).unwrap();
        for k in 0..basis.dim() {
            assert_eq!(d[(i, k)], b[k]);
        }
    }
}
