//! Shared numeric substrate: matrices, the project PRNG, slope fitting, PSD
//! square roots, sample covariance and a finite-difference gradient.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub(crate) use matrix::dot;
pub use rng::RngState;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

/// Absolute asymmetry tolerance (scaled by the largest entry when it exceeds 1).
const SYMMETRY_TOL: f64 = 1e-8;

/// Slope of the least-squares line through `(j, ys[j])`, `j = 0..len`.
///
/// The numerator uses `y - y₀` (valid because `Σ(x - x̄) = 0`), so adding a
/// constant to a series whose sums are exact leaves the slope bit-identical.
pub fn least_squares_slope(ys: &[f64]) -> Result<f64> {
    let n = ys.len();
    if n < 2 {
        return Err(Error::InsufficientPoints(n));
    }
    let x_mean = (n - 1) as f64 / 2.0;
    let y_ref = ys[0];
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, &y) in ys.iter().enumerate() {
        let dx = j as f64 - x_mean;
        num += dx * (y - y_ref);
        den += dx * dx;
    }
    Ok(num / den)
}

/// Symmetric square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues below zero (round-off on rank-deficient covariances) are
/// clamped to zero before taking roots.
pub fn psd_sqrt(m: &Matrix) -> Result<Matrix> {
    let asym = m
        .max_asymmetry()
        .ok_or_else(|| Error::Shape(format!("psd_sqrt needs a square matrix, got {:?}", m.shape())))?;
    let scale = m.data().iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)));
    let eig = SymmetricEigen::new(sym);
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let v = &eig.eigenvectors;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..n).map(|k| v[(i, k)] * roots[k] * v[(j, k)]).sum();
            out.set(i, j, s);
            out.set(j, i, s);
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("psd_sqrt result".into()));
    }
    Ok(out)
}

/// Column means and the unbiased (`n - 1`) covariance of the rows.
pub fn mean_and_covariance(samples: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let (n, d) = samples.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let mut mean = vec![0.0; d];
    for row in samples.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in samples.row_iter() {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let out = &mut cov.data_mut()[i * d..(i + 1) * d];
            for j in i..d {
                out[j] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok((mean, cov))
}

/// Central-difference gradient `(f(p + h·eᵢ) - f(p - h·eᵢ)) / 2h`.
pub fn finite_difference_gradient<F, E>(mut f: F, params: &[f64], h: f64) -> Result<Vec<f64>, E>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let up = f(&probe)?;
        probe[i] = params[i] - h;
        let down = f(&probe)?;
        probe[i] = params[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// `n` i.i.d. standard normal draws.
pub fn standard_normal(rng: &mut RngState, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("standard_normal needs n >= 1".into()));
    }
    Ok((0..n).map(|_| rng.normal()).collect())
}

pub(crate) fn standard_normal_matrix(rng: &mut RngState, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec_unchecked(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Normal equations for `y = a + b·x`, solved by Cramer's rule.
    fn slope_oracle(ys: &[f64]) -> f64 {
        let n = ys.len() as f64;
        let sx: f64 = (0..ys.len()).map(|x| x as f64).sum();
        let sxx: f64 = (0..ys.len()).map(|x| (x * x) as f64).sum();
        let sy: f64 = ys.iter().sum();
        let sxy: f64 = ys.iter().enumerate().map(|(x, y)| x as f64 * y).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn slope_examples() {
        assert_eq!(least_squares_slope(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(least_squares_slope(&[7.0, 7.0, 7.0]).unwrap(), 0.0);
        let oracle = slope_oracle(&[0.0, 2.0, 1.0, 3.0]);
        assert!((oracle - 0.8).abs() < 1e-15);
        assert!((least_squares_slope(&[0.0, 2.0, 1.0, 3.0]).unwrap() - oracle).abs() < 1e-15);
        assert!(matches!(
            least_squares_slope(&[1.0]),
            Err(Error::InsufficientPoints(1))
        ));
    }

    proptest! {
        #[test]
        fn slope_matches_normal_equations(ys in prop::collection::vec(-100.0f64..100.0, 2..40)) {
            let got = least_squares_slope(&ys).unwrap();
            let want = slope_oracle(&ys);
            prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()));
        }

        // Dyadic values keep every intermediate sum exact, so translation and
        // power-of-two scaling must leave the slope bit-identical.
        #[test]
        fn slope_exact_under_shift_and_scale(
            ints in prop::collection::vec(-512i32..512, 2..30),
            shift in -1000i32..1000,
            pow in -4i32..5,
        ) {
            let ys: Vec<f64> = ints.iter().map(|&v| v as f64 / 8.0).collect();
            let base = least_squares_slope(&ys).unwrap();
            let shifted: Vec<f64> = ys.iter().map(|y| y + shift as f64).collect();
            prop_assert_eq!(least_squares_slope(&shifted).unwrap(), base);
            let c = 2f64.powi(pow);
            let scaled: Vec<f64> = ys.iter().map(|y| y * c).collect();
            prop_assert_eq!(least_squares_slope(&scaled).unwrap(), c * base);
        }

        #[test]
        fn slope_sign_invariant_under_positive_scaling(
            ys in prop::collection::vec(-10.0f64..10.0, 2..25),
            c in 0.01f64..100.0,
        ) {
            let base = least_squares_slope(&ys).unwrap();
            prop_assume!(base.abs() > 1e-9);
            let scaled: Vec<f64> = ys.iter().map(|y| c * y).collect();
            let s = least_squares_slope(&scaled).unwrap();
            prop_assert_eq!(s > 0.0, base > 0.0);
            prop_assert!((s - c * base).abs() <= 1e-9 * (c * base).abs().max(1.0));
        }
    }

    fn random_psd(rng: &mut RngState, n: usize) -> Matrix {
        let b = standard_normal_matrix(rng, n, n);
        b.transpose().matmul(&b).unwrap()
    }

    fn rel_reconstruction_error(a: &Matrix) -> f64 {
        let s = psd_sqrt(a).unwrap();
        assert_eq!(s.max_asymmetry(), Some(0.0));
        s.matmul(&s).unwrap().sub(a).unwrap().frobenius_norm() / a.frobenius_norm()
    }

    #[test]
    fn psd_sqrt_examples() {
        let i3 = psd_sqrt(&Matrix::identity(3)).unwrap();
        assert!(i3.sub(&Matrix::identity(3)).unwrap().frobenius_norm() < 1e-12);
        let d = psd_sqrt(&Matrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert!(d.sub(&Matrix::from_diagonal(&[2.0, 3.0])).unwrap().frobenius_norm() < 1e-12);
        let mut rng = RngState::new(11);
        assert!(rel_reconstruction_error(&random_psd(&mut rng, 3)) <= 1e-6);
    }

    #[test]
    fn psd_sqrt_reconstructs_up_to_64() {
        let mut rng = RngState::new(5);
        for n in [1, 2, 5, 16, 33, 64] {
            let err = rel_reconstruction_error(&random_psd(&mut rng, n));
            assert!(err <= 1e-6, "n={n}: relative error {err}");
        }
        // rank-deficient: B is 3x8, BᵀB is 8x8 of rank 3
        let b = standard_normal_matrix(&mut rng, 3, 8);
        assert!(rel_reconstruction_error(&b.transpose().matmul(&b).unwrap()) <= 1e-6);
    }

    #[test]
    fn psd_sqrt_rejects_asymmetric() {
        let m = Matrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        assert!(matches!(psd_sqrt(&m), Err(Error::NotSymmetric(_))));
        let tiny = Matrix::from_rows(&[[1.0, 1e-10], [0.0, 1.0]]).unwrap();
        assert!(psd_sqrt(&tiny).is_ok());
    }

    #[test]
    fn covariance_examples() {
        let m = Matrix::from_rows(&[[0.0, 0.0], [2.0, 2.0]]).unwrap();
        let (mean, cov) = mean_and_covariance(&m).unwrap();
        assert_eq!(mean, vec![1.0, 1.0]);
        assert_eq!(cov.data(), &[2.0, 2.0, 2.0, 2.0]);

        let same = Matrix::from_rows(&[[0.3, -1.0, 2.0]; 5]).unwrap();
        let (_, cov) = mean_and_covariance(&same).unwrap();
        assert!(cov.data().iter().all(|&v| v == 0.0));

        assert!(mean_and_covariance(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn covariance_of_standard_normal_rows() {
        let mut rng = RngState::new(2024);
        let x = standard_normal_matrix(&mut rng, 1000, 4);
        let (mean, cov) = mean_and_covariance(&x).unwrap();
        assert!(mean.iter().all(|m| m.abs() <= 0.15), "{mean:?}");
        let err = cov.sub(&Matrix::identity(4)).unwrap();
        assert!(err.data().iter().all(|e| e.abs() <= 0.2), "{cov:?}");
        assert_eq!(cov, cov.transpose());
    }

    #[test]
    fn finite_difference_examples() {
        let g = finite_difference_gradient(|p| Ok::<_, ()>(p[0] * p[0]), &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() <= 1e-6);
        let g = finite_difference_gradient(|_| Ok::<_, ()>(4.2), &[1.0, -2.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let g = finite_difference_gradient(|p| Ok::<_, ()>(p[0] * p[1]), &[2.0, 5.0], 1e-5).unwrap();
        assert!((g[0] - 5.0).abs() <= 1e-6 && (g[1] - 2.0).abs() <= 1e-6);
        let err = finite_difference_gradient(|_| Err::<f64, _>("boom"), &[1.0], 1e-5);
        assert_eq!(err, Err("boom"));
    }

    #[test]
    fn normal_draws() {
        let a = standard_normal(&mut RngState::new(9), 16).unwrap();
        let b = standard_normal(&mut RngState::new(9), 16).unwrap();
        assert_eq!(a, b);
        assert!(standard_normal(&mut RngState::new(9), 0).is_err());

        let n = 100_000;
        let xs = standard_normal(&mut RngState::new(1), n).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 0.02, "mean {mean}");
        assert!((0.97..=1.03).contains(&var), "var {var}");
    }

    #[test]
    fn streams_are_independent_of_parent_draws() {
        let mut a = RngState::new(3);
        let s1 = a.stream(1);
        a.normal();
        let s2 = a.stream(1);
        assert_eq!(s1.seed(), s2.seed());
        assert_ne!(a.stream(1).seed(), a.stream(2).seed());
    }
}
