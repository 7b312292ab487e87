// Float math for `no_std` builds; std's inherent methods shadow it when std is linked.
#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Diagonal loading used by the FID proxy.
pub const DEFAULT_REGULARIZATION: f64 = 1e-6;

fn moments<S: Scalar>(features: &Tensor<S>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let &[n, dim] = features.shape() else {
        return Err(Error::InvalidArgument("features must be [n, dim]".into()));
    };
    if n < 2 {
        return Err(Error::InvalidArgument(alloc::format!("need at least 2 feature rows, got {n}")));
    }
    let x = DMatrix::from_row_iterator(n, dim, features.data().iter().map(|v| v.as_f64()));
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, cov))
}

fn symmetric_eigen(m: DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
}

/// Principal square root of a symmetric positive semidefinite matrix;
/// negative round-off eigenvalues are clamped to zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetric_eigen(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn check_nondegenerate(cov: &DMatrix<f64>) -> Result<()> {
    let eig = symmetric_eigen(cov.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if min <= 1e-12 * max.max(1.0) {
        return Err(Error::DegenerateCovariance { min_eigenvalue: min });
    }
    Ok(())
}

/// Fréchet distance between Gaussian fits of two feature sets:
/// `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})` with
/// `regularization * I` added to both covariances.
///
/// `Tr((S_a S_b)^{1/2})` is computed as the trace of the square root of the
/// symmetric matrix `S_a^{1/2} S_b S_a^{1/2}`. With zero regularization a
/// singular covariance is reported as [`Error::DegenerateCovariance`].
pub fn frechet_distance<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, regularization: f64) -> Result<f64> {
    if a.shape().get(1) != b.shape().get(1) {
        return Err(Error::InvalidArgument("feature sets differ in dimension".into()));
    }
    if !(regularization >= 0.0 && regularization.is_finite()) {
        return Err(Error::InvalidArgument("regularization must be finite and nonnegative".into()));
    }
    let (mu_a, mut cov_a) = moments(a)?;
    let (mu_b, mut cov_b) = moments(b)?;
    let dim = cov_a.nrows();
    if regularization > 0.0 {
        cov_a += DMatrix::identity(dim, dim) * regularization;
        cov_b += DMatrix::identity(dim, dim) * regularization;
    } else {
        check_nondegenerate(&cov_a)?;
        check_nondegenerate(&cov_b)?;
    }
    let root_a = sqrtm_psd(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let tr_sqrt: f64 = symmetric_eigen(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let diff = mu_a - mu_b;
    let d = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    if !d.is_finite() {
        return Err(Error::NonFinite("Fréchet distance".into()));
    }
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn gaussian(n: usize, dim: usize, shift: f64, seed: u64) -> Tensor<f64> {
        let mut t = Tensor::<f64>::standard_normal(&[n, dim], seed);
        for r in 0..n {
            t[r * dim] += shift;
        }
        t
    }

    #[test]
    fn identical_sets_are_zero() {
        let a = gaussian(300, 6, 0.0, 1);
        assert!(frechet_distance(&a, &a, DEFAULT_REGULARIZATION).unwrap() <= 1e-6);
    }

    #[test]
    fn pure_mean_shift_on_shared_covariance() {
        // same sample translated: covariances are identical, distance is the squared shift
        let a = gaussian(200, 4, 0.0, 2);
        let mut b = a.clone();
        for r in 0..200 {
            b[r * 4 + 2] += 1.5;
        }
        let d = frechet_distance(&a, &b, DEFAULT_REGULARIZATION).unwrap();
        assert!((d - 2.25).abs() < 1e-6, "{d}");
    }

    #[test]
    fn symmetric_and_permutation_invariant() {
        let a = gaussian(150, 5, 0.0, 3);
        let b = gaussian(120, 5, 0.7, 4);
        let ab = frechet_distance(&a, &b, 1e-6).unwrap();
        let ba = frechet_distance(&b, &a, 1e-6).unwrap();
        assert!((ab - ba).abs() <= 1e-6 * ab);
        let mut rows: Vec<&[f64]> = a.data().chunks(5).collect();
        rows.reverse();
        let flipped = Tensor::new(&[150, 5], rows.concat()).unwrap();
        assert!((frechet_distance(&flipped, &b, 1e-6).unwrap() - ab).abs() <= 1e-9 * ab);
    }

    /// Trace of `(A B)^{1/2}` through the Denman-Beavers iteration on the
    /// non-symmetric product, a route independent of the eigen-based one.
    fn trace_sqrt_product_db(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let mut y = a * b;
        let mut z = DMatrix::<f64>::identity(y.nrows(), y.ncols());
        for _ in 0..100 {
            let yi = y.clone().try_inverse().unwrap();
            let zi = z.clone().try_inverse().unwrap();
            let ny = (&y + zi) * 0.5;
            let nz = (&z + yi) * 0.5;
            let done = (&ny - &y).norm() <= 1e-15 * ny.norm();
            y = ny;
            z = nz;
            if done {
                break;
            }
        }
        y.trace()
    }

    #[test]
    fn matches_denman_beavers_oracle_in_64_dims() {
        let a = Tensor::<f64>::standard_normal(&[400, 64], 11);
        let mut b = Tensor::<f64>::standard_normal(&[500, 64], 12);
        for (i, v) in b.data_mut().iter_mut().enumerate() {
            *v = *v * (1.0 + 0.01 * (i % 64) as f64) + 0.05;
        }
        let reg = 1e-6;
        let (mu_a, ca) = moments(&a).unwrap();
        let (mu_b, cb) = moments(&b).unwrap();
        let eye = DMatrix::<f64>::identity(64, 64) * reg;
        let (ca, cb) = (ca + &eye, cb + &eye);
        let oracle = (mu_a - mu_b).norm_squared() + ca.trace() + cb.trace() - 2.0 * trace_sqrt_product_db(&ca, &cb);
        let got = frechet_distance(&a, &b, reg).unwrap();
        assert!((got - oracle).abs() <= 1e-8 * oracle.abs().max(1.0), "{got} vs {oracle}");
    }

    #[test]
    fn degenerate_without_regularization_is_an_error() {
        // 3 rows in 5 dimensions: rank-deficient covariance
        let a = gaussian(3, 5, 0.0, 5);
        let b = gaussian(50, 5, 0.0, 6);
        assert!(matches!(frechet_distance(&a, &b, 0.0), Err(Error::DegenerateCovariance { .. })));
        assert!(frechet_distance(&a, &b, 1e-3).unwrap().is_finite());
        assert!(frechet_distance(&gaussian(1, 5, 0.0, 7), &b, 1e-3).is_err());
    }
}
