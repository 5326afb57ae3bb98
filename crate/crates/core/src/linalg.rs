//! Small dense linear-algebra helpers shared by the moment pipeline.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor used for PSD checks.
pub const PSD_REL_TOL: f64 = 1e-10;

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = s;
            a[(j, i)] = s;
        }
    }
}

pub fn symmetrized(mut a: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut a);
    a
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of a symmetric matrix, sorted ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    sym_eigenvalues(a).last().copied().unwrap_or(0.0)
}

/// Rejects matrices whose smallest eigenvalue falls below `-PSD_REL_TOL * max(|λ|)`.
pub fn check_psd(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() == 0 {
        return Ok(());
    }
    let ev = sym_eigenvalues(a);
    let min_eig = ev[0];
    let max_eig = *ev.last().unwrap();
    let scale = max_eig.abs().max(min_eig.abs());
    if min_eig < -PSD_REL_TOL * scale {
        return Err(Error::Indefinite { min_eig, max_eig });
    }
    Ok(())
}

/// Symmetric square root `S = V Λ^{1/2} Vᵀ`, so `S Sᵀ = S² = cov`.
///
/// Columns of `S` are the principal axes scaled by their standard deviations mixed back
/// into the original coordinates; for diagonal input `S` is diagonal.
pub fn covariance_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::Dimension(format!("covariance is {}x{}", n, cov.ncols())));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrized(cov.clone()));
    let max_eig = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if min_eig < -PSD_REL_TOL * max_eig {
        return Err(Error::Indefinite { min_eig, max_eig });
    }
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    Ok(symmetrized(&scaled * eig.eigenvectors.transpose()))
}

/// `P^{-1/2}` of a positive definite matrix.
pub fn inverse_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrized(cov.clone()));
    let max_eig = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if !(min_eig > PSD_REL_TOL * max_eig) {
        return Err(Error::Indefinite { min_eig, max_eig });
    }
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / lam.sqrt());
    }
    Ok(symmetrized(&scaled * eig.eigenvectors.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_sqrt_whitens() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let w = inverse_sqrt(&a).unwrap();
        assert!((&w * &a * &w - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-12);
        assert!(inverse_sqrt(&DMatrix::from_diagonal_element(2, 2, 0.0)).is_err());
    }

    #[test]
    fn sqrt_of_identity_is_identity() {
        let s = covariance_sqrt(&DMatrix::identity(6, 6)).unwrap();
        assert!((s - DMatrix::<f64>::identity(6, 6)).abs().max() < 1e-15);
    }

    #[test]
    fn sqrt_of_diagonal_has_column_norms_of_std_devs() {
        let s = covariance_sqrt(&DMatrix::from_diagonal(&nalgebra::dvector![4.0, 9.0])).unwrap();
        assert!((s.column(0).norm() - 2.0).abs() < 1e-14);
        assert!((s.column(1).norm() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn sqrt_round_trips_random_spd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
            let cov = a.transpose() * &a + DMatrix::identity(6, 6) * 1e-3;
            let s = covariance_sqrt(&cov).unwrap();
            let err = (&s * s.transpose() - &cov).norm() / cov.norm();
            assert!(err < 1e-10, "relative Frobenius error {err:e}");
        }
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let cov = DMatrix::from_diagonal(&nalgebra::dvector![1.0, -0.5]);
        assert!(matches!(covariance_sqrt(&cov), Err(Error::Indefinite { .. })));
    }

    #[test]
    fn sqrt_accepts_singular_psd() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = covariance_sqrt(&cov).unwrap();
        assert!((&s * s.transpose() - cov).norm() < 1e-12);
    }
}
