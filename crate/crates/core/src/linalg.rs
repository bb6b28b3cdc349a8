//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::C64;

/// Conditioning beyond which a Hermitian system gets a diagonal jitter.
pub const JITTER_CONDITION: f64 = 1e12;

/// Inverse of a Hermitian positive definite matrix together with the
/// eigendecomposition of that inverse.
#[derive(Debug, Clone)]
pub struct HermitianInverse {
    pub inverse: DMatrix<C64>,
    /// Eigenvalues of the inverse, same order as the columns of `vectors`.
    pub values: Vec<f64>,
    pub vectors: DMatrix<C64>,
    /// Diagonal loading that had to be added, zero in the normal case.
    pub jitter: f64,
}

/// Inverts a Hermitian positive definite matrix through its eigendecomposition.
///
/// If the condition number exceeds `JITTER_CONDITION`, `1e-12 * lambda_max` is
/// added to the diagonal first. Non-positive spectra are a hard error.
pub fn hermitian_inverse(a: &DMatrix<C64>) -> Result<HermitianInverse> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Numerical("hermitian_inverse needs a square matrix".into()));
    }
    if n == 0 {
        return Ok(HermitianInverse {
            inverse: DMatrix::zeros(0, 0),
            values: vec![],
            vectors: DMatrix::zeros(0, 0),
            jitter: 0.0,
        });
    }
    let herm = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let lmax = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !(lmax > 0.0) || !lmax.is_finite() {
        return Err(Error::Numerical(format!(
            "matrix is not positive definite (largest eigenvalue {lmax})"
        )));
    }
    let mut jitter = 0.0;
    if lmin <= 0.0 || lmax / lmin > JITTER_CONDITION {
        jitter = 1e-12 * lmax;
        log::debug!("ill-conditioned Hermitian system (cond {:.3e}); adding jitter {jitter:.3e}", lmax / lmin);
        if lmin + jitter <= 0.0 {
            return Err(Error::Numerical(format!(
                "matrix is indefinite (smallest eigenvalue {lmin})"
            )));
        }
    }
    let values: Vec<f64> = eig.eigenvalues.iter().map(|&l| 1.0 / (l + jitter)).collect();
    let vectors = eig.eigenvectors;
    let scaled = DMatrix::from_fn(n, n, |r, c| vectors[(r, c)] * values[c]);
    let inverse = &scaled * vectors.adjoint();
    let inverse = (&inverse + inverse.adjoint()) * C64::new(0.5, 0.0);
    Ok(HermitianInverse {
        inverse,
        values,
        vectors,
        jitter,
    })
}

/// Solves the normal equations `(A^H A) x = A^H b` with a relative ridge of
/// `ridge` whenever `cond(A^H A)` exceeds `cond_limit`. Returns the solution
/// and whether the ridge was used.
pub fn least_squares(
    a: &DMatrix<C64>,
    b: &DVector<C64>,
    cond_limit: f64,
    ridge: f64,
) -> Result<(DVector<C64>, bool)> {
    let gram = a.adjoint() * a;
    let rhs = a.adjoint() * b;
    let n = gram.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), false));
    }
    let eig = SymmetricEigen::new((&gram + gram.adjoint()) * C64::new(0.5, 0.0));
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    let mut regularized = false;
    let mut values = eig.eigenvalues.clone();
    if lmax == 0.0 {
        return Ok((DVector::zeros(n), true));
    }
    if lmin <= 0.0 || lmax / lmin > cond_limit {
        regularized = true;
        let load = ridge * lmax;
        values.iter_mut().for_each(|v| *v = v.max(0.0) + load);
        log::debug!("least squares regularized (cond {:.3e})", lmax / lmin.max(f64::MIN_POSITIVE));
    }
    let u = &eig.eigenvectors;
    let mut coeff = u.adjoint() * rhs;
    for (c, v) in coeff.iter_mut().zip(values.iter()) {
        *c /= *v;
    }
    Ok((u * coeff, regularized))
}

/// `sum_i |v_i|^2`.
pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}
