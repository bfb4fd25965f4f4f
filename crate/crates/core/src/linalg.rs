//! Small dense complex linear-algebra helpers over nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Relative tolerance below which a negative eigenvalue is treated as round-off.
const PSD_TOL: f64 = 1e-10;

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// Eigenvalues of the Hermitian part, ascending.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let mut ev: Vec<f64> = hermitian_part(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Principal square root of a Hermitian PSD matrix. Eigenvalues within
/// round-off of zero are clamped; clearly negative ones are rejected.
pub fn hermitian_sqrt(m: &CMat) -> Result<CMat> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimensionMismatch(format!("{}x{} matrix is not square", n, m.ncols())));
    }
    let eig = hermitian_part(m).symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let roots = DVector::from_iterator(
        n,
        eig.eigenvalues.iter().map(|&v| Complex64::new(v.max(0.0).sqrt(), 0.0)),
    );
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.adjoint())
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    frobenius(&(m - m.adjoint())) <= tol * frobenius(m).max(f64::MIN_POSITIVE)
}

pub fn is_psd(m: &CMat, rel_tol: f64) -> bool {
    let ev = hermitian_eigenvalues(m);
    let scale = ev.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    ev.first().map_or(true, |&v| v >= -rel_tol * scale)
}

/// `x^H y`
pub fn dotc(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}
