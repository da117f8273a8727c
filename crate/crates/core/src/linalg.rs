//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const C0: Complex64 = Complex64::new(0.0, 0.0);
pub const C1: Complex64 = Complex64::new(1.0, 0.0);
pub const CI: Complex64 = Complex64::new(0.0, 1.0);

/// `max |H - H†|` entrywise.
pub fn hermiticity_deviation(h: &DMatrix<Complex64>) -> f64 {
    let n = h.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn ensure_hermitian(h: &DMatrix<Complex64>, tol: f64) -> Result<()> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch { expected: h.nrows(), got: h.ncols() });
    }
    let scale = h.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let deviation = hermiticity_deviation(h);
    if deviation > tol * scale {
        return Err(Error::NotHermitian { deviation });
    }
    Ok(())
}

/// Hermitian eigendecomposition with eigenvalues in ascending order.
pub fn eigh(h: &DMatrix<Complex64>) -> Result<(DVector<f64>, DMatrix<Complex64>)> {
    let eig = SymmetricEigen::try_new(h.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen(format!("no convergence for {}x{} matrix", h.nrows(), h.ncols())))?;
    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// `exp(i θ H)` for Hermitian `H` via eigendecomposition.
pub fn hermitian_exp(h: &DMatrix<Complex64>, theta: f64) -> Result<DMatrix<Complex64>> {
    let (values, vectors) = eigh(h)?;
    Ok(spectral_exp(&values, &vectors, theta))
}

/// `V diag(e^{iθλ}) V†` from a precomputed decomposition.
pub fn spectral_exp(values: &DVector<f64>, vectors: &DMatrix<Complex64>, theta: f64) -> DMatrix<Complex64> {
    let mut scaled = vectors.clone();
    for (k, &lambda) in values.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, theta * lambda);
        for z in scaled.column_mut(k).iter_mut() {
            *z *= phase;
        }
    }
    scaled * vectors.adjoint()
}

/// `<u|v>` with the bra conjugated.
pub fn inner(u: &DVector<Complex64>, v: &DVector<Complex64>) -> Complex64 {
    u.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum()
}

pub fn max_abs_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
