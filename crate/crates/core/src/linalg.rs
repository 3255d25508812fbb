//! Small dense linear-algebra helpers shared by the filter and the metrics.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Jitter schedule tried, in order, when a covariance refuses to factor.
pub const JITTER_SCHEDULE: [f64; 7] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Lower-triangular factor of a positive semi-definite matrix.
///
/// Zero pivots are tolerated (the column is left empty) as long as the
/// remainder of the column is numerically zero, so rank-deficient inputs such
/// as the zero matrix factor cleanly. Returns `None` for indefinite input.
pub fn cholesky_psd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        // Pivot tolerance relative to the column's own scale.
        let tol = 1e-13 * m[(j, j)].abs();
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol || !d.is_finite() {
            return None;
        }
        if d <= tol {
            // Semi-definite direction: every remaining entry must vanish too.
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > 10.0 * (tol * m[(i, i)].abs()).sqrt() {
                    return None;
                }
            }
            continue;
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Some(l)
}

/// Lower-triangular square root with the escalating-jitter retry.
///
/// Each diagonal element is inflated relative to its own magnitude so that
/// badly scaled states (metres next to radians per second) are not swamped.
pub fn sqrt_with_jitter(m: &DMatrix<f64>, allow_jitter: bool) -> Result<DMatrix<f64>> {
    if let Some(l) = cholesky_psd(m) {
        return Ok(l);
    }
    if !allow_jitter {
        return Err(Error::CovarianceDegenerate { jitter: 0.0 });
    }
    let n = m.nrows();
    let mean_diag = (0..n).map(|i| m[(i, i)].abs()).sum::<f64>() / n.max(1) as f64;
    let mut last = 0.0;
    for &eps in &JITTER_SCHEDULE {
        let mut jittered = m.clone();
        for i in 0..n {
            let base = if m[(i, i)] > 0.0 { m[(i, i)] } else { mean_diag };
            jittered[(i, i)] += eps * base.max(f64::MIN_POSITIVE);
        }
        if let Some(l) = cholesky_psd(&jittered) {
            return Ok(l);
        }
        last = eps;
    }
    Err(Error::CovarianceDegenerate { jitter: last })
}

/// Symmetrize and clamp negative eigenvalues to zero.
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `vᵀ M⁻¹ v` via a Cholesky solve; `None` when `M` is not positive definite.
pub fn mahalanobis_sq(v: &DVector<f64>, m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    let w = chol.solve(v);
    let out = v.dot(&w);
    out.is_finite().then_some(out)
}

pub fn outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    a * b.transpose()
}

/// Component-wise finite check for small fixed vectors.
pub fn all_finite3(v: &Vector3<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn is_rotation(m: &Matrix3<f64>, tol: f64) -> bool {
    let err = (m * m.transpose() - Matrix3::identity()).abs().max();
    err <= tol && (m.determinant() - 1.0).abs() <= tol
}
