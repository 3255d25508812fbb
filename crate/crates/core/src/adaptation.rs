//! Online noise adaptation: innovation-based inflation of the innovation
//! covariance (multiple tuning factor, MTF) and process-noise inflation from
//! the cross-covariance of pre- and post-propagation sigma points.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{project_psd, symmetrize};

fn check_square(m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension { expected: n, actual: if m.nrows() != n { m.nrows() } else { m.ncols() } });
    }
    Ok(())
}

/// `diag(max(0, diag(e eᵀ − S_prev − R)))`.
pub fn mtf_compute(e: &DVector<f64>, s_prev: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = e.len();
    check_square(s_prev, n)?;
    check_square(r, n)?;
    let d = DVector::from_fn(n, |i, _| (e[i] * e[i] - s_prev[(i, i)] - r[(i, i)]).max(0.0));
    Ok(DMatrix::from_diagonal(&d))
}

/// `tr(e eᵀ) ≥ tr(S_prev + MTF + R)`.
pub fn mtf_trigger(e: &DVector<f64>, s_prev: &DMatrix<f64>, mtf: &DMatrix<f64>, r: &DMatrix<f64>) -> bool {
    e.norm_squared() >= s_prev.trace() + mtf.trace() + r.trace()
}

pub fn apply_mtf(s_base: &DMatrix<f64>, mtf: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = s_base + mtf;
    symmetrize(&mut s);
    s
}

/// Per-run MTF bookkeeping.
///
/// Marker sets change from frame to frame, so the previous innovation
/// covariance and the previous tuning factor are kept as 3×3 diagonal blocks
/// keyed by marker id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MtfState {
    pub s_prev: BTreeMap<usize, Matrix3<f64>>,
    pub last_mtf: BTreeMap<usize, Matrix3<f64>>,
    pub triggered: bool,
    pub trigger_count: usize,
}

impl MtfState {
    fn stack(blocks: &BTreeMap<usize, Matrix3<f64>>, ids: &[usize], fallback: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(3 * ids.len(), 3 * ids.len());
        for (k, id) in ids.iter().enumerate() {
            let block = match blocks.get(id) {
                Some(b) => DMatrix::from_column_slice(3, 3, b.as_slice()),
                None => fallback.view((3 * k, 3 * k), (3, 3)).into_owned(),
            };
            out.view_mut((3 * k, 3 * k), (3, 3)).copy_from(&block);
        }
        out
    }

    /// Drop the per-marker memory, e.g. after a frame without measurements.
    pub fn forget(&mut self) {
        self.s_prev.clear();
        self.last_mtf.clear();
        self.triggered = false;
    }

    /// Store an uninflated `s` as the previous innovation covariance.
    pub fn remember(&mut self, ids: &[usize], s: &DMatrix<f64>) {
        self.triggered = false;
        for (k, &id) in ids.iter().enumerate() {
            self.s_prev.insert(id, Matrix3::from_fn(|i, j| s[(3 * k + i, 3 * k + j)]));
            self.last_mtf.insert(id, Matrix3::zeros());
        }
    }

    /// Decide on and apply the inflation for one update.
    ///
    /// The trigger compares the innovation energy against the previous
    /// innovation covariance, the measurement noise and the previous tuning
    /// factor. Markers seen for the first time use the current base
    /// covariance in place of a previous one.
    pub fn inflate(&mut self, ids: &[usize], e: &DVector<f64>, s_base: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = 3 * ids.len();
        if e.len() != n {
            return Err(Error::Dimension { expected: n, actual: e.len() });
        }
        check_square(s_base, n)?;
        let s_prev = Self::stack(&self.s_prev, ids, s_base);
        let previous_mtf = Self::stack(&self.last_mtf, ids, &DMatrix::zeros(n, n));
        let mtf = mtf_compute(e, &s_prev, r)?;
        self.triggered = mtf_trigger(e, &s_prev, &previous_mtf, r);
        let applied = if self.triggered { mtf } else { DMatrix::zeros(n, n) };
        if self.triggered {
            self.trigger_count += 1;
        }
        let s = apply_mtf(s_base, &applied);
        for (k, &id) in ids.iter().enumerate() {
            let block = |m: &DMatrix<f64>| Matrix3::from_fn(|i, j| m[(3 * k + i, 3 * k + j)]);
            self.s_prev.insert(id, block(&s));
            self.last_mtf.insert(id, block(&applied));
        }
        Ok(s)
    }
}

/// `D = Σ wc (χ_pre − x̂_prev)(χ_post − x̂_pred)ᵀ`.
pub fn cross_cov_d(
    sigma_pre: &[DVector<f64>],
    sigma_post: &[DVector<f64>],
    wc: &[f64],
    x_prev: &DVector<f64>,
    x_pred: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if sigma_pre.len() != wc.len() || sigma_post.len() != wc.len() {
        return Err(Error::Dimension { expected: wc.len(), actual: sigma_pre.len().min(sigma_post.len()) });
    }
    let n = x_prev.len();
    let mut d = DMatrix::zeros(n, x_pred.len());
    for ((a, b), w) in sigma_pre.iter().zip(sigma_post).zip(wc) {
        let da = a - x_prev;
        let db = b - x_pred;
        d.ger(*w, &da, &db, 1.0);
    }
    Ok(d)
}

/// `D (P_pred − P_prior) Dᵀ`, symmetrized and projected onto the PSD cone.
pub fn q_adapt(d: &DMatrix<f64>, p_pred: &DMatrix<f64>, p_prior: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = d.nrows();
    check_square(p_pred, n)?;
    check_square(p_prior, n)?;
    let mut growth = p_pred - p_prior;
    symmetrize(&mut growth);
    let q = d * growth * d.transpose();
    Ok(project_psd(&q))
}

/// How the adaptive process noise is formed from `D` and the covariance growth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QAdaptForm {
    /// `D (P_pred − P_prior) Dᵀ` exactly as written.
    #[default]
    Printed,
    /// The same sandwich evaluated in correlation units of `P_pred`.
    Normalized,
}

/// `D (P_pred − P_prior) Dᵀ` evaluated in correlation units of `P_pred`:
/// with `Σ = √diag(P_pred)`, `D̂ = Σ⁻¹ D Σ⁻¹`, `ΔP̂ = Σ⁻¹ ΔP Σ⁻¹` and
/// `C = Σ⁻¹ P_pred Σ⁻¹`, the result is `Σ (D̂ ΔP̂ D̂ᵀ / λ_max(C)²) Σ`.
///
/// The printed sandwich has units of covariance cubed and runs away once
/// variances exceed one. Here `‖D̂‖ ≲ λ_max(C)`, so the added noise stays of
/// the order of one step's covariance growth. Only standard deviations are
/// divided out; `P_pred` is never inverted. States with zero variance get no
/// noise.
pub fn q_adapt_normalized(d: &DMatrix<f64>, p_pred: &DMatrix<f64>, p_prior: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = d.nrows();
    check_square(d, n)?;
    check_square(p_pred, n)?;
    check_square(p_prior, n)?;
    let sigma: Vec<f64> = (0..n).map(|i| p_pred[(i, i)].max(0.0).sqrt()).collect();
    let inv: Vec<f64> = sigma.iter().map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect();
    let scale = |m: &DMatrix<f64>| DMatrix::from_fn(n, n, |i, j| m[(i, j)] * inv[i] * inv[j]);
    let mut growth = p_pred - p_prior;
    symmetrize(&mut growth);
    let dh = scale(d);
    let mut corr = scale(p_pred);
    symmetrize(&mut corr);
    let lambda = corr.symmetric_eigenvalues().max().max(1.0);
    let core = &dh * scale(&growth) * dh.transpose() / (lambda * lambda);
    Ok(project_psd(&DMatrix::from_fn(n, n, |i, j| core[(i, j)] * sigma[i] * sigma[j])))
}

pub fn q_adapt_with(form: QAdaptForm, d: &DMatrix<f64>, p_pred: &DMatrix<f64>, p_prior: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match form {
        QAdaptForm::Printed => q_adapt(d, p_pred, p_prior),
        QAdaptForm::Normalized => q_adapt_normalized(d, p_pred, p_prior),
    }
}
