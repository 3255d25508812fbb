//! Unscented Kalman filter over a generic state, plus the process and
//! measurement models of the relative-navigation problem.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::adaptation::{cross_cov_d, q_adapt_with, QAdaptForm};
use crate::dynamics::{idx, mrp_shadow_jacobian, ChaserOrbitState, DynamicsModel, RelativeState};
use crate::error::{Error, Result};
use crate::geometry::MarkerSet;
use crate::linalg::{min_eigenvalue, project_psd, sqrt_with_jitter, symmetrize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// State dimension L.
    pub dim: usize,
}

impl UkfParams {
    pub fn new(alpha: f64, beta: f64, kappa: f64, dim: usize) -> Self {
        Self { alpha, beta, kappa, dim }
    }

    /// `λ = α²(L + κ) − L`.
    pub fn lambda(&self) -> f64 {
        let l = self.dim as f64;
        self.alpha * self.alpha * (l + self.kappa) - l
    }
}

impl Default for UkfParams {
    fn default() -> Self {
        Self { alpha: 1e-3, beta: 2.0, kappa: 0.0, dim: crate::dynamics::STATE_DIM }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaWeights {
    pub wm: Vec<f64>,
    pub wc: Vec<f64>,
    /// `L + λ`, the scale applied to the covariance before factoring.
    pub spread: f64,
}

pub fn sigma_weights(p: &UkfParams) -> Result<SigmaWeights> {
    if !(p.alpha > 0.0) || !p.beta.is_finite() || !p.kappa.is_finite() || p.dim == 0 {
        return Err(Error::Parameter(format!("invalid unscented parameters {p:?}")));
    }
    let l = p.dim as f64;
    let lambda = p.lambda();
    let spread = l + lambda;
    if !(spread > 0.0) {
        return Err(Error::Parameter(format!("L + λ must be positive, got {spread}")));
    }
    let wi = 1.0 / (2.0 * spread);
    let w0 = lambda / spread;
    let mut wm = vec![wi; 2 * p.dim + 1];
    let mut wc = wm.clone();
    wm[0] = w0;
    wc[0] = w0 + 1.0 - p.alpha * p.alpha + p.beta;
    Ok(SigmaWeights { wm, wc, spread })
}

/// `χ⁰ = x̂`, `χ^i = x̂ + col_i`, `χ^{L+i} = x̂ − col_i`, with `col_i` the
/// columns of the lower factor of `(L + λ)P`.
pub fn generate_sigma_points(
    x_hat: &DVector<f64>,
    p: &DMatrix<f64>,
    weights: &SigmaWeights,
    allow_jitter: bool,
) -> Result<Vec<DVector<f64>>> {
    let n = x_hat.len();
    if p.nrows() != n || p.ncols() != n {
        return Err(Error::Dimension { expected: n, actual: p.nrows() });
    }
    if weights.wm.len() != 2 * n + 1 {
        return Err(Error::Dimension { expected: 2 * n + 1, actual: weights.wm.len() });
    }
    let l = sqrt_with_jitter(&(p * weights.spread), allow_jitter)?;
    let mut pts = Vec::with_capacity(2 * n + 1);
    pts.push(x_hat.clone());
    for i in 0..n {
        pts.push(x_hat + l.column(i));
    }
    for i in 0..n {
        pts.push(x_hat - l.column(i));
    }
    Ok(pts)
}

/// Weighted mean accumulated as deviations from the central point, which
/// keeps the large negative central weight of small-α sets harmless.
pub fn weighted_mean(points: &[DVector<f64>], wm: &[f64]) -> DVector<f64> {
    let c = &points[0];
    let mut acc = DVector::zeros(c.len());
    for (p, w) in points.iter().zip(wm).skip(1) {
        acc.axpy(*w, &(p - c), 1.0);
    }
    c + acc
}

pub fn weighted_cross_cov(
    a: &[DVector<f64>],
    mean_a: &DVector<f64>,
    b: &[DVector<f64>],
    mean_b: &DVector<f64>,
    wc: &[f64],
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(mean_a.len(), mean_b.len());
    for ((x, y), w) in a.iter().zip(b).zip(wc) {
        out.ger(*w, &(x - mean_a), &(y - mean_b), 1.0);
    }
    out
}

pub trait ProcessModel {
    fn propagate(&self, x: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>>;
}

impl<F> ProcessModel for F
where
    F: Fn(&DVector<f64>, f64, f64) -> Result<DVector<f64>>,
{
    fn propagate(&self, x: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>> {
        self(x, t, dt)
    }
}

pub trait MeasurementModel {
    fn measure(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

impl<F> MeasurementModel for F
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    fn measure(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self(x)
    }
}

/// Relative dynamics driven by a known chaser orbit and body rate.
pub struct RelativeProcess<'a> {
    pub model: &'a DynamicsModel,
    pub chaser: ChaserOrbitState,
    pub chaser_rate: Vector3<f64>,
}

impl ProcessModel for RelativeProcess<'_> {
    fn propagate(&self, x: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>> {
        let rel = RelativeState::from_slice(x.as_slice());
        let (_, _, next) = self.model.step(&self.chaser, &self.chaser_rate, &rel, t, dt)?;
        Ok(next.to_dvector())
    }
}

/// Stacked marker positions `Γ(p)ᵀ v_i + r` for the listed marker ids.
pub fn measurement_fn(state: &DVector<f64>, marker_ids: &[usize], m: &MarkerSet) -> Result<DVector<f64>> {
    if state.len() != crate::dynamics::STATE_DIM {
        return Err(Error::Dimension { expected: crate::dynamics::STATE_DIM, actual: state.len() });
    }
    let rel = RelativeState::from_slice(state.as_slice());
    let gt = rel.rotation().transpose();
    let mut z = DVector::zeros(3 * marker_ids.len());
    for (k, &id) in marker_ids.iter().enumerate() {
        let v = m.get(id)?.position;
        z.fixed_rows_mut::<3>(3 * k).copy_from(&(gt * v + rel.position));
    }
    Ok(z)
}

pub struct MarkerMeasurement<'a> {
    pub markers: &'a MarkerSet,
    pub ids: &'a [usize],
}

impl MeasurementModel for MarkerMeasurement<'_> {
    fn measure(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        measurement_fn(x, self.ids, self.markers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Sigma points of the previous posterior and their propagated images.
    pub sigma_pre: Vec<DVector<f64>>,
    pub sigma_post: Vec<DVector<f64>>,
    /// Posterior mean and covariance before the latest prediction.
    pub x_prev: DVector<f64>,
    pub p_prior: DMatrix<f64>,
    /// Predicted mean and covariance (with Q) of the latest prediction.
    pub x_pred: DVector<f64>,
    pub p_pred: DMatrix<f64>,
    pub time: f64,
}

impl FilterState {
    pub fn new(x_hat: DVector<f64>, p: DMatrix<f64>, q: DMatrix<f64>, time: f64) -> Result<Self> {
        let n = x_hat.len();
        for m in [&p, &q] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension { expected: n, actual: m.nrows() });
            }
            if (m - m.transpose()).abs().max() > 1e-12 * (1.0 + m.abs().max()) {
                return Err(Error::Parameter("covariance matrices must be symmetric".into()));
            }
        }
        Ok(Self {
            x_prev: x_hat.clone(),
            x_pred: x_hat.clone(),
            p_prior: p.clone(),
            p_pred: p.clone(),
            x_hat,
            p,
            q,
            sigma_pre: Vec::new(),
            sigma_post: Vec::new(),
            time,
        })
    }
}

/// Sigma-point statistics of one measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct Innovation {
    pub z_hat: DVector<f64>,
    pub e: DVector<f64>,
    /// `Σ wc (γ − ẑ)(γ − ẑ)ᵀ + R`.
    pub s_base: DMatrix<f64>,
    /// State/measurement cross-covariance `T`.
    pub t: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateOutcome {
    Applied {
        /// Normalized innovation squared `eᵀS⁻¹e`.
        nis: f64,
        /// Smallest eigenvalue of `P` before any PSD re-projection.
        min_eig: f64,
    },
    /// `S` could not be factored; the frame was treated as an outage.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ukf {
    pub params: UkfParams,
    pub weights: SigmaWeights,
    pub allow_jitter: bool,
    /// Start index of a 3-vector MRP block to keep on the short-rotation chart.
    pub mrp_block: Option<usize>,
    pub q_form: QAdaptForm,
}

impl Ukf {
    pub fn new(params: UkfParams) -> Result<Self> {
        Ok(Self { weights: sigma_weights(&params)?, params, allow_jitter: true, mrp_block: None, q_form: QAdaptForm::Printed })
    }

    /// Filter for the twelve relative states, re-charting the MRP estimate.
    pub fn relative(params: UkfParams) -> Result<Self> {
        if params.dim != crate::dynamics::STATE_DIM {
            return Err(Error::Parameter(format!("relative filter needs L = 12, got {}", params.dim)));
        }
        Ok(Self { mrp_block: Some(idx::MRP.start), ..Self::new(params)? })
    }

    pub fn sigma_points(&self, x: &DVector<f64>, p: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
        generate_sigma_points(x, p, &self.weights, self.allow_jitter)
    }

    /// Time update. Caches the sigma points needed by the Q adaptation.
    pub fn predict(&self, f: &mut FilterState, model: &dyn ProcessModel, dt: f64) -> Result<()> {
        let pre = self.sigma_points(&f.x_hat, &f.p)?;
        let post = pre
            .iter()
            .map(|x| model.propagate(x, f.time, dt))
            .collect::<Result<Vec<_>>>()?;
        let x_pred = weighted_mean(&post, &self.weights.wm);
        let mut p_pred = weighted_cross_cov(&post, &x_pred, &post, &x_pred, &self.weights.wc) + &f.q;
        symmetrize(&mut p_pred);

        f.x_prev = std::mem::replace(&mut f.x_hat, x_pred.clone());
        f.p_prior = std::mem::replace(&mut f.p, p_pred.clone());
        f.x_pred = x_pred;
        f.p_pred = p_pred;
        f.sigma_pre = pre;
        f.sigma_post = post;
        f.time += dt;
        Ok(())
    }

    /// Adaptive process noise from the latest prediction's sigma points.
    pub fn adaptive_q(&self, f: &FilterState) -> Result<DMatrix<f64>> {
        let d = cross_cov_d(&f.sigma_pre, &f.sigma_post, &self.weights.wc, &f.x_prev, &f.x_pred)?;
        q_adapt_with(self.q_form, &d, &f.p_pred, &f.p_prior)
    }

    /// Sigma-point measurement statistics about the current prediction.
    pub fn innovation(
        &self,
        f: &FilterState,
        model: &dyn MeasurementModel,
        z: &DVector<f64>,
        r: &DMatrix<f64>,
    ) -> Result<Innovation> {
        let pts = self.sigma_points(&f.x_hat, &f.p)?;
        let gammas = pts.iter().map(|x| model.measure(x)).collect::<Result<Vec<_>>>()?;
        let m = gammas[0].len();
        if z.len() != m {
            return Err(Error::Dimension { expected: m, actual: z.len() });
        }
        if r.nrows() != m || r.ncols() != m {
            return Err(Error::Dimension { expected: m, actual: r.nrows() });
        }
        let z_hat = weighted_mean(&gammas, &self.weights.wm);
        let mut s_base = weighted_cross_cov(&gammas, &z_hat, &gammas, &z_hat, &self.weights.wc) + r;
        symmetrize(&mut s_base);
        let x_mean = weighted_mean(&pts, &self.weights.wm);
        let t = weighted_cross_cov(&pts, &x_mean, &gammas, &z_hat, &self.weights.wc);
        Ok(Innovation { e: z - &z_hat, z_hat, s_base, t })
    }

    /// Measurement update with a (possibly inflated) innovation covariance.
    pub fn apply_update(&self, f: &mut FilterState, innov: &Innovation, s: &DMatrix<f64>) -> Result<UpdateOutcome> {
        let Some(chol) = s.clone().cholesky() else {
            self.rechart(f);
            return Ok(UpdateOutcome::Skipped);
        };
        // K = T S⁻¹, solved as S Kᵀ = Tᵀ.
        let k = chol.solve(&innov.t.transpose()).transpose();
        let nis = innov.e.dot(&chol.solve(&innov.e));
        f.x_hat += &k * &innov.e;
        let mut p = &f.p - &k * s * k.transpose();
        symmetrize(&mut p);
        let min_eig = min_eigenvalue(&p);
        if min_eig < 0.0 {
            p = project_psd(&p);
        }
        f.p = p;
        self.rechart(f);
        Ok(UpdateOutcome::Applied { nis, min_eig })
    }

    /// Plain update without any inflation.
    pub fn update(
        &self,
        f: &mut FilterState,
        model: &dyn MeasurementModel,
        z: &DVector<f64>,
        r: &DMatrix<f64>,
    ) -> Result<UpdateOutcome> {
        let innov = self.innovation(f, model, z, r)?;
        let s = innov.s_base.clone();
        self.apply_update(f, &innov, &s)
    }

    /// Prediction without a measurement: `P = P_pred + Q_adaptive` when
    /// adaptation is enabled. Returns the applied inflation.
    pub fn outage_step(
        &self,
        f: &mut FilterState,
        model: &dyn ProcessModel,
        dt: f64,
        adapt_q: bool,
    ) -> Result<Option<DMatrix<f64>>> {
        self.predict(f, model, dt)?;
        let q_ad = if adapt_q {
            let q = self.adaptive_q(f)?;
            f.p += &q;
            symmetrize(&mut f.p);
            Some(q)
        } else {
            None
        };
        self.rechart(f);
        Ok(q_ad)
    }

    /// Move the MRP part of the estimate to the shadow set when it leaves the
    /// unit ball, mapping the covariance through the switch Jacobian.
    pub fn rechart(&self, f: &mut FilterState) {
        let Some(s) = self.mrp_block else { return };
        let p = Vector3::new(f.x_hat[s], f.x_hat[s + 1], f.x_hat[s + 2]);
        if p.norm_squared() <= 1.0 {
            return;
        }
        let j = mrp_shadow_jacobian(&p);
        let shadow = -p / p.norm_squared();
        f.x_hat.fixed_rows_mut::<3>(s).copy_from(&shadow);
        let n = f.x_hat.len();
        let mut t = DMatrix::identity(n, n);
        t.view_mut((s, s), (3, 3)).copy_from(&j);
        let mut cov = &t * &f.p * t.transpose();
        symmetrize(&mut cov);
        f.p = cov;
    }
}
