//! Monte Carlo evaluation: RMSE, scaled NEES, 3σ envelopes and coverage.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dynamics::{idx, mrp_closest_to, RelativeState, STATE_DIM};
use crate::error::{Error, Result};
use crate::linalg::mahalanobis_sq;

pub type StateRow = [f64; STATE_DIM];

/// Per-step history of one filter run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub times: Vec<f64>,
    /// Truth, with the MRP expressed on the same chart as the estimate.
    pub truth: Vec<StateRow>,
    pub estimate: Vec<StateRow>,
    pub cov_diag: Vec<StateRow>,
    /// `errᵀ P⁻¹ err` with the full covariance; `None` when `P` is singular.
    pub nees: Vec<Option<f64>>,
    pub outage: Vec<bool>,
    /// Normalized innovation squared and its degrees of freedom.
    pub nis: Vec<Option<(f64, usize)>>,
    pub mtf_triggered: Vec<bool>,
    /// Smallest eigenvalue of `P` before re-projection.
    pub min_eig: Vec<f64>,
}

/// Per-step data handed to [`RunRecord::push`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepSample<'a> {
    pub time: f64,
    pub truth: &'a RelativeState,
    pub estimate: &'a DVector<f64>,
    pub covariance: &'a DMatrix<f64>,
    pub outage: bool,
    pub nis: Option<(f64, usize)>,
    pub mtf_triggered: bool,
    pub min_eig: f64,
}

impl RunRecord {
    pub fn push(&mut self, s: StepSample<'_>) {
        let mut truth = *s.truth;
        let est_mrp = nalgebra::Vector3::new(s.estimate[idx::MRP.start], s.estimate[idx::MRP.start + 1], s.estimate[idx::MRP.start + 2]);
        truth.mrp = mrp_closest_to(&truth.mrp, &est_mrp);
        let t = truth.to_array();
        let mut e = [0.0; STATE_DIM];
        e.copy_from_slice(s.estimate.as_slice());
        let err = DVector::from_fn(STATE_DIM, |i, _| e[i] - t[i]);
        let mut d = [0.0; STATE_DIM];
        for (i, slot) in d.iter_mut().enumerate() {
            *slot = s.covariance[(i, i)];
        }
        self.times.push(s.time);
        self.truth.push(t);
        self.estimate.push(e);
        self.cov_diag.push(d);
        self.nees.push(mahalanobis_sq(&err, s.covariance));
        self.outage.push(s.outage);
        self.nis.push(s.nis);
        self.mtf_triggered.push(s.mtf_triggered);
        self.min_eig.push(s.min_eig);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn error(&self, k: usize) -> StateRow {
        let mut out = [0.0; STATE_DIM];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.estimate[k][i] - self.truth[k][i];
        }
        out
    }
}

fn check_records(records: &[RunRecord]) -> Result<usize> {
    let first = records.first().ok_or_else(|| Error::Parameter("no runs to evaluate".into()))?;
    let n = first.len();
    if let Some(bad) = records.iter().find(|r| r.len() != n) {
        return Err(Error::Dimension { expected: n, actual: bad.len() });
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseResult {
    /// RMSE across runs at every step.
    pub per_step: Vec<StateRow>,
    /// RMSE over runs and over steps with `t ≥ skip`.
    pub aggregate: StateRow,
}

/// Root-mean-square error across runs, per step and aggregated over time.
pub fn rmse(records: &[RunRecord], skip: f64) -> Result<RmseResult> {
    let n = check_records(records)?;
    let m = records.len() as f64;
    let mut per_step = Vec::with_capacity(n);
    let mut sum = [0.0; STATE_DIM];
    let mut count = 0usize;
    for k in 0..n {
        let mut sq = [0.0; STATE_DIM];
        for r in records {
            let e = r.error(k);
            for i in 0..STATE_DIM {
                sq[i] += e[i] * e[i];
            }
        }
        if records[0].times[k] >= skip {
            for i in 0..STATE_DIM {
                sum[i] += sq[i];
            }
            count += records.len();
        }
        per_step.push(sq.map(|v| (v / m).sqrt()));
    }
    let aggregate = if count == 0 { [f64::NAN; STATE_DIM] } else { sum.map(|v| (v / count as f64).sqrt()) };
    Ok(RmseResult { per_step, aggregate })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SneesResult {
    pub per_step: Vec<Option<f64>>,
    /// Mean over steps with `t ≥ skip`.
    pub mean: f64,
    /// Number of (run, step) pairs dropped for a singular covariance.
    pub skipped: usize,
}

/// `SNEES(k) = (1/(N_s N_m)) Σ_j errᵀ P⁻¹ err`.
pub fn snees(records: &[RunRecord], skip: f64) -> Result<SneesResult> {
    let n = check_records(records)?;
    let ns = STATE_DIM as f64;
    let mut per_step = Vec::with_capacity(n);
    let mut skipped = 0;
    let (mut acc, mut steps) = (0.0, 0usize);
    for k in 0..n {
        let vals: Vec<f64> = records.iter().filter_map(|r| r.nees[k]).collect();
        skipped += records.len() - vals.len();
        let v = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / (ns * vals.len() as f64));
        if let (Some(v), true) = (v, records[0].times[k] >= skip) {
            acc += v;
            steps += 1;
        }
        per_step.push(v);
    }
    Ok(SneesResult { per_step, mean: if steps == 0 { f64::NAN } else { acc / steps as f64 }, skipped })
}

/// `±n_sigma √P_ii` averaged across runs at every step.
pub fn sigma_bounds(records: &[RunRecord], n_sigma: f64) -> Result<Vec<StateRow>> {
    let n = check_records(records)?;
    let m = records.len() as f64;
    Ok((0..n)
        .map(|k| {
            let mut b = [0.0; STATE_DIM];
            for r in records {
                for i in 0..STATE_DIM {
                    b[i] += n_sigma * r.cov_diag[k][i].max(0.0).sqrt();
                }
            }
            b.map(|v| v / m)
        })
        .collect())
}

/// Fraction of `|err_i|` over runs and the given states that lie inside the
/// run-averaged envelope, at every step.
pub fn envelope_coverage(records: &[RunRecord], states: std::ops::Range<usize>, n_sigma: f64) -> Result<Vec<f64>> {
    let bounds = sigma_bounds(records, n_sigma)?;
    let total = (records.len() * states.len()) as f64;
    Ok(bounds
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let inside = records
                .iter()
                .flat_map(|r| {
                    let e = r.error(k);
                    states.clone().map(move |i| e[i].abs() <= b[i])
                })
                .filter(|v| *v)
                .count();
            inside as f64 / total
        })
        .collect())
}

/// Fraction of measured steps whose NIS exceeds the χ² quantile `p`.
pub fn nis_exceedance(records: &[RunRecord], p: f64) -> Result<f64> {
    check_records(records)?;
    let mut cache: Vec<Option<f64>> = Vec::new();
    let (mut over, mut total) = (0usize, 0usize);
    for r in records {
        for &(nis, dof) in r.nis.iter().flatten() {
            if dof == 0 {
                continue;
            }
            if cache.len() <= dof {
                cache.resize(dof + 1, None);
            }
            let q = match cache[dof] {
                Some(q) => q,
                None => {
                    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Parameter(e.to_string()))?;
                    let q = dist.inverse_cdf(p);
                    cache[dof] = Some(q);
                    q
                }
            };
            total += 1;
            if nis > q {
                over += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { over as f64 / total as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSummary {
    pub times: Vec<f64>,
    pub outage: Vec<bool>,
    pub rmse: RmseResult,
    pub snees: SneesResult,
    pub bounds: Vec<StateRow>,
    /// Per-step 3σ coverage of the position errors.
    pub position_coverage: Vec<f64>,
    pub nis_exceedance: f64,
    pub runs: usize,
    pub states: usize,
}

pub fn summarize(records: &[RunRecord], skip: f64) -> Result<CampaignSummary> {
    check_records(records)?;
    Ok(CampaignSummary {
        times: records[0].times.clone(),
        outage: records[0].outage.clone(),
        rmse: rmse(records, skip)?,
        snees: snees(records, skip)?,
        bounds: sigma_bounds(records, 3.0)?,
        position_coverage: envelope_coverage(records, idx::POS, 3.0)?,
        nis_exceedance: nis_exceedance(records, 0.99)?,
        runs: records.len(),
        states: STATE_DIM,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn record(errors: &[f64], var: f64) -> RunRecord {
        let mut r = RunRecord::default();
        let p = DMatrix::identity(STATE_DIM, STATE_DIM) * var;
        for (k, &e) in errors.iter().enumerate() {
            let truth = RelativeState::zeros();
            let est = DVector::from_element(STATE_DIM, e);
            r.push(StepSample {
                time: k as f64,
                truth: &truth,
                estimate: &est,
                covariance: &p,
                outage: false,
                nis: None,
                mtf_triggered: false,
                min_eig: var,
            });
        }
        r
    }

    #[test]
    fn rmse_examples() {
        let zero = rmse(&[record(&[0.0; 5], 1.0)], 0.0).unwrap();
        assert!(zero.aggregate.iter().all(|&v| v == 0.0));
        let c = rmse(&[record(&[0.3; 5], 1.0)], 0.0).unwrap();
        assert!(c.aggregate.iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let pm = rmse(&[record(&[0.3; 5], 1.0), record(&[-0.3; 5], 1.0)], 0.0).unwrap();
        assert!(pm.per_step.iter().flatten().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn rmse_skips_the_transient() {
        let r = rmse(&[record(&[10.0, 10.0, 1.0, 1.0], 1.0)], 2.0).unwrap();
        assert!((r.aggregate[0] - 1.0).abs() < 1e-15);
        let raw = rmse(&[record(&[10.0, 10.0, 1.0, 1.0], 1.0)], 0.0).unwrap();
        assert!(raw.aggregate[0] > 1.0);
    }

    #[test]
    fn rmse_invariances() {
        let a = record(&[0.1, 0.4, -0.2], 1.0);
        let b = record(&[0.5, -0.3, 0.0], 1.0);
        let ab = rmse(&[a.clone(), b.clone()], 0.0).unwrap();
        let ba = rmse(&[b.clone(), a.clone()], 0.0).unwrap();
        assert_eq!(ab, ba);
        let a2 = record(&[0.2, 0.8, -0.4], 1.0);
        let b2 = record(&[1.0, -0.6, 0.0], 1.0);
        let scaled = rmse(&[a2, b2], 0.0).unwrap();
        for i in 0..STATE_DIM {
            assert!((scaled.aggregate[i] - 2.0 * ab.aggregate[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_campaign_is_rejected() {
        assert!(rmse(&[], 0.0).is_err());
        assert!(snees(&[], 0.0).is_err());
    }

    #[test]
    fn snees_examples() {
        // err² = P in every state gives exactly one.
        let s = snees(&[record(&[0.5, 0.5], 0.25)], 0.0).unwrap();
        assert!(s.per_step.iter().all(|v| (v.unwrap() - 1.0).abs() < 1e-12));
        let s = snees(&[record(&[0.0], 1.0)], 0.0).unwrap();
        assert_eq!(s.per_step[0], Some(0.0));
        let s = snees(&[record(&[0.1], 0.0)], 0.0).unwrap();
        assert_eq!((s.per_step[0], s.skipped), (None, 1));
    }

    #[test]
    fn consistent_linear_gaussian_snees_is_near_one() {
        // Scalar-per-state random walk observed directly, filtered by an
        // exact Kalman filter; 100 runs of 200 steps.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (q, r) = (0.01f64, 0.25f64);
        let mut recs = Vec::new();
        for _ in 0..100 {
            let mut rec = RunRecord::default();
            let mut x = DVector::<f64>::zeros(STATE_DIM);
            let mut xh = DVector::<f64>::zeros(STATE_DIM);
            let mut p = 1.0;
            for i in 0..STATE_DIM {
                x[i] = rng.sample::<f64, _>(StandardNormal);
            }
            for k in 0..200 {
                for i in 0..STATE_DIM {
                    x[i] += q.sqrt() * rng.sample::<f64, _>(StandardNormal);
                }
                p += q;
                let gain = p / (p + r);
                for i in 0..STATE_DIM {
                    let z = x[i] + r.sqrt() * rng.sample::<f64, _>(StandardNormal);
                    xh[i] += gain * (z - xh[i]);
                }
                p *= 1.0 - gain;
                let truth = RelativeState::from_slice(x.as_slice());
                let cov = DMatrix::identity(STATE_DIM, STATE_DIM) * p;
                rec.push(StepSample {
                    time: k as f64,
                    truth: &truth,
                    estimate: &xh,
                    covariance: &cov,
                    outage: false,
                    nis: None,
                    mtf_triggered: false,
                    min_eig: p,
                });
            }
            recs.push(rec);
        }
        let s = snees(&recs, 0.0).unwrap();
        assert!((0.9..=1.1).contains(&s.mean), "mean SNEES {}", s.mean);
        let cov = envelope_coverage(&recs, 0..STATE_DIM, 3.0).unwrap();
        let mean_cov = cov.iter().sum::<f64>() / cov.len() as f64;
        assert!((mean_cov - 0.9973).abs() < 0.005, "coverage {mean_cov}");
    }

    #[test]
    fn sigma_bound_examples() {
        let b = sigma_bounds(&[record(&[0.0], 1.0)], 3.0).unwrap();
        assert_eq!(b[0][0], 3.0);
        let b2 = sigma_bounds(&[record(&[0.0], 2.0)], 3.0).unwrap();
        assert!((b2[0][0] - 3.0 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn nis_quantile_exceedance() {
        let mut r = record(&[0.0, 0.0, 0.0, 0.0], 1.0);
        // χ²₃ 99% quantile is about 11.345.
        r.nis = vec![Some((11.0, 3)), Some((11.7, 3)), None, Some((0.5, 3))];
        let f = nis_exceedance(&[r], 0.99).unwrap();
        assert!((f - 1.0 / 3.0).abs() < 1e-12);
    }
}
