//! One simulated encounter: truth, synthetic detections and the filter.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adaptation::MtfState;
use crate::association::associate_registered;
use crate::config::ScenarioConfig;
use crate::camera::CameraModel;
use crate::detector::{
    calibrate_noise, detect, eclipse_gate, frame_jitter_covariance, frame_jitter_jacobian, true_pixels, NoiseCalibration,
    PerturbationParams,
};
use crate::dynamics::STATE_DIM;
use crate::error::{Error, Result};
use crate::geometry::MarkerSet;
use crate::linalg::{min_eigenvalue, symmetrize};
use crate::metrics::{RunRecord, StepSample};
use crate::ukf::{measurement_fn, FilterState, MarkerMeasurement, RelativeProcess, Ukf, UpdateOutcome};

/// Filter variants compared in a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MtfQadapt,
    Mtf,
    None,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::MtfQadapt, Method::Mtf, Method::None];

    pub fn from_flags(adapt_r: bool, adapt_q: bool) -> Self {
        match (adapt_r, adapt_q) {
            (true, true) => Self::MtfQadapt,
            (true, false) => Self::Mtf,
            (false, false) => Self::None,
            // Q adaptation without MTF has no row of its own; it is reported
            // under the adaptive name.
            (false, true) => Self::MtfQadapt,
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Self::MtfQadapt => "mtf_qadapt",
            Self::Mtf => "mtf",
            Self::None => "none",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::MtfQadapt => "MTF + Q_adaptive",
            Self::Mtf => "MTF",
            Self::None => "No Adaptation",
        }
    }

    pub fn from_dir_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.dir_name() == s)
    }

    /// Copy of `cfg` with the adaptation flags of this method.
    pub fn configure(self, cfg: &ScenarioConfig) -> ScenarioConfig {
        let mut c = cfg.clone();
        (c.filter.adapt_r, c.filter.adapt_q) = match self {
            Self::MtfQadapt => (true, true),
            Self::Mtf => (true, false),
            Self::None => (false, false),
        };
        c
    }
}

/// SplitMix64 finalizer, used to derive independent per-run seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn run_seed(master: u64, run: usize) -> u64 {
    splitmix64(master.wrapping_add(run as u64))
}

const REGISTRATION_ITERATIONS: usize = 10;

// Stream ids of the per-run generator.
const STREAM_INITIAL: u64 = 0;
const STREAM_DETECTOR: u64 = 1;
const STREAM_CALIBRATION: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Monte Carlo calibration of R on the initial scene.
pub fn calibrate(cfg: &ScenarioConfig) -> Result<NoiseCalibration> {
    let truth = cfg.initial_truth()?;
    let mut rng = stream(cfg.simulation.seed, STREAM_CALIBRATION);
    calibrate_noise(
        &truth,
        &cfg.marker_set()?,
        &cfg.camera_model()?,
        &cfg.detector.params(),
        cfg.calibration.samples,
        &mut rng,
    )
}

/// Calibration named in the config, or a fresh one.
pub fn load_or_calibrate(cfg: &ScenarioConfig) -> Result<NoiseCalibration> {
    match &cfg.calibration.file {
        Some(f) => NoiseCalibration::load(std::path::Path::new(f)),
        None => calibrate(cfg),
    }
}

/// Measurement noise model used by the filter.
///
/// Without frame jitter every marker gets its calibrated block and markers
/// are independent. With it, the frame-wide affine part of the error is
/// propagated to first order for the markers of each frame, which couples
/// them, and the diagonal keeps only the independent part estimated by the
/// calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementNoise {
    global: Matrix3<f64>,
    per_marker: Vec<(usize, Matrix3<f64>)>,
    floor: f64,
    frame: Option<(CameraModel, Matrix3<f64>)>,
}

impl MeasurementNoise {
    /// Blocks from a calibration; `floor` is added to every diagonal.
    pub fn new(cal: &NoiseCalibration, floor: f64, per_marker: bool) -> Self {
        Self {
            global: cal.global_r,
            per_marker: if per_marker { cal.per_marker_r.clone() } else { Vec::new() },
            floor,
            frame: None,
        }
    }

    /// Switch to the frame-jitter model with `independent` as the per-marker
    /// block left once the frame part is modeled.
    pub fn with_frame_jitter(mut self, camera: CameraModel, params: &PerturbationParams, independent: Matrix3<f64>) -> Self {
        self.global = independent;
        self.per_marker.clear();
        self.frame = Some((camera, frame_jitter_covariance(params)));
        self
    }

    pub fn from_config(cal: &NoiseCalibration, cfg: &ScenarioConfig) -> Result<Self> {
        let c = &cfg.calibration;
        let noise = Self::new(cal, c.r_floor, c.per_marker);
        if !c.frame_jitter {
            return Ok(noise);
        }
        let camera = cfg.camera_model()?;
        let params = cfg.detector.params();
        let independent = match cal.independent_r {
            Some(r) => r,
            None => {
                // Older files: take the mean frame part of the calibration
                // scene out of the pooled block.
                let sigma = frame_jitter_covariance(&params);
                let pixels = true_pixels(&cfg.initial_truth()?, &cfg.marker_set()?, &camera)?;
                let mut mean = Matrix3::zeros();
                for d in &pixels {
                    let j = frame_jitter_jacobian(&camera.to_world(d)?, &camera);
                    mean += j * sigma * j.transpose();
                }
                project_psd3(&(cal.global_r - mean / pixels.len().max(1) as f64))
            }
        };
        Ok(noise.with_frame_jitter(camera, &params, independent))
    }

    fn block(&self, id: usize) -> &Matrix3<f64> {
        self.per_marker.iter().find(|(i, _)| *i == id).map(|(_, r)| r).unwrap_or(&self.global)
    }

    /// Stacked covariance for markers `ids` expected at `points` (world frame).
    pub fn stacked(&self, ids: &[usize], points: &[Vector3<f64>]) -> DMatrix<f64> {
        let n = ids.len();
        let mut r = DMatrix::zeros(3 * n, 3 * n);
        let floor = Matrix3::identity() * self.floor;
        for (k, id) in ids.iter().enumerate() {
            r.view_mut((3 * k, 3 * k), (3, 3)).copy_from(&(self.block(*id) + floor));
        }
        if let Some((camera, sigma)) = &self.frame {
            let j: Vec<Matrix3<f64>> = points.iter().map(|p| frame_jitter_jacobian(p, camera)).collect();
            for a in 0..n {
                for b in 0..n {
                    let block = j[a] * sigma * j[b].transpose();
                    let mut v = r.view_mut((3 * a, 3 * b), (3, 3));
                    v += block;
                }
            }
        }
        symmetrize(&mut r);
        r
    }
}

fn project_psd3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = m.symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0));
    eig.eigenvectors * Matrix3::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Gaussian draw around the truth at the configured initial stds.
fn initial_estimate(cfg: &ScenarioConfig, truth: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let stds = cfg.initial_uncertainty.stds();
    let mut x = truth.clone();
    // Always draw, so the detector stream is unaffected by the perturb flag.
    for (i, s) in stds.iter().enumerate() {
        let n: f64 = rng.sample(StandardNormal);
        if cfg.initial_uncertainty.perturb {
            x[i] += s * n;
        }
    }
    x
}

fn predicted_points(z: &DVector<f64>) -> Vec<Vector3<f64>> {
    z.as_slice().chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

fn back_project_all(cfg_cam: &CameraModel, dets: &[crate::camera::PixelDetection]) -> Vec<Vector3<f64>> {
    dets.iter().filter_map(|d| cfg_cam.to_world(d).ok()).collect()
}

/// Simulate one run of the configured method.
pub fn run_single(cfg: &ScenarioConfig, noise: &MeasurementNoise, seed: u64) -> Result<RunRecord> {
    let truth_model = cfg.truth_model();
    let filter_model = cfg.filter_model();
    let markers: MarkerSet = cfg.marker_set()?;
    let camera = cfg.camera_model()?;
    let base_params = cfg.detector.params();
    let center = (camera.intrinsics.cx, camera.intrinsics.cy);
    let window = cfg.eclipse.window();
    let mut ukf = Ukf::relative(cfg.ukf_params())?;
    ukf.q_form = cfg.filter.q_adapt_form;
    let dt = cfg.simulation.dt;
    let all_ids = markers.ids();

    let mut init_rng = stream(seed, STREAM_INITIAL);
    let mut det_rng = stream(seed, STREAM_DETECTOR);

    let mut truth = cfg.initial_truth()?;
    let x0 = initial_estimate(cfg, &truth.relative.to_dvector(), &mut init_rng);
    let p0 = DMatrix::from_diagonal(&DVector::from_iterator(STATE_DIM, cfg.initial_uncertainty.stds().map(|s| s * s)));
    let mut f = FilterState::new(x0, p0, cfg.filter.process_noise(), 0.0)?;
    let mut mtf = MtfState::default();
    let mut record = RunRecord::default();
    record.push(StepSample {
        time: 0.0,
        truth: &truth.relative,
        estimate: &f.x_hat,
        covariance: &f.p,
        outage: false,
        nis: None,
        mtf_triggered: false,
        min_eig: min_eigenvalue(&f.p),
    });

    let adapt_q_now = |outage: bool| cfg.filter.adapt_q && (outage || cfg.filter.adapt_q_measured);

    for k in 1..=cfg.steps() {
        let process = RelativeProcess { model: &filter_model, chaser: truth.chaser, chaser_rate: truth.chaser_rate };
        truth = truth_model.propagate_truth(&truth, dt)?;
        let t = k as f64 * dt;
        truth.time = t;
        let wrap = |e: Error| Error::Run { run: 0, time: t, source: Box::new(e) };

        let eclipsed = window.map(|w| eclipse_gate(t, &w)).unwrap_or(false);
        let measured = if eclipsed {
            Vec::new()
        } else {
            let pixels = true_pixels(&truth, &markers, &camera).map_err(wrap)?;
            let params = base_params.scaled(cfg.detector.scale_at(t));
            let set = detect(t, &pixels, &params, center, &mut det_rng);
            back_project_all(&camera, &set.detections)
        };
        let outage = measured.is_empty();

        ukf.predict(&mut f, &process, dt).map_err(wrap)?;
        if adapt_q_now(outage) {
            let q = ukf.adaptive_q(&f).map_err(wrap)? * cfg.filter.q_adapt_scale;
            f.p += q;
            symmetrize(&mut f.p);
        }
        ukf.rechart(&mut f);

        let mut nis = None;
        let mut min_eig = None;
        let mut triggered = false;
        if !outage {
            let z_all = measurement_fn(&f.x_hat, &all_ids, &markers).map_err(wrap)?;
            let full = MarkerMeasurement { markers: &markers, ids: &all_ids };
            let r_all = noise.stacked(&all_ids, &predicted_points(&z_all));
            let pred = ukf.innovation(&f, &full, &z_all, &r_all).map_err(wrap)?;
            let gate = (cfg.filter.gate * pred.s_base.diagonal().max()).max(cfg.filter.gate_floor);
            let predicted: Vec<(usize, Vector3<f64>)> = all_ids
                .iter()
                .enumerate()
                .map(|(i, &id)| (id, Vector3::new(z_all[3 * i], z_all[3 * i + 1], z_all[3 * i + 2])))
                .collect();
            let mut pairs = associate_registered(&measured, &predicted, gate, REGISTRATION_ITERATIONS).pairs;
            pairs.sort_by_key(|&(_, id)| id);
            if !pairs.is_empty() {
                let ids: Vec<usize> = pairs.iter().map(|p| p.1).collect();
                let z = DVector::from_iterator(3 * ids.len(), pairs.iter().flat_map(|&(i, _)| measured[i].iter().copied()));
                let expected: Vec<Vector3<f64>> = pairs.iter().map(|&(_, id)| predicted[all_ids.iter().position(|&i| i == id).expect("known id")].1).collect();
                let r = noise.stacked(&ids, &expected);
                let model = MarkerMeasurement { markers: &markers, ids: &ids };
                let innov = ukf.innovation(&f, &model, &z, &r).map_err(wrap)?;
                let s = if cfg.filter.adapt_r && t < cfg.filter.mtf_warmup {
                    mtf.remember(&ids, &innov.s_base);
                    innov.s_base.clone()
                } else if cfg.filter.adapt_r {
                    let s = mtf.inflate(&ids, &innov.e, &innov.s_base, &r).map_err(wrap)?;
                    triggered = mtf.triggered;
                    s
                } else {
                    innov.s_base.clone()
                };
                if let UpdateOutcome::Applied { nis: v, min_eig: m } = ukf.apply_update(&mut f, &innov, &s).map_err(wrap)? {
                    nis = Some((v, z.len()));
                    min_eig = Some(m);
                }
            }
        }
        if nis.is_none() {
            mtf.forget();
        }
        let min_eig = min_eig.unwrap_or_else(|| min_eigenvalue(&f.p));
        if !f.x_hat.iter().all(|v| v.is_finite()) {
            return Err(Error::Run { run: 0, time: t, source: Box::new(Error::Propagation { time: t }) });
        }
        record.push(StepSample {
            time: t,
            truth: &truth.relative,
            estimate: &f.x_hat,
            covariance: &f.p,
            outage: nis.is_none(),
            nis,
            mtf_triggered: triggered,
            min_eig,
        });
    }
    Ok(record)
}
