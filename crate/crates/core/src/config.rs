//! Scenario configuration.
//!
//! The on-disk format is TOML: flat `key = value` pairs grouped under section
//! headers. Every field has a default, so a file only needs to list the values
//! it changes. Physical properties that are not known for the real target
//! (inertia, box size, orbit radius) default to ENVISAT-class public values.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::adaptation::QAdaptForm;
use crate::camera::{CameraExtrinsics, CameraIntrinsics, CameraModel};
use crate::detector::{EclipseWindow, PerturbationParams};
use crate::dynamics::{
    euler321_to_rotation, mrp_from_quaternion, ChaserOrbitState, DynamicsModel, PhysicalConstants, Quaternion,
    RelativeState, TruthState, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::geometry::MarkerSet;
use crate::linalg::is_rotation;
use crate::ukf::{sigma_weights, UkfParams};

type M3 = [[f64; 3]; 3];

fn m3(m: &M3) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[i][j])
}

fn v3(v: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Truth and filter step (s).
    pub dt: f64,
    pub duration: f64,
    /// Monte Carlo runs per method.
    pub runs: usize,
    pub seed: u64,
    /// Leading window excluded from aggregate RMSE and mean SNEES (s).
    pub rmse_skip: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { dt: 1.0, duration: 6000.0, runs: 100, seed: 1, rmse_skip: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChaserConfig {
    /// Initial orbit radius (m). Default: ENVISAT-class altitude of ~766 km.
    pub radius: f64,
    pub radial_rate: f64,
    pub anomaly: f64,
    /// Anomaly rate (rad/s); `None` means circular at `radius`.
    pub anomaly_rate: Option<f64>,
    /// Body rate (rad/s). Zero is an attitude-stabilized chaser.
    pub rate: [f64; 3],
    pub inertia: M3,
}

impl Default for ChaserConfig {
    fn default() -> Self {
        Self {
            radius: 7.1449e6,
            radial_rate: 0.0,
            anomaly: 0.0,
            anomaly_rate: None,
            rate: [0.0; 3],
            inertia: [[400.0, 0.0, 0.0], [0.0, 500.0, 0.0], [0.0, 0.0, 600.0]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EulerSequence {
    /// Yaw about z, then pitch about y, then roll about x.
    Zyx,
    /// Roll about x, then pitch about y, then yaw about z.
    Xyz,
}

impl EulerSequence {
    pub fn rotation(self, roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
        match self {
            Self::Zyx => euler321_to_rotation(roll, pitch, yaw),
            Self::Xyz => {
                let r = |a: f64, b: f64, c: f64| euler321_to_rotation(a, b, c);
                r(0.0, 0.0, yaw) * r(0.0, pitch, 0.0) * r(roll, 0.0, 0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// Roll, pitch, yaw (rad).
    pub euler: [f64; 3],
    pub euler_sequence: EulerSequence,
    /// Relative body rate (rad/s).
    pub omega: [f64; 3],
    /// Principal-axis-class ENVISAT inertia from public ESA data (kg m²).
    pub inertia: M3,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            position: [-0.002, -31.17, 0.0],
            velocity: [-3.5e-6, -2.0e-6, 0.0],
            euler: [1.66, 2.27, -0.38],
            euler_sequence: EulerSequence::Zyx,
            omega: [0.02, 0.02, 0.04],
            inertia: [[17023.3, 397.1, -2164.6], [397.1, 124825.7, 179.8], [-2164.6, 179.8, 129112.2]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialUncertainty {
    pub position: f64,
    pub velocity: f64,
    pub mrp: f64,
    pub omega: f64,
    /// Draw the initial estimate around the truth; otherwise start exactly on it.
    pub perturb: bool,
}

impl Default for InitialUncertainty {
    fn default() -> Self {
        Self { position: 1.0, velocity: 0.1, mrp: 0.01, omega: 1e-3, perturb: true }
    }
}

impl InitialUncertainty {
    pub fn stds(&self) -> [f64; STATE_DIM] {
        let mut s = [0.0; STATE_DIM];
        for (i, v) in s.iter_mut().enumerate() {
            *v = [self.position, self.velocity, self.mrp, self.omega][i / 3];
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Field of view (deg).
    pub fov: f64,
    /// World-to-camera rotation. The default looks along −y of the chaser frame.
    pub rotation: M3,
    pub translation: [f64; 3],
}

impl Default for CameraConfig {
    fn default() -> Self {
        let i = CameraIntrinsics::default();
        let e = CameraExtrinsics::default();
        Self {
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            fov: i.fov,
            rotation: std::array::from_fn(|r| std::array::from_fn(|c| e.rotation[(r, c)])),
            translation: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerConfig {
    /// Target body box (m). Markers sit on its eight corners unless `file` is set.
    pub box_dims: [f64; 3],
    pub com_offset: [f64; 3],
    /// Optional marker file (`id x y z` per line).
    pub file: Option<String>,
    /// Use only the first `limit` markers.
    pub limit: Option<usize>,
}

impl Default for MarkerConfig {
    fn default() -> Self {
        Self { box_dims: [10.0, 5.0, 5.0], com_offset: [0.0; 3], file: None, limit: None }
    }
}

/// Interval during which the detector noise is multiplied by `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBurst {
    pub start: f64,
    pub end: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Frame-wide shift std (px).
    pub translation_std: f64,
    /// Frame-wide rotation std (deg).
    pub rotation_std: f64,
    /// Per-corner pixel noise std (px).
    pub pixel_std: f64,
    /// Relative depth noise std; zero keeps the true depth.
    pub depth_std: f64,
    pub dropout: f64,
    /// Multiplier on all noise stds of the simulated detector. The filter
    /// keeps using the calibrated R.
    pub noise_scale: f64,
    pub bursts: Vec<NoiseBurst>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let p = PerturbationParams::default();
        Self {
            translation_std: p.affine_translation_std,
            rotation_std: p.affine_rotation_std,
            pixel_std: p.detection_noise_std,
            depth_std: p.depth_noise_std,
            dropout: p.dropout_probability,
            noise_scale: 1.0,
            // Degraded detections after the eclipse.
            bursts: vec![
                NoiseBurst { start: 4800.0, end: 4900.0, scale: 4.0 },
                NoiseBurst { start: 5300.0, end: 5400.0, scale: 4.0 },
            ],
        }
    }
}

impl DetectorConfig {
    pub fn params(&self) -> PerturbationParams {
        PerturbationParams {
            affine_translation_std: self.translation_std,
            affine_rotation_std: self.rotation_std,
            detection_noise_std: self.pixel_std,
            depth_noise_std: self.depth_std,
            dropout_probability: self.dropout,
            seed: 0,
        }
    }

    /// Noise multiplier in effect at time `t`.
    pub fn scale_at(&self, t: f64) -> f64 {
        self.bursts
            .iter()
            .filter(|b| t >= b.start && t < b.end)
            .fold(self.noise_scale, |acc, b| acc * b.scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EclipseConfig {
    pub enabled: bool,
    pub start: f64,
    pub duration: f64,
}

impl Default for EclipseConfig {
    fn default() -> Self {
        let w = EclipseWindow::default();
        Self { enabled: true, start: w.start, duration: w.duration }
    }
}

impl EclipseConfig {
    pub fn window(&self) -> Option<EclipseWindow> {
        self.enabled.then_some(EclipseWindow { start: self.start, duration: self.duration })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub samples: usize,
    /// Calibration file written by `calibrate-r`; calibrated on the fly if unset.
    pub file: Option<String>,
    /// Added to the diagonal of every calibrated block (m²). The calibrated
    /// matrices are rank 2 when depth is noise-free.
    pub r_floor: f64,
    /// Use the per-marker blocks instead of the pooled one.
    pub per_marker: bool,
    /// Model the frame-wide affine jitter explicitly, coupling the markers
    /// of one frame, instead of treating every marker as independent.
    pub frame_jitter: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { samples: 500, file: None, r_floor: 1e-6, per_marker: false, frame_jitter: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UkfConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfConfig {
    fn default() -> Self {
        let p = UkfParams::default();
        Self { alpha: p.alpha, beta: p.beta, kappa: p.kappa }
    }
}

/// Per-block process noise variances: position, velocity, MRP, rate.
pub type BlockNoise = [f64; 4];

pub fn block_diag(b: &BlockNoise) -> DMatrix<f64> {
    DMatrix::from_fn(STATE_DIM, STATE_DIM, |i, j| if i == j { b[i / 3] } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub adapt_r: bool,
    pub adapt_q: bool,
    /// Also apply the adaptive Q on frames with measurements.
    pub adapt_q_measured: bool,
    /// Hand-tuned Q of the non-adaptive filter.
    pub q_fixed: BlockNoise,
    /// Q kept underneath the adaptive term when `adapt_q` is on.
    pub q_base: BlockNoise,
    pub q_adapt_form: QAdaptForm,
    /// Multiplier on the adaptive Q.
    pub q_adapt_scale: f64,
    /// Association gate as a multiple of the per-marker predicted variance.
    pub gate: f64,
    /// Lower bound on the squared association gate (m²).
    pub gate_floor: f64,
    /// Inertia mismatch of the filter's target model: the first principal
    /// moment is scaled by 1 + e and the third by 1 − e (0 = exact model).
    pub inertia_error: f64,
    /// Seconds of plain updates before the MTF trigger is armed.
    pub mtf_warmup: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            adapt_r: true,
            adapt_q: true,
            adapt_q_measured: false,
            q_fixed: [1e-14, 1e-12, 1e-14, 1e-14],
            q_base: [1e-10, 0.0, 0.0, 0.0],
            q_adapt_form: QAdaptForm::Normalized,
            q_adapt_scale: 0.01,
            gate: 9.0,
            gate_floor: 1.0,
            inertia_error: 0.0,
            mtf_warmup: 100.0,
        }
    }
}

impl FilterConfig {
    pub fn process_noise(&self) -> DMatrix<f64> {
        block_diag(if self.adapt_q { &self.q_base } else { &self.q_fixed })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub simulation: SimulationConfig,
    pub physics: PhysicalConstants,
    pub chaser: ChaserConfig,
    pub target: TargetConfig,
    pub initial_uncertainty: InitialUncertainty,
    pub camera: CameraConfig,
    pub markers: MarkerConfig,
    pub detector: DetectorConfig,
    pub eclipse: EclipseConfig,
    pub calibration: CalibrationConfig,
    pub ukf: UkfConfig,
    pub filter: FilterConfig,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite and positive, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite and non-negative, got {v}")))
    }
}

fn finite(field: &str, vals: &[f64]) -> Result<()> {
    match vals.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::config(field, format!("must be finite, got {v}"))),
        None => Ok(()),
    }
}

fn inertia(field: &str, m: &M3) -> Result<Matrix3<f64>> {
    let j = m3(m);
    finite(field, j.as_slice())?;
    if (j - j.transpose()).abs().max() > 1e-9 * j.abs().max() {
        return Err(Error::config(field, "must be symmetric"));
    }
    if j.cholesky().is_none() {
        return Err(Error::config(field, "must be positive definite"));
    }
    Ok(j)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            what: "scenario config",
            line: e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0),
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // Relative file references are resolved against the config location.
        let base = path.parent().unwrap_or(Path::new("."));
        for f in [&mut cfg.markers.file, &mut cfg.calibration.file].into_iter().flatten() {
            if Path::new(f.as_str()).is_relative() {
                *f = base.join(&*f).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.simulation;
        positive("simulation.dt", s.dt)?;
        positive("simulation.duration", s.duration)?;
        non_negative("simulation.rmse_skip", s.rmse_skip)?;
        if s.runs == 0 {
            return Err(Error::config("simulation.runs", "must be at least 1"));
        }
        positive("physics.mu", self.physics.mu)?;

        let c = &self.chaser;
        positive("chaser.radius", c.radius)?;
        finite("chaser.radial_rate", &[c.radial_rate])?;
        finite("chaser.anomaly", &[c.anomaly])?;
        if let Some(r) = c.anomaly_rate {
            finite("chaser.anomaly_rate", &[r])?;
        }
        finite("chaser.rate", &c.rate)?;
        inertia("chaser.inertia", &c.inertia)?;

        let t = &self.target;
        finite("target.position", &t.position)?;
        finite("target.velocity", &t.velocity)?;
        finite("target.euler", &t.euler)?;
        finite("target.omega", &t.omega)?;
        inertia("target.inertia", &t.inertia)?;

        let u = &self.initial_uncertainty;
        for (f, v) in [
            ("initial_uncertainty.position", u.position),
            ("initial_uncertainty.velocity", u.velocity),
            ("initial_uncertainty.mrp", u.mrp),
            ("initial_uncertainty.omega", u.omega),
        ] {
            positive(f, v)?;
        }

        let cam = &self.camera;
        CameraIntrinsics::new(cam.fx, cam.fy, cam.cx, cam.cy, cam.fov)
            .map_err(|e| Error::config("camera", e.to_string()))?;
        finite("camera.translation", &cam.translation)?;
        if !is_rotation(&m3(&cam.rotation), 1e-9) {
            return Err(Error::config("camera.rotation", "must be a proper rotation matrix"));
        }

        for k in 0..3 {
            positive("markers.box_dims", self.markers.box_dims[k])?;
        }
        finite("markers.com_offset", &self.markers.com_offset)?;
        if self.markers.limit == Some(0) {
            return Err(Error::config("markers.limit", "must be at least 1"));
        }

        let d = &self.detector;
        self.detector.params().validate()?;
        non_negative("detector.noise_scale", d.noise_scale)?;
        for b in &d.bursts {
            finite("detector.bursts", &[b.start, b.end])?;
            non_negative("detector.bursts.scale", b.scale)?;
            if b.end <= b.start {
                return Err(Error::config("detector.bursts", format!("end {} must follow start {}", b.end, b.start)));
            }
        }

        finite("eclipse.start", &[self.eclipse.start])?;
        non_negative("eclipse.duration", self.eclipse.duration)?;

        let cal = &self.calibration;
        if cal.samples < 2 {
            return Err(Error::config("calibration.samples", "must be at least 2"));
        }
        non_negative("calibration.r_floor", cal.r_floor)?;

        positive("ukf.alpha", self.ukf.alpha)?;
        finite("ukf.beta", &[self.ukf.beta])?;
        finite("ukf.kappa", &[self.ukf.kappa])?;
        sigma_weights(&self.ukf_params())
            .map_err(|e| Error::config("ukf", e.to_string()))?;

        let f = &self.filter;
        for v in f.q_fixed {
            non_negative("filter.q_fixed", v)?;
        }
        for v in f.q_base {
            non_negative("filter.q_base", v)?;
        }
        non_negative("filter.q_adapt_scale", f.q_adapt_scale)?;
        positive("filter.gate", f.gate)?;
        non_negative("filter.gate_floor", f.gate_floor)?;
        non_negative("filter.mtf_warmup", f.mtf_warmup)?;
        if !(f.inertia_error.is_finite() && f.inertia_error.abs() < 1.0) {
            return Err(Error::config("filter.inertia_error", "must lie in (-1, 1)"));
        }
        Ok(())
    }

    pub fn constants(&self) -> PhysicalConstants {
        self.physics
    }

    /// Dynamics used to generate the truth.
    pub fn truth_model(&self) -> DynamicsModel {
        DynamicsModel {
            constants: self.physics,
            target_inertia: m3(&self.target.inertia),
            chaser_inertia: m3(&self.chaser.inertia),
        }
    }

    /// Dynamics assumed by the filter.
    pub fn filter_model(&self) -> DynamicsModel {
        let mut m = self.truth_model();
        let e = self.filter.inertia_error;
        let d = Matrix3::from_diagonal(&Vector3::new((1.0 + e).sqrt(), 1.0, (1.0 - e).sqrt()));
        m.target_inertia = d * m.target_inertia * d;
        m
    }

    pub fn initial_relative(&self) -> Result<RelativeState> {
        let t = &self.target;
        let rot = t.euler_sequence.rotation(t.euler[0], t.euler[1], t.euler[2]);
        let mrp = mrp_from_quaternion(&Quaternion::from_rotation(&rot))?;
        Ok(RelativeState { position: v3(&t.position), velocity: v3(&t.velocity), mrp, omega_r: v3(&t.omega) })
    }

    pub fn initial_truth(&self) -> Result<TruthState> {
        let c = &self.chaser;
        let mut chaser = ChaserOrbitState::circular(c.radius, &self.physics);
        chaser.r_bar_dot = c.radial_rate;
        chaser.theta = c.anomaly;
        if let Some(rate) = c.anomaly_rate {
            chaser.theta_dot = rate;
        }
        Ok(TruthState { chaser, chaser_rate: v3(&c.rate), relative: self.initial_relative()?, time: 0.0 })
    }

    pub fn camera_model(&self) -> Result<CameraModel> {
        let c = &self.camera;
        Ok(CameraModel {
            intrinsics: CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy, c.fov)?,
            extrinsics: CameraExtrinsics::new(m3(&c.rotation), v3(&c.translation))?,
        })
    }

    pub fn marker_set(&self) -> Result<MarkerSet> {
        let m = &self.markers;
        let set = match &m.file {
            Some(f) => MarkerSet::load(Path::new(f))?,
            None => MarkerSet::box_corners(v3(&m.box_dims), v3(&m.com_offset))?,
        };
        Ok(match m.limit {
            Some(k) if k < set.len() => set.restrict(k),
            _ => set,
        })
    }

    pub fn ukf_params(&self) -> UkfParams {
        UkfParams::new(self.ukf.alpha, self.ukf.beta, self.ukf.kappa, STATE_DIM)
    }

    pub fn steps(&self) -> usize {
        (self.simulation.duration / self.simulation.dt).round() as usize
    }
}
