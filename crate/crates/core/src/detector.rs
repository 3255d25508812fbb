//! Synthetic corner detector and the Monte Carlo measurement-noise calibration.
//!
//! The detector perturbs true pixel locations with one frame-wide affine jitter
//! (translation plus a rotation about the image centre), independent per-corner
//! noise, optional multiplicative depth noise and random dropouts.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::camera::{camera_from_world, CameraModel, PixelDetection};
use crate::dynamics::TruthState;
use crate::error::{Error, Result};
use crate::geometry::{marker_positions_chaser_frame, visible_markers, MarkerSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationParams {
    /// Frame-wide translation jitter per image axis (pixels).
    pub affine_translation_std: f64,
    /// Frame-wide rotation jitter about the image centre (degrees).
    pub affine_rotation_std: f64,
    /// Independent per-corner pixel noise (pixels).
    pub detection_noise_std: f64,
    /// Relative depth noise; zero passes depth through unchanged.
    pub depth_noise_std: f64,
    pub dropout_probability: f64,
    pub seed: u64,
}

impl Default for PerturbationParams {
    fn default() -> Self {
        Self {
            affine_translation_std: 3.0,
            affine_rotation_std: 1.0,
            detection_noise_std: 0.5,
            depth_noise_std: 0.0,
            dropout_probability: 0.0,
            seed: 0,
        }
    }
}

impl PerturbationParams {
    pub fn noiseless() -> Self {
        Self {
            affine_translation_std: 0.0,
            affine_rotation_std: 0.0,
            detection_noise_std: 0.0,
            depth_noise_std: 0.0,
            dropout_probability: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [
            ("affine_translation_std", self.affine_translation_std),
            ("affine_rotation_std", self.affine_rotation_std),
            ("detection_noise_std", self.detection_noise_std),
            ("depth_noise_std", self.depth_noise_std),
        ];
        for (name, v) in stds {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be a non-negative number, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.dropout_probability) {
            return Err(Error::config(
                "dropout_probability",
                format!("must lie in [0, 1], got {}", self.dropout_probability),
            ));
        }
        Ok(())
    }

    /// Multiply every noise standard deviation by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            affine_translation_std: self.affine_translation_std * factor,
            affine_rotation_std: self.affine_rotation_std * factor,
            detection_noise_std: self.detection_noise_std * factor,
            depth_noise_std: self.depth_noise_std * factor,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub time: f64,
    pub detections: Vec<PixelDetection>,
    pub outage: bool,
}

impl DetectionSet {
    pub fn outage(time: f64) -> Self {
        Self { time, detections: Vec::new(), outage: true }
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Apply the perturbation model, keeping order and labels.
///
/// The number of random draws depends only on the number of inputs, so runs
/// with different noise levels consume their streams identically.
pub fn perturb<R: Rng + ?Sized>(
    true_pixels: &[PixelDetection],
    params: &PerturbationParams,
    center: (f64, f64),
    rng: &mut R,
) -> Vec<PixelDetection> {
    let tx = params.affine_translation_std * normal(rng);
    let ty = params.affine_translation_std * normal(rng);
    let angle = params.affine_rotation_std.to_radians() * normal(rng);
    let (s, c) = angle.sin_cos();
    let (cx, cy) = center;
    let mut out = Vec::with_capacity(true_pixels.len());
    for d in true_pixels {
        let nu = normal(rng);
        let nv = normal(rng);
        let nz = normal(rng);
        let keep = rng.random::<f64>() >= params.dropout_probability;
        if !keep {
            continue;
        }
        let (du, dv) = (d.u - cx, d.v - cy);
        let (ru, rv) = if angle == 0.0 { (du, dv) } else { (c * du - s * dv, s * du + c * dv) };
        let depth = if params.depth_noise_std > 0.0 {
            d.depth * (1.0 + params.depth_noise_std * nz)
        } else {
            d.depth
        };
        out.push(PixelDetection {
            u: cx + ru + tx + params.detection_noise_std * nu,
            v: cy + rv + ty + params.detection_noise_std * nv,
            depth,
            marker_id: d.marker_id,
        });
    }
    out
}

/// Sensitivity of a back-projected point to the frame-wide jitter.
///
/// Columns are the world-frame displacement per pixel of image translation
/// along u and v, and per radian of rotation about the image centre, to
/// first order. Depth is passed through, so the displacement is lateral.
pub fn frame_jitter_jacobian(point_world: &Vector3<f64>, camera: &CameraModel) -> Matrix3<f64> {
    let k = &camera.intrinsics;
    let pc = camera_from_world(point_world, &camera.extrinsics);
    let (sx, sy) = (pc.z / k.fx, pc.z / k.fy);
    // Pixel offsets from the centre, (u − cx) and (v − cy).
    let (du, dv) = (k.fx * pc.x / pc.z, k.fy * pc.y / pc.z);
    let jc = Matrix3::new(sx, 0.0, -sx * dv, 0.0, sy, sy * du, 0.0, 0.0, 0.0);
    camera.extrinsics.rotation.transpose() * jc
}

/// Covariance of the jitter parameters (u and v translation in pixels,
/// rotation in radians) matching [`frame_jitter_jacobian`].
pub fn frame_jitter_covariance(params: &PerturbationParams) -> Matrix3<f64> {
    let t = params.affine_translation_std.powi(2);
    Matrix3::from_diagonal(&Vector3::new(t, t, params.affine_rotation_std.to_radians().powi(2)))
}

/// Perturb, strip labels and shuffle: what a corner detector hands downstream.
pub fn detect<R: Rng + ?Sized>(
    time: f64,
    true_pixels: &[PixelDetection],
    params: &PerturbationParams,
    center: (f64, f64),
    rng: &mut R,
) -> DetectionSet {
    let mut detections = perturb(true_pixels, params, center, rng);
    for d in &mut detections {
        d.marker_id = None;
    }
    detections.shuffle(rng);
    DetectionSet { time, detections, outage: false }
}

/// Labeled true pixel locations of the markers visible in the image.
pub fn true_pixels(
    state: &TruthState,
    markers: &MarkerSet,
    camera: &CameraModel,
) -> Result<Vec<PixelDetection>> {
    let cam_pos = camera.extrinsics.position_in_world();
    let vis = visible_markers(markers, &state.relative, &cam_pos)?;
    let placed = marker_positions_chaser_frame(markers, &state.relative);
    let mut out = Vec::new();
    for ((id, pos), visible) in placed.into_iter().zip(vis.visible) {
        if !visible {
            continue;
        }
        // A corner behind the image plane cannot be observed either.
        match camera.observe(&pos) {
            Ok(Some(mut d)) => {
                d.marker_id = Some(id);
                out.push(d);
            }
            Ok(None) | Err(Error::BehindCamera { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EclipseWindow {
    pub start: f64,
    pub duration: f64,
}

impl Default for EclipseWindow {
    fn default() -> Self {
        Self { start: 2130.0, duration: 2134.2 }
    }
}

impl EclipseWindow {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// True iff `t` lies in the half-open window `[start, start + duration)`.
pub fn eclipse_gate(t: f64, window: &EclipseWindow) -> bool {
    window.start <= t && t < window.end()
}

/// Calibrated measurement noise in the chaser frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCalibration {
    pub per_marker_r: Vec<(usize, Matrix3<f64>)>,
    pub global_r: Matrix3<f64>,
    /// Per-marker covariance left after removing the fitted frame-wide
    /// jitter from every calibration frame.
    pub independent_r: Option<Matrix3<f64>>,
    pub sample_count: usize,
}

impl NoiseCalibration {
    pub fn marker_r(&self, id: usize) -> Option<&Matrix3<f64>> {
        self.per_marker_r.iter().find(|(m, _)| *m == id).map(|(_, r)| r)
    }

    /// A calibration holding only a global covariance.
    pub fn global_only(global_r: Matrix3<f64>) -> Self {
        Self { per_marker_r: Vec::new(), global_r, independent_r: None, sample_count: 0 }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# measurement noise calibration, chaser frame, m^2\n");
        s.push_str("# samples N\n# global r11 r12 r13 r21 r22 r23 r31 r32 r33\n");
        s.push_str("# independent r11 ... r33 (optional)\n# marker <id> r11 ... r33 (row-major)\n");
        let _ = writeln!(s, "samples {}", self.sample_count);
        let row = |m: &Matrix3<f64>| {
            (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| format!("{:.17e}", m[(i, j)]))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(s, "global {}", row(&self.global_r));
        if let Some(r) = &self.independent_r {
            let _ = writeln!(s, "independent {}", row(r));
        }
        for (id, r) in &self.per_marker_r {
            let _ = writeln!(s, "marker {id} {}", row(r));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut samples = None;
        let mut global = None;
        let mut independent = None;
        let mut per_marker = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse { what: "calibration file", line: n + 1, reason };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let matrix = |vals: &[&str]| -> Result<Matrix3<f64>> {
                if vals.len() != 9 {
                    return Err(err(format!("expected 9 matrix entries, found {}", vals.len())));
                }
                let mut m = [0.0; 9];
                for (slot, v) in m.iter_mut().zip(vals) {
                    *slot = v.parse().map_err(|e| err(format!("bad number `{v}`: {e}")))?;
                }
                Ok(Matrix3::from_row_slice(&m))
            };
            match fields[0] {
                "samples" if fields.len() == 2 => {
                    samples = Some(fields[1].parse().map_err(|e| err(format!("bad sample count: {e}")))?)
                }
                "global" => global = Some(matrix(&fields[1..])?),
                "independent" => independent = Some(matrix(&fields[1..])?),
                "marker" if fields.len() >= 2 => {
                    let id = fields[1].parse().map_err(|e| err(format!("bad marker id: {e}")))?;
                    per_marker.push((id, matrix(&fields[2..])?));
                }
                other => return Err(err(format!("unrecognised record `{other}`"))),
            }
        }
        let missing = |what: &str| Error::Parse { what: "calibration file", line: 0, reason: format!("missing `{what}` record") };
        Ok(Self {
            per_marker_r: per_marker,
            global_r: global.ok_or_else(|| missing("global"))?,
            independent_r: independent,
            sample_count: samples.ok_or_else(|| missing("samples"))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Run the detector `n` times on one scene and estimate the covariance of the
/// back-projected marker measurements.
pub fn calibrate_noise<R: Rng + ?Sized>(
    scene: &TruthState,
    markers: &MarkerSet,
    camera: &CameraModel,
    params: &PerturbationParams,
    n: usize,
    rng: &mut R,
) -> Result<NoiseCalibration> {
    if n < 2 {
        return Err(Error::Parameter(format!("calibration needs at least 2 samples, got {n}")));
    }
    let truth = true_pixels(scene, markers, camera)?;
    if truth.is_empty() {
        return Err(Error::Domain("no marker is visible in the calibration scene".into()));
    }
    let center = (camera.intrinsics.cx, camera.intrinsics.cy);
    let mut frames: Vec<Vec<Option<Vector3<f64>>>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut frame = vec![None; truth.len()];
        for d in perturb(&truth, params, center, rng) {
            let slot = truth.iter().position(|t| t.marker_id == d.marker_id).expect("label kept");
            frame[slot] = Some(camera.to_world(&d)?);
        }
        frames.push(frame);
    }

    let mut per_marker_r = Vec::with_capacity(truth.len());
    let mut pooled = Matrix3::zeros();
    let mut dof = 0usize;
    for (slot, t) in truth.iter().enumerate() {
        let id = t.marker_id.expect("labeled");
        let zs: Vec<Vector3<f64>> = frames.iter().filter_map(|f| f[slot]).collect();
        if zs.len() < 2 {
            return Err(Error::Calibration { marker: id, samples: zs.len() });
        }
        // Shift by the first sample so identical samples give exactly zero.
        let z0 = zs[0];
        let mean = zs.iter().map(|z| z - z0).sum::<Vector3<f64>>() / zs.len() as f64;
        let scatter: Matrix3<f64> = zs
            .iter()
            .map(|z| {
                let r = (z - z0) - mean;
                r * r.transpose()
            })
            .sum();
        pooled += scatter;
        dof += zs.len() - 1;
        let mut r = scatter / (zs.len() - 1) as f64;
        r = (r + r.transpose()) * 0.5;
        per_marker_r.push((id, r));
    }
    let mut global_r = pooled / dof as f64;
    global_r = (global_r + global_r.transpose()) * 0.5;
    let independent_r = independent_covariance(&truth, &frames, camera, params)?;

    Ok(NoiseCalibration { per_marker_r, global_r, independent_r, sample_count: n })
}

/// Fit the frame-wide jitter to every calibration frame by least squares and
/// pool the residuals. Residuals are taken about each marker's sample mean.
fn independent_covariance(
    truth: &[PixelDetection],
    frames: &[Vec<Option<Vector3<f64>>>],
    camera: &CameraModel,
    params: &PerturbationParams,
) -> Result<Option<Matrix3<f64>>> {
    let world: Vec<Vector3<f64>> = truth.iter().map(|d| camera.to_world(d)).collect::<Result<_>>()?;
    let jac: Vec<Matrix3<f64>> = world.iter().map(|p| frame_jitter_jacobian(p, camera)).collect();
    let means: Vec<Vector3<f64>> = (0..truth.len())
        .map(|slot| {
            let zs: Vec<_> = frames.iter().filter_map(|f| f[slot]).collect();
            zs.iter().sum::<Vector3<f64>>() / zs.len() as f64
        })
        .collect();
    // Noisy components per marker: depth is exact unless depth noise is on.
    let dims = if params.depth_noise_std > 0.0 { 3.0 } else { 2.0 };
    let mut scatter = Matrix3::zeros();
    let mut dof = 0.0;
    for frame in frames {
        let seen: Vec<usize> = (0..truth.len()).filter(|&s| frame[s].is_some()).collect();
        if (seen.len() as f64) * dims <= 3.0 {
            continue;
        }
        let mut normal = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        for &s in &seen {
            let e = frame[s].expect("seen") - means[s];
            normal += jac[s].transpose() * jac[s];
            rhs += jac[s].transpose() * e;
        }
        let Some(inv) = normal.pseudo_inverse(1e-12 * normal.norm()).ok() else { continue };
        let theta = inv * rhs;
        for &s in &seen {
            let r = frame[s].expect("seen") - means[s] - jac[s] * theta;
            scatter += r * r.transpose();
        }
        dof += seen.len() as f64 - 3.0 / dims;
    }
    if dof <= 0.0 {
        return Ok(None);
    }
    let n = frames.len() as f64;
    let r = scatter / dof * (n / (n - 1.0));
    Ok(Some((r + r.transpose()) * 0.5))
}
