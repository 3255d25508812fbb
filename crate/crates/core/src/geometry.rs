//! Target marker geometry and analytic visibility of box corners.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::dynamics::RelativeState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marker {
    pub id: usize,
    /// Position relative to the target centre of mass, target body frame (m).
    pub position: Vector3<f64>,
}

/// Markers on the target's main body, modelled as a rectangular box.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerSet {
    pub markers: Vec<Marker>,
    /// Box edge lengths along the body x, y and z axes (m).
    pub box_dims: Vector3<f64>,
    /// Box centre relative to the centre of mass, body frame (m).
    pub com_offset: Vector3<f64>,
}

impl MarkerSet {
    /// The eight corners of a box. Corner `id` takes the `+` side on axis `k`
    /// when bit `k` of the id is set.
    pub fn box_corners(box_dims: Vector3<f64>, com_offset: Vector3<f64>) -> Result<Self> {
        if box_dims.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::Parameter(format!("box dimensions must be positive, got {box_dims:?}")));
        }
        let half = box_dims / 2.0;
        let markers = (0..8)
            .map(|id| {
                let sign = |bit: usize| if id >> bit & 1 == 1 { 1.0 } else { -1.0 };
                Marker {
                    id,
                    position: com_offset + Vector3::new(sign(0) * half.x, sign(1) * half.y, sign(2) * half.z),
                }
            })
            .collect();
        Ok(Self { markers, box_dims, com_offset })
    }

    /// Build a set from arbitrary marker positions; the box is their bounding box.
    pub fn from_markers(markers: Vec<Marker>) -> Result<Self> {
        if markers.is_empty() {
            return Err(Error::Parameter("marker set is empty".into()));
        }
        let mut ids: Vec<usize> = markers.iter().map(|m| m.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Parameter(format!("duplicate marker id {}", w[0])));
        }
        let mut lo = markers[0].position;
        let mut hi = lo;
        for m in &markers {
            lo = lo.inf(&m.position);
            hi = hi.sup(&m.position);
        }
        let box_dims = hi - lo;
        if box_dims.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Parameter("markers do not span a three-dimensional box".into()));
        }
        Ok(Self { markers, box_dims, com_offset: (hi + lo) / 2.0 })
    }

    /// Parse lines of `id x y z`; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut markers = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse { what: "marker file", line: n + 1, reason };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(err(format!("expected `id x y z`, found {} fields", fields.len())));
            }
            let id = fields[0].parse::<usize>().map_err(|e| err(format!("bad id: {e}")))?;
            let mut xyz = [0.0; 3];
            for (slot, f) in xyz.iter_mut().zip(&fields[1..]) {
                *slot = f.parse::<f64>().map_err(|e| err(format!("bad coordinate `{f}`: {e}")))?;
                if !slot.is_finite() {
                    return Err(err(format!("non-finite coordinate `{f}`")));
                }
            }
            markers.push(Marker { id, position: Vector3::from(xyz) });
        }
        Self::from_markers(markers)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# id x y z (m, target body frame)\n");
        for m in &self.markers {
            let p = m.position;
            let _ = writeln!(s, "{} {:.17e} {:.17e} {:.17e}", m.id, p.x, p.y, p.z);
        }
        s
    }

    pub fn get(&self, id: usize) -> Result<&Marker> {
        self.markers.iter().find(|m| m.id == id).ok_or(Error::UnknownMarker(id))
    }

    pub fn ids(&self) -> Vec<usize> {
        self.markers.iter().map(|m| m.id).collect()
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    /// Keep only the first `k` markers. The box itself is unchanged.
    pub fn restrict(&self, k: usize) -> Self {
        Self {
            markers: self.markers.iter().take(k).copied().collect(),
            box_dims: self.box_dims,
            com_offset: self.com_offset,
        }
    }
}

/// Position of each marker in the chaser frame: `Γᵀ v_i + r`.
pub fn marker_positions_chaser_frame(m: &MarkerSet, rel: &RelativeState) -> Vec<(usize, Vector3<f64>)> {
    let gt = rel.rotation().transpose();
    m.markers.iter().map(|mk| (mk.id, gt * mk.position + rel.position)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityReport {
    /// One flag per marker, in the order of the marker set.
    pub visible: Vec<bool>,
    /// Camera position in the target body frame, relative to the centre of mass.
    pub camera_body: Vector3<f64>,
}

impl VisibilityReport {
    pub fn count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }
}

/// Back-face culling on the marker box.
///
/// A marker is visible when it lies on a box face whose outward normal points
/// towards the camera. Markers not on the box surface are never visible.
pub fn visible_markers(
    m: &MarkerSet,
    rel: &RelativeState,
    camera_position_chaser_frame: &Vector3<f64>,
) -> Result<VisibilityReport> {
    let cam = rel.rotation() * (camera_position_chaser_frame - rel.position);
    let rel_cam = cam - m.com_offset;
    let half = m.box_dims / 2.0;
    if (0..3).all(|k| rel_cam[k].abs() <= half[k]) {
        return Err(Error::Domain("camera is inside the target box".into()));
    }
    let tol = 1e-9 * half.amax();
    let visible = m
        .markers
        .iter()
        .map(|mk| {
            let p = mk.position - m.com_offset;
            (0..3).any(|k| {
                [1.0, -1.0].iter().any(|&s| {
                    // Marker on face {x_k = s·half_k}, and that face is front-facing.
                    (p[k] - s * half[k]).abs() <= tol
                        && (0..3).all(|j| p[j].abs() <= half[j] + tol)
                        && s * (rel_cam[k] - s * half[k]) > 0.0
                })
            })
        })
        .collect();
    Ok(VisibilityReport { visible, camera_body: cam })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{mrp_to_rotation, RelativeState};
    use proptest::prelude::*;

    fn default_box() -> MarkerSet {
        MarkerSet::box_corners(Vector3::new(10.0, 5.0, 5.0), Vector3::zeros()).unwrap()
    }

    fn at(position: Vector3<f64>, mrp: Vector3<f64>) -> RelativeState {
        RelativeState { position, mrp, ..RelativeState::zeros() }
    }

    /// Brute-force oracle: the segment from the camera to a corner enters the
    /// box before reaching the corner iff the corner is hidden.
    fn ray_box_visible(cam: &Vector3<f64>, corner: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> bool {
        let d = corner - cam;
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        for k in 0..3 {
            if d[k].abs() < 1e-300 {
                if cam[k] < lo[k] || cam[k] > hi[k] {
                    return true;
                }
                continue;
            }
            let t1 = (lo[k] - cam[k]) / d[k];
            let t2 = (hi[k] - cam[k]) / d[k];
            t_enter = t_enter.max(t1.min(t2));
            t_exit = t_exit.min(t1.max(t2));
        }
        !(t_enter <= t_exit && t_enter < 1.0 - 1e-9)
    }

    #[test]
    fn identity_pose_places_markers_verbatim() {
        let m = MarkerSet::from_markers(vec![
            Marker { id: 1, position: Vector3::new(1.0, 2.0, 3.0) },
            Marker { id: 2, position: Vector3::new(-1.0, 0.0, 0.0) },
        ])
        .unwrap();
        let p = marker_positions_chaser_frame(&m, &RelativeState::zeros());
        assert_eq!(p[0], (1, Vector3::new(1.0, 2.0, 3.0)));

        let rel = at(Vector3::new(0.0, -31.17, 0.0), Vector3::zeros());
        let m = MarkerSet::from_markers(vec![
            Marker { id: 0, position: Vector3::new(1.0, 0.0, 0.0) },
            Marker { id: 1, position: Vector3::new(0.0, 1.0, 1.0) },
        ])
        .unwrap();
        assert_eq!(marker_positions_chaser_frame(&m, &rel)[0].1, Vector3::new(1.0, -31.17, 0.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let p = Vector3::new(0.0, 0.0, (std::f64::consts::PI / 8.0).tan());
        let m = MarkerSet::from_markers(vec![
            Marker { id: 0, position: Vector3::x() },
            Marker { id: 1, position: Vector3::new(0.0, 1.0, 1.0) },
        ])
        .unwrap();
        let out = marker_positions_chaser_frame(&m, &at(Vector3::zeros(), p))[0].1;
        // Passive 90° frame rotation about z: Γ = [[0,1,0],[-1,0,0],[0,0,1]].
        let gamma = nalgebra::Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((out - gamma.transpose() * Vector3::x()).norm() < 1e-12);
        assert!((out - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn face_on_view_shows_four_corners() {
        let m = default_box();
        let rel = RelativeState::zeros();
        let r = visible_markers(&m, &rel, &Vector3::new(100.0, 0.0, 0.0)).unwrap();
        assert_eq!(r.count(), 4);
        for (mk, vis) in m.markers.iter().zip(&r.visible) {
            assert_eq!(*vis, mk.position.x > 0.0);
        }
    }

    #[test]
    fn diagonal_view_hides_the_far_corner() {
        let m = default_box();
        let r = visible_markers(&m, &RelativeState::zeros(), &Vector3::new(50.0, 40.0, 30.0)).unwrap();
        assert_eq!(r.count(), 7);
        assert!(!r.visible[0]);
    }

    #[test]
    fn camera_inside_box_is_an_error() {
        let m = default_box();
        assert!(visible_markers(&m, &RelativeState::zeros(), &Vector3::new(1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn marker_file_round_trip() {
        let m = MarkerSet::box_corners(Vector3::new(10.0, 5.0, 4.0), Vector3::new(0.5, 0.0, -0.2)).unwrap();
        let back = MarkerSet::parse(&m.to_text()).unwrap();
        assert_eq!(back.markers, m.markers);
        assert!((back.box_dims - m.box_dims).norm() < 1e-12);
        assert!((back.com_offset - m.com_offset).norm() < 1e-12);
    }

    #[test]
    fn malformed_marker_file_names_the_line() {
        let err = MarkerSet::parse("0 1 2 3\n1 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(MarkerSet::parse("0 0 0 0\n0 1 1 1\n").is_err());
        assert!(MarkerSet::parse("0 0 0 0\n1 1 1 0\n").is_err());
    }

    #[test]
    fn analytic_visibility_matches_ray_casting() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let m = MarkerSet::box_corners(Vector3::new(10.0, 5.0, 4.0), Vector3::new(0.3, -0.2, 0.1)).unwrap();
        let lo = m.com_offset - m.box_dims / 2.0;
        let hi = m.com_offset + m.box_dims / 2.0;
        let mut checked = 0;
        while checked < 1000 {
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if dir.norm() < 1e-3 {
                continue;
            }
            let mrp = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 0.57;
            let rel = at(Vector3::new(rng.random_range(-5.0..5.0), -31.0, rng.random_range(-5.0..5.0)), mrp);
            let cam = rel.position + dir.normalize() * rng.random_range(6.0..60.0);
            let Ok(report) = visible_markers(&m, &rel, &cam) else { continue };
            let cb = report.camera_body;
            for (mk, vis) in m.markers.iter().zip(&report.visible) {
                assert_eq!(*vis, ray_box_visible(&cb, &mk.position, &lo, &hi));
            }
            assert!([4, 6, 7].contains(&report.count()));
            // The body-frame camera matches an independent transform of the chaser-frame one.
            let g = mrp_to_rotation(&mrp);
            assert!((g.transpose() * cb + rel.position - cam).norm() < 1e-9);
            checked += 1;
        }
    }

    proptest! {
        #[test]
        fn placement_is_rotation_then_translation(
            p in prop::array::uniform3(-0.9..0.9f64),
            r in prop::array::uniform3(-40.0..40.0f64),
        ) {
            let m = default_box();
            let rel = at(Vector3::from(r), Vector3::from(p) / 1.6);
            let g = rel.rotation();
            let placed = marker_positions_chaser_frame(&m, &rel);
            let unrotated = marker_positions_chaser_frame(&m, &at(Vector3::zeros(), rel.mrp));
            for ((mk, (_, a)), (_, b)) in m.markers.iter().zip(&placed).zip(&unrotated) {
                prop_assert!((a - (b + rel.position)).norm() < 1e-12 * 100.0);
                prop_assert!((a - (g.transpose() * mk.position + rel.position)).norm() < 1e-12 * 100.0);
            }
        }
    }
}
