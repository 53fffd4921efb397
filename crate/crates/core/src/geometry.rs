//! Points, rigid poses and oriented boxes.
//!
//! Conventions: right-handed frame, z up, yaw measured from +x toward +y.
//! Box centers are volumetric centers (not bottom centers).

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intersection areas below this are treated as zero.
const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }

    pub fn xyz(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn with_xyz(&self, v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z, self.intensity)
    }

    pub fn distance(&self, other: &Point) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(&self, other: &Point) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        dx * dx + dy * dy + dz * dz
    }
}

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub const ORTHONORMAL_TOL: f64 = 1e-9;

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not proper orthonormal
    /// within [`Pose::ORTHONORMAL_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::Validity("pose contains non-finite values".into()));
        }
        let drift = orthonormal_drift(&rotation);
        if drift > Self::ORTHONORMAL_TOL {
            return Err(Error::Validity(format!(
                "pose rotation is not orthonormal (drift {drift:.3e})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Accepts a rotation with drift up to `max_drift` and projects it back
    /// onto SO(3) (nearest rotation in the Frobenius sense). Returns the
    /// measured drift alongside the pose.
    pub fn orthonormalized(rotation: Matrix3<f64>, translation: Vector3<f64>, max_drift: f64) -> Result<(Self, f64)> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::Validity("pose contains non-finite values".into()));
        }
        let drift = orthonormal_drift(&rotation);
        if drift > max_drift {
            return Err(Error::Validity(format!(
                "pose rotation drift {drift:.3e} exceeds {max_drift:.1e}"
            )));
        }
        if drift <= Self::ORTHONORMAL_TOL {
            return Ok((Self { rotation, translation }, drift));
        }
        let svd = rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Ok((
            Self {
                rotation: r,
                translation,
            },
            drift,
        ))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Yaw of the rotation's x axis projected onto the ground plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Row-major `[r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn row_major_parts(m: &[f64; 12]) -> (Matrix3<f64>, Vector3<f64>) {
        (
            Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
            Vector3::new(m[3], m[7], m[11]),
        )
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v + self.translation
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        p.with_xyz(&self.apply(&p.xyz()))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        invert_pose(self)
    }
}

fn orthonormal_drift(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let off = gram.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    off.max((r.determinant() - 1.0).abs())
}

pub fn invert_pose(pose: &Pose) -> Pose {
    let rt = pose.rotation.transpose();
    Pose {
        rotation: rt,
        translation: -(rt * pose.translation),
    }
}

/// Applies `pose` to every point. Intensities pass through untouched.
pub fn transform_points(points: &[Point], pose: &Pose) -> Result<Vec<Point>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.is_finite() {
                Ok(pose.apply_point(p))
            } else {
                Err(Error::Validity(format!("point {i} has non-finite coordinates")))
            }
        })
        .collect()
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let r = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= PI {
        r - TAU
    } else {
        r
    }
}

/// Wraps an angle into `[-π/2, π/2)`, the range of an undirected axis.
pub fn normalize_half_angle(a: f64) -> f64 {
    if (-FRAC_PI_2..FRAC_PI_2).contains(&a) {
        return a;
    }
    let r = (a + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if r >= FRAC_PI_2 {
        r - PI
    } else {
        r
    }
}

/// Oriented 3D box: center, dimensions along its local axes, and yaw.
///
/// `l` is measured along the heading `alpha`, `w` across it, `h` along z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub alpha: f64,
}

impl Box3D {
    /// Validating constructor; `alpha` is normalized to `[-π, π)`.
    pub fn new(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, alpha: f64) -> Result<Self> {
        let b = Self {
            x,
            y,
            z,
            l,
            w,
            h,
            alpha: normalize_angle(alpha),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x, self.y, self.z, self.l, self.w, self.h, self.alpha];
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::Validity("box has non-finite fields".into()));
        }
        if !(self.l > 0.0 && self.w > 0.0 && self.h > 0.0) {
            return Err(Error::Validity(format!(
                "box dimensions must be positive, got l={} w={} h={}",
                self.l, self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn size(&self) -> [f64; 3] {
        [self.l, self.w, self.h]
    }

    pub fn with_size(&self, l: f64, w: f64, h: f64) -> Self {
        Self { l, w, h, ..*self }
    }

    pub fn z_min(&self) -> f64 {
        self.z - self.h / 2.0
    }

    pub fn z_max(&self) -> f64 {
        self.z + self.h / 2.0
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn half_diagonal(&self) -> f64 {
        (self.l * self.l + self.w * self.w + self.h * self.h).sqrt() / 2.0
    }

    /// Expresses a world point in the box frame (origin at center, x along
    /// the heading).
    pub fn to_local(&self, p: &Point) -> Point {
        let (s, c) = self.alpha.sin_cos();
        let (dx, dy) = (p.x - self.x, p.y - self.y);
        Point::new(c * dx + s * dy, -s * dx + c * dy, p.z - self.z, p.intensity)
    }

    pub fn from_local(&self, p: &Point) -> Point {
        let (s, c) = self.alpha.sin_cos();
        Point::new(
            self.x + c * p.x - s * p.y,
            self.y + s * p.x + c * p.y,
            self.z + p.z,
            p.intensity,
        )
    }

    /// True when `p` lies inside the box grown by `margin` on every side.
    pub fn contains(&self, p: &Point, margin: f64) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= self.l / 2.0 + margin && q.y.abs() <= self.w / 2.0 + margin && q.z.abs() <= self.h / 2.0 + margin
    }

    /// Footprint corners, counter-clockwise starting at the (+l, +w) corner.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.alpha.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[u, v]| [self.x + c * u - s * v, self.y + s * u + c * v])
    }

    fn sort_key(&self) -> [f64; 7] {
        [self.x, self.y, self.z, self.l, self.w, self.h, self.alpha]
    }
}

/// The eight corners: bottom face counter-clockwise from the (+l, +w)
/// corner, then the top face in the same order.
pub fn box_corners(b: &Box3D) -> [Point; 8] {
    let bev = b.bev_corners();
    let (z0, z1) = (b.z_min(), b.z_max());
    std::array::from_fn(|i| {
        let [x, y] = bev[i % 4];
        Point::new(x, y, if i < 4 { z0 } else { z1 }, 0.0)
    })
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland–Hodgman clipping of `subject` against a convex,
/// counter-clockwise `clip` polygon.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn segment_line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let denom = dp - dq;
    if denom.abs() < f64::MIN_POSITIVE {
        return p;
    }
    let t = dp / denom;
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Exact footprint intersection area of two boxes.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    // Fixed argument order makes the result bitwise symmetric.
    let (a, b) = match cmp_boxes(a, b) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    // Cheap reject on bounding circles.
    let (dx, dy) = (a.x - b.x, a.y - b.y);
    let ra = (a.l * a.l + a.w * a.w).sqrt() / 2.0;
    let rb = (b.l * b.l + b.w * b.w).sqrt() / 2.0;
    if dx * dx + dy * dy > (ra + rb) * (ra + rb) {
        return 0.0;
    }
    let area = polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners()));
    if area < AREA_EPS {
        0.0
    } else {
        area.min(a.l * a.w).min(b.l * b.w)
    }
}

fn cmp_boxes(a: &Box3D, b: &Box3D) -> Ordering {
    a.sort_key()
        .iter()
        .zip(b.sort_key().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.l * a.w + b.l * b.w - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let dz = a.z_max().min(b.z_max()) - a.z_min().max(b.z_min());
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Which overlap measure to use when comparing boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum IouMode {
    #[default]
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouMode {
    pub fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            IouMode::Bev => bev_iou(a, b),
            IouMode::ThreeD => iou_3d(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IouMode::Bev => "bev",
            IouMode::ThreeD => "3d",
        }
    }
}
