//! Oriented box fitting by exhaustive yaw search.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::geometry::{normalize_half_angle, Box3D, Point};

/// Yaw candidates cover [0°, 90°) in this step.
pub const YAW_STEP_DEG: f64 = 0.5;
/// Smallest footprint extent (and height) a fitted box may have.
pub const MIN_EXTENT: f64 = 0.1;

const YAW_STEPS: usize = (90.0 / YAW_STEP_DEG) as usize;

/// Yaw in [0, π/2) whose rectangle minimizes the summed distance from
/// every point to its nearest rectangle edge. Ties keep the smallest yaw.
pub fn best_yaw(points: &[Point]) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..YAW_STEPS {
        let theta = (k as f64 * YAW_STEP_DEG).to_radians();
        let cost = edge_cost(points, theta);
        if cost < best.0 {
            best = (cost, theta);
        }
    }
    best.1
}

fn project(p: &Point, c: f64, s: f64) -> (f64, f64) {
    (c * p.x + s * p.y, -s * p.x + c * p.y)
}

fn extents(points: &[Point], c: f64, s: f64) -> [f64; 4] {
    let mut e = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for p in points {
        let (u, v) = project(p, c, s);
        e[0] = e[0].min(u);
        e[1] = e[1].max(u);
        e[2] = e[2].min(v);
        e[3] = e[3].max(v);
    }
    e
}

fn edge_cost(points: &[Point], theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let [u0, u1, v0, v1] = extents(points, c, s);
    points
        .iter()
        .map(|p| {
            let (u, v) = project(p, c, s);
            (u - u0).min(u1 - u).min(v - v0).min(v1 - v)
        })
        .sum()
}

/// Fits an enclosing oriented box. `l` is the longer footprint side and
/// `alpha` lies in [-π/2, π/2). Extents below [`MIN_EXTENT`] are widened
/// symmetrically.
pub fn fit_box(cluster: &[Point], min_points: usize) -> Result<Box3D> {
    if cluster.len() < min_points.max(1) {
        return Err(Error::Validity(format!(
            "cluster has {} points, need at least {}",
            cluster.len(),
            min_points.max(1)
        )));
    }
    let theta = best_yaw(cluster);
    Ok(box_at_yaw(cluster, theta))
}

/// Tightest enclosing box whose axes are aligned with `theta`.
pub fn box_at_yaw(cluster: &[Point], theta: f64) -> Box3D {
    let (s, c) = theta.sin_cos();
    let [u0, u1, v0, v1] = extents(cluster, c, s);
    let (zmin, zmax) = cluster
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.z), b.max(p.z)));
    let (uc, vc) = ((u0 + u1) / 2.0, (v0 + v1) / 2.0);
    let (du, dv) = ((u1 - u0).max(MIN_EXTENT), (v1 - v0).max(MIN_EXTENT));
    let h = (zmax - zmin).max(MIN_EXTENT);
    let (x, y) = (c * uc - s * vc, s * uc + c * vc);
    let (l, w, alpha) = if du >= dv {
        (du, dv, theta)
    } else {
        (dv, du, theta + FRAC_PI_2)
    };
    Box3D {
        x,
        y,
        z: (zmin + zmax) / 2.0,
        l,
        w,
        h,
        alpha: normalize_half_angle(alpha),
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    /// Points spaced along the boundary of an l x w rectangle at yaw `a`.
    fn rectangle_outline(l: f64, w: f64, a: f64, cx: f64, cy: f64) -> Vec<Point> {
        let mut local = Vec::new();
        let steps = 40;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            local.push((-l / 2.0 + t * l, -w / 2.0));
            local.push((-l / 2.0 + t * l, w / 2.0));
            local.push((-l / 2.0, -w / 2.0 + t * w));
            local.push((l / 2.0, -w / 2.0 + t * w));
        }
        let (s, c) = a.sin_cos();
        local
            .into_iter()
            .enumerate()
            .map(|(i, (u, v))| Point::new(cx + c * u - s * v, cy + s * u + c * v, (i % 3) as f64 * 0.5, 0.0))
            .collect()
    }

    #[test]
    fn aligned_rectangle() {
        let b = fit_box(&rectangle_outline(4.0, 2.0, 0.0, 3.0, -1.0), 3).unwrap();
        assert!((b.l - 4.0).abs() < 1e-6 && (b.w - 2.0).abs() < 1e-6);
        assert!(b.alpha.abs() < 1e-6);
        assert!((b.x - 3.0).abs() < 1e-6 && (b.y + 1.0).abs() < 1e-6);
        assert!((b.z - 0.5).abs() < 1e-12 && (b.h - 1.0).abs() < 1e-12);
    }

    /// Independent oracle: a half-degree search over the full circle
    /// scoring the enclosing-rectangle area, which for a full outline is
    /// minimized at the true yaw.
    fn area_oracle(points: &[Point]) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..720 {
            let a = (k as f64 * 0.5).to_radians();
            let (s, c) = a.sin_cos();
            let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for p in points {
                let u = c * p.x + s * p.y;
                let v = -s * p.x + c * p.y;
                u0 = u0.min(u);
                u1 = u1.max(u);
                v0 = v0.min(v);
                v1 = v1.max(v);
            }
            let area = (u1 - u0) * (v1 - v0);
            if area < best.0 - 1e-9 && (u1 - u0) >= (v1 - v0) {
                best = (area, a);
            }
        }
        best.1
    }

    fn axis_diff(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(PI);
        d.min(PI - d)
    }

    #[test]
    fn rotated_rectangle_matches_search_oracle() {
        let pts = rectangle_outline(4.0, 2.0, 30f64.to_radians(), 0.0, 0.0);
        let b = fit_box(&pts, 3).unwrap();
        let oracle = area_oracle(&pts);
        assert!(axis_diff(b.alpha, 30f64.to_radians()) < 1f64.to_radians());
        assert!(axis_diff(b.alpha, oracle) < 1f64.to_radians());
        assert!((b.l - 4.0).abs() < 1e-6 && (b.w - 2.0).abs() < 1e-6);
    }

    #[test]
    fn collinear_points_get_min_width() {
        let pts: Vec<Point> = (0..10).map(|i| Point::new(i as f64 * 0.3, 0.0, 1.0, 0.0)).collect();
        let b = fit_box(&pts, 3).unwrap();
        assert!((b.w - MIN_EXTENT).abs() < 1e-12);
        assert!((b.h - MIN_EXTENT).abs() < 1e-12);
        assert!((b.l - 2.7).abs() < 1e-9);
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(fit_box(&[Point::new(0.0, 0.0, 0.0, 0.0)], 5).is_err());
        assert!(fit_box(&[], 0).is_err());
    }

    #[test]
    fn fitted_box_encloses_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let pts: Vec<Point> = (0..rng.random_range(3..60))
                .map(|_| {
                    Point::new(
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-1.0..2.0),
                        rng.random_range(0.0..2.0),
                        0.0,
                    )
                })
                .collect();
            let b = fit_box(&pts, 3).unwrap();
            assert!((-FRAC_PI_2..FRAC_PI_2).contains(&b.alpha));
            for p in &pts {
                let q = b.to_local(p);
                assert!(q.x.abs() <= b.l / 2.0 + 1e-6 && q.y.abs() <= b.w / 2.0 + 1e-6);
                assert!(q.z.abs() <= b.h / 2.0 + 1e-12);
            }
        }
    }
}
