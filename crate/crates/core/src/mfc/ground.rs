//! Tiled RANSAC ground removal.
//!
//! The cloud is cut into square tiles in the ego xy plane. Each tile gets
//! its own plane hypothesis search (three-point samples), scored by inlier
//! count minus the number of points well below the plane, so that a
//! horizontal slice through an object never beats the real ground. The
//! winning plane is refit on its inliers by least squares.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppscore::AggregatedCloud;
use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundConfig {
    /// Max distance from the plane for a ground inlier, meters.
    pub inlier_dist: f64,
    pub tile_size: f64,
    pub iterations: usize,
    /// Hypotheses are scored on at most this many points per tile.
    pub score_sample: usize,
    /// Largest tilt of an accepted ground plane, degrees.
    pub max_slope_deg: f64,
    pub seed: u64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        Self {
            inlier_dist: 0.15,
            tile_size: 20.0,
            iterations: 200,
            score_sample: 512,
            max_slope_deg: 15.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GroundStatus {
    Ok,
    /// Fewer than three points; nothing was removed.
    TooFewPoints,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundRemoval {
    pub cloud: AggregatedCloud,
    pub status: GroundStatus,
    pub removed: usize,
    /// Tiles that had points but no acceptable plane.
    pub tiles_without_plane: usize,
}

/// Plane `z = a x + b y + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Plane {
    fn through(p: &Point, q: &Point, r: &Point, max_slope: f64) -> Option<Plane> {
        let u = Vector3::new(q.x - p.x, q.y - p.y, q.z - p.z);
        let v = Vector3::new(r.x - p.x, r.y - p.y, r.z - p.z);
        let n = u.cross(&v);
        let norm = n.norm();
        if norm < 1e-9 || n.z.abs() / norm < max_slope.cos() {
            return None;
        }
        let (a, b) = (-n.x / n.z, -n.y / n.z);
        Some(Plane {
            a,
            b,
            c: p.z - a * p.x - b * p.y,
        })
    }

    /// Vertical offset of `p` above the plane, scaled to the normal
    /// distance.
    pub fn signed_distance(&self, p: &Point) -> f64 {
        (p.z - self.a * p.x - self.b * p.y - self.c) / (1.0 + self.a * self.a + self.b * self.b).sqrt()
    }

    fn least_squares(points: &[&Point]) -> Option<Plane> {
        let mut ata = Matrix3::zeros();
        let mut atb = Vector3::zeros();
        for p in points {
            let row = Vector3::new(p.x, p.y, 1.0);
            ata += row * row.transpose();
            atb += row * p.z;
        }
        let sol = ata.lu().solve(&atb)?;
        sol.iter().all(|v| v.is_finite()).then(|| Plane {
            a: sol.x,
            b: sol.y,
            c: sol.z,
        })
    }
}

fn tile_key(p: &Point, size: f64) -> (i64, i64) {
    ((p.x / size).floor() as i64, (p.y / size).floor() as i64)
}

/// Fits the ground plane of one tile. `salt` decorrelates the random
/// stream between tiles and calls.
pub fn fit_ground_plane(points: &[&Point], config: &GroundConfig, salt: u64) -> Option<Plane> {
    if points.len() < 3 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let scoring: Vec<&Point> = if points.len() > config.score_sample {
        sample(&mut rng, points.len(), config.score_sample)
            .into_iter()
            .map(|i| points[i])
            .collect()
    } else {
        points.to_vec()
    };
    let max_slope = config.max_slope_deg.to_radians();
    let d = config.inlier_dist;
    let mut best: Option<(i64, Plane)> = None;
    for _ in 0..config.iterations {
        let i = rng.random_range(0..points.len());
        let j = rng.random_range(0..points.len());
        let k = rng.random_range(0..points.len());
        if i == j || j == k || i == k {
            continue;
        }
        let Some(plane) = Plane::through(points[i], points[j], points[k], max_slope) else {
            continue;
        };
        let mut score = 0i64;
        for p in &scoring {
            let s = plane.signed_distance(p);
            if s.abs() <= d {
                score += 1;
            } else if s < -d {
                score -= 1;
            }
        }
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, plane));
        }
    }
    let (score, plane) = best?;
    if score < 3 {
        return None;
    }
    let inliers: Vec<&Point> = points
        .iter()
        .copied()
        .filter(|p| plane.signed_distance(p).abs() <= d)
        .collect();
    let refit = Plane::least_squares(&inliers)
        .filter(|r| (1.0 / (1.0 + r.a * r.a + r.b * r.b).sqrt()) >= max_slope.cos())
        .unwrap_or(plane);
    Some(refit)
}

/// Removes points on or below the per-tile ground plane.
pub fn remove_ground(cloud: &AggregatedCloud, config: &GroundConfig) -> GroundRemoval {
    if cloud.len() < 3 {
        return GroundRemoval {
            cloud: cloud.clone(),
            status: GroundStatus::TooFewPoints,
            removed: 0,
            tiles_without_plane: 0,
        };
    }
    let mut tiles: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        tiles.entry(tile_key(p, config.tile_size)).or_default().push(i);
    }
    let mut ground = vec![false; cloud.len()];
    let mut without_plane = 0;
    for (key, idx) in &tiles {
        let pts: Vec<&Point> = idx.iter().map(|&i| &cloud.points[i]).collect();
        let salt = ((key.0 as u64) << 32) ^ (key.1 as u64 & 0xFFFF_FFFF) ^ ((cloud.center_frame as u64) << 48);
        match fit_ground_plane(&pts, config, salt) {
            Some(plane) => {
                for &i in idx {
                    if plane.signed_distance(&cloud.points[i]) <= config.inlier_dist {
                        ground[i] = true;
                    }
                }
            }
            None => without_plane += 1,
        }
    }
    let removed = ground.iter().filter(|g| **g).count();
    GroundRemoval {
        cloud: cloud.select(|i| !ground[i]),
        status: GroundStatus::Ok,
        removed,
        tiles_without_plane: without_plane,
    }
}
