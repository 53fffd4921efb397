//! Reference implementations shared by the integration suites. They are
//! written independently of the library: boxes are tested point by point
//! and clusters come from an all-pairs neighbor graph.

#![allow(dead_code)]

use pseudolabel::{Box3D, Point};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn inside_footprint(b: &Box3D, x: f64, y: f64) -> bool {
    let (s, c) = b.alpha.sin_cos();
    let (dx, dy) = (x - b.x, y - b.y);
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.abs() <= b.l / 2.0 && v.abs() <= b.w / 2.0
}

fn inside(b: &Box3D, x: f64, y: f64, z: f64) -> bool {
    (z - b.z).abs() <= b.h / 2.0 && inside_footprint(b, x, y)
}

fn footprint_aabb(b: &Box3D) -> [f64; 4] {
    let (s, c) = b.alpha.sin_cos();
    let ex = (c * b.l).abs() / 2.0 + (s * b.w).abs() / 2.0;
    let ey = (s * b.l).abs() / 2.0 + (c * b.w).abs() / 2.0;
    [b.x - ex, b.x + ex, b.y - ey, b.y + ey]
}

/// Axis-aligned bounds of both boxes: [x0, x1, y0, y1, z0, z1].
fn union_bounds(a: &Box3D, b: &Box3D) -> [f64; 6] {
    let (fa, fb) = (footprint_aabb(a), footprint_aabb(b));
    [
        fa[0].min(fb[0]),
        fa[1].max(fb[1]),
        fa[2].min(fb[2]),
        fa[3].max(fb[3]),
        (a.z - a.h / 2.0).min(b.z - b.h / 2.0),
        (a.z + a.h / 2.0).max(b.z + b.h / 2.0),
    ]
}

/// Stratified Monte-Carlo IoU: the union's bounding volume is cut into
/// about `samples` equal cells with one uniform sample in each.
pub fn mc_iou(a: &Box3D, b: &Box3D, samples: usize, bev: bool, rng: &mut ChaCha8Rng) -> f64 {
    let [x0, x1, y0, y1, z0, z1] = union_bounds(a, b);
    let dims = if bev { 2 } else { 3 };
    let k = (samples as f64).powf(1.0 / dims as f64).round().max(1.0) as usize;
    let kz = if bev { 1 } else { k };
    let (sx, sy, sz) = ((x1 - x0) / k as f64, (y1 - y0) / k as f64, (z1 - z0) / kz as f64);
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..k {
        for j in 0..k {
            for m in 0..kz {
                let x = x0 + (i as f64 + rng.random::<f64>()) * sx;
                let y = y0 + (j as f64 + rng.random::<f64>()) * sy;
                let (ia, ib) = if bev {
                    (inside_footprint(a, x, y), inside_footprint(b, x, y))
                } else {
                    let z = z0 + (m as f64 + rng.random::<f64>()) * sz;
                    (inside(a, x, y, z), inside(b, x, y, z))
                };
                inter += usize::from(ia && ib);
                union += usize::from(ia || ib);
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// A random box pair that usually overlaps, dimensions in [0.5, 6] m.
pub fn random_box_pair(rng: &mut ChaCha8Rng) -> (Box3D, Box3D) {
    let mut one = |cx: f64, cy: f64, cz: f64| {
        Box3D::new(
            cx + rng.random_range(-2.0..2.0),
            cy + rng.random_range(-2.0..2.0),
            cz + rng.random_range(-1.0..1.0),
            rng.random_range(0.5..6.0),
            rng.random_range(0.5..6.0),
            rng.random_range(0.5..6.0),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        )
        .expect("valid box")
    };
    let a = one(0.0, 0.0, 0.0);
    let b = one(a.x, a.y, a.z);
    (a, b)
}

/// Core-point partition from the all-pairs neighbor graph: `Some(r)` for a
/// core point whose component's smallest member index is `r`, `None`
/// otherwise.
pub fn brute_core_partition(points: &[Point], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let e2 = eps * eps;
    let near = |i: usize, j: usize| {
        let (p, q) = (&points[i], &points[j]);
        (p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2) <= e2
    };
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
        .collect();
    let mut root: Vec<Option<usize>> = vec![None; n];
    for s in 0..n {
        if !core[s] || root[s].is_some() {
            continue;
        }
        root[s] = Some(s);
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if core[j] && root[j].is_none() && near(i, j) {
                    root[j] = Some(s);
                    stack.push(j);
                }
            }
        }
    }
    root
}

/// The library's clustering reduced to the same canonical form.
pub fn canonical_core_partition(labels: &[Option<usize>], core: &[bool]) -> Vec<Option<usize>> {
    let mut first = std::collections::HashMap::new();
    for (i, (l, c)) in labels.iter().zip(core).enumerate() {
        if let (Some(id), true) = (l, c) {
            first.entry(*id).or_insert(i);
        }
    }
    labels
        .iter()
        .zip(core)
        .map(|(l, c)| if *c { l.map(|id| first[&id]) } else { None })
        .collect()
}

/// Blobs of points plus uniform clutter, at most `max_points` in total.
pub fn random_cloud(rng: &mut ChaCha8Rng, max_points: usize) -> Vec<Point> {
    let n = rng.random_range(1..=max_points);
    let blobs: Vec<[f64; 3]> = (0..rng.random_range(1..6))
        .map(|_| {
            [
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(0.0..2.0),
            ]
        })
        .collect();
    (0..n)
        .map(|_| {
            if rng.random_bool(0.8) {
                let c = blobs[rng.random_range(0..blobs.len())];
                Point::new(
                    c[0] + rng.random_range(-1.5..1.5),
                    c[1] + rng.random_range(-1.5..1.5),
                    c[2] + rng.random_range(-0.8..0.8),
                    0.0,
                )
            } else {
                Point::new(
                    rng.random_range(-12.0..12.0),
                    rng.random_range(-12.0..12.0),
                    rng.random_range(-1.0..3.0),
                    0.0,
                )
            }
        })
        .collect()
}
