//! Synthetic LiDAR sequences with exact ground truth.
//!
//! Cuboid objects on a flat ground plane `z = 0`, an ego vehicle driving
//! along +x, and a sensor that only sees faces turned toward it. Point
//! density on a surface falls off with the squared distance and with the
//! incidence angle. With occlusion on, samples whose line of sight crosses
//! another object are dropped. Coordinates are rounded to `f32` so that
//! written sequences read back identically.

use std::collections::BTreeMap;

use log::debug;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Box3D, Point, Pose};
use crate::mfc::ClassThresholds;
use crate::scene::{Class, Frame, Label, Sequence};

const GROUND_INTENSITY: f64 = 0.1;
const PLACEMENT_ATTEMPTS: usize = 2000;
const INSET: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeRange {
    pub l: [f64; 2],
    pub w: [f64; 2],
    pub h: [f64; 2],
}

pub fn default_size_ranges() -> BTreeMap<Class, SizeRange> {
    BTreeMap::from([
        (
            Class::Vehicle,
            SizeRange {
                l: [3.8, 5.2],
                w: [1.7, 2.1],
                h: [1.4, 1.9],
            },
        ),
        (
            Class::Pedestrian,
            SizeRange {
                l: [0.5, 0.9],
                w: [0.5, 0.9],
                h: [1.6, 1.9],
            },
        ),
        (
            Class::Cyclist,
            SizeRange {
                l: [1.6, 2.0],
                w: [0.6, 0.9],
                h: [1.7, 2.0],
            },
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_frames: usize,
    /// Seconds between frames.
    pub frame_dt: f64,
    /// Meters per second along +x.
    pub ego_speed: f64,
    pub object_counts: BTreeMap<Class, usize>,
    pub size_ranges: BTreeMap<Class, SizeRange>,
    /// Speed interval of moving objects per class, m/s.
    pub speed_ranges: BTreeMap<Class, [f64; 2]>,
    pub moving_fraction: f64,
    /// Fraction of static objects parked parallel to the road; the rest
    /// get a uniform random heading.
    pub parked_fraction: f64,
    /// Heading spread of parked objects and movers around the road
    /// direction, radians (uniform half-width).
    pub heading_jitter: f64,
    /// Object dimensions share one latent position within their class
    /// ranges, perturbed per dimension by this fraction of the range (a
    /// standard deviation). Large values make dimensions independent.
    pub size_jitter: f64,
    /// Points per square meter on a surface facing the sensor at 10 m.
    pub point_density_at_10m: f64,
    pub ground_density_at_10m: f64,
    /// Ground is sampled within this distance of the ego.
    pub ground_range: f64,
    /// Objects are placed within this distance of the ego path midpoint.
    pub range_max: f64,
    pub min_spawn_distance: f64,
    /// Objects keep this lateral clearance from the ego path.
    pub lane_half_width: f64,
    /// Minimum footprint gap between objects, meters.
    pub object_gap: f64,
    pub occlusion: bool,
    pub noise_sigma: f64,
    pub sensor_height: f64,
    /// Faces seen at an incidence cosine at or below this return nothing.
    pub grazing_cos: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_frames: 11,
            frame_dt: 0.1,
            ego_speed: 10.0,
            object_counts: BTreeMap::from([(Class::Vehicle, 10), (Class::Pedestrian, 6), (Class::Cyclist, 4)]),
            size_ranges: default_size_ranges(),
            speed_ranges: BTreeMap::from([
                (Class::Vehicle, [4.0, 10.0]),
                (Class::Pedestrian, [0.8, 1.6]),
                (Class::Cyclist, [3.0, 6.0]),
            ]),
            moving_fraction: 0.3,
            parked_fraction: 0.8,
            heading_jitter: 0.1,
            size_jitter: 0.1,
            point_density_at_10m: 60.0,
            ground_density_at_10m: 4.0,
            ground_range: 50.0,
            range_max: 80.0,
            min_spawn_distance: 4.0,
            lane_half_width: 3.0,
            object_gap: 1.5,
            occlusion: true,
            noise_sigma: 0.02,
            sensor_height: 1.8,
            grazing_cos: 0.01,
        }
    }
}

impl SynthConfig {
    /// Checks the config, including that every class's size ranges are
    /// classified back to that class by `thresholds`.
    pub fn validate(&self, thresholds: &ClassThresholds) -> Result<()> {
        let bad = |m: String| Err(Error::Validity(format!("synth config: {m}")));
        if self.num_frames < 1 {
            return bad("num_frames must be >= 1".into());
        }
        let positive = [
            ("frame_dt", self.frame_dt),
            ("point_density_at_10m", self.point_density_at_10m),
            ("ground_density_at_10m", self.ground_density_at_10m),
            ("ground_range", self.ground_range),
            ("range_max", self.range_max),
            ("sensor_height", self.sensor_height),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("ego_speed", self.ego_speed),
            ("min_spawn_distance", self.min_spawn_distance),
            ("lane_half_width", self.lane_half_width),
            ("object_gap", self.object_gap),
            ("noise_sigma", self.noise_sigma),
            ("size_jitter", self.size_jitter),
            ("heading_jitter", self.heading_jitter),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.moving_fraction) {
            return bad(format!(
                "moving_fraction must be in [0, 1], got {}",
                self.moving_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.grazing_cos) {
            return bad(format!("grazing_cos must be in [0, 1), got {}", self.grazing_cos));
        }
        if !(0.0..=1.0).contains(&self.parked_fraction) {
            return bad(format!(
                "parked_fraction must be in [0, 1], got {}",
                self.parked_fraction
            ));
        }
        if self.min_spawn_distance >= self.range_max {
            return bad("min_spawn_distance must be below range_max".into());
        }
        for (&class, &count) in &self.object_counts {
            if count == 0 {
                continue;
            }
            if !class.is_foreground() {
                return bad(format!("cannot generate objects of class {class}"));
            }
            let Some(r) = self.size_ranges.get(&class) else {
                return bad(format!("no size range for {class}"));
            };
            for (name, [lo, hi]) in [("l", r.l), ("w", r.w), ("h", r.h)] {
                if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                    return bad(format!("{class} {name} range [{lo}, {hi}] is not positive and ordered"));
                }
            }
            if !thresholds.covers_ranges(class, r.l, r.w, r.h) {
                return bad(format!(
                    "{class} size ranges are not classified as {class} by the class table"
                ));
            }
            if self.moving_fraction > 0.0 {
                match self.speed_ranges.get(&class) {
                    Some([lo, hi]) if *lo >= 0.0 && lo <= hi && hi.is_finite() => {}
                    _ => return bad(format!("{class} needs a valid speed range")),
                }
            }
        }
        Ok(())
    }

    fn ego_x(&self, k: usize) -> f64 {
        self.ego_speed * self.frame_dt * k as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: u64,
    pub class: Class,
    /// Global box at frame 0.
    pub initial: Box3D,
    /// Global velocity, m/s.
    pub velocity: [f64; 2],
    pub is_moving: bool,
}

impl GtObject {
    pub fn global_box(&self, t: f64) -> Box3D {
        Box3D {
            x: self.initial.x + self.velocity[0] * t,
            y: self.initial.y + self.velocity[1] * t,
            ..self.initial
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub id: u64,
    pub class: Class,
    /// Ego-frame box.
    pub bbox: Box3D,
    pub is_moving: bool,
    /// Points of this object in this frame.
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtFrame {
    pub frame_index: u32,
    pub boxes: Vec<GtBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub objects: Vec<GtObject>,
    pub frames: Vec<GtFrame>,
}

impl GroundTruth {
    /// Total points per object id over the whole sequence.
    pub fn points_per_object(&self) -> BTreeMap<u64, usize> {
        let mut m: BTreeMap<u64, usize> = self.objects.iter().map(|o| (o.id, 0)).collect();
        for f in &self.frames {
            for b in &f.boxes {
                *m.entry(b.id).or_default() += b.points;
            }
        }
        m
    }

    /// One label per (frame, object) for objects with at least
    /// `min_total_points` points over the sequence; `tau` is the object id.
    pub fn labels(&self, min_total_points: usize) -> Vec<Label> {
        let counts = self.points_per_object();
        self.frames
            .iter()
            .flat_map(|f| {
                f.boxes
                    .iter()
                    .filter(|b| counts[&b.id] >= min_total_points)
                    .map(move |b| Label::new(f.frame_index, b.bbox, b.class, b.id))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub sequence: Sequence,
    pub ground_truth: GroundTruth,
    /// Per frame, per point: index into `ground_truth.objects`, `None` for
    /// ground.
    pub owners: Vec<Vec<Option<usize>>>,
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn bev_radius(b: &Box3D) -> f64 {
    (b.l * b.l + b.w * b.w).sqrt() / 2.0
}

fn place_objects(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<GtObject> {
    let duration = config.frame_dt * (config.num_frames - 1) as f64;
    let mid = config.ego_x(config.num_frames - 1) / 2.0;
    let mut placed: Vec<GtObject> = Vec::new();
    let mut next_id = 0u64;
    for (&class, &count) in &config.object_counts {
        let range = config.size_ranges[&class];
        for _ in 0..count {
            let latent: f64 = rng.random();
            let jitter = Normal::new(0.0, config.size_jitter).expect("jitter checked");
            let mut dim = |[lo, hi]: [f64; 2]| lo + (hi - lo) * (latent + jitter.sample(rng)).clamp(0.0, 1.0);
            let (l, w, h) = (dim(range.l), dim(range.w), dim(range.h));
            let moving = rng.random_bool(config.moving_fraction);
            let parked = !moving && rng.random_bool(config.parked_fraction);
            let mut ok = None;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let r = uniform(rng, [config.min_spawn_distance, config.range_max]);
                let phi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let (x, y) = (mid + r * phi.cos(), r * phi.sin());
                let (alpha, velocity) = if moving || parked {
                    // along the road, either direction
                    let dir = if rng.random_bool(0.5) {
                        0.0
                    } else {
                        std::f64::consts::PI
                    };
                    let heading = dir + uniform(rng, [-config.heading_jitter, config.heading_jitter]);
                    let speed = if moving {
                        uniform(rng, config.speed_ranges[&class])
                    } else {
                        0.0
                    };
                    (heading, [speed * heading.cos(), speed * heading.sin()])
                } else {
                    (
                        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                        [0.0, 0.0],
                    )
                };
                let Ok(initial) = Box3D::new(x, y, h / 2.0, l, w, h, alpha) else {
                    continue;
                };
                let cand = GtObject {
                    id: next_id,
                    class,
                    initial,
                    velocity,
                    is_moving: moving,
                };
                if clear_of_everything(&cand, &placed, config, duration) {
                    ok = Some(cand);
                    break;
                }
            }
            match ok {
                Some(o) => {
                    placed.push(o);
                    next_id += 1;
                }
                None => debug!("could not place a {class} without overlap"),
            }
        }
    }
    placed
}

fn clear_of_everything(cand: &GtObject, placed: &[GtObject], config: &SynthConfig, duration: f64) -> bool {
    let steps = config.num_frames.max(2);
    for k in 0..steps {
        let t = duration * k as f64 / (steps - 1) as f64;
        let b = cand.global_box(t);
        let r = bev_radius(&b);
        if b.y.abs() < config.lane_half_width + r {
            return false;
        }
        let ego = config.ego_speed * t;
        if ((b.x - ego).powi(2) + b.y * b.y).sqrt() < config.min_spawn_distance {
            return false;
        }
        for o in placed {
            let ob = o.global_box(t);
            let d = ((b.x - ob.x).powi(2) + (b.y - ob.y).powi(2)).sqrt();
            if d < r + bev_radius(&ob) + config.object_gap {
                return false;
            }
        }
    }
    true
}

/// True when the segment `a -> b` passes through `bx` before reaching `b`.
fn segment_hits_box(a: &Vector3<f64>, b: &Vector3<f64>, bx: &Box3D) -> bool {
    let la = bx.to_local(&Point::new(a.x, a.y, a.z, 0.0));
    let lb = bx.to_local(&Point::new(b.x, b.y, b.z, 0.0));
    let (o, d) = ([la.x, la.y, la.z], [lb.x - la.x, lb.y - la.y, lb.z - la.z]);
    let half = [bx.l / 2.0, bx.w / 2.0, bx.h / 2.0];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k].abs() > half[k] {
                return false;
            }
            continue;
        }
        let (mut ta, mut tb) = ((-half[k] - o[k]) / d[k], (half[k] - o[k]) / d[k]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return false;
        }
    }
    // entering strictly before the endpoint
    t0 < 1.0 - 1e-6 && t1 > 1e-9
}

fn stochastic_round(expected: f64, rng: &mut ChaCha8Rng) -> usize {
    let base = expected.floor();
    base as usize + usize::from(rng.random::<f64>() < expected - base)
}

struct FrameSample {
    points: Vec<Point>,
    owners: Vec<Option<usize>>,
    per_object: Vec<usize>,
}

fn occluded(sensor: &Vector3<f64>, p: &Vector3<f64>, boxes: &[Box3D], skip: Option<usize>) -> bool {
    boxes
        .iter()
        .enumerate()
        .any(|(j, b)| Some(j) != skip && segment_hits_box(sensor, p, b))
}

fn sample_frame(
    config: &SynthConfig,
    objects: &[GtObject],
    boxes: &[Box3D],
    intensities: &[f64],
    k: usize,
) -> FrameSample {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(k as u64 + 1);
    let noise = Normal::new(0.0, config.noise_sigma).expect("sigma checked");
    let sensor = Vector3::new(0.0, 0.0, config.sensor_height);
    let mut points = Vec::new();
    let mut owners = Vec::new();
    let mut per_object = vec![0usize; objects.len()];

    for (i, b) in boxes.iter().enumerate() {
        let (s, c) = b.alpha.sin_cos();
        let (hl, hw, hh) = (b.l / 2.0, b.w / 2.0, b.h / 2.0);
        // (local outward normal, local face center, two local spanning half-vectors)
        type Face = ([f64; 3], [f64; 3], [f64; 3], [f64; 3]);
        let faces: [Face; 5] = [
            ([1.0, 0.0, 0.0], [hl, 0.0, 0.0], [0.0, hw, 0.0], [0.0, 0.0, hh]),
            ([-1.0, 0.0, 0.0], [-hl, 0.0, 0.0], [0.0, hw, 0.0], [0.0, 0.0, hh]),
            ([0.0, 1.0, 0.0], [0.0, hw, 0.0], [hl, 0.0, 0.0], [0.0, 0.0, hh]),
            ([0.0, -1.0, 0.0], [0.0, -hw, 0.0], [hl, 0.0, 0.0], [0.0, 0.0, hh]),
            ([0.0, 0.0, 1.0], [0.0, 0.0, hh], [hl, 0.0, 0.0], [0.0, hw, 0.0]),
        ];
        let to_world_dir = |v: [f64; 3]| Vector3::new(c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]);
        let center = b.center();
        for (n, fc, e1, e2) in faces {
            let normal = to_world_dir(n);
            let face_center = center + to_world_dir(fc);
            let view = sensor - face_center;
            let dist = view.norm();
            let cos = normal.dot(&view) / dist;
            if cos <= config.grazing_cos {
                continue;
            }
            let (u1, u2) = (to_world_dir(e1), to_world_dir(e2));
            let area = 4.0 * u1.norm() * u2.norm();
            let expected = config.point_density_at_10m * (10.0 / dist.max(1.0)).powi(2) * cos * area;
            for _ in 0..stochastic_round(expected, &mut rng) {
                let (a, bb): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let p = face_center + u1 * a + u2 * bb;
                if config.occlusion && occluded(&sensor, &p, boxes, Some(i)) {
                    continue;
                }
                let jitter = Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                let q = b.to_local(&Point::new(p.x + jitter.x, p.y + jitter.y, p.z + jitter.z, 0.0));
                // inset so rounding to f32 cannot push a point outside
                let (il, iw, ih) = (hl - INSET, hw - INSET, hh - INSET);
                let clamped = Point::new(
                    q.x.clamp(-il, il),
                    q.y.clamp(-iw, iw),
                    q.z.clamp(-ih, ih),
                    intensities[i],
                );
                points.push(b.from_local(&clamped));
                owners.push(Some(i));
                per_object[i] += 1;
            }
        }
    }

    // ground in 1 m cells around the ego
    let reach = config.ground_range.ceil() as i64;
    for gx in -reach..reach {
        for gy in -reach..reach {
            let (cx, cy) = (gx as f64 + 0.5, gy as f64 + 0.5);
            let d = (cx * cx + cy * cy).sqrt();
            if d > config.ground_range {
                continue;
            }
            let expected = config.ground_density_at_10m * (10.0 / d.max(5.0)).powi(2);
            for _ in 0..stochastic_round(expected, &mut rng) {
                let x = gx as f64 + rng.random::<f64>();
                let y = gy as f64 + rng.random::<f64>();
                let z = noise.sample(&mut rng);
                let p = Vector3::new(x, y, 0.0);
                let under = boxes.iter().any(|b| {
                    let q = b.to_local(&Point::new(x, y, 0.0, 0.0));
                    q.x.abs() <= b.l / 2.0 && q.y.abs() <= b.w / 2.0
                });
                if under || (config.occlusion && occluded(&sensor, &p, boxes, None)) {
                    continue;
                }
                points.push(Point::new(x, y, z, GROUND_INTENSITY));
                owners.push(None);
            }
        }
    }
    crate::io::quantize_points(&mut points);
    FrameSample {
        points,
        owners,
        per_object,
    }
}

/// Generates a sequence and its ground truth. Deterministic in the config;
/// frames are sampled in parallel from per-frame random streams.
pub fn generate_scene(config: &SynthConfig, thresholds: &ClassThresholds) -> Result<SyntheticScene> {
    config.validate(thresholds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let objects = place_objects(config, &mut rng);
    let intensities: Vec<f64> = objects.iter().map(|_| rng.random_range(0.2..0.9)).collect();

    let frames: Vec<(Frame, GtFrame, Vec<Option<usize>>)> = (0..config.num_frames)
        .into_par_iter()
        .map(|k| {
            let t = config.frame_dt * k as f64;
            let ego = config.ego_x(k);
            let boxes: Vec<Box3D> = objects
                .iter()
                .map(|o| {
                    let g = o.global_box(t);
                    Box3D {
                        x: g.x - ego,
                        alpha: normalize_angle(g.alpha),
                        ..g
                    }
                })
                .collect();
            let sample = sample_frame(config, &objects, &boxes, &intensities, k);
            let gt = GtFrame {
                frame_index: k as u32,
                boxes: objects
                    .iter()
                    .zip(&boxes)
                    .zip(&sample.per_object)
                    .map(|((o, b), &n)| GtBox {
                        id: o.id,
                        class: o.class,
                        bbox: *b,
                        is_moving: o.is_moving,
                        points: n,
                    })
                    .collect(),
            };
            let frame = Frame {
                index: k as u32,
                timestamp: t,
                pose: Pose::from_translation(ego, 0.0, 0.0),
                points: sample.points,
            };
            (frame, gt, sample.owners)
        })
        .collect();

    let mut seq_frames = Vec::with_capacity(frames.len());
    let mut gt_frames = Vec::with_capacity(frames.len());
    let mut owners = Vec::with_capacity(frames.len());
    for (f, g, o) in frames {
        seq_frames.push(f);
        gt_frames.push(g);
        owners.push(o);
    }
    Ok(SyntheticScene {
        sequence: Sequence {
            id: format!("synth_{:016x}", config.seed),
            frames: seq_frames,
        },
        ground_truth: GroundTruth {
            objects,
            frames: gt_frames,
        },
        owners,
    })
}
