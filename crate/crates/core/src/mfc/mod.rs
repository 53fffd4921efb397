//! Multi-frame clustering: initial pseudo-labels from a raw sequence.
//!
//! Per center frame: persistence-filtered aggregation of the surrounding
//! frames, ground removal, DBSCAN, box fitting and size classification.
//! Then, across the whole sequence: tracking and per-track size smoothing.

pub mod boxfit;
pub mod classify;
pub mod dbscan;
pub mod ground;
pub mod ppscore;
pub mod tracking;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use boxfit::fit_box;
pub use classify::{classify_box, ClassRule, ClassThresholds, Interval};
pub use dbscan::{cluster_dbscan, Clustering};
pub use ground::{remove_ground, GroundConfig, GroundRemoval, GroundStatus};
pub use ppscore::{compute_ppscore, remove_motion_artifacts, AggregatedCloud, PpScores};
pub use tracking::{smooth_tracks, track_boxes, Detection, FrameDetections, Track, TrackedBox, TrackerConfig};

use crate::error::{Error, Result};
use crate::geometry::{IouMode, Point};
use crate::scene::{Class, Label, Sequence};
use ppscore::{aggregate_with_table, PresenceTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfcConfig {
    /// Past/future frames on each side of the center frame.
    pub n: usize,
    pub ppscore_radius: f64,
    pub ppscore_threshold: f64,
    pub ground_inlier_dist: f64,
    pub ground_tile_size: f64,
    pub ground_iterations: usize,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub min_cluster_points: usize,
    pub class_thresholds: ClassThresholds,
    pub track_iou_min: f64,
    pub track_max_gap: u32,
    pub track_iou_mode: IouMode,
    /// Seeds the ground-removal sampler.
    pub seed: u64,
}

impl Default for MfcConfig {
    fn default() -> Self {
        Self {
            n: 5,
            ppscore_radius: 0.5,
            ppscore_threshold: 0.5,
            ground_inlier_dist: 0.15,
            ground_tile_size: 20.0,
            ground_iterations: 200,
            dbscan_eps: 0.7,
            dbscan_min_pts: 5,
            min_cluster_points: 10,
            class_thresholds: ClassThresholds::default(),
            track_iou_min: 0.1,
            track_max_gap: 2,
            track_iou_mode: IouMode::Bev,
            seed: 0,
        }
    }
}

impl MfcConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ppscore_radius", self.ppscore_radius),
            ("ground_inlier_dist", self.ground_inlier_dist),
            ("ground_tile_size", self.ground_tile_size),
            ("dbscan_eps", self.dbscan_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("mfc.{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.ppscore_threshold) {
            return Err(Error::Config(format!(
                "mfc.ppscore_threshold must be in [0, 1], got {}",
                self.ppscore_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.track_iou_min) {
            return Err(Error::Config(format!(
                "mfc.track_iou_min must be in [0, 1], got {}",
                self.track_iou_min
            )));
        }
        if self.dbscan_min_pts < 1 || self.ground_iterations < 1 {
            return Err(Error::Config(
                "mfc.dbscan_min_pts and mfc.ground_iterations must be >= 1".into(),
            ));
        }
        self.class_thresholds.validate()
    }

    pub fn ground(&self) -> GroundConfig {
        GroundConfig {
            inlier_dist: self.ground_inlier_dist,
            tile_size: self.ground_tile_size,
            iterations: self.ground_iterations,
            seed: self.seed,
            ..GroundConfig::default()
        }
    }

    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            iou_min: self.track_iou_min,
            max_gap: self.track_max_gap,
            mode: self.track_iou_mode,
        }
    }
}

/// Counters collected while labeling one sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MfcStats {
    pub frames: usize,
    pub aggregated_points: usize,
    pub ground_points: usize,
    pub clusters: usize,
    pub small_clusters_skipped: usize,
    pub discard_large: usize,
    pub detections: usize,
    pub tracks: usize,
    pub labels: usize,
}

/// Labels plus the cluster points each one was fitted to, aligned by
/// position. Cluster points are in the label frame's ego coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLabels {
    pub labels: Vec<Label>,
    pub clusters: Vec<Vec<Point>>,
    pub stats: MfcStats,
}

struct FrameOutput {
    detections: FrameDetections,
    clusters: Vec<Vec<Point>>,
    stats: MfcStats,
}

fn label_frame(cloud: &AggregatedCloud, config: &MfcConfig) -> FrameOutput {
    let mut stats = MfcStats {
        frames: 1,
        aggregated_points: cloud.len(),
        ..Default::default()
    };
    let ground = remove_ground(cloud, &config.ground());
    if ground.status == GroundStatus::TooFewPoints {
        debug!("frame {}: too few points for ground removal", cloud.center_frame);
    }
    stats.ground_points = ground.removed;
    let pts = &ground.cloud.points;
    let clustering = cluster_dbscan(pts, config.dbscan_eps, config.dbscan_min_pts);
    stats.clusters = clustering.num_clusters;
    let mut detections = Vec::new();
    let mut clusters = Vec::new();
    for members in clustering.members() {
        if members.len() < config.min_cluster_points {
            stats.small_clusters_skipped += 1;
            continue;
        }
        let cluster: Vec<Point> = members.iter().map(|&i| pts[i]).collect();
        let bbox = fit_box(&cluster, config.min_cluster_points).expect("cluster size checked above");
        let class = config.class_thresholds.classify(&bbox);
        if class == Class::DiscardLarge {
            stats.discard_large += 1;
            continue;
        }
        let n = cluster.len() as f64;
        let centroid = cluster
            .iter()
            .fold([0.0; 3], |a, p| [a[0] + p.x / n, a[1] + p.y / n, a[2] + p.z / n]);
        detections.push(Detection { bbox, class, centroid });
        clusters.push(cluster);
    }
    stats.detections = detections.len();
    FrameOutput {
        detections: FrameDetections {
            frame_index: cloud.center_frame,
            detections,
        },
        clusters,
        stats,
    }
}

/// Runs the full multi-frame clustering pipeline on one sequence.
///
/// Output labels are ordered by (frame, track). `DiscardLarge` boxes never
/// reach the tracker and unmatched `DiscardSmall` boxes are dropped there.
pub fn generate_initial_labels(sequence: &Sequence, config: &MfcConfig) -> Result<InitialLabels> {
    config.validate()?;
    sequence.validate()?;
    let len = sequence.frames.len();
    let table = if config.n <= PresenceTable::MAX_N {
        Some(PresenceTable::build(sequence, config.n, config.ppscore_radius)?)
    } else {
        None
    };
    let outputs: Vec<FrameOutput> = (0..len)
        .into_par_iter()
        .map(|c| {
            let cloud = match &table {
                Some(t) => aggregate_with_table(sequence, t, c, config.n, config.ppscore_threshold),
                None => remove_motion_artifacts(
                    sequence,
                    sequence.frames[c].index,
                    config.n,
                    config.ppscore_radius,
                    config.ppscore_threshold,
                )?,
            };
            Ok(label_frame(&cloud, config))
        })
        .collect::<Result<_>>()?;

    let mut stats = MfcStats::default();
    for o in &outputs {
        stats.frames += o.stats.frames;
        stats.aggregated_points += o.stats.aggregated_points;
        stats.ground_points += o.stats.ground_points;
        stats.clusters += o.stats.clusters;
        stats.small_clusters_skipped += o.stats.small_clusters_skipped;
        stats.discard_large += o.stats.discard_large;
        stats.detections += o.stats.detections;
    }
    let frames: Vec<FrameDetections> = outputs.iter().map(|o| o.detections.clone()).collect();
    let tracks = track_boxes(&frames, &config.tracker());
    stats.tracks = tracks.len();
    let labels = smooth_tracks(&tracks);

    // smooth_tracks emits labels in track-then-frame order, same as here
    let mut paired: Vec<(Label, Vec<Point>)> = Vec::with_capacity(labels.len());
    let mut it = labels.into_iter();
    for t in &tracks {
        for tb in &t.boxes {
            let label = it.next().expect("one label per tracked box");
            let pos = sequence.position_of(tb.frame_index).expect("frame exists");
            paired.push((label, outputs[pos].clusters[tb.detection].clone()));
        }
    }
    paired.sort_by_key(|(l, _)| (l.frame_index, l.tau));
    stats.labels = paired.len();
    let (labels, clusters) = paired.into_iter().unzip();
    Ok(InitialLabels {
        labels,
        clusters,
        stats,
    })
}
