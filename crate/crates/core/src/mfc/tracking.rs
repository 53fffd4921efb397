//! Class-agnostic tracking and temporal size smoothing.

use serde::{Deserialize, Serialize};

use crate::geometry::{Box3D, IouMode};
use crate::scene::{Class, Label};

/// One fitted box in one frame, before tracking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    pub class: Class,
    /// Centroid of the box's cluster points, same frame as `bbox`.
    pub centroid: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_index: u32,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedBox {
    pub frame_index: u32,
    /// Index into the frame's detection list.
    pub detection: usize,
    pub bbox: Box3D,
    pub class: Class,
    pub centroid: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub tau: u64,
    /// Strictly increasing frame indices, at most one box per frame.
    pub boxes: Vec<TrackedBox>,
    pub beta: Class,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub iou_min: f64,
    /// Frames a track may go unmatched before it is closed.
    pub max_gap: u32,
    pub mode: IouMode,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_min: 0.1,
            max_gap: 2,
            mode: IouMode::Bev,
        }
    }
}

impl Track {
    fn last(&self) -> &TrackedBox {
        self.boxes.last().expect("tracks are never empty")
    }

    /// Constant-velocity prediction at `frame_index`.
    fn predict(&self, frame_index: u32) -> Box3D {
        let last = self.last();
        let mut b = last.bbox;
        if self.boxes.len() >= 2 {
            let prev = &self.boxes[self.boxes.len() - 2];
            let dt = (last.frame_index - prev.frame_index) as f64;
            let ahead = (frame_index - last.frame_index) as f64;
            b.x += (last.bbox.x - prev.bbox.x) / dt * ahead;
            b.y += (last.bbox.y - prev.bbox.y) / dt * ahead;
        }
        b
    }

    /// Majority foreground class; ties go to the class seen first.
    fn vote(&self) -> Class {
        let mut counts: Vec<(Class, usize, usize)> = Vec::new();
        for (i, tb) in self.boxes.iter().enumerate() {
            if !tb.class.is_foreground() {
                continue;
            }
            match counts.iter_mut().find(|(c, _, _)| *c == tb.class) {
                Some(e) => e.1 += 1,
                None => counts.push((tb.class, 1, i)),
            }
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
            .map_or(self.beta, |(c, _, _)| c)
    }
}

/// Greedy frame-to-frame association. Pairs are taken by decreasing IoU
/// (ties: lowest track, then lowest detection). Unmatched foreground
/// detections open new tracks; unmatched `DiscardSmall` detections are
/// dropped. Expects frames in increasing index order.
pub fn track_boxes(frames: &[FrameDetections], config: &TrackerConfig) -> Vec<Track> {
    let mut tracks: Vec<Track> = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    for frame in frames {
        let f = frame.frame_index;
        active.retain(|&t| f - tracks[t].last().frame_index <= config.max_gap + 1);
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ai, &t) in active.iter().enumerate() {
            let pred = tracks[t].predict(f);
            for (d, det) in frame.detections.iter().enumerate() {
                let iou = config.mode.iou(&pred, &det.bbox);
                if iou > 0.0 && iou >= config.iou_min {
                    pairs.push((iou, ai, d));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_used = vec![false; active.len()];
        let mut det_used = vec![false; frame.detections.len()];
        for (_, ai, d) in pairs {
            if track_used[ai] || det_used[d] {
                continue;
            }
            track_used[ai] = true;
            det_used[d] = true;
            let det = &frame.detections[d];
            tracks[active[ai]].boxes.push(TrackedBox {
                frame_index: f,
                detection: d,
                bbox: det.bbox,
                class: det.class,
                centroid: det.centroid,
            });
        }
        for (d, det) in frame.detections.iter().enumerate() {
            if det_used[d] || !det.class.is_foreground() {
                continue;
            }
            let tau = tracks.len() as u64;
            tracks.push(Track {
                tau,
                boxes: vec![TrackedBox {
                    frame_index: f,
                    detection: d,
                    bbox: det.bbox,
                    class: det.class,
                    centroid: det.centroid,
                }],
                beta: det.class,
            });
            active.push(tracks.len() - 1);
        }
    }
    for t in &mut tracks {
        t.beta = t.vote();
    }
    tracks
}

/// Lower-middle element for even counts.
pub(crate) fn lower_median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[(values.len() - 1) / 2]
}

/// Resizes `b` to `(l, w, h)` keeping the faces on the side of `anchor`
/// (a point in the same frame) fixed, and the bottom face fixed.
pub(crate) fn resize_anchored(b: &Box3D, size: [f64; 3], anchor: [f64; 3]) -> Box3D {
    let [l, w, h] = size;
    let local = b.to_local(&crate::geometry::Point::new(anchor[0], anchor[1], anchor[2], 0.0));
    let shift = |old: f64, new: f64, side: f64| {
        if old == new || side == 0.0 {
            0.0
        } else {
            side.signum() * (old - new) / 2.0
        }
    };
    let du = shift(b.l, l, local.x);
    let dv = shift(b.w, w, local.y);
    let (s, c) = b.alpha.sin_cos();
    Box3D {
        x: b.x + c * du - s * dv,
        y: b.y + s * du + c * dv,
        z: if b.h == h { b.z } else { b.z_min() + h / 2.0 },
        l,
        w,
        h,
        alpha: b.alpha,
    }
}

/// Gives every box of a track the track's element-wise median size and
/// emits one label per (track, frame), in track order then frame order.
pub fn smooth_tracks(tracks: &[Track]) -> Vec<Label> {
    let mut out = Vec::new();
    for t in tracks {
        let dims: [f64; 3] = std::array::from_fn(|k| {
            let mut v: Vec<f64> = t.boxes.iter().map(|b| b.bbox.size()[k]).collect();
            lower_median(&mut v)
        });
        for tb in &t.boxes {
            let bbox = resize_anchored(&tb.bbox, dims, tb.centroid);
            out.push(Label::new(tb.frame_index, bbox, t.beta, t.tau));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, y: f64, l: f64, class: Class) -> Detection {
        Detection {
            bbox: Box3D::new(x, y, 0.9, l, 1.9, 1.6, 0.0).unwrap(),
            class,
            centroid: [x, y, 0.9],
        }
    }

    fn frames(per_frame: impl Fn(u32) -> Vec<Detection>, n: u32) -> Vec<FrameDetections> {
        (0..n)
            .map(|f| FrameDetections {
                frame_index: f,
                detections: per_frame(f),
            })
            .collect()
    }

    #[test]
    fn stationary_box_makes_one_track() {
        let fr = frames(|_| vec![det(10.0, 3.0, 4.5, Class::Vehicle)], 11);
        let tracks = track_boxes(&fr, &TrackerConfig::default());
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].boxes.len(), 11);
        assert!(tracks[0].boxes.windows(2).all(|w| w[0].frame_index < w[1].frame_index));
    }

    #[test]
    fn separated_boxes_make_two_tracks() {
        let fr = frames(
            |f| {
                vec![
                    det(f as f64 * 0.5, 0.0, 4.5, Class::Vehicle),
                    det(-(f as f64) * 0.3, 12.0, 4.5, Class::Vehicle),
                ]
            },
            11,
        );
        let tracks = track_boxes(&fr, &TrackerConfig::default());
        assert_eq!(tracks.len(), 2);
        assert!(tracks.iter().all(|t| t.boxes.len() == 11));
    }

    #[test]
    fn fast_mover_followed_by_velocity_prediction() {
        // 3 m per frame: only the constant-velocity prediction overlaps
        let fr = frames(
            |f| {
                vec![det(
                    2.0 + 2.5 * f as f64 + if f == 0 { 0.0 } else { 0.5 * f as f64 },
                    0.0,
                    4.5,
                    Class::Vehicle,
                )]
            },
            6,
        );
        let tracks = track_boxes(&fr, &TrackerConfig::default());
        assert_eq!(tracks.len(), 1, "{tracks:#?}");
    }

    #[test]
    fn discard_small_joins_but_never_starts() {
        let fr = frames(
            |f| {
                let class = if f % 2 == 0 {
                    Class::Pedestrian
                } else {
                    Class::DiscardSmall
                };
                vec![
                    Detection {
                        bbox: Box3D::new(5.0, 5.0, 0.9, 0.7, 0.7, 1.7, 0.0).unwrap(),
                        class,
                        centroid: [5.0, 5.0, 0.9],
                    },
                    det(-20.0, 0.0, 0.5, Class::DiscardSmall),
                ]
            },
            6,
        );
        let tracks = track_boxes(&fr, &TrackerConfig::default());
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].boxes.len(), 6);
        assert_eq!(tracks[0].beta, Class::Pedestrian);
        let labels = smooth_tracks(&tracks);
        assert!(labels.iter().all(|l| l.beta == Class::Pedestrian));
    }

    #[test]
    fn gap_longer_than_allowed_splits_track() {
        let fr: Vec<FrameDetections> = [0u32, 1, 5, 6]
            .iter()
            .map(|&f| FrameDetections {
                frame_index: f,
                detections: vec![det(0.0, 0.0, 4.5, Class::Vehicle)],
            })
            .collect();
        assert_eq!(track_boxes(&fr, &TrackerConfig::default()).len(), 2);
        let cfg = TrackerConfig {
            max_gap: 3,
            ..Default::default()
        };
        assert_eq!(track_boxes(&fr, &cfg).len(), 1);
    }

    #[test]
    fn identical_boxes_unchanged_by_smoothing() {
        let fr = frames(|_| vec![det(10.0, 3.0, 4.5, Class::Vehicle)], 5);
        let tracks = track_boxes(&fr, &TrackerConfig::default());
        for l in smooth_tracks(&tracks) {
            assert_eq!(l.bbox, fr[0].detections[0].bbox);
        }
    }

    #[test]
    fn median_length_and_anchoring() {
        let lengths = [4.0, 4.2, 6.0];
        let fr = frames(
            |f| {
                let mut d = det(10.0, 0.0, lengths[f as usize], Class::Vehicle);
                // points sit near the -x face
                d.centroid = [10.0 - lengths[f as usize] / 2.0 + 0.1, 0.0, 0.9];
                vec![d]
            },
            3,
        );
        let tracks = track_boxes(&fr, &TrackerConfig::default());
        assert_eq!(tracks.len(), 1);
        let labels = smooth_tracks(&tracks);
        for (l, len) in labels.iter().zip(lengths) {
            assert_eq!(l.bbox.l, 4.2);
            let old_min = 10.0 - len / 2.0;
            assert!((l.bbox.x - l.bbox.l / 2.0 - old_min).abs() < 1e-12);
        }
        // size variance within the track is exactly zero
        assert!(labels.windows(2).all(|w| w[0].bbox.size() == w[1].bbox.size()));
    }

    #[test]
    fn lower_median_even() {
        assert_eq!(lower_median(&mut [3.0, 1.0, 4.0, 2.0]), 2.0);
        assert_eq!(lower_median(&mut [5.0]), 5.0);
    }

    #[test]
    fn resize_keeps_bottom_face() {
        let b = Box3D::new(0.0, 0.0, 1.0, 4.0, 2.0, 2.0, 0.7).unwrap();
        let r = resize_anchored(&b, [4.0, 2.0, 1.0], [0.0, 0.0, 1.0]);
        assert!((r.z_min() - b.z_min()).abs() < 1e-12);
        assert_eq!((r.x, r.y), (b.x, b.y));
    }
}
