//! Persistence scoring and motion-artifact-free aggregation.
//!
//! A point's persistence score is the fraction of frames in the window
//! (after moving everything to the global frame) that have at least one
//! point within `radius` of it. Static structure scores near 1; points on
//! movers see no neighbors in most other frames.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{transform_points, Point};
use crate::scene::Sequence;
use crate::spatial::VoxelGrid;

/// Points merged into one frame's ego coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregatedCloud {
    /// Frame index of the ego frame the points are expressed in.
    pub center_frame: u32,
    pub points: Vec<Point>,
    /// Frame index each point came from.
    pub source_frame: Vec<u32>,
}

impl AggregatedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, keep: impl Fn(usize) -> bool) -> AggregatedCloud {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        AggregatedCloud {
            center_frame: self.center_frame,
            points: idx.iter().map(|&i| self.points[i]).collect(),
            source_frame: idx.iter().map(|&i| self.source_frame[i]).collect(),
        }
    }
}

/// Scores for every frame in a window.
#[derive(Debug, Clone, PartialEq)]
pub struct PpScores {
    /// Positions (not indices) of the window's frames in the sequence.
    pub window: Range<usize>,
    /// `scores[k][i]` is the score of point `i` of frame `window.start + k`.
    pub scores: Vec<Vec<f64>>,
}

impl PpScores {
    pub fn frames_in_window(&self) -> usize {
        self.window.len()
    }
}

/// Window of sequence positions around `center`, shrunk at the edges.
pub fn window_around(center: usize, n: usize, len: usize) -> Range<usize> {
    center.saturating_sub(n)..(center + n + 1).min(len)
}

pub(crate) fn center_position(sequence: &Sequence, center: u32) -> Result<usize> {
    sequence
        .position_of(center)
        .ok_or_else(|| Error::Validity(format!("frame {center} not in sequence {:?}", sequence.id)))
}

pub(crate) fn global_points(sequence: &Sequence, range: Range<usize>) -> Result<Vec<Vec<Point>>> {
    sequence.frames[range]
        .par_iter()
        .map(|f| transform_points(&f.points, &f.pose))
        .collect()
}

/// Persistence score of every point in every frame of the window around
/// `center`. Each score is `k / W` where `W` is the window size.
pub fn compute_ppscore(sequence: &Sequence, center: u32, n: usize, radius: f64) -> Result<PpScores> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!(
            "persistence radius must be positive, got {radius}"
        )));
    }
    let c = center_position(sequence, center)?;
    let window = window_around(c, n, sequence.frames.len());
    let globals = global_points(sequence, window.clone())?;
    let grids: Vec<VoxelGrid> = globals.iter().map(|p| VoxelGrid::new(p, radius)).collect();
    let w = window.len() as f64;
    let scores = globals
        .par_iter()
        .map(|pts| {
            pts.iter()
                .map(|p| grids.iter().filter(|g| g.any_within(p, radius)).count() as f64 / w)
                .collect()
        })
        .collect();
    Ok(PpScores { window, scores })
}

/// Per-point neighbor presence against nearby frames, shared by all
/// windows of one sequence. Bit `g - f + span` of `masks[f][i]` is set when
/// frame position `g` has a point within the radius of point `i` of frame
/// position `f`.
pub(crate) struct PresenceTable {
    span: usize,
    globals: Vec<Vec<Point>>,
    masks: Vec<Vec<u64>>,
}

impl PresenceTable {
    /// Largest `n` the bitmask layout supports (window reach `2n` each way).
    pub const MAX_N: usize = 15;

    pub fn build(sequence: &Sequence, n: usize, radius: f64) -> Result<Self> {
        assert!(n <= Self::MAX_N);
        let span = 2 * n;
        let len = sequence.frames.len();
        let globals = global_points(sequence, 0..len)?;
        let grids: Vec<VoxelGrid> = globals.iter().map(|p| VoxelGrid::new(p, radius)).collect();
        let masks = (0..len)
            .into_par_iter()
            .map(|f| {
                let lo = f.saturating_sub(span);
                let hi = (f + span + 1).min(len);
                globals[f]
                    .iter()
                    .map(|p| {
                        let mut m = 0u64;
                        for (g, grid) in grids.iter().enumerate().take(hi).skip(lo) {
                            if g == f || grid.any_within(p, radius) {
                                m |= 1 << (g + span - f);
                            }
                        }
                        m
                    })
                    .collect()
            })
            .collect();
        Ok(Self { span, globals, masks })
    }

    pub fn globals(&self, pos: usize) -> &[Point] {
        &self.globals[pos]
    }

    /// Scores of frame position `f` inside `window`.
    pub fn scores(&self, f: usize, window: &Range<usize>) -> Vec<f64> {
        let mut wmask = 0u64;
        for g in window.clone() {
            if g + self.span >= f && g <= f + self.span {
                wmask |= 1 << (g + self.span - f);
            }
        }
        let w = window.len() as f64;
        self.masks[f]
            .iter()
            .map(|m| (m & wmask).count_ones() as f64 / w)
            .collect()
    }
}

/// Keeps every point of the center frame plus the persistent points of the
/// other frames in the window, all expressed in the center's ego frame.
pub fn remove_motion_artifacts(
    sequence: &Sequence,
    center: u32,
    n: usize,
    radius: f64,
    threshold: f64,
) -> Result<AggregatedCloud> {
    let scores = compute_ppscore(sequence, center, n, radius)?;
    let c = center_position(sequence, center)?;
    let globals = global_points(sequence, scores.window.clone())?;
    Ok(aggregate(
        sequence,
        c,
        &scores.window,
        |k, i| (globals[k][i], scores.scores[k][i]),
        threshold,
    ))
}

pub(crate) fn aggregate_with_table(
    sequence: &Sequence,
    table: &PresenceTable,
    c: usize,
    n: usize,
    threshold: f64,
) -> AggregatedCloud {
    let window = window_around(c, n, sequence.frames.len());
    let scores: Vec<Vec<f64>> = window.clone().map(|f| table.scores(f, &window)).collect();
    aggregate(
        sequence,
        c,
        &window,
        |k, i| (table.globals(window.start + k)[i], scores[k][i]),
        threshold,
    )
}

fn aggregate(
    sequence: &Sequence,
    c: usize,
    window: &Range<usize>,
    global_and_score: impl Fn(usize, usize) -> (Point, f64),
    threshold: f64,
) -> AggregatedCloud {
    let center = &sequence.frames[c];
    let to_center = center.pose.inverse();
    let mut out = AggregatedCloud {
        center_frame: center.index,
        points: center.points.clone(),
        source_frame: vec![center.index; center.points.len()],
    };
    for (k, pos) in window.clone().enumerate() {
        if pos == c {
            continue;
        }
        let frame = &sequence.frames[pos];
        for i in 0..frame.points.len() {
            let (g, s) = global_and_score(k, i);
            if s >= threshold {
                out.points.push(to_center.apply_point(&g));
                out.source_frame.push(frame.index);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;

    use super::*;
    use crate::geometry::Pose;
    use crate::scene::Frame;

    /// A wall seen from an ego moving along x, plus one point that jumps
    /// 3 m per frame.
    fn wall_and_mover(frames: usize) -> Sequence {
        let frames = (0..frames)
            .map(|k| {
                let ego_x = k as f64 * 0.5;
                let mut pts: Vec<Point> = (0..20)
                    .map(|j| Point::new(j as f64 * 0.2 - ego_x, 5.0, 1.0, 0.3))
                    .collect();
                pts.push(Point::new(3.0 * k as f64 - ego_x, -4.0, 1.0, 0.9));
                Frame {
                    index: k as u32,
                    timestamp: k as f64 * 0.1,
                    pose: Pose::from_translation(ego_x, 0.0, 0.0),
                    points: pts,
                }
            })
            .collect();
        Sequence {
            id: "wm".into(),
            frames,
        }
    }

    #[test]
    fn static_wall_scores_one_and_mover_one_eleventh() {
        let seq = wall_and_mover(11);
        let s = compute_ppscore(&seq, 5, 5, 0.3).unwrap();
        assert_eq!(s.frames_in_window(), 11);
        for frame_scores in &s.scores {
            for &v in &frame_scores[..20] {
                assert_eq!(v, 1.0);
            }
            assert!((frame_scores[20] - 1.0 / 11.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_frame_window_scores_one() {
        let seq = wall_and_mover(11);
        let s = compute_ppscore(&seq, 3, 0, 0.3).unwrap();
        assert_eq!(s.window, 3..4);
        assert!(s.scores[0].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn window_shrinks_at_edges() {
        assert_eq!(window_around(0, 5, 11), 0..6);
        assert_eq!(window_around(10, 5, 11), 5..11);
        assert_eq!(window_around(5, 5, 11), 0..11);
        assert_eq!(window_around(1, 5, 3), 0..3);
    }

    #[test]
    fn scores_are_multiples_of_window_fraction_and_monotone_in_radius() {
        let seq = wall_and_mover(11);
        let small = compute_ppscore(&seq, 5, 5, 0.15).unwrap();
        let large = compute_ppscore(&seq, 5, 5, 2.0).unwrap();
        for (a, b) in small.scores.iter().flatten().zip(large.scores.iter().flatten()) {
            let k = a * 11.0;
            assert!((k - k.round()).abs() < 1e-9);
            assert!(b >= a);
        }
    }

    #[test]
    fn aggregation_drops_mover_keeps_center() {
        let seq = wall_and_mover(11);
        let agg = remove_motion_artifacts(&seq, 5, 5, 0.3, 0.5).unwrap();
        // 11 copies of the wall, one mover point from the center frame
        assert_eq!(agg.len(), 11 * 20 + 1);
        let center_pts = &seq.frames[5].points;
        assert_eq!(&agg.points[..center_pts.len()], center_pts.as_slice());
        // wall copies land on the center frame's wall
        for p in &agg.points[..] {
            if p.intensity == 0.3 {
                assert!((p.y - 5.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn static_only_keeps_everything() {
        let mut seq = wall_and_mover(7);
        for f in &mut seq.frames {
            f.points.pop();
        }
        let total: usize = seq.frames.iter().map(|f| f.points.len()).sum();
        let agg = remove_motion_artifacts(&seq, 3, 3, 0.3, 0.5).unwrap();
        assert_eq!(agg.len(), total);
    }

    #[test]
    fn presence_table_agrees_with_direct_scores() {
        let mut seq = wall_and_mover(11);
        seq.frames[4].pose = Pose::from_yaw(0.3, Vector3::new(2.0, 0.0, 0.0));
        let table = PresenceTable::build(&seq, 3, 0.3).unwrap();
        for c in 0..11 {
            let direct = compute_ppscore(&seq, c as u32, 3, 0.3).unwrap();
            for (k, f) in direct.window.clone().enumerate() {
                assert_eq!(table.scores(f, &direct.window), direct.scores[k]);
            }
            assert_eq!(
                aggregate_with_table(&seq, &table, c, 3, 0.5),
                remove_motion_artifacts(&seq, c as u32, 3, 0.3, 0.5).unwrap()
            );
        }
    }

    #[test]
    fn unknown_center_is_an_error() {
        assert!(compute_ppscore(&wall_and_mover(3), 9, 1, 0.3).is_err());
    }
}
