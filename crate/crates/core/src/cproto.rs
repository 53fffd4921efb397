//! Commonsense prototypes: one averaged high-quality box plus dense points
//! per track, in a canonical object frame.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Box3D, Point};
use crate::scene::{Class, Label, Sequence};

#[derive(Debug, Clone, PartialEq)]
pub struct CProto {
    /// Centered at the origin with `alpha = 0`.
    pub bbox: Box3D,
    /// Object-frame points.
    pub points: Vec<Point>,
    pub source_tau: u64,
    pub class: Class,
    pub sequence: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CProtoConfig {
    /// Minimum CSS score of a contributing label.
    pub eta: f64,
    /// Points farther than this outside the averaged box are dropped.
    pub trim_margin: f64,
    /// Global displacement per frame above which a track counts as moving.
    pub min_motion: f64,
}

impl Default for CProtoConfig {
    fn default() -> Self {
        Self {
            eta: 0.8,
            trim_margin: 0.3,
            min_motion: 0.2,
        }
    }
}

impl CProtoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("cproto.eta must be in [0, 1], got {}", self.eta)));
        }
        if !(self.trim_margin >= 0.0) || !(self.min_motion >= 0.0) {
            return Err(Error::Config(
                "cproto.trim_margin and cproto.min_motion must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CProtoBuild {
    pub protos: Vec<CProto>,
    /// Tracks without any label at or above `eta`.
    pub skipped_tracks: usize,
}

/// Builds one prototype per track with at least one label scoring at least
/// `eta`. Prototypes come out in ascending track order.
///
/// With `sequence` given, label frames' poses resolve heading ambiguity for
/// moving tracks and the sequence id is recorded on each prototype.
pub fn build_cproto_set(
    labels: &[Label],
    clouds: &[Vec<Point>],
    sequence: Option<&Sequence>,
    config: &CProtoConfig,
) -> Result<CProtoBuild> {
    config.validate()?;
    if labels.len() != clouds.len() {
        return Err(Error::Validity(format!(
            "{} labels but {} cluster clouds",
            labels.len(),
            clouds.len()
        )));
    }
    let mut tracks: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        if l.css.is_none() {
            return Err(Error::Validity(format!(
                "label {i} (frame {}, track {}) has no CSS score",
                l.frame_index, l.tau
            )));
        }
        tracks.entry(l.tau).or_default().push(i);
    }
    let built: Vec<Option<CProto>> = tracks
        .into_par_iter()
        .map(|(tau, members)| {
            let mut selected: Vec<usize> = members
                .into_iter()
                .filter(|&i| labels[i].score() >= config.eta)
                .collect();
            if selected.is_empty() {
                return Ok(None);
            }
            selected.sort_by_key(|&i| labels[i].frame_index);
            build_one(tau, &selected, labels, clouds, sequence, config).map(Some)
        })
        .collect::<Result<_>>()?;
    let skipped_tracks = built.iter().filter(|p| p.is_none()).count();
    Ok(CProtoBuild {
        protos: built.into_iter().flatten().collect(),
        skipped_tracks,
    })
}

fn build_one(
    tau: u64,
    selected: &[usize],
    labels: &[Label],
    clouds: &[Vec<Point>],
    sequence: Option<&Sequence>,
    config: &CProtoConfig,
) -> Result<CProto> {
    let n = selected.len() as f64;
    let mut size = [0.0; 3];
    for &i in selected {
        for (acc, v) in size.iter_mut().zip(labels[i].bbox.size()) {
            *acc += v;
        }
    }
    let [l, w, h] = size.map(|s| s / n);
    let bbox = Box3D::new(0.0, 0.0, 0.0, l, w, h, 0.0)?;

    let motion = sequence.and_then(|s| global_motion(selected, labels, s, config.min_motion));
    let mut points = Vec::new();
    for &i in selected {
        let label = &labels[i];
        let flip = match (&motion, sequence) {
            (Some(m), Some(s)) => {
                let heading = global_heading(label, s);
                heading[0] * m[0] + heading[1] * m[1] < 0.0
            }
            _ => denser_half_is_negative(&label.bbox, &clouds[i]),
        };
        let mut frame = label.bbox;
        if flip {
            frame.alpha = normalize_angle(frame.alpha + std::f64::consts::PI);
        }
        points.extend(
            clouds[i]
                .iter()
                .map(|p| frame.to_local(p))
                .filter(|q| bbox.contains(q, config.trim_margin)),
        );
    }
    let class = labels[selected[0]].beta;
    Ok(CProto {
        bbox,
        points,
        source_tau: tau,
        class,
        sequence: sequence.map(|s| s.id.clone()),
    })
}

fn global_center(label: &Label, sequence: &Sequence) -> Option<[f64; 2]> {
    let pos = sequence.position_of(label.frame_index)?;
    let c = sequence.frames[pos].pose.apply(&label.bbox.center());
    Some([c.x, c.y])
}

fn global_heading(label: &Label, sequence: &Sequence) -> [f64; 2] {
    let yaw = sequence
        .position_of(label.frame_index)
        .map_or(0.0, |pos| sequence.frames[pos].pose.yaw());
    let (s, c) = (label.bbox.alpha + yaw).sin_cos();
    [c, s]
}

/// Net global displacement of a track when it moves faster than
/// `min_motion` per frame on average.
fn global_motion(selected: &[usize], labels: &[Label], sequence: &Sequence, min_motion: f64) -> Option<[f64; 2]> {
    let (first, last) = (&labels[selected[0]], &labels[*selected.last()?]);
    if last.frame_index == first.frame_index {
        return None;
    }
    let a = global_center(first, sequence)?;
    let b = global_center(last, sequence)?;
    let d = [b[0] - a[0], b[1] - a[1]];
    let frames = f64::from(last.frame_index - first.frame_index);
    ((d[0] * d[0] + d[1] * d[1]).sqrt() / frames > min_motion).then_some(d)
}

fn denser_half_is_negative(b: &Box3D, points: &[Point]) -> bool {
    let (mut pos, mut neg) = (0usize, 0usize);
    for p in points {
        let x = b.to_local(p).x;
        if x > 0.0 {
            pos += 1;
        } else if x < 0.0 {
            neg += 1;
        }
    }
    neg > pos
}
