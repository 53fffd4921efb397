//! Prototype-constrained box regularization.
//!
//! Each label takes the size of the prototype with the closest height, then
//! gets its yaw re-fitted to the cluster and its footprint slid along each
//! box axis so that the face on the cluster's dense side touches the
//! cluster's extremal point on that side.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cproto::CProto;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Box3D, Point};
use crate::mfc::boxfit::best_yaw;
use crate::scene::Label;

/// Shifts at or below this are treated as already aligned.
const SHIFT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbrConfig {
    pub bins_per_meter: f64,
    pub min_points_for_relocalization: usize,
    /// Associate labels only with prototypes of their own class.
    pub class_restricted: bool,
}

impl Default for CbrConfig {
    fn default() -> Self {
        Self {
            bins_per_meter: 4.0,
            min_points_for_relocalization: 5,
            class_restricted: true,
        }
    }
}

impl CbrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bins_per_meter > 0.0 && self.bins_per_meter.is_finite()) {
            return Err(Error::Config(format!(
                "cbr.bins_per_meter must be positive, got {}",
                self.bins_per_meter
            )));
        }
        if self.min_points_for_relocalization < 1 {
            return Err(Error::Config("cbr.min_points_for_relocalization must be >= 1".into()));
        }
        Ok(())
    }
}

/// Index of the prototype whose height is closest to the label's, lowest
/// index on ties. `None` when `class_restricted` and no prototype shares
/// the label's class.
pub fn associate_cproto(label: &Label, protos: &[CProto], class_restricted: bool) -> Result<Option<usize>> {
    if protos.is_empty() {
        return Err(Error::Config("prototype set is empty".into()));
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in protos.iter().enumerate() {
        if class_restricted && p.class != label.beta {
            continue;
        }
        let d = (label.bbox.h - p.bbox.h).abs();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    Ok(best.map(|(_, i)| i))
}

/// The label with the prototype's size; everything else unchanged.
pub fn resize_to_cproto(label: &Label, proto: &CProto) -> Label {
    Label {
        bbox: label.bbox.with_size(proto.bbox.l, proto.bbox.w, proto.bbox.h),
        ..*label
    }
}

/// Side of the box to align along one axis, with the cluster's extent:
/// `-1` or `+1` for the face nearer the sensor at coordinate 0, or `0`.
/// Visible surfaces face the sensor, so a shift needs the cluster to lie
/// wholly on one side of the sensor and every maximal bin to lie in the
/// sensor-facing half. Bins tile the cluster extent exactly; a cluster one
/// bin thin is the sensor-facing face itself.
fn dense_side(coords: &[f64], bins_per_meter: f64) -> (i8, f64, f64) {
    let (lo, hi) = coords
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &u| (a.min(u), b.max(u)));
    let near = if lo > 0.0 {
        -1
    } else if hi < 0.0 {
        1
    } else {
        return (0, lo, hi);
    };
    let extent = hi - lo;
    let nbins = ((extent * bins_per_meter).ceil() as usize).max(1);
    if nbins == 1 {
        return (near, lo, hi);
    }
    let width = extent / nbins as f64;
    let mut counts = vec![0usize; nbins];
    for &u in coords {
        counts[(((u - lo) / width) as usize).min(nbins - 1)] += 1;
    }
    let top = *counts.iter().max().expect("at least one bin");
    // bins are symmetric about the midpoint; compare doubled indices
    let all_near = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| **c == top)
        .all(|(k, _)| match (2 * k + 1).cmp(&nbins) {
            std::cmp::Ordering::Less => near == -1,
            std::cmp::Ordering::Greater => near == 1,
            std::cmp::Ordering::Equal => false,
        });
    (if all_near { near } else { 0 }, lo, hi)
}

/// Snaps the yaw to the cluster's best-fitting rectangle orientation (the
/// candidate closest to the current yaw) and slides the footprint so that
/// its sensor-facing face touches the cluster's extremal point on that side,
/// per axis, when the densest bins agree. Coordinates are in the sensor
/// frame. Shifts longer than half the box diagonal are not applied. Clusters below `min_points_for_relocalization` leave
/// the label unchanged.
pub fn relocalize(label: &Label, cluster_points: &[Point], config: &CbrConfig) -> Label {
    if cluster_points.len() < config.min_points_for_relocalization.max(1) {
        return *label;
    }
    let fit = best_yaw(cluster_points);
    let current = label.bbox.alpha;
    let mut alpha = current;
    let mut best_diff = f64::INFINITY;
    for k in 0..4 {
        let cand = normalize_angle(fit + k as f64 * FRAC_PI_2);
        let diff = normalize_angle(cand - current).abs();
        if diff < best_diff {
            best_diff = diff;
            alpha = cand;
        }
    }
    let snapped = Box3D { alpha, ..label.bbox };

    // projections onto the box axes without the center, so the side
    // decisions do not depend on where the box currently sits
    let (s, c) = alpha.sin_cos();
    let us: Vec<f64> = cluster_points.iter().map(|p| c * p.x + s * p.y).collect();
    let vs: Vec<f64> = cluster_points.iter().map(|p| -s * p.x + c * p.y).collect();
    let (cu, cv) = (c * snapped.x + s * snapped.y, -s * snapped.x + c * snapped.y);
    let axis_shift = |coords: &[f64], center: f64, half: f64| {
        let (side, lo, hi) = dense_side(coords, config.bins_per_meter);
        let d = match side {
            -1 => lo + half - center,
            1 => hi - half - center,
            _ => 0.0,
        };
        if d.abs() <= SHIFT_EPS {
            0.0
        } else {
            d
        }
    };
    let du = axis_shift(&us, cu, snapped.l / 2.0);
    let dv = axis_shift(&vs, cv, snapped.w / 2.0);
    if (du * du + dv * dv).sqrt() > snapped.half_diagonal() || (du == 0.0 && dv == 0.0) {
        return Label {
            bbox: snapped,
            ..*label
        };
    }
    Label {
        bbox: Box3D {
            x: snapped.x + c * du - s * dv,
            y: snapped.y + s * du + c * dv,
            ..snapped
        },
        ..*label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub labels: Vec<Label>,
    /// Prototype used per label; `None` marks a label passed through.
    pub associations: Vec<Option<usize>>,
}

impl Refinement {
    pub fn flagged(&self) -> usize {
        self.associations.iter().filter(|a| a.is_none()).count()
    }
}

/// Associate, resize and relocalize every label. Labels with no eligible
/// prototype (including the empty-set case) pass through unchanged.
pub fn refine_labels(
    labels: &[Label],
    clouds: &[Vec<Point>],
    protos: &[CProto],
    config: &CbrConfig,
) -> Result<Refinement> {
    config.validate()?;
    if labels.len() != clouds.len() {
        return Err(Error::Validity(format!(
            "{} labels but {} cluster clouds",
            labels.len(),
            clouds.len()
        )));
    }
    if protos.is_empty() {
        return Ok(Refinement {
            labels: labels.to_vec(),
            associations: vec![None; labels.len()],
        });
    }
    let out: Vec<(Label, Option<usize>)> = labels
        .par_iter()
        .zip(clouds.par_iter())
        .map(|(l, pts)| {
            Ok(match associate_cproto(l, protos, config.class_restricted)? {
                Some(k) => (relocalize(&resize_to_cproto(l, &protos[k]), pts, config), Some(k)),
                None => (*l, None),
            })
        })
        .collect::<Result<_>>()?;
    let (labels, associations) = out.into_iter().unzip();
    Ok(Refinement { labels, associations })
}
