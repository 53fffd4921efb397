//! Label quality against ground truth: greedy IoU matching, recall and
//! precision, 40-point interpolated AP, and matched-pair error statistics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, IouMode};
use crate::scene::{Class, Label};

/// Recall sample points of the interpolated AP.
pub const AP_RECALL_POINTS: usize = 40;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    /// (prediction index, ground-truth index, IoU).
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

/// Predictions and ground truth of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameGroup {
    pub preds: Vec<Label>,
    pub gts: Vec<Label>,
}

/// Splits one sequence's labels into per-frame groups, ascending by frame.
pub fn group_by_frame(preds: &[Label], gts: &[Label]) -> Vec<FrameGroup> {
    let mut map: BTreeMap<u32, FrameGroup> = BTreeMap::new();
    for p in preds {
        map.entry(p.frame_index).or_default().preds.push(*p);
    }
    for g in gts {
        map.entry(g.frame_index).or_default().gts.push(*g);
    }
    map.into_values().collect()
}

/// Prediction indices by descending score; ties keep input order.
fn score_order(preds: &[Label]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score().total_cmp(&preds[a].score()));
    order
}

/// Predictions in descending score order each take the free ground truth
/// with the highest IoU, if that IoU is positive and at least `iou_min`.
pub fn match_greedy(preds: &[Label], gts: &[Label], iou_min: f64, mode: IouMode) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for p in score_order(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = mode.iou(&preds[p].bbox, &gt.bbox);
            if iou > 0.0 && iou >= iou_min && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, iou)) => {
                taken[g] = true;
                result.pairs.push((p, g, iou));
            }
            None => result.unmatched_preds.push(p),
        }
    }
    result.unmatched_preds.sort_unstable();
    result.unmatched_gts = (0..gts.len()).filter(|&g| !taken[g]).collect();
    result
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(matched / gts_count, matched / preds_count)`, with 0/0 taken as 0.
pub fn recall_precision(m: &MatchResult, preds_count: usize, gts_count: usize) -> (f64, f64) {
    (ratio(m.pairs.len(), gts_count), ratio(m.pairs.len(), preds_count))
}

/// 40-point interpolated AP of score-ranked true/false positive flags.
pub fn ap_from_ranked(tp: &[bool], num_gts: usize) -> f64 {
    if num_gts == 0 || tp.is_empty() {
        return 0.0;
    }
    let mut curve = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        curve.push((hits as f64 / num_gts as f64, hits as f64 / (k + 1) as f64));
    }
    // running maximum of precision from the right
    let mut best = vec![0.0; curve.len()];
    let mut m: f64 = 0.0;
    for k in (0..curve.len()).rev() {
        m = m.max(curve[k].1);
        best[k] = m;
    }
    let mut total = 0.0;
    let mut k = 0;
    for i in 1..=AP_RECALL_POINTS {
        let r = i as f64 / AP_RECALL_POINTS as f64;
        while k < curve.len() && curve[k].0 < r - 1e-12 {
            k += 1;
        }
        if k == curve.len() {
            break;
        }
        total += best[k];
    }
    total / AP_RECALL_POINTS as f64
}

fn ranked_flags(groups: &[FrameGroup], iou_min: f64, mode: IouMode) -> (Vec<bool>, usize) {
    let per_frame: Vec<Vec<(f64, usize, usize, bool)>> = groups
        .par_iter()
        .enumerate()
        .map(|(f, g)| {
            let m = match_greedy(&g.preds, &g.gts, iou_min, mode);
            let mut tp = vec![false; g.preds.len()];
            for &(p, _, _) in &m.pairs {
                tp[p] = true;
            }
            (0..g.preds.len()).map(|p| (g.preds[p].score(), f, p, tp[p])).collect()
        })
        .collect();
    let mut all: Vec<(f64, usize, usize, bool)> = per_frame.into_iter().flatten().collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let gts = groups.iter().map(|g| g.gts.len()).sum();
    (all.into_iter().map(|t| t.3).collect(), gts)
}

/// R40 average precision over frame groups, predictions ranked by score.
pub fn average_precision(groups: &[FrameGroup], iou_min: f64, mode: IouMode) -> f64 {
    let (tp, gts) = ranked_flags(groups, iou_min, mode);
    ap_from_ranked(&tp, gts)
}

/// Restricts every group to one class.
pub fn filter_class(groups: &[FrameGroup], class: Class) -> Vec<FrameGroup> {
    groups
        .iter()
        .map(|g| FrameGroup {
            preds: g.preds.iter().filter(|l| l.beta == class).copied().collect(),
            gts: g.gts.iter().filter(|l| l.beta == class).copied().collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    /// Mean absolute l, w, h difference.
    pub size: f64,
    /// Mean center distance.
    pub position: f64,
    /// Mean yaw difference folded to [0, π/2].
    pub angle: f64,
    pub pairs: usize,
}

pub fn angle_error(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b).abs();
    d.min(std::f64::consts::PI - d)
}

/// Mean absolute errors over matched pairs.
pub fn error_stats(m: &MatchResult, preds: &[Label], gts: &[Label]) -> Result<ErrorStats> {
    error_stats_of(m.pairs.iter().map(|&(p, g, _)| (&preds[p], &gts[g])))
}

fn error_stats_of<'a>(pairs: impl Iterator<Item = (&'a Label, &'a Label)>) -> Result<ErrorStats> {
    let (mut size, mut pos, mut ang, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (p, g) in pairs {
        let (a, b) = (&p.bbox, &g.bbox);
        size += ((a.l - b.l).abs() + (a.w - b.w).abs() + (a.h - b.h).abs()) / 3.0;
        pos += (a.center() - b.center()).norm();
        ang += angle_error(a.alpha, b.alpha);
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedStatistic(
            "error statistics need at least one matched pair".into(),
        ));
    }
    let k = n as f64;
    Ok(ErrorStats {
        size: size / k,
        position: pos / k,
        angle: ang / k,
        pairs: n,
    })
}

/// Per-prediction best IoU with any ground truth of the same frame.
pub fn best_iou_per_prediction(groups: &[FrameGroup], mode: IouMode) -> Vec<f64> {
    groups
        .iter()
        .flat_map(|g| {
            g.preds
                .iter()
                .map(|p| g.gts.iter().map(|t| mode.iou(&p.bbox, &t.bbox)).fold(0.0, f64::max))
        })
        .collect()
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::UndefinedStatistic(format!(
            "rank correlation needs two equal-length samples of size >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedStatistic(
            "rank correlation of a constant sample".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub iou: f64,
    pub mode: IouMode,
    pub matched: usize,
    pub recall: f64,
    pub precision: f64,
    pub ap: f64,
    /// Classes with at least one ground-truth box.
    pub ap_per_class: BTreeMap<Class, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub predictions: usize,
    pub ground_truth: usize,
    pub thresholds: Vec<ThresholdMetrics>,
    /// Errors over BEV matches at the lowest threshold; absent without
    /// matches.
    pub errors: Option<ErrorStats>,
}

impl MetricsReport {
    pub fn get(&self, iou: f64, mode: IouMode) -> Option<&ThresholdMetrics> {
        self.thresholds
            .iter()
            .find(|t| t.mode == mode && (t.iou - iou).abs() < 1e-12)
    }

    /// One row per (mode, threshold).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,iou,matched,recall,precision,ap\n");
        for t in &self.thresholds {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6}\n",
                t.mode.name(),
                t.iou,
                t.matched,
                t.recall,
                t.precision,
                t.ap
            ));
        }
        out
    }
}

pub fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::Config("at least one IoU threshold is required".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Config(format!("IoU threshold {t} outside [0, 1]")));
    }
    Ok(())
}

fn matches_all(groups: &[FrameGroup], iou_min: f64, mode: IouMode) -> Vec<MatchResult> {
    groups
        .par_iter()
        .map(|g| match_greedy(&g.preds, &g.gts, iou_min, mode))
        .collect()
}

/// Errors over the greedy matches of every frame group.
pub fn matched_errors(groups: &[FrameGroup], iou_min: f64, mode: IouMode) -> Result<ErrorStats> {
    let ms = matches_all(groups, iou_min, mode);
    error_stats_of(
        groups
            .iter()
            .zip(&ms)
            .flat_map(|(g, m)| m.pairs.iter().map(move |&(p, t, _)| (&g.preds[p], &g.gts[t]))),
    )
}

/// Recall, precision and AP for every threshold in both IoU modes, plus
/// matched-pair errors.
pub fn evaluate(groups: &[FrameGroup], thresholds: &[f64]) -> Result<MetricsReport> {
    validate_thresholds(thresholds)?;
    let predictions: usize = groups.iter().map(|g| g.preds.len()).sum();
    let ground_truth: usize = groups.iter().map(|g| g.gts.len()).sum();
    let classes: Vec<Class> = Class::FOREGROUND
        .into_iter()
        .filter(|c| groups.iter().any(|g| g.gts.iter().any(|l| l.beta == *c)))
        .collect();
    let per_class: Vec<(Class, Vec<FrameGroup>)> = classes.iter().map(|&c| (c, filter_class(groups, c))).collect();

    let mut out = Vec::new();
    for mode in [IouMode::Bev, IouMode::ThreeD] {
        for &iou in thresholds {
            let matched: usize = matches_all(groups, iou, mode).iter().map(|m| m.pairs.len()).sum();
            out.push(ThresholdMetrics {
                iou,
                mode,
                matched,
                recall: ratio(matched, ground_truth),
                precision: ratio(matched, predictions),
                ap: average_precision(groups, iou, mode),
                ap_per_class: per_class
                    .iter()
                    .map(|(c, g)| (*c, average_precision(g, iou, mode)))
                    .collect(),
            });
        }
    }
    let lowest = thresholds.iter().copied().fold(f64::INFINITY, f64::min);
    let errors = matched_errors(groups, lowest, IouMode::Bev).ok();
    Ok(MetricsReport {
        predictions,
        ground_truth,
        thresholds: out,
        errors,
    })
}
