//! Self-training loss arithmetic: CSS weighting of proposals and the three
//! weighted losses, as pure functions over externally supplied values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_3d, Box3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CstConfig {
    pub s_low: f64,
    pub s_high: f64,
}

impl Default for CstConfig {
    fn default() -> Self {
        Self {
            s_low: 0.4,
            s_high: 0.7,
        }
    }
}

impl CstConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.s_low && self.s_low < self.s_high && self.s_high <= 1.0) {
            return Err(Error::Config(format!(
                "cst thresholds need 0 <= s_low < s_high <= 1, got {} and {}",
                self.s_low, self.s_high
            )));
        }
        Ok(())
    }
}

/// A real vector with its Euclidean norm cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector {
    values: Vec<f64>,
    norm: f64,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validity(format!("feature entry {i} is not finite")));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self { values, norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(f: FeatureVector) -> Self {
        f.values
    }
}

/// One detection proposal paired with its prototype counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalPair {
    pub det_box: Box3D,
    pub proto_box: Box3D,
    pub det_feat: FeatureVector,
    pub proto_feat: FeatureVector,
    pub weight: f64,
    pub loss_pro: f64,
    pub loss_det: f64,
}

impl ProposalPair {
    pub fn validate(&self) -> Result<()> {
        self.det_box.validate()?;
        self.proto_box.validate()?;
        if self.det_feat.dim() != self.proto_feat.dim() {
            return Err(Error::Validity(format!(
                "feature dimensions differ: {} vs {}",
                self.det_feat.dim(),
                self.proto_feat.dim()
            )));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::Validity(format!("weight {} outside [0, 1]", self.weight)));
        }
        if !(self.loss_pro >= 0.0 && self.loss_det >= 0.0 && self.loss_pro.is_finite() && self.loss_det.is_finite()) {
            return Err(Error::Validity(
                "detection losses must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Parses a JSON array of proposal pairs, validating every pair.
pub fn parse_proposal_pairs(bytes: &[u8], source_name: &str) -> Result<Vec<ProposalPair>> {
    let pairs: Vec<ProposalPair> = crate::io::parse_json(bytes, source_name)?;
    for (i, p) in pairs.iter().enumerate() {
        p.validate()
            .map_err(|e| Error::Validity(format!("{source_name}: pair {i}: {e}")))?;
    }
    Ok(pairs)
}

/// Zero up to `s_low`, one from `s_high`, linear in between.
pub fn css_weight(s: f64, config: &CstConfig) -> f64 {
    if s <= config.s_low {
        0.0
    } else if s >= config.s_high {
        1.0
    } else {
        (s - config.s_low) / (config.s_high - config.s_low)
    }
}

fn check(pairs: &[ProposalPair], what: &str) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::UndefinedStatistic(format!("{what} of an empty proposal list")));
    }
    pairs.iter().try_for_each(ProposalPair::validate)
}

/// Mean of `w * (loss_pro + loss_det)`.
pub fn weighted_detection_loss(pairs: &[ProposalPair]) -> Result<f64> {
    check(pairs, "detection loss")?;
    let s: f64 = pairs.iter().map(|p| p.weight * (p.loss_pro + p.loss_det)).sum();
    Ok(s / pairs.len() as f64)
}

/// Negative mean weighted cosine similarity of the feature pairs.
pub fn feature_contrast_loss(pairs: &[ProposalPair]) -> Result<f64> {
    check(pairs, "feature contrast loss")?;
    let mut s = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        let denom = p.det_feat.norm() * p.proto_feat.norm();
        if denom == 0.0 {
            return Err(Error::NumericDomain(format!("pair {i} has a zero-norm feature")));
        }
        s += p.weight * (p.det_feat.dot(&p.proto_feat) / denom).clamp(-1.0, 1.0);
    }
    Ok(-s / pairs.len() as f64)
}

/// Mean weighted `1 - IoU3D + center distance + |sin(yaw difference)|`.
pub fn box_contrast_loss(pairs: &[ProposalPair]) -> Result<f64> {
    check(pairs, "box contrast loss")?;
    let s: f64 = pairs
        .iter()
        .map(|p| {
            let (d, q) = (&p.det_box, &p.proto_box);
            let dist = (d.center() - q.center()).norm();
            p.weight * (1.0 - iou_3d(d, q) + dist + (d.alpha - q.alpha).sin().abs())
        })
        .sum();
    Ok(s / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub detection: f64,
    pub feature_contrast: f64,
    pub box_contrast: f64,
}

pub fn all_losses(pairs: &[ProposalPair]) -> Result<LossReport> {
    Ok(LossReport {
        detection: weighted_detection_loss(pairs)?,
        feature_contrast: feature_contrast_loss(pairs)?,
        box_contrast: box_contrast_loss(pairs)?,
    })
}
