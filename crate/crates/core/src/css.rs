//! Completeness and size-similarity scoring.
//!
//! Three unsupervised cues, each in [0, 1], combined linearly:
//! distance to the ego, multi-level BEV occupancy of the box footprint by
//! its cluster points, and a truncated KL divergence between the box's
//! normalized (l, w, h) and a class template.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box3D, Point};
use crate::scene::{Class, Label};

/// KL values below this count as identical proportions.
const KL_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateBox {
    pub l: f64,
    pub w: f64,
    pub h: f64,
}

impl TemplateBox {
    pub const fn new(l: f64, w: f64, h: f64) -> Self {
        Self { l, w, h }
    }
}

/// Average real-world sizes per class.
pub fn default_templates() -> BTreeMap<Class, TemplateBox> {
    BTreeMap::from([
        (Class::Vehicle, TemplateBox::new(5.06, 1.86, 1.49)),
        (Class::Pedestrian, TemplateBox::new(1.0, 1.0, 2.0)),
        (Class::Cyclist, TemplateBox::new(1.9, 0.85, 1.8)),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CssConfig {
    /// Distance mapped to a distance score of 0, meters.
    pub range_max: f64,
    /// Grid cells per footprint side, one entry per occupancy level.
    pub mlo_resolutions: Vec<usize>,
    /// Weights of the distance, occupancy and size-similarity scores.
    pub weights: [f64; 3],
    pub kl_truncation: f64,
    pub templates: BTreeMap<Class, TemplateBox>,
}

impl Default for CssConfig {
    fn default() -> Self {
        Self {
            range_max: 80.0,
            mlo_resolutions: vec![2, 4, 6],
            weights: [1.0 / 3.0; 3],
            kl_truncation: 0.05,
            templates: default_templates(),
        }
    }
}

impl CssConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_max > 0.0 && self.range_max.is_finite()) {
            return Err(Error::Config(format!(
                "css.range_max must be positive, got {}",
                self.range_max
            )));
        }
        if self.mlo_resolutions.is_empty() || self.mlo_resolutions.contains(&0) {
            return Err(Error::Config(
                "css.mlo_resolutions must be non-empty with entries >= 1".into(),
            ));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "css.weights must be non-negative and sum to 1, got {:?}",
                self.weights
            )));
        }
        if !(self.kl_truncation > 0.0) {
            return Err(Error::Config("css.kl_truncation must be positive".into()));
        }
        for (c, t) in &self.templates {
            if !(t.l > 0.0 && t.w > 0.0 && t.h > 0.0) {
                return Err(Error::Config(format!("template for {c} must have positive dimensions")));
            }
        }
        Ok(())
    }

    pub fn template(&self, class: Class) -> Result<&TemplateBox> {
        self.templates
            .get(&class)
            .ok_or_else(|| Error::Config(format!("no size template for class {class}")))
    }
}

/// `1 - clamp(|c| / range_max, 0, 1)` with the 3D center norm.
pub fn distance_score(b: &Box3D, config: &CssConfig) -> f64 {
    let d = (b.x * b.x + b.y * b.y + b.z * b.z).sqrt();
    1.0 - (d / config.range_max).clamp(0.0, 1.0)
}

/// Mean fraction of occupied footprint cells over the configured grid
/// resolutions. Points outside the footprint are ignored.
pub fn mlo_score(b: &Box3D, points: &[Point], config: &CssConfig) -> f64 {
    if points.is_empty() || config.mlo_resolutions.is_empty() {
        return 0.0;
    }
    let (hl, hw) = (b.l / 2.0, b.w / 2.0);
    let slack = 1e-9;
    let local: Vec<(f64, f64)> = points
        .iter()
        .map(|p| b.to_local(p))
        .filter(|q| q.x.abs() <= hl + slack && q.y.abs() <= hw + slack)
        .map(|q| ((q.x + hl) / b.l, (q.y + hw) / b.w))
        .collect();
    let total: f64 = config
        .mlo_resolutions
        .iter()
        .map(|&r| {
            let mut occupied = vec![false; r * r];
            let cell = |t: f64| ((t * r as f64).floor().max(0.0) as usize).min(r - 1);
            for &(u, v) in &local {
                occupied[cell(u) * r + cell(v)] = true;
            }
            occupied.iter().filter(|o| **o).count() as f64 / (r * r) as f64
        })
        .sum();
    total / config.mlo_resolutions.len() as f64
}

/// KL divergence of the box's normalized dimensions from the template's.
pub fn size_kl(b: &Box3D, template: &TemplateBox) -> f64 {
    let sb = b.l + b.w + b.h;
    let sa = template.l + template.w + template.h;
    let kl: f64 = [(b.l, template.l), (b.w, template.w), (b.h, template.h)]
        .iter()
        .map(|&(x, a)| {
            let (qb, qa) = (x / sb, a / sa);
            qb * (qb / qa).ln()
        })
        .sum();
    if kl < KL_ZERO {
        0.0
    } else {
        kl
    }
}

/// `1 - min(t, KL) / t` with the configured truncation `t`.
pub fn ss_score(b: &Box3D, template: &TemplateBox, config: &CssConfig) -> f64 {
    let t = config.kl_truncation;
    1.0 - size_kl(b, template).min(t) / t
}

/// The three component scores of a label.
pub fn css_components(b: &Box3D, points: &[Point], class: Class, config: &CssConfig) -> Result<[f64; 3]> {
    let template = config.template(class)?;
    Ok([
        distance_score(b, config),
        mlo_score(b, points, config),
        ss_score(b, template, config),
    ])
}

pub fn combine(components: &[f64; 3], weights: &[f64; 3]) -> f64 {
    let s: f64 = components.iter().zip(weights).map(|(c, w)| c * w).sum();
    s.clamp(0.0, 1.0)
}

pub fn css_score(b: &Box3D, points: &[Point], class: Class, config: &CssConfig) -> Result<f64> {
    Ok(combine(&css_components(b, points, class, config)?, &config.weights))
}

/// Scores every label against its cluster points; returns the scored labels
/// and the per-label components.
pub fn score_labels(
    labels: &[Label],
    clusters: &[Vec<Point>],
    config: &CssConfig,
) -> Result<(Vec<Label>, Vec<[f64; 3]>)> {
    config.validate()?;
    if labels.len() != clusters.len() {
        return Err(Error::Validity(format!(
            "{} labels but {} cluster clouds",
            labels.len(),
            clusters.len()
        )));
    }
    let comps: Vec<[f64; 3]> = labels
        .par_iter()
        .zip(clusters.par_iter())
        .map(|(l, pts)| css_components(&l.bbox, pts, l.beta, config))
        .collect::<Result<_>>()?;
    let scored = labels
        .iter()
        .zip(&comps)
        .map(|(l, c)| Label {
            css: Some(combine(c, &config.weights)),
            ..*l
        })
        .collect();
    Ok((scored, comps))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn boxed(x: f64, l: f64, w: f64, h: f64) -> Box3D {
        Box3D::new(x, 0.0, 0.0, l, w, h, 0.0).unwrap()
    }

    #[test]
    fn distance_endpoints_and_midpoint() {
        let c = CssConfig::default();
        assert_eq!(distance_score(&boxed(0.0, 1.0, 1.0, 1.0), &c), 1.0);
        assert_eq!(distance_score(&boxed(80.0, 1.0, 1.0, 1.0), &c), 0.0);
        assert_eq!(distance_score(&boxed(120.0, 1.0, 1.0, 1.0), &c), 0.0);
        assert!((distance_score(&boxed(40.0, 1.0, 1.0, 1.0), &c) - 0.5).abs() < 1e-9);
    }

    /// Cell-counting oracle: points at chosen cell centers.
    fn cell_centers(b: &Box3D, r: usize, cells: &[(usize, usize)]) -> Vec<Point> {
        cells
            .iter()
            .map(|&(i, j)| {
                let u = -b.l / 2.0 + (i as f64 + 0.5) * b.l / r as f64;
                let v = -b.w / 2.0 + (j as f64 + 0.5) * b.w / r as f64;
                b.from_local(&Point::new(u, v, 0.0, 0.0))
            })
            .collect()
    }

    #[test]
    fn mlo_full_empty_and_half() {
        let b = Box3D::new(5.0, 3.0, 0.8, 4.0, 2.0, 1.6, 0.4).unwrap();
        let c = CssConfig::default();
        let all: Vec<(usize, usize)> = (0..12).flat_map(|i| (0..12).map(move |j| (i, j))).collect();
        assert_eq!(mlo_score(&b, &cell_centers(&b, 12, &all), &c), 1.0);
        assert_eq!(mlo_score(&b, &[], &c), 0.0);
        let two = CssConfig {
            mlo_resolutions: vec![2],
            ..c
        };
        assert_eq!(mlo_score(&b, &cell_centers(&b, 2, &[(0, 0), (1, 1)]), &two), 0.5);
        // outside the footprint does not count
        let outside = vec![b.from_local(&Point::new(3.0, 0.0, 0.0, 0.0))];
        assert_eq!(mlo_score(&b, &outside, &two), 0.0);
    }

    #[test]
    fn ss_proportional_and_truncated() {
        let c = CssConfig::default();
        let veh = c.templates[&Class::Vehicle];
        assert_eq!(ss_score(&boxed(0.0, 5.06, 1.86, 1.49), &veh, &c), 1.0);
        assert_eq!(ss_score(&boxed(0.0, 2.53, 0.93, 0.745), &veh, &c), 1.0);
        assert_eq!(ss_score(&boxed(0.0, 10.12, 3.72, 2.98), &veh, &c), 1.0);
        // (1,1,8) vs vehicle proportions: KL ~ 1.0, far above 0.05
        let skinny = boxed(0.0, 1.0, 1.0, 8.0);
        assert!(size_kl(&skinny, &veh) >= 0.05);
        assert_eq!(ss_score(&skinny, &veh, &c), 0.0);
    }

    #[test]
    fn kl_matches_direct_evaluation() {
        let veh = TemplateBox::new(5.06, 1.86, 1.49);
        let b = boxed(0.0, 4.0, 2.0, 1.5);
        let (sb, sa) = (7.5f64, 8.41f64);
        let want = (4.0 / sb) * ((4.0 / sb) / (5.06 / sa)).ln()
            + (2.0 / sb) * ((2.0 / sb) / (1.86 / sa)).ln()
            + (1.5 / sb) * ((1.5 / sb) / (1.49 / sa)).ln();
        assert!((size_kl(&b, &veh) - want).abs() < 1e-15);
    }

    #[test]
    fn weighted_combination() {
        let w = [1.0 / 3.0; 3];
        assert_eq!(combine(&[1.0, 1.0, 1.0], &w), 1.0);
        assert!((combine(&[0.6, 0.9, 1.0], &w) - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn missing_template_is_config_error() {
        let c = CssConfig::default();
        let err = css_score(&boxed(1.0, 1.0, 1.0, 1.0), &[], Class::DiscardSmall, &c);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        assert!(CssConfig::default().validate().is_ok());
        let bad = CssConfig {
            weights: [0.5, 0.5, 0.5],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = CssConfig {
            mlo_resolutions: vec![0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn scores_in_unit_interval(
            x in -100.0..100.0f64, y in -100.0..100.0f64,
            l in 0.1..10.0f64, w in 0.1..5.0f64, h in 0.1..4.0f64, a in -3.0..3.0f64,
            pts in proptest::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 0..40),
        ) {
            let b = Box3D::new(x, y, 0.5, l, w, h, a).unwrap();
            let points: Vec<Point> = pts.iter().map(|&(u, v)| b.from_local(&Point::new(u, v, 0.0, 0.0))).collect();
            let c = CssConfig::default();
            for class in Class::FOREGROUND {
                let comps = css_components(&b, &points, class, &c).unwrap();
                for v in comps {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                let s = css_score(&b, &points, class, &c).unwrap();
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }

        #[test]
        fn ss_is_scale_invariant(l in 0.1..10.0f64, w in 0.1..5.0f64, h in 0.1..4.0f64, k in 0.01..100.0f64) {
            let c = CssConfig::default();
            let t = c.templates[&Class::Cyclist];
            let a = ss_score(&boxed(0.0, l, w, h), &t, &c);
            let b = ss_score(&boxed(0.0, k * l, k * w, k * h), &t, &c);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn mlo_monotone_under_added_points(
            base in proptest::collection::vec((-2.0..2.0f64, -1.0..1.0f64), 0..30),
            extra in proptest::collection::vec((-2.0..2.0f64, -1.0..1.0f64), 1..10),
        ) {
            let b = Box3D::new(3.0, 1.0, 0.0, 4.0, 2.0, 1.5, 0.2).unwrap();
            let c = CssConfig::default();
            let mut pts: Vec<Point> = base.iter().map(|&(u, v)| b.from_local(&Point::new(u, v, 0.0, 0.0))).collect();
            let before = mlo_score(&b, &pts, &c);
            pts.extend(extra.iter().map(|&(u, v)| b.from_local(&Point::new(u, v, 0.0, 0.0))));
            prop_assert!(mlo_score(&b, &pts, &c) >= before);
        }

        #[test]
        fn distance_monotone(d1 in 0.0..150.0f64, d2 in 0.0..150.0f64) {
            let c = CssConfig::default();
            let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(distance_score(&boxed(near, 1.0, 1.0, 1.0), &c) >= distance_score(&boxed(far, 1.0, 1.0, 1.0), &c));
        }
    }
}
