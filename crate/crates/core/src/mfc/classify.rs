//! Size-threshold classification of cluster boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::scene::Class;

/// Half-open interval `(lo, hi]`; a missing bound is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self {
            lo: Some(lo),
            hi: Some(hi),
        }
    }

    pub const fn at_most(hi: f64) -> Self {
        Self { lo: None, hi: Some(hi) }
    }

    pub const ANY: Interval = Interval { lo: None, hi: None };

    pub fn contains(&self, v: f64) -> bool {
        self.lo.is_none_or(|lo| v > lo) && self.hi.is_none_or(|hi| v <= hi)
    }

    /// True when the closed range `[min, max]` lies inside the interval.
    pub fn contains_range(&self, min: f64, max: f64) -> bool {
        self.contains(min) && self.contains(max)
    }

    /// True when `[min, max]` shares at least one value with the interval.
    pub fn overlaps_range(&self, min: f64, max: f64) -> bool {
        self.lo.is_none_or(|lo| max > lo) && self.hi.is_none_or(|hi| min <= hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRule {
    pub class: Class,
    pub h: Interval,
    pub w: Interval,
    pub l: Interval,
}

impl ClassRule {
    pub fn matches(&self, b: &Box3D) -> bool {
        self.h.contains(b.h) && self.w.contains(b.w) && self.l.contains(b.l)
    }
}

/// Ordered rule table; boxes matching no rule are `DiscardLarge`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassThresholds {
    pub rules: Vec<ClassRule>,
}

impl Default for ClassThresholds {
    /// Commonsense size table. The rows are the published intervals; the
    /// order puts the narrow Pedestrian and Cyclist rows ahead of Vehicle,
    /// whose row contains both of them.
    fn default() -> Self {
        Self {
            rules: vec![
                ClassRule {
                    class: Class::DiscardSmall,
                    h: Interval::at_most(0.8),
                    w: Interval::ANY,
                    l: Interval::ANY,
                },
                ClassRule {
                    class: Class::Pedestrian,
                    h: Interval::new(0.8, 2.3),
                    w: Interval::new(0.2, 1.0),
                    l: Interval::new(0.2, 1.0),
                },
                ClassRule {
                    class: Class::Cyclist,
                    h: Interval::new(1.4, 2.0),
                    w: Interval::new(0.5, 1.0),
                    l: Interval::new(1.0, 2.5),
                },
                ClassRule {
                    class: Class::Vehicle,
                    h: Interval::new(1.0, 3.0),
                    w: Interval::new(0.5, 3.0),
                    l: Interval::new(0.5, 8.0),
                },
            ],
        }
    }
}

impl ClassThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.rules.is_empty() {
            return Err(Error::Config("class threshold table is empty".into()));
        }
        for r in &self.rules {
            if r.class == Class::DiscardLarge {
                return Err(Error::Config(
                    "DiscardLarge is the fallback and cannot have a rule".into(),
                ));
            }
            for iv in [r.h, r.w, r.l] {
                if let (Some(lo), Some(hi)) = (iv.lo, iv.hi) {
                    if !(lo < hi) {
                        return Err(Error::Config(format!("empty interval ({lo}, {hi}] for {}", r.class)));
                    }
                }
            }
        }
        Ok(())
    }

    /// First matching rule wins.
    pub fn classify(&self, b: &Box3D) -> Class {
        self.rules
            .iter()
            .find(|r| r.matches(b))
            .map_or(Class::DiscardLarge, |r| r.class)
    }

    /// Whether every box with dimensions in the given closed ranges is
    /// classified as `class`: the class rule must contain the ranges and no
    /// earlier rule may touch them.
    pub fn covers_ranges(&self, class: Class, l: [f64; 2], w: [f64; 2], h: [f64; 2]) -> bool {
        for r in &self.rules {
            if r.class == class {
                return r.l.contains_range(l[0], l[1])
                    && r.w.contains_range(w[0], w[1])
                    && r.h.contains_range(h[0], h[1]);
            }
            if r.l.overlaps_range(l[0], l[1]) && r.w.overlaps_range(w[0], w[1]) && r.h.overlaps_range(h[0], h[1]) {
                return false;
            }
        }
        false
    }
}

pub fn classify_box(b: &Box3D, thresholds: &ClassThresholds) -> Class {
    thresholds.classify(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sized(l: f64, w: f64, h: f64) -> Box3D {
        Box3D::new(0.0, 0.0, 0.0, l, w, h, 0.0).unwrap()
    }

    #[test]
    fn published_examples() {
        let t = ClassThresholds::default();
        assert_eq!(classify_box(&sized(3.0, 2.0, 0.5), &t), Class::DiscardSmall);
        assert_eq!(classify_box(&sized(4.7, 1.9, 1.5), &t), Class::Vehicle);
        assert_eq!(classify_box(&sized(0.6, 0.6, 1.7), &t), Class::Pedestrian);
        assert_eq!(classify_box(&sized(1.8, 0.7, 1.7), &t), Class::Cyclist);
        assert_eq!(classify_box(&sized(12.0, 2.5, 3.5), &t), Class::DiscardLarge);
        assert_eq!(classify_box(&sized(4.0, 2.0, 4.0), &t), Class::DiscardLarge);
    }

    #[test]
    fn interval_boundaries_are_half_open() {
        let t = ClassThresholds::default();
        // h = 0.8 is still DiscardSmall, h just above is not
        assert_eq!(classify_box(&sized(0.5, 0.5, 0.8), &t), Class::DiscardSmall);
        assert_eq!(classify_box(&sized(0.5, 0.5, 0.80001), &t), Class::Pedestrian);
        // w = 1.0 inclusive for Pedestrian
        assert_eq!(classify_box(&sized(1.0, 1.0, 1.7), &t), Class::Pedestrian);
    }

    #[test]
    fn order_matters() {
        let mut t = ClassThresholds::default();
        let ped = sized(0.6, 0.6, 1.7);
        t.rules.swap(1, 3); // Vehicle ahead of Pedestrian
        assert_eq!(classify_box(&ped, &t), Class::Vehicle);
    }

    #[test]
    fn range_coverage() {
        let t = ClassThresholds::default();
        assert!(t.covers_ranges(Class::Vehicle, [3.8, 5.2], [1.7, 2.1], [1.4, 1.9]));
        assert!(t.covers_ranges(Class::Pedestrian, [0.5, 0.9], [0.5, 0.9], [1.6, 1.9]));
        assert!(t.covers_ranges(Class::Cyclist, [1.6, 2.0], [0.6, 0.9], [1.5, 1.9]));
        // overlaps the Pedestrian rule
        assert!(!t.covers_ranges(Class::Vehicle, [0.8, 5.0], [0.8, 2.0], [1.5, 1.8]));
        assert!(!t.covers_ranges(Class::DiscardLarge, [1.0, 2.0], [1.0, 2.0], [1.0, 2.0]));
    }

    #[test]
    fn default_table_validates() {
        ClassThresholds::default().validate().unwrap();
        let mut bad = ClassThresholds::default();
        bad.rules[0].class = Class::DiscardLarge;
        assert!(bad.validate().is_err());
    }
}
