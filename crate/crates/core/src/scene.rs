//! Sequences of posed point-cloud frames and the labels attached to them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box3D, Point, Pose};

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u32,
    /// Seconds.
    pub timestamp: f64,
    /// Ego-to-global transform.
    pub pose: Pose,
    /// Points in the ego frame.
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub frames: Vec<Frame>,
}

impl Sequence {
    /// Checks the ordering invariants: at least one frame, strictly
    /// increasing indices, non-decreasing timestamps, finite points.
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Validity(format!("sequence {:?} has no frames", self.id)));
        }
        for pair in self.frames.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(Error::Validity(format!(
                    "frame indices not strictly increasing ({} then {})",
                    pair[0].index, pair[1].index
                )));
            }
            if pair[1].timestamp < pair[0].timestamp {
                return Err(Error::Validity(format!(
                    "timestamps decrease between frames {} and {}",
                    pair[0].index, pair[1].index
                )));
            }
        }
        for f in &self.frames {
            if !f.timestamp.is_finite() {
                return Err(Error::Validity(format!("frame {} has non-finite timestamp", f.index)));
            }
            if let Some(i) = f.points.iter().position(|p| !p.is_finite()) {
                return Err(Error::Validity(format!("frame {} point {i} is not finite", f.index)));
            }
        }
        Ok(())
    }

    /// Position of the frame with the given index.
    pub fn position_of(&self, index: u32) -> Option<usize> {
        self.frames.binary_search_by_key(&index, |f| f.index).ok()
    }
}

/// Size-based class identity. Declaration order is the order used for
/// majority-vote tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    DiscardSmall,
    Vehicle,
    Pedestrian,
    Cyclist,
    DiscardLarge,
}

impl Class {
    pub const ALL: [Class; 5] = [
        Class::DiscardSmall,
        Class::Vehicle,
        Class::Pedestrian,
        Class::Cyclist,
        Class::DiscardLarge,
    ];

    pub const FOREGROUND: [Class; 3] = [Class::Vehicle, Class::Pedestrian, Class::Cyclist];

    pub fn is_foreground(self) -> bool {
        matches!(self, Class::Vehicle | Class::Pedestrian | Class::Cyclist)
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::DiscardSmall => "DiscardSmall",
            Class::Vehicle => "Vehicle",
            Class::Pedestrian => "Pedestrian",
            Class::Cyclist => "Cyclist",
            Class::DiscardLarge => "DiscardLarge",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A pseudo-label (or a ground-truth annotation in the same shape).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label {
    pub frame_index: u32,
    pub bbox: Box3D,
    pub beta: Class,
    pub tau: u64,
    pub css: Option<f64>,
}

impl Label {
    pub fn new(frame_index: u32, bbox: Box3D, beta: Class, tau: u64) -> Self {
        Self {
            frame_index,
            bbox,
            beta,
            tau,
            css: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if let Some(s) = self.css {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Validity(format!("css score {s} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn score(&self) -> f64 {
        self.css.unwrap_or(0.0)
    }
}
