//! Unsupervised 3D pseudo-labels for LiDAR sequences.
//!
//! Stages, in pipeline order:
//! [`mfc`] turns a posed point-cloud sequence into tracked initial boxes,
//! [`css`] scores each box without ground truth,
//! [`cproto`] distills high-scoring tracks into size prototypes,
//! [`cbr`] snaps every box to its prototype's size and to its cluster's
//! dense boundary, and [`eval`] compares any stage against ground truth.
//! [`synth`] generates sequences with exact ground truth and [`cst`] holds
//! the loss arithmetic used for self-training.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cbr;
pub mod cproto;
pub mod css;
pub mod cst;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod mfc;
pub mod pipeline;
pub mod scene;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Box3D, IouMode, Point, Pose};
pub use scene::{Class, Frame, Label, Sequence};
