//! Weakly supervised dense event captioning.
//!
//! A sentence localizer and a caption generator are trained jointly from
//! caption text alone: the localizer proposes a temporal segment for a
//! caption, the generator re-describes that segment, and the two are tied
//! together by a captioning loss and a segment reconstruction loss. At test
//! time random segments are refined by one round of fixed-point iteration
//! (caption the segment, then localize the caption) and filtered by their
//! self-consistency.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! and the command-line driver live in the `wsdec` companion crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod captioner;
pub mod data;
pub mod encoders;
mod error;
pub mod graph;
pub mod inference;
pub mod localizer;
pub(crate) mod math;
pub mod metrics;
pub mod model;
pub mod params;
pub mod segment;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use segment::TemporalSegment;
pub use tensor::Tensor;
