//! Incremental, real-time aerial mapping.
//!
//! A stream of geotagged frames flows one way through five stages (pose,
//! densification, surface generation, rectification, mosaicing) and is fused
//! into a georeferenced orthophoto and 2.5D elevation model that grows as the
//! flight proceeds.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod densify;
pub mod error;
pub mod geo;
pub mod grid;
pub mod mosaic;
pub mod pipeline;
pub mod pose;
pub mod rectify;
pub mod surface;
pub mod synth;

pub use error::{Error, Result};
