//! Relighting toolkit for volumetric-capture frame sequences.
//!
//! The library is organized around a simple deferred-shading pipeline:
//! per-frame material samples are aggregated into confidence-weighted
//! estimates ([`ensemble`]), smoothed over time with a flow-guided
//! variational solver ([`stabilize`]), and relit under an HDR environment
//! map with physically-based shading and screen-space soft shadows
//! ([`shade`]). [`synth`] generates analytic test scenes and a brute-force
//! Monte Carlo reference renderer used to validate the shading path, and
//! [`pipeline`] chains the stages over an on-disk sequence manifest.

pub mod config;
pub mod ensemble;
pub mod error;
pub mod losses;
pub mod mapio;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod shade;
pub mod stabilize;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{BinaryMask, FlowField, ImagePlane};
