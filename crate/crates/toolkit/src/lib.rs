//! Persistence, figures, parallel execution and the end-to-end pipeline for
//! [`pausim_core`].
//!
//! Volumes are raw little-endian `f32` pairs with a JSON sidecar, spectra and
//! depth series are CSV, scenes and reports are JSON, and figures are 8-bit
//! PNG or PGM with a colorbar sidecar.

pub mod error;
pub mod figure;
pub mod hash;
pub mod oracle;
pub mod parallel;
pub mod pipeline;
pub mod plot;
pub mod scene_io;
pub mod table;
pub mod volume;

pub use error::{Error, Result};
pub use pausim_core as core;

/// Identifier embedded in every report and printed by `--version`.
pub const BUILD_ID: &str = concat!("pausim ", env!("CARGO_PKG_VERSION"));
