//! Simulation and processing core for fast-sweep photoacoustic (PA) spectroscopy.
//!
//! A fast-sweep PAUS probe fires one fiber at a time, so every wavelength yields
//! one beamformed complex (IQ) image per fiber. This crate models that
//! acquisition on a digital phantom and implements the inverse chain on top of
//! it:
//!
//! - [`fluence`]: two-dipole diffusion fluence and fiber-wise normalization.
//! - [`simulate`]: per-fiber, per-wavelength IQ synthesis with fiber-locked clutter and noise.
//! - [`calibrate`]: agent spectrum recovery against a reference absorber.
//! - [`compensate`]: per-wavelength optical property fit and fluence compensation.
//! - [`declutter`]: p-th root compressed averaging over fibers.
//! - [`unmix`]: cosine-similarity (NCC) weighting and an NNLS baseline.
//! - [`depth`]: C-scans, ROI statistics and dB-domain depth decay fits.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, figures, threading
//! and the command line live in the `pausim` crate.
#![no_std]
#![warn(missing_debug_implementations)]
// `!(x > 0.0)` is the NaN-rejecting form used by the validators
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod calibrate;
pub mod compensate;
pub mod declutter;
pub mod depth;
pub mod error;
pub mod fiber;
pub mod fluence;
pub mod grid;
pub mod optics;
pub mod optimize;
pub mod phantom;
pub mod psf;
pub mod scene;
pub mod simulate;
pub mod spectrum;
pub mod units;
pub mod unmix;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Wavelength sets used across the crate.
pub mod wavelengths {
    use alloc::vec::Vec;

    /// The nine wavelengths of the injected-agent study (nm).
    pub const STUDY2: [f64; 9] = [730.0, 744.0, 758.0, 772.0, 786.0, 795.0, 814.0, 828.0, 842.0];

    /// Calibration sweep: 700 nm to 870 nm every 5 nm (35 wavelengths).
    pub fn calibration() -> Vec<f64> {
        (0..35).map(|k| 700.0 + 5.0 * k as f64).collect()
    }
}
