//! Image-domain point spread function of the receive array.

use core::f64::consts::PI;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const DEFAULT_SIGMA_X_MM: f64 = 0.05;

/// Separable Gaussian envelope with an axial carrier at the round-trip
/// spatial frequency `2 f_c / c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfModel {
    pub center_mhz: f64,
    pub band_low_mhz: f64,
    pub band_high_mhz: f64,
    pub sound_speed_m_s: f64,
    /// Axial envelope standard deviation (mm).
    pub sigma_z_mm: f64,
    /// Lateral envelope standard deviation (mm).
    pub sigma_x_mm: f64,
    /// Kernel support in standard deviations.
    pub truncate_sigmas: f64,
}

impl Default for PsfModel {
    /// 15 MHz array, -6 dB band 11.3-19.3 MHz, 1540 m/s. Lateral sigma 0.05 mm
    /// (FWHM 0.12 mm), about the one-way diffraction limit of the 12.8 mm
    /// aperture over the imaged depths.
    fn default() -> Self {
        PsfModel::from_band(15.0, 11.3, 19.3, 1540.0, DEFAULT_SIGMA_X_MM).expect("default PSF parameters are valid")
    }
}

impl PsfModel {
    /// Derives the axial width so the envelope's amplitude spectrum drops by
    /// 6 dB at the band edges.
    pub fn from_band(center_mhz: f64, band_low_mhz: f64, band_high_mhz: f64, sound_speed_m_s: f64, sigma_x_mm: f64) -> Result<Self> {
        // Gaussian amplitude spectrum: half maximum at ±sigma_f·sqrt(2 ln 2).
        let sigma_f = (band_high_mhz - band_low_mhz) / (2.0 * (2.0 * core::f64::consts::LN_2).sqrt());
        // z maps to frequency through k = 2 f / c, so sigma_k = 2 sigma_f / c and sigma_z = 1 / (2π sigma_k).
        let c_mm_per_us = sound_speed_m_s / 1000.0;
        let sigma_z_mm = c_mm_per_us / (4.0 * PI * sigma_f);
        let p = PsfModel { center_mhz, band_low_mhz, band_high_mhz, sound_speed_m_s, sigma_z_mm, sigma_x_mm, truncate_sigmas: 4.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.band_low_mhz < self.center_mhz && self.center_mhz < self.band_high_mhz) {
            return Err(invalid("psf", "band must bracket the center frequency"));
        }
        if !(self.sigma_x_mm > 0.0 && self.sigma_z_mm > 0.0 && self.sound_speed_m_s > 0.0 && self.truncate_sigmas > 0.0) {
            return Err(invalid("psf", "widths and sound speed must be positive"));
        }
        Ok(())
    }

    /// Carrier spatial frequency in cycles per mm.
    pub fn carrier_cycles_per_mm(&self) -> f64 {
        2.0 * self.center_mhz / (self.sound_speed_m_s / 1000.0)
    }

    pub fn fractional_bandwidth(&self) -> f64 {
        (self.band_high_mhz - self.band_low_mhz) / self.center_mhz
    }

    /// Lateral envelope factor at offset `dx` (mm).
    #[inline]
    pub fn lateral(&self, dx: f64) -> f64 {
        let u = dx / self.sigma_x_mm;
        (-0.5 * u * u).exp()
    }

    /// Axial envelope times carrier at offset `dz` (mm).
    #[inline]
    pub fn axial(&self, dz: f64) -> Complex64 {
        let u = dz / self.sigma_z_mm;
        let phase = 2.0 * PI * self.carrier_cycles_per_mm() * dz;
        Complex64::from_polar((-0.5 * u * u).exp(), phase)
    }

    pub fn kernel(&self, dx: f64, dz: f64) -> Complex64 {
        self.axial(dz) * self.lateral(dx)
    }

    /// Half-extent of the kernel support in pixels for pitch `d`.
    pub fn support_pixels(sigma: f64, truncate: f64, d: f64) -> usize {
        (truncate * sigma / d).ceil() as usize
    }
}
