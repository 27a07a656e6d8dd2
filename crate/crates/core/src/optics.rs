//! Background optical properties of the medium.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Background absorption and reduced scattering at one wavelength (cm⁻¹).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalProps {
    pub wavelength_nm: f64,
    pub mu_a: f64,
    pub mu_s_prime: f64,
}

impl OpticalProps {
    pub fn new(wavelength_nm: f64, mu_a: f64, mu_s_prime: f64) -> Result<Self> {
        let p = OpticalProps { wavelength_nm, mu_a, mu_s_prime };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_a > 0.0 && self.mu_a.is_finite()) {
            return Err(invalid("optical properties", "mu_a must be positive"));
        }
        if !(self.mu_s_prime > 0.0 && self.mu_s_prime.is_finite()) {
            return Err(invalid("optical properties", "mu_s' must be positive"));
        }
        Ok(())
    }

    pub fn diffusion(&self) -> DiffusionParams {
        DiffusionParams::from_absorption(self.mu_a, self.mu_s_prime)
    }
}

/// The two quantities the dipole fluence model depends on.
///
/// The fit works directly in `(mu_eff, mu_s')`; `mu_a` is recovered as
/// `mu_eff² / (3 mu_s')` when needed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionParams {
    /// Effective attenuation (cm⁻¹).
    pub mu_eff: f64,
    /// Reduced scattering (cm⁻¹).
    pub mu_s_prime: f64,
}

impl DiffusionParams {
    pub fn new(mu_eff: f64, mu_s_prime: f64) -> Self {
        DiffusionParams { mu_eff, mu_s_prime }
    }

    pub fn from_absorption(mu_a: f64, mu_s_prime: f64) -> Self {
        DiffusionParams { mu_eff: (3.0 * mu_a * mu_s_prime).sqrt(), mu_s_prime }
    }

    /// Diffusion coefficient D = 1/(3 mu_s') in cm. Absorption is not included.
    #[inline]
    pub fn diffusion_cm(&self) -> f64 {
        1.0 / (3.0 * self.mu_s_prime)
    }

    /// Transport mean free path l = 3D = 1/mu_s' in cm.
    #[inline]
    pub fn l_free_cm(&self) -> f64 {
        1.0 / self.mu_s_prime
    }

    pub fn mu_a(&self) -> f64 {
        self.mu_eff * self.mu_eff / (3.0 * self.mu_s_prime)
    }
}

/// Per-wavelength medium optics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumOptics {
    pub entries: Vec<OpticalProps>,
}

/// Wavelengths closer than this (nm) are considered identical.
pub const WAVELENGTH_MATCH_NM: f64 = 1e-6;

impl MediumOptics {
    pub fn new(entries: Vec<OpticalProps>) -> Result<Self> {
        let m = MediumOptics { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(invalid("medium", "no wavelengths configured"));
        }
        for e in &self.entries {
            e.validate()?;
        }
        if self.entries.windows(2).any(|w| w[1].wavelength_nm <= w[0].wavelength_nm) {
            return Err(invalid("medium", "wavelengths must be strictly increasing"));
        }
        Ok(())
    }

    pub fn at(&self, wavelength_nm: f64) -> Result<&OpticalProps> {
        self.entries.iter().find(|e| (e.wavelength_nm - wavelength_nm).abs() < WAVELENGTH_MATCH_NM).ok_or(Error::MissingWavelength(wavelength_nm))
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.wavelength_nm).collect()
    }
}
