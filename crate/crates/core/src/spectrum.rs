//! Tabulated spectra and the synthetic chromophore spectra bundled for testing.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumUnit {
    /// Absorption coefficient in cm⁻¹.
    #[default]
    PerCm,
    /// Arbitrary (relative) units, e.g. raw PA magnitudes.
    Relative,
}

/// Wavelength-indexed values with per-point standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub wavelengths: Vec<f64>,
    pub values: Vec<f64>,
    pub std: Vec<f64>,
    #[serde(default)]
    pub unit: SpectrumUnit,
}

impl SpectrumTable {
    pub fn new(wavelengths: Vec<f64>, values: Vec<f64>, std: Option<Vec<f64>>, unit: SpectrumUnit) -> Result<Self> {
        let std = std.unwrap_or_else(|| alloc::vec![0.0; values.len()]);
        let t = SpectrumTable { wavelengths, values, std, unit };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.wavelengths.is_empty() {
            return Err(invalid("spectrum", "empty table"));
        }
        if self.wavelengths.len() != self.values.len() || self.values.len() != self.std.len() {
            return Err(invalid("spectrum", "column lengths differ"));
        }
        if self.wavelengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("spectrum", "wavelengths must be strictly increasing"));
        }
        if self.values.iter().chain(&self.wavelengths).any(|v| !v.is_finite()) {
            return Err(invalid("spectrum", "non-finite entry"));
        }
        if self.std.iter().any(|s| !(*s >= 0.0)) {
            return Err(invalid("spectrum", "standard deviations must be non-negative"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelengths.is_empty()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.wavelengths[0], self.wavelengths[self.len() - 1])
    }

    /// Linear interpolation between nodes; no extrapolation.
    pub fn sample(&self, wavelength_nm: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(wavelength_nm >= lo && wavelength_nm <= hi) {
            return Err(Error::WavelengthOutOfRange(wavelength_nm));
        }
        let k = self.wavelengths.partition_point(|&w| w <= wavelength_nm);
        // k >= 1 because wavelength_nm >= lo
        let i = k - 1;
        if i == self.len() - 1 || self.wavelengths[i] == wavelength_nm {
            return Ok(self.values[i]);
        }
        let (w0, w1) = (self.wavelengths[i], self.wavelengths[i + 1]);
        let t = (wavelength_nm - w0) / (w1 - w0);
        Ok(self.values[i] + t * (self.values[i + 1] - self.values[i]))
    }

    pub fn sample_many(&self, wavelengths: &[f64]) -> Result<Vec<f64>> {
        wavelengths.iter().map(|&w| self.sample(w)).collect()
    }

    /// Builds a table by evaluating `f` at each wavelength.
    pub fn from_fn(wavelengths: &[f64], unit: SpectrumUnit, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = wavelengths.iter().map(|&w| f(w)).collect();
        SpectrumTable::new(wavelengths.to_vec(), values, None, unit)
    }

    pub fn scaled(&self, factor: f64) -> SpectrumTable {
        SpectrumTable {
            wavelengths: self.wavelengths.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
            std: self.std.iter().map(|s| s * factor.abs()).collect(),
            unit: self.unit,
        }
    }

    /// Wavelength of the largest value.
    pub fn argmax_wavelength(&self) -> f64 {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        self.wavelengths[best]
    }
}

/// Closed-form synthetic spectra standing in for measured tables.
///
/// None of these are physical data. They only need the right qualitative
/// shape: a single broad NIR peak for the agent, a blood-like curve that is
/// clearly different from it, a smooth reference absorber, and a muscle-like
/// background.
pub mod synthetic {
    use super::*;

    fn gauss(x: f64, center: f64, width: f64) -> f64 {
        let u = (x - center) / width;
        (-u * u).exp()
    }

    /// Nonradiative absorption of an ICG-conjugate-like agent (cm⁻¹), peak near 795 nm.
    pub fn agent(wavelength_nm: f64) -> f64 {
        2.0 * gauss(wavelength_nm, 795.0, 38.0) + 0.55 * gauss(wavelength_nm, 728.0, 32.0) + 0.03
    }

    /// Total absorption of the same agent (cm⁻¹); the radiative part is `agent_total - agent`.
    pub fn agent_total(wavelength_nm: f64) -> f64 {
        agent(wavelength_nm) + 0.6 * gauss(wavelength_nm, 790.0, 30.0) + 0.1 * gauss(wavelength_nm, 730.0, 35.0)
    }

    /// Blood-like absorption (cm⁻¹): deoxy-rich mixture with the 757 nm band.
    pub fn blood(wavelength_nm: f64) -> f64 {
        let t = (wavelength_nm - 700.0) / 170.0;
        let deoxy = 1.6 * (-(wavelength_nm - 700.0) / 70.0).exp() + 0.45 * gauss(wavelength_nm, 757.0, 14.0);
        let oxy = 0.25 + 0.45 * t;
        0.65 * deoxy + 0.35 * oxy
    }

    /// Reference absorber with a broad band around 810 nm (cm⁻¹), copper-sulfate-like.
    pub fn reference_absorber(wavelength_nm: f64) -> f64 {
        0.3 + 4.7 * gauss(wavelength_nm, 810.0, 140.0)
    }

    /// Muscle-like background absorption (cm⁻¹).
    pub fn muscle_mu_a(wavelength_nm: f64) -> f64 {
        0.05 + 0.22 * (-(wavelength_nm - 700.0) / 80.0).exp() + 0.03 * gauss(wavelength_nm, 760.0, 12.0)
    }

    /// Muscle-like reduced scattering (cm⁻¹), power law in wavelength.
    pub fn muscle_mu_s_prime(wavelength_nm: f64) -> f64 {
        9.0 * (wavelength_nm / 800.0).powf(-1.2)
    }

    /// Diluted-milk-like absorption (cm⁻¹).
    pub fn milk_mu_a(wavelength_nm: f64) -> f64 {
        0.03 + 0.01 * (wavelength_nm - 700.0) / 170.0
    }

    /// Diluted-milk-like reduced scattering (cm⁻¹).
    pub fn milk_mu_s_prime(wavelength_nm: f64) -> f64 {
        7.0 * (wavelength_nm / 800.0).powf(-0.8)
    }

    /// Agent table on a 1 nm grid over 700-870 nm.
    pub fn agent_table() -> SpectrumTable {
        let w: Vec<f64> = (700..=870).map(|k| k as f64).collect();
        SpectrumTable::from_fn(&w, SpectrumUnit::PerCm, agent).expect("synthetic agent spectrum is valid")
    }

    pub fn blood_table() -> SpectrumTable {
        let w: Vec<f64> = (700..=870).map(|k| k as f64).collect();
        SpectrumTable::from_fn(&w, SpectrumUnit::PerCm, blood).expect("synthetic blood spectrum is valid")
    }

    pub fn reference_table() -> SpectrumTable {
        let w: Vec<f64> = (700..=870).map(|k| k as f64).collect();
        SpectrumTable::from_fn(&w, SpectrumUnit::PerCm, reference_absorber).expect("synthetic reference spectrum is valid")
    }
}
