//! Fast-sweep fiber array geometry and per-wavelength pulse energies.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::Point3;
use crate::optics::WAVELENGTH_MATCH_NM;

/// Which side of the transducer (in elevation) a fiber sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    /// Elevational sign: side A at `+y`, side B at `-y`.
    pub fn sign(self) -> f64 {
        match self {
            Side::A => 1.0,
            Side::B => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fiber {
    /// Position along the array long axis (mm).
    pub x_mm: f64,
    pub side: Side,
    /// Incidence angle from the surface normal (rad). Positive tilts toward the imaging plane.
    pub angle_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseEnergy {
    pub wavelength_nm: f64,
    pub energy_mj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberArray {
    pub fibers: Vec<Fiber>,
    /// Elevational distance (mm) of each fiber row from the imaging plane.
    pub side_offset_mm: f64,
    pub pulse_energies: Vec<PulseEnergy>,
}

impl FiberArray {
    /// Fibers evenly spread along `aperture_mm`, `per_side` on each side, mirrored
    /// about `x = 0`.
    pub fn evenly_spaced(per_side: usize, aperture_mm: f64, side_offset_mm: f64, pulse_energies: Vec<PulseEnergy>) -> Result<Self> {
        let pitch = aperture_mm / per_side as f64;
        let mut fibers = Vec::with_capacity(2 * per_side);
        for side in [Side::A, Side::B] {
            for k in 0..per_side {
                let x_mm = -0.5 * aperture_mm + (k as f64 + 0.5) * pitch;
                fibers.push(Fiber { x_mm, side, angle_rad: 0.0 });
            }
        }
        let a = FiberArray { fibers, side_offset_mm, pulse_energies };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fibers.len() < 2 {
            return Err(invalid("fiber array", "at least two fibers are required"));
        }
        for f in &self.fibers {
            if !f.x_mm.is_finite() || !(f.angle_rad.abs() < FRAC_PI_2) {
                return Err(invalid("fiber array", "fiber position must be finite and |angle| < pi/2"));
            }
        }
        if !self.side_offset_mm.is_finite() || self.side_offset_mm < 0.0 {
            return Err(invalid("fiber array", "side offset must be finite and non-negative"));
        }
        if self.pulse_energies.iter().any(|e| !(e.energy_mj > 0.0 && e.energy_mj.is_finite())) {
            return Err(invalid("fiber array", "pulse energies must be positive"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.fibers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fibers.is_empty()
    }

    pub fn pulse_energy(&self, wavelength_nm: f64) -> Result<f64> {
        self.pulse_energies
            .iter()
            .find(|e| (e.wavelength_nm - wavelength_nm).abs() < WAVELENGTH_MATCH_NM)
            .map(|e| e.energy_mj)
            .ok_or(Error::MissingWavelength(wavelength_nm))
    }

    /// Where fiber `i` meets the tissue surface.
    pub fn entry_point(&self, i: usize) -> Point3 {
        let f = &self.fibers[i];
        Point3::new(f.x_mm, f.side.sign() * self.side_offset_mm, 0.0)
    }

    /// Unit in-tissue beam direction of fiber `i`. Tilt is in the elevation plane.
    pub fn beam_direction(&self, i: usize) -> Point3 {
        let f = &self.fibers[i];
        Point3::new(0.0, -f.side.sign() * f.angle_rad.sin(), f.angle_rad.cos())
    }

    /// Array mirrored about `x = 0`; returns the permutation `i -> mirror(i)` if the
    /// fiber set maps onto itself.
    pub fn mirror_permutation(&self) -> Option<Vec<usize>> {
        let mut perm = Vec::with_capacity(self.len());
        for f in &self.fibers {
            let j =
                self.fibers.iter().position(|g| g.side == f.side && (g.x_mm + f.x_mm).abs() < 1e-9 && (g.angle_rad - f.angle_rad).abs() < 1e-12)?;
            perm.push(j);
        }
        Some(perm)
    }
}

/// Default pulse-energy curve (mJ): about 0.14 mJ with a smooth tuning ripple.
pub fn default_pulse_energy(wavelength_nm: f64) -> f64 {
    0.14 * (1.0 + 0.25 * ((wavelength_nm - 700.0) / 45.0).sin())
}

pub fn default_pulse_energies(wavelengths: &[f64]) -> Vec<PulseEnergy> {
    wavelengths.iter().map(|&w| PulseEnergy { wavelength_nm: w, energy_mj: default_pulse_energy(w) }).collect()
}
