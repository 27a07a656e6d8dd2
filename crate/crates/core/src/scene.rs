//! The digital phantom.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fiber::FiberArray;
use crate::grid::Grid;
use crate::optics::MediumOptics;
use crate::spectrum::SpectrumTable;

/// Non-negative concentration map over the grid, row-major by depth.
///
/// Serialized sparsely as `{ "nx", "nz", "entries": [[ix, iz, value], ...] }`
/// with zero pixels omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SparseMap", try_from = "SparseMap")]
pub struct ConcentrationMap {
    nx: usize,
    nz: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SparseMap {
    nx: usize,
    nz: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl From<ConcentrationMap> for SparseMap {
    fn from(m: ConcentrationMap) -> Self {
        let entries = m.nonzero().collect();
        SparseMap { nx: m.nx, nz: m.nz, entries }
    }
}

impl TryFrom<SparseMap> for ConcentrationMap {
    type Error = String;

    fn try_from(s: SparseMap) -> core::result::Result<Self, String> {
        let mut m = ConcentrationMap::zeros(s.nx, s.nz);
        for (ix, iz, v) in s.entries {
            if ix >= s.nx || iz >= s.nz {
                return Err(alloc::format!("map entry ({ix}, {iz}) outside {}x{}", s.nx, s.nz));
            }
            m.set(ix, iz, v);
        }
        Ok(m)
    }
}

impl ConcentrationMap {
    pub fn zeros(nx: usize, nz: usize) -> Self {
        ConcentrationMap { nx, nz, values: alloc::vec![0.0; nx * nz] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.nz)
    }

    pub fn get(&self, ix: usize, iz: usize) -> f64 {
        self.values[iz * self.nx + ix]
    }

    pub fn set(&mut self, ix: usize, iz: usize, value: f64) {
        self.values[iz * self.nx + ix] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Nonzero pixels as `(ix, iz, value)` in row-major order.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.values.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(k, v)| (k % self.nx, k / self.nx, *v))
    }

    /// Fills every pixel whose center satisfies `inside(x, z)` with `value`.
    pub fn fill(&mut self, grid: &Grid, value: f64, inside: impl Fn(f64, f64) -> bool) {
        for iz in 0..self.nz {
            for ix in 0..self.nx {
                if inside(grid.x_center(ix), grid.z_center(iz)) {
                    self.set(ix, iz, value);
                }
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ConcentrationMap { nx: self.nx, nz: self.nz, values: self.values.iter().map(|v| v * factor).collect() }
    }
}

/// One chromophore population in the phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Absorber {
    pub id: String,
    /// Absorption per unit concentration (cm⁻¹).
    pub spectrum: SpectrumTable,
    pub concentration: ConcentrationMap,
    /// Grüneisen coefficient.
    pub gruneisen: f64,
}

/// Acoustic scatterer that echoes surface-generated laser ultrasound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub x_mm: f64,
    pub z_mm: f64,
    pub reflectivity: f64,
}

/// Lateral gate deciding which fibers excite a scatterer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutterGate {
    /// Half-width of the surface-generated ultrasound beam (mm).
    pub half_width_mm: f64,
    /// Gaussian gate of standard deviation `half_width_mm / 2` instead of a hard window.
    #[serde(default)]
    pub smooth: bool,
}

impl Default for ClutterGate {
    fn default() -> Self {
        ClutterGate { half_width_mm: 1.5, smooth: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub grid: Grid,
    pub fibers: FiberArray,
    pub medium: MediumOptics,
    pub absorbers: Vec<Absorber>,
    /// Strength of the skin-layer laser-ultrasound source per fiber firing.
    pub surface_absorption: f64,
    pub scatterers: Vec<Scatterer>,
    #[serde(default)]
    pub clutter_gate: ClutterGate,
    /// Per-component standard deviation of the complex pixel noise.
    pub noise_sigma: f64,
    pub rng_seed: u64,
    /// Global fluence scale; the per-wavelength scale is this times the pulse energy.
    #[serde(default = "one")]
    pub fluence_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.fibers.validate()?;
        self.medium.validate()?;
        for w in self.medium.wavelengths() {
            self.fibers.pulse_energy(w)?;
        }
        for a in &self.absorbers {
            a.spectrum.validate()?;
            if a.concentration.shape() != (self.grid.nx, self.grid.nz) {
                return Err(invalid("scene", alloc::format!("absorber '{}' map does not match the grid", a.id)));
            }
            if a.concentration.values().iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
                return Err(invalid("scene", alloc::format!("absorber '{}' has a negative concentration", a.id)));
            }
            if !a.gruneisen.is_finite() || a.gruneisen < 0.0 {
                return Err(invalid("scene", "Grüneisen coefficient must be non-negative"));
            }
        }
        if self.scatterers.iter().any(|s| !(s.reflectivity >= 0.0) || !s.x_mm.is_finite() || !s.z_mm.is_finite()) {
            return Err(invalid("scene", "scatterer reflectivity must be non-negative"));
        }
        if !(self.surface_absorption >= 0.0) || !(self.noise_sigma >= 0.0) || !(self.fluence_scale >= 0.0) {
            return Err(invalid("scene", "surface absorption, noise sigma and fluence scale must be non-negative"));
        }
        if !(self.clutter_gate.half_width_mm > 0.0) {
            return Err(invalid("scene", "clutter gate half-width must be positive"));
        }
        Ok(())
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        self.medium.wavelengths()
    }

    pub fn absorber(&self, id: &str) -> Option<&Absorber> {
        self.absorbers.iter().find(|a| a.id == id)
    }
}
