//! Two-dipole diffusion fluence for a pencil beam and fiber-wise normalization.
//!
//! Each fiber's beam is replaced by an isotropic source one transport mean
//! free path into the tissue along the beam, plus a negative image source
//! mirrored across the extrapolated boundary `z = -z_b`, `z_b = 2·A·D`. The
//! fluence at `r` is
//!
//! ```text
//! Φ(r) = γ · [ exp(-μ_eff d_p) / (4π D d_p) - exp(-μ_eff d_n) / (4π D d_n) ]
//! ```
//!
//! with distances in cm. Normalizing over fibers removes `γ` and `D`, which
//! leaves `μ_eff` and `μ_s'` (through the dipole placement) as the only unknowns.

use alloc::vec::Vec;
use core::f64::consts::PI;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiber::FiberArray;
use crate::grid::{Grid, Point3};
use crate::optics::DiffusionParams;
use crate::units::{cm_to_mm, mm_to_cm};

/// Distances (cm) below which the dipole kernel is treated as singular.
pub const SINGULARITY_CM: f64 = 1e-6;

/// Extrapolated-boundary construction. `mismatch` is the boundary factor `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryModel {
    pub mismatch: f64,
}

impl Default for BoundaryModel {
    fn default() -> Self {
        BoundaryModel { mismatch: 1.0 }
    }
}

/// Positive source and its negative image for one fiber (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipolePair {
    pub positive: Point3,
    pub negative: Point3,
}

/// Places the dipole pair for fiber `i`.
pub fn place_dipoles(fibers: &FiberArray, i: usize, params: &DiffusionParams, boundary: BoundaryModel) -> DipolePair {
    let entry = fibers.entry_point(i);
    let dir = fibers.beam_direction(i);
    dipoles_from_beam(entry, dir, params, boundary)
}

pub fn dipoles_from_beam(entry: Point3, dir: Point3, params: &DiffusionParams, boundary: BoundaryModel) -> DipolePair {
    let depth = cm_to_mm(params.l_free_cm());
    let z_b = cm_to_mm(2.0 * boundary.mismatch * params.diffusion_cm());
    let positive = Point3::new(entry.x + depth * dir.x, entry.y + depth * dir.y, entry.z + depth * dir.z);
    let negative = Point3::new(positive.x, positive.y, -(positive.z + 2.0 * z_b));
    DipolePair { positive, negative }
}

#[inline]
fn kernel(mu_eff: f64, diffusion: f64, d_cm: f64) -> f64 {
    (-mu_eff * d_cm).exp() / (4.0 * PI * diffusion * d_cm)
}

/// Fluence at `r` (mm) for scale `gamma`.
pub fn fluence_at(pair: &DipolePair, params: &DiffusionParams, gamma: f64, r: &Point3) -> Result<f64> {
    let d_p = mm_to_cm(r.distance(&pair.positive));
    let d_n = mm_to_cm(r.distance(&pair.negative));
    if d_p < SINGULARITY_CM || d_n < SINGULARITY_CM {
        return Err(Error::Singularity(SINGULARITY_CM));
    }
    let diffusion = params.diffusion_cm();
    Ok(gamma * (kernel(params.mu_eff, diffusion, d_p) - kernel(params.mu_eff, diffusion, d_n)))
}

/// Shares `Φ_i / Σ Φ_i`.
pub fn normalize_over_fibers(values: &[f64]) -> Result<Vec<f64>> {
    let mut out = values.to_vec();
    normalize_in_place(&mut out)?;
    Ok(out)
}

pub(crate) fn normalize_in_place(values: &mut [f64]) -> Result<()> {
    let sum: f64 = values.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::DegeneratePixel);
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

/// Dipole pairs for every fiber at fixed optical parameters.
#[derive(Debug, Clone)]
pub struct FiberSources {
    pub params: DiffusionParams,
    pub pairs: Vec<DipolePair>,
}

impl FiberSources {
    pub fn new(fibers: &FiberArray, params: DiffusionParams, boundary: BoundaryModel) -> Self {
        let pairs = (0..fibers.len()).map(|i| place_dipoles(fibers, i, &params, boundary)).collect();
        FiberSources { params, pairs }
    }

    /// Unit-scale fluence of every fiber at `r`, written into `out`.
    pub fn fluence_column(&self, r: &Point3, out: &mut [f64]) -> Result<()> {
        for (o, pair) in out.iter_mut().zip(&self.pairs) {
            *o = fluence_at(pair, &self.params, 1.0, r)?;
        }
        Ok(())
    }
}

/// Fluence maps of all fibers on the imaging plane (`y = 0`) at one wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct FluenceField {
    pub grid: Grid,
    pub n_fibers: usize,
    /// Scale factor applied to every value.
    pub gamma: f64,
    /// `values[i * grid.len() + iz * nx + ix]`.
    pub values: Vec<f64>,
    /// Pixels shallower than two transport mean free paths, where diffusion is not valid.
    pub near_field: Vec<bool>,
}

impl FluenceField {
    pub fn compute(grid: &Grid, fibers: &FiberArray, params: DiffusionParams, gamma: f64, boundary: BoundaryModel) -> Result<Self> {
        let sources = FiberSources::new(fibers, params, boundary);
        let n = grid.len();
        let mut values = alloc::vec![0.0; fibers.len() * n];
        let near_depth = near_field_depth_mm(&params);
        let mut near_field = alloc::vec![false; n];
        for iz in 0..grid.nz {
            let z = grid.z_center(iz);
            for ix in 0..grid.nx {
                let r = Point3::new(grid.x_center(ix), 0.0, z);
                let k = grid.offset(ix, iz);
                near_field[k] = z < near_depth;
                for (i, pair) in sources.pairs.iter().enumerate() {
                    values[i * n + k] = fluence_at(pair, &params, gamma, &r)?;
                }
            }
        }
        Ok(FluenceField { grid: *grid, n_fibers: fibers.len(), gamma, values, near_field })
    }

    pub fn fiber(&self, i: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn at(&self, i: usize, ix: usize, iz: usize) -> f64 {
        self.fiber(i)[self.grid.offset(ix, iz)]
    }

    /// Fluence of every fiber at one pixel.
    pub fn column(&self, ix: usize, iz: usize) -> Vec<f64> {
        (0..self.n_fibers).map(|i| self.at(i, ix, iz)).collect()
    }

    /// Per-pixel sum over fibers.
    pub fn fiber_sum(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut sum = alloc::vec![0.0; n];
        for i in 0..self.n_fibers {
            for (s, v) in sum.iter_mut().zip(self.fiber(i)) {
                *s += v;
            }
        }
        sum
    }
}

/// Depth (mm) above which the diffusion approximation is flagged invalid: `2·l_free`.
pub fn near_field_depth_mm(params: &DiffusionParams) -> f64 {
    cm_to_mm(2.0 * params.l_free_cm())
}
