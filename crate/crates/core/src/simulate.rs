//! Forward model: per-fiber, per-wavelength beamformed IQ images.
//!
//! Every partial image is the sum of three independent contributions:
//!
//! - the photoacoustic term `Γ μ_a c(r) Φ_i(r, λ)` rendered through the PSF,
//! - fiber-locked clutter: surface laser-ultrasound echoed by scatterers and
//!   misplaced at twice their depth, present only for fibers above them,
//! - circular complex Gaussian noise from a counter-based generator keyed on
//!   `(seed, wavelength index, fiber index)`.
//!
//! Generation of one partial image never depends on any other, so callers may
//! evaluate `(λ, fiber)` pairs in any order or in parallel.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluence::{fluence_at, place_dipoles, BoundaryModel};
use crate::grid::{Grid, Point3};
use crate::psf::PsfModel;
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct VolumeMeta {
    pub seed: u64,
    /// Hex digest of the scene the volume was generated from (empty if unknown).
    #[serde(default)]
    pub scene_hash: String,
}

/// Complex image stack indexed `[wavelength][fiber][iz][ix]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IqVolume {
    pub grid: Grid,
    pub wavelengths: Vec<f64>,
    pub n_fibers: usize,
    pub data: Vec<Complex64>,
    pub meta: VolumeMeta,
}

impl IqVolume {
    pub fn zeros(grid: Grid, wavelengths: Vec<f64>, n_fibers: usize) -> Self {
        let len = wavelengths.len() * n_fibers * grid.len();
        IqVolume { grid, wavelengths, n_fibers, data: alloc::vec![Complex64::new(0.0, 0.0); len], meta: VolumeMeta::default() }
    }

    /// Assembles a volume from images ordered `[j][i]`, each of `grid.len()` samples.
    pub fn from_images(grid: Grid, wavelengths: Vec<f64>, n_fibers: usize, images: Vec<Vec<Complex64>>) -> Result<Self> {
        if images.len() != wavelengths.len() * n_fibers || images.iter().any(|im| im.len() != grid.len()) {
            return Err(Error::ShapeMismatch(alloc::format!("expected {} images of {} samples", wavelengths.len() * n_fibers, grid.len())));
        }
        let data = images.into_iter().flatten().collect();
        Ok(IqVolume { grid, wavelengths, n_fibers, data, meta: VolumeMeta::default() })
    }

    pub fn n_wavelengths(&self) -> usize {
        self.wavelengths.len()
    }

    /// `(n_wavelengths, n_fibers, nz, nx)`.
    pub fn dims(&self) -> [usize; 4] {
        [self.n_wavelengths(), self.n_fibers, self.grid.nz, self.grid.nx]
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let expect = self.n_wavelengths() * self.n_fibers * self.grid.len();
        if self.data.len() != expect {
            return Err(Error::ShapeMismatch(alloc::format!("volume holds {} samples, dims imply {}", self.data.len(), expect)));
        }
        if self.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::ShapeMismatch("volume contains non-finite samples".into()));
        }
        Ok(())
    }

    pub fn image(&self, j: usize, i: usize) -> &[Complex64] {
        let n = self.grid.len();
        let start = (j * self.n_fibers + i) * n;
        &self.data[start..start + n]
    }

    pub fn image_mut(&mut self, j: usize, i: usize) -> &mut [Complex64] {
        let n = self.grid.len();
        let start = (j * self.n_fibers + i) * n;
        &mut self.data[start..start + n]
    }

    /// Samples of every fiber at one pixel and wavelength.
    pub fn fiber_column(&self, j: usize, ix: usize, iz: usize) -> Vec<Complex64> {
        let k = self.grid.offset(ix, iz);
        (0..self.n_fibers).map(|i| self.image(j, i)[k]).collect()
    }

    pub fn wavelength_index(&self, wavelength_nm: f64) -> Result<usize> {
        self.wavelengths
            .iter()
            .position(|w| (w - wavelength_nm).abs() < crate::optics::WAVELENGTH_MATCH_NM)
            .ok_or(Error::MissingWavelength(wavelength_nm))
    }

    /// Coherent sum over fibers at wavelength `j`.
    pub fn fiber_sum(&self, j: usize) -> Vec<Complex64> {
        let mut out = alloc::vec![Complex64::new(0.0, 0.0); self.grid.len()];
        for i in 0..self.n_fibers {
            for (o, v) in out.iter_mut().zip(self.image(j, i)) {
                *o += v;
            }
        }
        out
    }

    /// Sum of magnitudes over fibers at wavelength `j`.
    pub fn magnitude_sum(&self, j: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.grid.len()];
        for i in 0..self.n_fibers {
            for (o, v) in out.iter_mut().zip(self.image(j, i)) {
                *o += v.norm();
            }
        }
        out
    }

    /// Element-wise sum with a volume of identical layout.
    pub fn add(&self, other: &IqVolume) -> Result<IqVolume> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch("volumes differ in shape".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(out)
    }

    pub fn scale_wavelength(&mut self, j: usize, factor: f64) {
        for i in 0..self.n_fibers {
            for v in self.image_mut(j, i) {
                *v *= factor;
            }
        }
    }
}

fn splat(grid: &Grid, psf: &PsfModel, image: &mut [Complex64], x: f64, z: f64, amp: f64) {
    let hx = PsfModel::support_pixels(psf.sigma_x_mm, psf.truncate_sigmas, grid.dx) as isize;
    let hz = PsfModel::support_pixels(psf.sigma_z_mm, psf.truncate_sigmas, grid.dz) as isize;
    let cx = ((x - grid.x0) / grid.dx - 0.5).round() as isize;
    let cz = ((z - grid.z0) / grid.dz - 0.5).round() as isize;
    for iz in (cz - hz).max(0)..(cz + hz + 1).min(grid.nz as isize) {
        let axial = psf.axial(grid.z_center(iz as usize) - z) * amp;
        for ix in (cx - hx).max(0)..(cx + hx + 1).min(grid.nx as isize) {
            let lat = psf.lateral(grid.x_center(ix as usize) - x);
            image[grid.offset(ix as usize, iz as usize)] += axial * lat;
        }
    }
}

/// Magnitude of the kernel summed over pixel-center offsets.
pub fn grid_gain(grid: &Grid, psf: &PsfModel) -> f64 {
    let hx = PsfModel::support_pixels(psf.sigma_x_mm, psf.truncate_sigmas, grid.dx) as isize;
    let hz = PsfModel::support_pixels(psf.sigma_z_mm, psf.truncate_sigmas, grid.dz) as isize;
    let mut sum = Complex64::new(0.0, 0.0);
    for iz in -hz..=hz {
        for ix in -hx..=hx {
            sum += psf.kernel(ix as f64 * grid.dx, iz as f64 * grid.dz);
        }
    }
    sum.norm()
}

/// Photoacoustic partial image of fiber `i` at `wavelength_nm`.
pub fn synthesize_pa(scene: &Scene, psf: &PsfModel, wavelength_nm: f64, i: usize) -> Result<Vec<Complex64>> {
    let grid = &scene.grid;
    let params = scene.medium.at(wavelength_nm)?.diffusion();
    let gamma = scene.fluence_scale * scene.fibers.pulse_energy(wavelength_nm)?;
    let pair = place_dipoles(&scene.fibers, i, &params, BoundaryModel::default());

    // Initial-pressure source strengths on the grid, summed over absorbers.
    let mut source = alloc::vec![0.0; grid.len()];
    for absorber in &scene.absorbers {
        let mu_a = absorber.spectrum.sample(wavelength_nm)?;
        for (ix, iz, c) in absorber.concentration.nonzero() {
            let r = Point3::new(grid.x_center(ix), 0.0, grid.z_center(iz));
            let phi = fluence_at(&pair, &params, gamma, &r)?;
            source[grid.offset(ix, iz)] += absorber.gruneisen * mu_a * c * phi;
        }
    }

    // Sources sit on pixel centers; scaling by the sampled kernel sum keeps
    // uniform regions at their source value.
    let gain = grid_gain(grid, psf);
    let mut image = alloc::vec![Complex64::new(0.0, 0.0); grid.len()];
    for iz in 0..grid.nz {
        for ix in 0..grid.nx {
            let s = source[grid.offset(ix, iz)];
            if s != 0.0 {
                splat(grid, psf, &mut image, grid.x_center(ix), grid.z_center(iz), s / gain);
            }
        }
    }
    Ok(image)
}

/// Gate weight of a scatterer at lateral offset `dx` from the firing fiber.
pub fn clutter_gate_weight(scene: &Scene, dx: f64) -> f64 {
    let w = scene.clutter_gate.half_width_mm;
    if scene.clutter_gate.smooth {
        let u = dx / (0.5 * w);
        (-0.5 * u * u).exp()
    } else if dx.abs() <= w {
        1.0
    } else {
        0.0
    }
}

/// Clutter partial image of fiber `i`: echoes at `(x_s, 2 z_s)` from scatterers under the fiber.
pub fn synthesize_clutter(scene: &Scene, psf: &PsfModel, wavelength_nm: f64, i: usize) -> Result<Vec<Complex64>> {
    let grid = &scene.grid;
    let mut image = alloc::vec![Complex64::new(0.0, 0.0); grid.len()];
    if scene.scatterers.is_empty() || scene.surface_absorption == 0.0 {
        return Ok(image);
    }
    let energy = scene.fibers.pulse_energy(wavelength_nm)?;
    let x_fiber = scene.fibers.fibers[i].x_mm;
    for s in &scene.scatterers {
        let gate = clutter_gate_weight(scene, s.x_mm - x_fiber);
        if gate == 0.0 {
            continue;
        }
        let amp = scene.surface_absorption * energy * s.reflectivity * gate;
        splat(grid, psf, &mut image, s.x_mm, 2.0 * s.z_mm, amp);
    }
    Ok(image)
}

/// Stream id reserved for B-mode speckle so it never collides with `(j, i)` streams.
const BMODE_STREAM: u64 = u64::MAX;

pub(crate) fn gaussian_pairs(seed: u64, stream: u64, n: usize, sigma: f64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let unit = |x: u64| (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (0..n)
        .map(|_| {
            // Box-Muller; u1 in (0, 1]
            let u1 = 1.0 - unit(rng.next_u64());
            let u2 = unit(rng.next_u64());
            let r = sigma * (-2.0 * u1.ln()).sqrt();
            Complex64::from_polar(r, 2.0 * PI * u2)
        })
        .collect()
}

/// Circular complex Gaussian noise for partial image `(j, i)`; each component has std `sigma`.
pub fn synthesize_noise(scene: &Scene, j: usize, i: usize) -> Vec<Complex64> {
    let n = scene.grid.len();
    if scene.noise_sigma == 0.0 {
        return alloc::vec![Complex64::new(0.0, 0.0); n];
    }
    let stream = (j as u64) * (scene.fibers.len() as u64) + i as u64;
    gaussian_pairs(scene.rng_seed, stream, n, scene.noise_sigma)
}

/// The three contributions to one partial image.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialImage {
    pub pa: Vec<Complex64>,
    pub clutter: Vec<Complex64>,
    pub noise: Vec<Complex64>,
}

impl PartialImage {
    /// `pa + clutter + noise`, summed in that order.
    pub fn combined(&self) -> Vec<Complex64> {
        self.pa.iter().zip(&self.clutter).zip(&self.noise).map(|((p, c), n)| p + c + n).collect()
    }
}

pub fn synthesize_partial(scene: &Scene, psf: &PsfModel, j: usize, i: usize) -> Result<PartialImage> {
    let wavelengths = scene.wavelengths();
    let w = *wavelengths.get(j).ok_or_else(|| Error::Config(alloc::format!("wavelength index {j} out of range")))?;
    Ok(PartialImage { pa: synthesize_pa(scene, psf, w, i)?, clutter: synthesize_clutter(scene, psf, w, i)?, noise: synthesize_noise(scene, j, i) })
}

/// Separate PA, clutter and noise volumes; `combined` equals their ordered sum bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeComponents {
    pub pa: IqVolume,
    pub clutter: IqVolume,
    pub noise: IqVolume,
    pub combined: IqVolume,
}

/// Assembles volumes from partial images ordered `[j][i]`.
pub fn assemble(scene: &Scene, partials: Vec<PartialImage>) -> Result<VolumeComponents> {
    let grid = scene.grid;
    let w = scene.wavelengths();
    let nf = scene.fibers.len();
    let combined: Vec<_> = partials.iter().map(PartialImage::combined).collect();
    let (mut pa, mut clutter, mut noise) = (Vec::new(), Vec::new(), Vec::new());
    for p in partials {
        pa.push(p.pa);
        clutter.push(p.clutter);
        noise.push(p.noise);
    }
    let meta = VolumeMeta { seed: scene.rng_seed, scene_hash: String::new() };
    let mk = |images| -> Result<IqVolume> {
        let mut v = IqVolume::from_images(grid, w.clone(), nf, images)?;
        v.meta = meta.clone();
        Ok(v)
    };
    Ok(VolumeComponents { pa: mk(pa)?, clutter: mk(clutter)?, noise: mk(noise)?, combined: mk(combined)? })
}

pub fn synthesize_components(scene: &Scene, psf: &PsfModel) -> Result<VolumeComponents> {
    scene.validate()?;
    psf.validate()?;
    let nw = scene.wavelengths().len();
    let mut partials = Vec::with_capacity(nw * scene.fibers.len());
    for j in 0..nw {
        for i in 0..scene.fibers.len() {
            partials.push(synthesize_partial(scene, psf, j, i)?);
        }
    }
    assemble(scene, partials)
}

/// Full simulated acquisition: PA + clutter + noise for every wavelength and fiber.
pub fn synthesize_volume(scene: &Scene, psf: &PsfModel) -> Result<IqVolume> {
    Ok(synthesize_components(scene, psf)?.combined)
}

/// Envelope B-mode proxy for the anatomy layer: scatterer echoes at their true
/// depth plus speckle of standard deviation `speckle_sigma`.
pub fn synthesize_bmode(scene: &Scene, psf: &PsfModel, speckle_sigma: f64) -> Vec<f64> {
    let grid = &scene.grid;
    let mut image = if speckle_sigma > 0.0 {
        gaussian_pairs(scene.rng_seed, BMODE_STREAM, grid.len(), speckle_sigma)
    } else {
        alloc::vec![Complex64::new(0.0, 0.0); grid.len()]
    };
    for s in &scene.scatterers {
        splat(grid, psf, &mut image, s.x_mm, s.z_mm, s.reflectivity);
    }
    image.iter().map(|z| z.norm()).collect()
}
