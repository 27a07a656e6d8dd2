//! Bundled digital phantoms.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::fiber::{default_pulse_energies, FiberArray};
use crate::grid::Grid;
use crate::optics::{MediumOptics, OpticalProps};
use crate::scene::{Absorber, ClutterGate, ConcentrationMap, Scatterer, Scene};
use crate::spectrum::{synthetic, SpectrumTable};

/// Fibers per side of the probe.
pub const FIBERS_PER_SIDE: usize = 10;
/// Fiber rows span the 128-element aperture (0.1 mm pitch).
pub const APERTURE_MM: f64 = 12.8;
/// Elevational distance of each fiber row from the imaging plane.
pub const SIDE_OFFSET_MM: f64 = 3.0;

/// 12.8 mm x 16 mm B-scan starting 2 mm below the surface.
pub fn default_grid() -> Grid {
    Grid::new(64, 160, 0.2, 0.1, -6.4, 2.0).expect("default grid is valid")
}

pub fn default_fibers(wavelengths: &[f64]) -> FiberArray {
    FiberArray::evenly_spaced(FIBERS_PER_SIDE, APERTURE_MM, SIDE_OFFSET_MM, default_pulse_energies(wavelengths))
        .expect("default fiber array is valid")
}

fn medium_from(wavelengths: &[f64], mu_a: fn(f64) -> f64, mu_s: fn(f64) -> f64) -> MediumOptics {
    let entries = wavelengths.iter().map(|&w| OpticalProps { wavelength_nm: w, mu_a: mu_a(w), mu_s_prime: mu_s(w) }).collect();
    MediumOptics::new(entries).expect("synthetic medium is valid")
}

/// Muscle-like background optics.
pub fn muscle_medium(wavelengths: &[f64]) -> MediumOptics {
    medium_from(wavelengths, synthetic::muscle_mu_a, synthetic::muscle_mu_s_prime)
}

/// Diluted-milk-like optics used for the tube experiment.
pub fn milk_medium(wavelengths: &[f64]) -> MediumOptics {
    medium_from(wavelengths, synthetic::milk_mu_a, synthetic::milk_mu_s_prime)
}

fn base_scene(grid: Grid, wavelengths: &[f64], medium: MediumOptics) -> Scene {
    Scene {
        grid,
        fibers: default_fibers(wavelengths),
        medium,
        absorbers: Vec::new(),
        surface_absorption: 0.0,
        scatterers: Vec::new(),
        clutter_gate: ClutterGate::default(),
        noise_sigma: 0.0,
        rng_seed: 1,
        fluence_scale: 1.0,
    }
}

/// One agent pixel at `(x_mm, depth_mm)` in muscle, no clutter, no noise.
pub fn point_target(depth_mm: f64, x_mm: f64, wavelengths: &[f64]) -> Scene {
    let grid = default_grid();
    let mut scene = base_scene(grid, wavelengths, muscle_medium(wavelengths));
    let mut map = ConcentrationMap::zeros(grid.nx, grid.nz);
    let (ix, iz) = grid.nearest_index(x_mm + 1e-9, depth_mm + 1e-9).expect("target inside the default grid");
    map.set(ix, iz, 1.0);
    scene.absorbers.push(Absorber { id: "agent".to_string(), spectrum: synthetic::agent_table(), concentration: map, gruneisen: 1.0 });
    scene
}

/// Agent injection path at 8 mm, a blood-like vessel distractor at a similar
/// depth and surface clutter echoing from scatterers at 5.5-6.5 mm (so the
/// artifacts land at 11-13 mm).
pub fn study2(wavelengths: &[f64], noise_sigma: f64, seed: u64) -> Scene {
    let grid = default_grid();
    let mut scene = base_scene(grid, wavelengths, muscle_medium(wavelengths));

    let mut agent = ConcentrationMap::zeros(grid.nx, grid.nz);
    agent.fill(&grid, 1.0, |x, z| {
        let (u, v) = ((x + 2.0) / 1.6, (z - 8.0) / 0.25);
        u * u + v * v <= 1.0
    });
    let mut blood = ConcentrationMap::zeros(grid.nx, grid.nz);
    blood.fill(&grid, 1.4, |x, z| {
        let (u, v) = ((x - 3.0) / 0.5, (z - 7.0) / 0.25);
        u * u + v * v <= 1.0
    });
    scene.absorbers.push(Absorber { id: "agent".to_string(), spectrum: synthetic::agent_table(), concentration: agent, gruneisen: 1.0 });
    scene.absorbers.push(Absorber { id: "blood".to_string(), spectrum: synthetic::blood_table(), concentration: blood, gruneisen: 1.0 });

    // clutter peaks about 12 dB above the agent in single-fiber images
    scene.surface_absorption = 10.0;
    scene.scatterers = [(-4.6, 5.6, 0.8), (-1.1, 6.1, 1.0), (0.9, 5.8, 0.6), (2.4, 6.4, 0.9), (4.9, 5.5, 0.7)]
        .iter()
        .map(|&(x_mm, z_mm, reflectivity)| Scatterer { x_mm, z_mm, reflectivity })
        .collect();
    scene.noise_sigma = noise_sigma;
    scene.rng_seed = seed;
    scene
}

/// Tube cross-section (radius 0.5 mm) at 8 mm depth in diluted milk, filled with
/// an absorber of the given spectrum.
pub fn tube(spectrum: SpectrumTable, id: &str, wavelengths: &[f64]) -> Scene {
    let grid = default_grid();
    let mut scene = base_scene(grid, wavelengths, milk_medium(wavelengths));
    let mut map = ConcentrationMap::zeros(grid.nx, grid.nz);
    map.fill(&grid, 1.0, |x, z| x * x + (z - 8.0) * (z - 8.0) <= 0.25);
    scene.absorbers.push(Absorber { id: id.to_string(), spectrum, concentration: map, gruneisen: 1.0 });
    scene
}

/// Thin agent-soaked sheet (6 mm wide, 0.3 mm thick) at `depth_mm` in muscle.
pub fn depth_slab(depth_mm: f64, wavelengths: &[f64], noise_sigma: f64, seed: u64) -> Scene {
    let grid = Grid::new(64, 300, 0.2, 0.1, -6.4, 1.0).expect("valid grid");
    let mut scene = base_scene(grid, wavelengths, muscle_medium(wavelengths));
    let mut map = ConcentrationMap::zeros(grid.nx, grid.nz);
    map.fill(&grid, 1.0, |x, z| x.abs() <= 3.0 && (z - depth_mm).abs() <= 0.15);
    scene.absorbers.push(Absorber { id: "agent".to_string(), spectrum: synthetic::agent_table(), concentration: map, gruneisen: 1.0 });
    scene.noise_sigma = noise_sigma;
    scene.rng_seed = seed;
    scene
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelengths::STUDY2;

    #[test]
    fn bundled_phantoms_validate() {
        study2(&STUDY2, 0.0, 1).validate().unwrap();
        point_target(8.0, 0.0, &STUDY2).validate().unwrap();
        tube(synthetic::reference_table(), "ref", &crate::wavelengths::calibration()).validate().unwrap();
        depth_slab(14.5, &[795.0], 0.1, 3).validate().unwrap();
    }

    #[test]
    fn study2_has_both_targets() {
        let s = study2(&STUDY2, 0.0, 1);
        assert!(s.absorber("agent").unwrap().concentration.nonzero().count() > 10);
        assert!(s.absorber("blood").unwrap().concentration.nonzero().count() > 3);
        assert_eq!(s.fibers.len(), 20);
    }
}
