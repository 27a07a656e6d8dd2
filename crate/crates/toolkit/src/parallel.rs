//! Rayon-backed versions of the per-(wavelength, fiber) synthesis and the
//! per-wavelength fits. Results are assembled in index order, so they do not
//! depend on the number of worker threads.

use pausim_core::compensate::{fit_wavelength, FitConfig, OpticalFit, SelectionConfig};
use pausim_core::fiber::FiberArray;
use pausim_core::psf::PsfModel;
use pausim_core::scene::Scene;
use pausim_core::simulate::{assemble, synthesize_partial, IqVolume, VolumeComponents};
use rayon::prelude::*;

use crate::{Error, Result};

/// Runs `f` on a pool capped at `threads` workers (0: rayon's default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn synthesize_components(scene: &Scene, psf: &PsfModel) -> Result<VolumeComponents> {
    scene.validate()?;
    psf.validate()?;
    let nw = scene.wavelengths().len();
    let nf = scene.fibers.len();
    let partials = (0..nw * nf).into_par_iter().map(|k| synthesize_partial(scene, psf, k / nf, k % nf)).collect::<pausim_core::Result<Vec<_>>>()?;
    Ok(assemble(scene, partials)?)
}

pub fn synthesize_volume(scene: &Scene, psf: &PsfModel) -> Result<IqVolume> {
    Ok(synthesize_components(scene, psf)?.combined)
}

/// One fit per wavelength; a wavelength without signal yields an error entry.
pub fn fit_all(volume: &IqVolume, fibers: &FiberArray, selection: &SelectionConfig, config: &FitConfig) -> Vec<pausim_core::Result<OpticalFit>> {
    (0..volume.n_wavelengths()).into_par_iter().map(|j| fit_wavelength(volume, j, fibers, selection, config)).collect()
}
