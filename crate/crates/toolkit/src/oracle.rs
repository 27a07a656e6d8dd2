//! Monte Carlo reference for optical-property recovery under noise.

use pausim_core::compensate::{fit_wavelength, FitConfig, SelectionConfig};
use pausim_core::psf::PsfModel;
use pausim_core::scene::Scene;
use pausim_core::simulate::synthesize_components;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::Result;

/// Noise sigma giving `snr_db` between the peak fiber-averaged PA magnitude
/// and the per-component noise std, at wavelength index `j`.
pub fn noise_sigma_for_snr(scene: &Scene, psf: &PsfModel, j: usize, snr_db: f64) -> Result<f64> {
    let mut clean = scene.clone();
    clean.noise_sigma = 0.0;
    let c = synthesize_components(&clean, psf)?;
    let nf = c.pa.n_fibers as f64;
    let peak = c.pa.fiber_sum(j).iter().map(|z| z.norm() / nf).fold(0.0, f64::max);
    Ok(peak / 10f64.powf(snr_db / 20.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McRun {
    pub seed: u64,
    /// Signed relative errors; NaN when the fit failed.
    pub mu_eff_error: f64,
    pub mu_s_prime_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub wavelength_nm: f64,
    pub snr_db: f64,
    pub noise_sigma: f64,
    pub runs: Vec<McRun>,
    pub failed: usize,
    pub p50_mu_eff: f64,
    pub p95_mu_eff: f64,
    pub p50_mu_s_prime: f64,
    pub p95_mu_s_prime: f64,
}

/// Nearest-rank percentile of `values` (`q` in `(0, 1]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Fits wavelength `j` of `scene` for seeds `first_seed..first_seed + runs` at
/// the given SNR. Failed fits count as unbounded error.
#[allow(clippy::too_many_arguments)]
pub fn fit_error_monte_carlo(
    scene: &Scene,
    psf: &PsfModel,
    j: usize,
    snr_db: f64,
    runs: usize,
    first_seed: u64,
    selection: &SelectionConfig,
    fit: &FitConfig,
) -> Result<McSummary> {
    let w = scene.wavelengths()[j];
    let truth = scene.medium.at(w)?.diffusion();
    let sigma = noise_sigma_for_snr(scene, psf, j, snr_db)?;
    let mut single = scene.clone();
    single.medium = pausim_core::optics::MediumOptics::new(vec![*scene.medium.at(w)?])?;
    single.noise_sigma = sigma;
    let results: Vec<McRun> = (0..runs as u64)
        .into_par_iter()
        .map(|k| {
            let mut s = single.clone();
            s.rng_seed = first_seed + k;
            let fit = synthesize_components(&s, psf).ok().and_then(|c| fit_wavelength(&c.combined, 0, &s.fibers, selection, fit).ok());
            match fit {
                Some(f) => {
                    McRun { seed: s.rng_seed, mu_eff_error: f.mu_eff / truth.mu_eff - 1.0, mu_s_prime_error: f.mu_s_prime / truth.mu_s_prime - 1.0 }
                }
                None => McRun { seed: s.rng_seed, mu_eff_error: f64::NAN, mu_s_prime_error: f64::NAN },
            }
        })
        .collect();
    let abs = |f: fn(&McRun) -> f64| -> Vec<f64> { results.iter().map(|r| if f(r).is_nan() { f64::INFINITY } else { f(r).abs() }).collect() };
    let (e, s) = (abs(|r| r.mu_eff_error), abs(|r| r.mu_s_prime_error));
    Ok(McSummary {
        wavelength_nm: w,
        snr_db,
        noise_sigma: sigma,
        failed: results.iter().filter(|r| r.mu_eff_error.is_nan()).count(),
        runs: results,
        p50_mu_eff: percentile(&e, 0.5),
        p95_mu_eff: percentile(&e, 0.95),
        p50_mu_s_prime: percentile(&s, 0.5),
        p95_mu_s_prime: percentile(&s, 0.95),
    })
}
