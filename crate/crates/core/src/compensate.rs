//! Per-wavelength optical property estimation from fiber-to-fiber PA variation
//! and fluence-compensated imaging.
//!
//! Moving the source between fibers changes the fluence at a fixed absorber
//! while its absorption stays constant, so the fiber shares
//! `|PA_i| / Σ_i |PA_i|` at a pixel equal the model fluence shares
//! `Φ_i / Σ_i Φ_i`. Fitting `(μ_eff, μ_s')` to the shares over many bright
//! pixels gives the fluence model, which then divides the fiber-summed image.

use alloc::vec::Vec;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fiber::FiberArray;
use crate::fluence::{normalize_in_place, BoundaryModel, FiberSources, FluenceField};
use crate::grid::{Grid, PixelBox, Point3};
use crate::optics::DiffusionParams;
use crate::optimize::{log_grid_scan, nelder_mead_log, Bounds, Minimum, NelderMeadConfig};
use crate::simulate::IqVolume;
use crate::units::cm_to_mm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Background region used for the noise statistics (at least 9 pixels).
    pub noise_roi: PixelBox,
    /// Threshold is `mean + sigma_multiplier · std` of the noise region.
    pub sigma_multiplier: f64,
    /// Pixels shallower than this are never selected.
    pub near_field_depth_mm: f64,
    /// Restricts selection to a region, e.g. to keep clutter out of the fit.
    #[serde(default)]
    pub fit_roi: Option<PixelBox>,
}

impl SelectionConfig {
    pub fn new(noise_roi: PixelBox) -> Self {
        SelectionConfig { noise_roi, sigma_multiplier: 3.0, near_field_depth_mm: 2.0, fit_roi: None }
    }
}

/// Pixels used to fit one wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelSelection {
    pub wavelength_nm: f64,
    pub pixels: Vec<(usize, usize)>,
    /// Proportional to the squared fiber-averaged magnitude, summing to 1.
    pub weights: Vec<f64>,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub threshold: f64,
}

/// Mean and sample standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn normalize_weights(weights: &mut [f64]) {
    let sum: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= sum;
    }
}

/// Thresholds the fiber-summed magnitude image of wavelength index `j`.
pub fn select_pixels(volume: &IqVolume, j: usize, config: &SelectionConfig) -> Result<PixelSelection> {
    let grid = &volume.grid;
    let roi = &config.noise_roi;
    roi.check_in(grid.nx, grid.nz)?;
    if roi.len() < 9 {
        return Err(Error::Config(alloc::format!("noise region holds {} pixels, need at least 9", roi.len())));
    }
    if let Some(fit) = &config.fit_roi {
        fit.check_in(grid.nx, grid.nz)?;
    }
    let wavelength_nm = volume.wavelengths[j];
    let mag = volume.magnitude_sum(j);
    let noise: Vec<f64> = roi.pixels().map(|(ix, iz)| mag[grid.offset(ix, iz)]).collect();
    let (noise_mean, noise_std) = mean_std(&noise);
    let threshold = noise_mean + config.sigma_multiplier * noise_std;

    let n_fibers = volume.n_fibers as f64;
    let mut pixels = Vec::new();
    let mut weights = Vec::new();
    for iz in 0..grid.nz {
        if grid.z_center(iz) < config.near_field_depth_mm {
            continue;
        }
        for ix in 0..grid.nx {
            if roi.contains(ix, iz) || config.fit_roi.is_some_and(|b| !b.contains(ix, iz)) {
                continue;
            }
            let m = mag[grid.offset(ix, iz)];
            if m > threshold {
                pixels.push((ix, iz));
                let avg = m / n_fibers;
                weights.push(avg * avg);
            }
        }
    }
    if pixels.is_empty() {
        return Err(Error::NoSignal { wavelength: wavelength_nm });
    }
    normalize_weights(&mut weights);
    Ok(PixelSelection { wavelength_nm, pixels, weights, noise_mean, noise_std, threshold })
}

/// Fiber shares of the selected pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelShares {
    pub wavelength_nm: f64,
    pub n_fibers: usize,
    pub pixels: Vec<(usize, usize)>,
    /// Renormalized over the surviving pixels.
    pub weights: Vec<f64>,
    /// `shares[k * n_fibers + i]`; each pixel's row sums to 1.
    pub shares: Vec<f64>,
    /// Pixels discarded because their fiber sum was zero.
    pub dropped: usize,
}

impl PixelShares {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.shares[k * self.n_fibers..(k + 1) * self.n_fibers]
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// `|PA_i(r_k)| / Σ_i |PA_i(r_k)|` for every selected pixel.
pub fn normalize_pa(volume: &IqVolume, selection: &PixelSelection, j: usize) -> Result<PixelShares> {
    let nf = volume.n_fibers;
    let mut out = PixelShares {
        wavelength_nm: volume.wavelengths[j],
        n_fibers: nf,
        pixels: Vec::with_capacity(selection.pixels.len()),
        weights: Vec::with_capacity(selection.pixels.len()),
        shares: Vec::with_capacity(selection.pixels.len() * nf),
        dropped: 0,
    };
    let mut row = alloc::vec![0.0; nf];
    for (&(ix, iz), &w) in selection.pixels.iter().zip(&selection.weights) {
        volume.grid.check_index(ix, iz)?;
        let k = volume.grid.offset(ix, iz);
        for (i, r) in row.iter_mut().enumerate() {
            *r = volume.image(j, i)[k].norm();
        }
        if normalize_in_place(&mut row).is_err() {
            out.dropped += 1;
            continue;
        }
        out.pixels.push((ix, iz));
        out.weights.push(w);
        out.shares.extend_from_slice(&row);
    }
    if out.pixels.is_empty() {
        return Err(Error::NoSignal { wavelength: out.wavelength_nm });
    }
    normalize_weights(&mut out.weights);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// `[μ_eff, μ_s']` bounds in cm⁻¹.
    pub bounds: Bounds,
    /// Log-spaced nodes per parameter in the coarse search.
    pub grid_points: usize,
    /// Refinements are started from this many of the best grid local minima.
    pub starts: usize,
    pub refine: NelderMeadConfig,
    pub boundary: BoundaryModel,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            bounds: Bounds { lower: alloc::vec![0.05, 1.0], upper: alloc::vec![10.0, 40.0] },
            grid_points: 41,
            starts: 4,
            refine: NelderMeadConfig::default(),
            boundary: BoundaryModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalFit {
    pub wavelength_nm: f64,
    /// cm⁻¹
    pub mu_eff: f64,
    /// cm⁻¹
    pub mu_s_prime: f64,
    pub objective: f64,
    /// Refinement-stage objective evaluations, summed over starts.
    pub evaluations: usize,
    pub converged: bool,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub n_pixels: usize,
}

impl OpticalFit {
    pub fn params(&self) -> DiffusionParams {
        DiffusionParams::new(self.mu_eff, self.mu_s_prime)
    }
}

/// Weighted mean squared share mismatch at `params`; `+∞` if the model is
/// degenerate at any selected pixel.
pub fn objective(shares: &PixelShares, grid: &Grid, fibers: &FiberArray, params: DiffusionParams, boundary: BoundaryModel) -> f64 {
    let sources = FiberSources::new(fibers, params, boundary);
    let nf = shares.n_fibers;
    let mut model = alloc::vec![0.0; nf];
    let mut total = 0.0;
    for (k, &(ix, iz)) in shares.pixels.iter().enumerate() {
        let r = Point3::new(grid.x_center(ix), 0.0, grid.z_center(iz));
        if sources.fluence_column(&r, &mut model).is_err() || normalize_in_place(&mut model).is_err() {
            return f64::INFINITY;
        }
        let sq: f64 = shares.row(k).iter().zip(&model).map(|(s, m)| (s - m) * (s - m)).sum();
        total += shares.weights[k] * sq / nf as f64;
    }
    total / shares.len() as f64
}

/// Coarse log grid search followed by Nelder-Mead refinement.
pub fn fit_optical_props(shares: &PixelShares, grid: &Grid, fibers: &FiberArray, config: &FitConfig) -> Result<OpticalFit> {
    if shares.is_empty() {
        return Err(Error::NoSignal { wavelength: shares.wavelength_nm });
    }
    if fibers.len() < 3 || shares.n_fibers != fibers.len() {
        return Err(invalid("fiber array", alloc::format!("need at least 3 fibers matching the data, got {}", fibers.len())));
    }
    let bounds = Bounds::new(config.bounds.lower.clone(), config.bounds.upper.clone())?;
    if bounds.dim() != 2 {
        return Err(invalid("bounds", "expected [mu_eff, mu_s'] bounds"));
    }
    let mut f = |x: &[f64]| objective(shares, grid, fibers, DiffusionParams::new(x[0], x[1]), config.boundary);
    let scan = log_grid_scan(&mut f, &bounds, config.grid_points);
    let coarse = scan.best();
    if !coarse.value.is_finite() {
        return Err(Error::Fit(alloc::format!("model degenerate everywhere at {} nm", shares.wavelength_nm)));
    }
    // shallow competing minima are common, so refine several basins
    let mut best: Option<Minimum> = None;
    let mut evaluations = 0;
    for k in scan.local_minima().into_iter().take(config.starts.max(1)) {
        let fine = nelder_mead_log(&mut f, &scan.point(k), &bounds, &config.refine);
        evaluations += fine.evaluations;
        if best.as_ref().is_none_or(|b| fine.value < b.value) {
            best = Some(fine);
        }
    }
    let best = best.unwrap_or(coarse);
    Ok(OpticalFit {
        wavelength_nm: shares.wavelength_nm,
        mu_eff: best.x[0],
        mu_s_prime: best.x[1],
        objective: best.value,
        evaluations,
        converged: best.converged,
        lower: [bounds.lower[0], bounds.lower[1]],
        upper: [bounds.upper[0], bounds.upper[1]],
        n_pixels: shares.len(),
    })
}

/// Selection, normalization and fit for wavelength index `j`.
pub fn fit_wavelength(volume: &IqVolume, j: usize, fibers: &FiberArray, selection: &SelectionConfig, config: &FitConfig) -> Result<OpticalFit> {
    let sel = select_pixels(volume, j, selection)?;
    let shares = normalize_pa(volume, &sel, j)?;
    fit_optical_props(&shares, &volume.grid, fibers, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompensationConfig {
    /// Pixels whose fluence denominator falls below this fraction of its maximum are zeroed.
    pub min_fluence_fraction: f64,
    pub boundary: BoundaryModel,
}

impl Default for CompensationConfig {
    fn default() -> Self {
        CompensationConfig { min_fluence_fraction: 1e-9, boundary: BoundaryModel::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compensated {
    /// Fiber image `i` is `N · PA_i / (Σ_i Φ̂_i · E)`, so the fiber mean is the
    /// compensated image and compressed averaging can run on it directly.
    pub volume: IqVolume,
    /// `valid[j * npix + k]`: false where the denominator was guarded or the pixel is near field.
    pub valid: Vec<bool>,
    /// Near-field depth (mm) per wavelength from the fitted `μ_s'`.
    pub near_field_mm: Vec<f64>,
}

impl Compensated {
    pub fn valid(&self, j: usize) -> &[bool] {
        let n = self.volume.grid.len();
        &self.valid[j * n..(j + 1) * n]
    }
}

/// Divides each wavelength by its fitted fluence sum and pulse energy.
pub fn compensate(volume: &IqVolume, fits: &[OpticalFit], fibers: &FiberArray, config: &CompensationConfig) -> Result<Compensated> {
    volume.validate()?;
    if fibers.len() != volume.n_fibers {
        return Err(Error::ShapeMismatch(alloc::format!("{} fibers in array, {} in volume", fibers.len(), volume.n_fibers)));
    }
    let grid = volume.grid;
    let n = grid.len();
    let nf = volume.n_fibers as f64;
    let mut out = volume.clone();
    let mut valid = alloc::vec![true; volume.n_wavelengths() * n];
    let mut near_field_mm = Vec::with_capacity(volume.n_wavelengths());
    for (j, &w) in volume.wavelengths.iter().enumerate() {
        let fit = fits.iter().find(|f| (f.wavelength_nm - w).abs() < crate::optics::WAVELENGTH_MATCH_NM).ok_or(Error::MissingWavelength(w))?;
        let energy = fibers.pulse_energy(w)?;
        let field = FluenceField::compute(&grid, fibers, fit.params(), 1.0, config.boundary)?;
        near_field_mm.push(cm_to_mm(2.0 * fit.params().l_free_cm()));
        let den: Vec<f64> = field.fiber_sum().iter().map(|s| s * energy).collect();
        let floor = den.iter().cloned().fold(0.0, f64::max) * config.min_fluence_fraction;
        let scale: Vec<f64> = den
            .iter()
            .zip(&field.near_field)
            .enumerate()
            .map(|(k, (&d, &near))| {
                let ok = d > floor && d > 0.0;
                valid[j * n + k] = ok && !near;
                if ok {
                    nf / d
                } else {
                    0.0
                }
            })
            .collect();
        for i in 0..volume.n_fibers {
            for (v, s) in out.image_mut(j, i).iter_mut().zip(&scale) {
                *v *= s;
            }
        }
    }
    Ok(Compensated { volume: out, valid, near_field_mm })
}

/// Fiber mean of every wavelength: `Σ_i PA_i / (Σ_i Φ̂_i · E)` on a compensated volume.
pub fn compensated_images(compensated: &IqVolume) -> Vec<Vec<Complex64>> {
    let nf = compensated.n_fibers as f64;
    (0..compensated.n_wavelengths()).map(|j| compensated.fiber_sum(j).into_iter().map(|z| z / nf).collect()).collect()
}

/// Coherent sum over wavelengths with a fixed pairwise reduction order.
pub fn compound(images: &[Vec<Complex64>]) -> Vec<Complex64> {
    match images.len() {
        0 => Vec::new(),
        1 => images[0].clone(),
        n => {
            let (a, b) = images.split_at(n / 2);
            let mut left = compound(a);
            for (l, r) in left.iter_mut().zip(compound(b)) {
                *l += r;
            }
            left
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom;
    use crate::psf::PsfModel;
    use crate::simulate::synthesize_volume;
    use alloc::vec;

    fn model_shares(grid: &Grid, fibers: &FiberArray, params: DiffusionParams, pixels: &[(usize, usize)]) -> PixelShares {
        let sources = FiberSources::new(fibers, params, BoundaryModel::default());
        let nf = fibers.len();
        let mut shares = Vec::new();
        let mut col = vec![0.0; nf];
        for &(ix, iz) in pixels {
            sources.fluence_column(&Point3::new(grid.x_center(ix), 0.0, grid.z_center(iz)), &mut col).unwrap();
            normalize_in_place(&mut col).unwrap();
            shares.extend_from_slice(&col);
        }
        PixelShares {
            wavelength_nm: 800.0,
            n_fibers: nf,
            pixels: pixels.to_vec(),
            weights: vec![1.0 / pixels.len() as f64; pixels.len()],
            shares,
            dropped: 0,
        }
    }

    fn tiny_volume(values: &[(usize, usize, f64)], nf: usize) -> IqVolume {
        let grid = Grid::new(8, 8, 0.5, 0.5, -2.0, 0.0).unwrap();
        let mut v = IqVolume::zeros(grid, vec![800.0], nf);
        for &(ix, iz, a) in values {
            let k = grid.offset(ix, iz);
            for i in 0..nf {
                v.image_mut(0, i)[k] = Complex64::new(a, 0.0);
            }
        }
        v
    }

    fn tiny_selection() -> SelectionConfig {
        let mut c = SelectionConfig::new(PixelBox::new(0, 5, 3, 3));
        c.near_field_depth_mm = 0.0;
        c
    }

    #[test]
    fn one_bright_pixel_selected_with_unit_weight() {
        let v = tiny_volume(&[(5, 2, 100.0)], 4);
        let s = select_pixels(&v, 0, &tiny_selection()).unwrap();
        assert_eq!(s.pixels, vec![(5, 2)]);
        assert_eq!(s.weights, vec![1.0]);
    }

    #[test]
    fn weights_follow_squared_magnitude() {
        let v = tiny_volume(&[(5, 2, 2.0), (6, 3, 1.0)], 4);
        let s = select_pixels(&v, 0, &tiny_selection()).unwrap();
        assert_eq!(s.pixels, vec![(5, 2), (6, 3)]);
        assert!((s.weights[0] - 0.8).abs() < 1e-15 && (s.weights[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn empty_selection_and_small_roi() {
        let v = tiny_volume(&[], 4);
        assert!(matches!(select_pixels(&v, 0, &tiny_selection()), Err(Error::NoSignal { .. })));
        let mut c = tiny_selection();
        c.noise_roi = PixelBox::new(0, 0, 2, 2);
        assert!(matches!(select_pixels(&v, 0, &c), Err(Error::Config(_))));
    }

    #[test]
    fn equal_magnitudes_give_equal_shares() {
        let v = tiny_volume(&[(5, 2, 3.0), (6, 6, 1.0)], 5);
        let s = select_pixels(&v, 0, &tiny_selection()).unwrap();
        let sh = normalize_pa(&v, &s, 0).unwrap();
        for k in 0..sh.len() {
            for x in sh.row(k) {
                assert!((x - 0.2).abs() < 1e-15);
            }
            assert!((sh.row(k).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_residual_fixed_point() {
        let grid = phantom::default_grid();
        let fibers = phantom::default_fibers(&[800.0]);
        let truth = DiffusionParams::new(1.5, 8.0);
        let pixels: Vec<_> = [(20, 50), (32, 60), (40, 80), (10, 100), (50, 120)].to_vec();
        let shares = model_shares(&grid, &fibers, truth, &pixels);
        assert!(objective(&shares, &grid, &fibers, truth, BoundaryModel::default()) < 1e-30);
        let fit = fit_optical_props(&shares, &grid, &fibers, &FitConfig::default()).unwrap();
        assert!((fit.mu_eff / 1.5 - 1.0).abs() < 1e-3, "{fit:?}");
        assert!((fit.mu_s_prime / 8.0 - 1.0).abs() < 1e-3, "{fit:?}");
        assert!(fit.objective < 1e-12);
        assert!(fit.mu_eff >= 0.05 && fit.mu_eff <= 10.0 && fit.mu_s_prime >= 1.0 && fit.mu_s_prime <= 40.0);
    }

    #[test]
    fn point_target_shares_match_model() {
        let s = phantom::point_target(8.0, 0.0, &[800.0]);
        let v = synthesize_volume(&s, &PsfModel::default()).unwrap();
        let (ix, iz) = s.grid.nearest_index(1e-9, 8.0 + 1e-9).unwrap();
        let sel =
            PixelSelection { wavelength_nm: 800.0, pixels: vec![(ix, iz)], weights: vec![1.0], noise_mean: 0.0, noise_std: 0.0, threshold: 0.0 };
        let sh = normalize_pa(&v, &sel, 0).unwrap();
        let model = model_shares(&s.grid, &s.fibers, s.medium.at(800.0).unwrap().diffusion(), &[(ix, iz)]);
        for (a, b) in sh.shares.iter().zip(&model.shares) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn flat_fluence_is_global_scale() {
        let v = tiny_volume(&[(5, 2, 3.0), (6, 6, 1.0)], 4);
        let fits = [OpticalFit {
            wavelength_nm: 800.0,
            mu_eff: 0.05,
            mu_s_prime: 40.0,
            objective: 0.0,
            evaluations: 0,
            converged: true,
            lower: [0.05, 1.0],
            upper: [10.0, 40.0],
            n_pixels: 1,
        }];
        // four fibers, all at the same point: identical fluence for every fiber
        let mut fibers = FiberArray::evenly_spaced(2, 0.0, 0.0, crate::fiber::default_pulse_energies(&[800.0])).unwrap();
        fibers.fibers.iter_mut().for_each(|f| f.x_mm = 0.0);
        let c = compensate(&v, &fits, &fibers, &CompensationConfig::default()).unwrap();
        let before = v.fiber_sum(0);
        let after = &compensated_images(&c.volume)[0];
        let field = FluenceField::compute(&v.grid, &fibers, fits[0].params(), 1.0, BoundaryModel::default()).unwrap();
        let e = fibers.pulse_energy(800.0).unwrap();
        for k in 0..v.grid.len() {
            let expect = before[k] / (field.fiber_sum()[k] * e);
            assert!((after[k] - expect).norm() <= 1e-12 * expect.norm().max(1e-300));
        }
    }

    #[test]
    fn compound_is_order_fixed_sum() {
        let ims: Vec<Vec<Complex64>> = (0..5).map(|j| vec![Complex64::new(j as f64, 1.0); 3]).collect();
        let c = compound(&ims);
        assert_eq!(c, vec![Complex64::new(10.0, 5.0); 3]);
        assert!(compound(&[]).is_empty());
    }

    #[test]
    fn shares_invariant_to_wavelength_scale() {
        let s = phantom::point_target(8.0, 1.0, &[800.0]);
        let v = synthesize_volume(&s, &PsfModel::default()).unwrap();
        let mut w = v.clone();
        w.scale_wavelength(0, 37.5);
        let cfg = SelectionConfig::new(PixelBox::new(0, 150, 5, 5));
        let a = normalize_pa(&v, &select_pixels(&v, 0, &cfg).unwrap(), 0).unwrap();
        let b = normalize_pa(&w, &select_pixels(&w, 0, &cfg).unwrap(), 0).unwrap();
        assert_eq!(a.pixels, b.pixels);
        for (x, y) in a.shares.iter().zip(&b.shares) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_nonnegative() {
        let grid = phantom::default_grid();
        let fibers = phantom::default_fibers(&[800.0]);
        let shares = model_shares(&grid, &fibers, DiffusionParams::new(1.5, 8.0), &[(30, 60), (12, 90)]);
        for (m, s) in [(0.1, 2.0), (1.0, 10.0), (5.0, 30.0)] {
            assert!(objective(&shares, &grid, &fibers, DiffusionParams::new(m, s), BoundaryModel::default()) > 0.0);
        }
    }
}
