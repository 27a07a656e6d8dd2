//! Agent spectrum calibration against a reference absorber.
//!
//! Two tubes, one with the agent and one with a reference absorber of known
//! spectrum, are imaged at the same position in the same medium. The fluence is
//! then identical for both, so the ratio of PA magnitudes times the reference
//! spectrum is the agent's nonradiative absorption.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, PixelBox};
use crate::simulate::IqVolume;
use crate::spectrum::{SpectrumTable, SpectrumUnit};

/// Background-subtracted ROI magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiMagnitude {
    pub magnitude: f64,
    pub noise: f64,
    /// The ROI mean fell below the noise mean and was clamped to zero.
    pub clamped: bool,
}

fn box_mean(image: &[Complex64], grid: &Grid, b: &PixelBox) -> f64 {
    b.pixels().map(|(ix, iz)| image[grid.offset(ix, iz)].norm()).sum::<f64>() / b.len() as f64
}

/// Mean |IQ| over `roi` minus the mean over `noise_roi`.
pub fn roi_magnitude(image: &[Complex64], grid: &Grid, roi: &PixelBox, noise_roi: &PixelBox) -> Result<RoiMagnitude> {
    if image.len() != grid.len() {
        return Err(Error::ShapeMismatch("image does not match grid".into()));
    }
    roi.check_in(grid.nx, grid.nz)?;
    noise_roi.check_in(grid.nx, grid.nz)?;
    if roi.overlaps(noise_roi) {
        return Err(Error::Config("signal and noise boxes overlap".into()));
    }
    let signal = box_mean(image, grid, roi);
    let noise = box_mean(image, grid, noise_roi);
    let diff = signal - noise;
    Ok(RoiMagnitude { magnitude: diff.max(0.0), noise, clamped: diff < 0.0 })
}

/// How the magnitude standard deviation is estimated from the noise box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StdPooling {
    /// One value from the noise-box pixels of all wavelengths together.
    #[default]
    AcrossWavelengths,
    /// A separate value per wavelength.
    PerWavelength,
}

/// Paired tube measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubePair {
    pub wavelengths: Vec<f64>,
    pub pa_agent: Vec<f64>,
    pub pa_ref: Vec<f64>,
    pub std_agent: Vec<f64>,
    pub std_ref: Vec<f64>,
    pub alpha_ref: SpectrumTable,
}

impl TubePair {
    pub fn validate(&self) -> Result<()> {
        let n = self.wavelengths.len();
        if [self.pa_agent.len(), self.pa_ref.len(), self.std_agent.len(), self.std_ref.len()].iter().any(|&l| l != n) {
            return Err(Error::ShapeMismatch("tube pair columns differ in length".into()));
        }
        if self.std_agent.iter().chain(&self.std_ref).any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("standard deviations must be non-negative".into()));
        }
        Ok(())
    }
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn tube_column(volume: &IqVolume, roi: &PixelBox, noise_roi: &PixelBox, pooling: StdPooling) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut mags = Vec::with_capacity(volume.n_wavelengths());
    let mut noise_px: Vec<Vec<f64>> = Vec::with_capacity(volume.n_wavelengths());
    for j in 0..volume.n_wavelengths() {
        let image = volume.fiber_sum(j);
        mags.push(roi_magnitude(&image, &volume.grid, roi, noise_roi)?.magnitude);
        noise_px.push(noise_roi.pixels().map(|(ix, iz)| image[volume.grid.offset(ix, iz)].norm()).collect());
    }
    let stds = match pooling {
        StdPooling::AcrossWavelengths => {
            let all: Vec<f64> = noise_px.iter().flatten().copied().collect();
            alloc::vec![sample_std(&all); mags.len()]
        }
        StdPooling::PerWavelength => noise_px.iter().map(|p| sample_std(p)).collect(),
    };
    Ok((mags, stds))
}

/// Measures both tubes (coherent fiber sum, 3x3-style ROI boxes) into a [`TubePair`].
pub fn tube_pair_from_volumes(
    agent: &IqVolume,
    reference: &IqVolume,
    roi: &PixelBox,
    noise_roi: &PixelBox,
    alpha_ref: &SpectrumTable,
    pooling: StdPooling,
) -> Result<TubePair> {
    if agent.wavelengths != reference.wavelengths || agent.grid != reference.grid {
        return Err(Error::ShapeMismatch("tube volumes differ in wavelengths or grid".into()));
    }
    let (pa_agent, std_agent) = tube_column(agent, roi, noise_roi, pooling)?;
    let (pa_ref, std_ref) = tube_column(reference, roi, noise_roi, pooling)?;
    Ok(TubePair { wavelengths: agent.wavelengths.clone(), pa_agent, pa_ref, std_agent, std_ref, alpha_ref: alpha_ref.clone() })
}

/// `α_agent(λ) = PA_agent / PA_ref · α_ref(λ)`.
pub fn agent_spectrum(pair: &TubePair) -> Result<Vec<f64>> {
    pair.validate()?;
    pair.wavelengths
        .iter()
        .zip(pair.pa_agent.iter().zip(&pair.pa_ref))
        .map(|(&w, (&a, &r))| {
            if !(r > 0.0) {
                return Err(Error::Calibration { wavelength: w, reason: "reference magnitude is not positive".into() });
            }
            Ok(a / r * pair.alpha_ref.sample(w)?)
        })
        .collect()
}

/// First-order error propagation of the magnitude ratio:
/// `σ = α sqrt((σ_agent/PA_agent)² + (σ_ref/PA_ref)²)`.
pub fn agent_spectrum_std(pair: &TubePair, alpha_agent: &[f64]) -> Result<Vec<f64>> {
    pair.validate()?;
    (0..pair.wavelengths.len())
        .map(|k| {
            let (a, r) = (pair.pa_agent[k], pair.pa_ref[k]);
            if !(a > 0.0) || !(r > 0.0) {
                return Err(Error::Calibration { wavelength: pair.wavelengths[k], reason: "zero PA magnitude".into() });
            }
            let (ea, er) = (pair.std_agent[k] / a, pair.std_ref[k] / r);
            Ok(alpha_agent[k] * (ea * ea + er * er).sqrt())
        })
        .collect()
}

/// Least-squares polynomial in the wavelength mapped to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub order: usize,
    /// Ascending-power coefficients in the scaled variable `u = (λ - center) / half_width`.
    pub coeffs: Vec<f64>,
    pub center_nm: f64,
    pub half_width_nm: f64,
    /// RMS of the residuals at the fitted nodes.
    pub rms_residual: f64,
}

impl PolyFit {
    pub fn eval(&self, wavelength_nm: f64) -> f64 {
        let u = (wavelength_nm - self.center_nm) / self.half_width_nm;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }
}

pub fn smooth_spectrum(table: &SpectrumTable, order: usize) -> Result<PolyFit> {
    let n = table.len();
    if n <= order {
        return Err(Error::Fit(alloc::format!("{n} points cannot determine an order-{order} polynomial")));
    }
    let (lo, hi) = table.range();
    let center_nm = 0.5 * (lo + hi);
    let half_width_nm = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
    let u: Vec<f64> = table.wavelengths.iter().map(|w| (w - center_nm) / half_width_nm).collect();
    let a = DMatrix::from_fn(n, order + 1, |r, c| u[r].powi(c as i32));
    let b = DVector::from_column_slice(&table.values);
    let x = a.svd(true, true).solve(&b, 1e-13).map_err(|e| Error::Fit(e.into()))?;
    let mut fit = PolyFit { order, coeffs: x.iter().copied().collect(), center_nm, half_width_nm, rms_residual: 0.0 };
    let ss: f64 = table.wavelengths.iter().zip(&table.values).map(|(&w, &v)| (fit.eval(w) - v).powi(2)).sum();
    fit.rms_residual = (ss / n as f64).sqrt();
    Ok(fit)
}

/// Calibrated spectrum plus its smoothing polynomial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub alpha_agent: SpectrumTable,
    pub poly: Option<PolyFit>,
}

pub fn calibrate(pair: &TubePair, order: Option<usize>) -> Result<CalibrationResult> {
    let values = agent_spectrum(pair)?;
    let std = agent_spectrum_std(pair, &values)?;
    let alpha_agent = SpectrumTable::new(pair.wavelengths.clone(), values, Some(std), SpectrumUnit::PerCm)?;
    let poly = order.map(|o| smooth_spectrum(&alpha_agent, o)).transpose()?;
    Ok(CalibrationResult { alpha_agent, poly })
}

/// Radiative part of the agent absorption: `total - nonradiative` at the nonradiative nodes.
pub fn radiative_component(total: &SpectrumTable, nonradiative: &SpectrumTable) -> Result<SpectrumTable> {
    let values = nonradiative.wavelengths.iter().zip(&nonradiative.values).map(|(&w, &nr)| Ok(total.sample(w)? - nr)).collect::<Result<Vec<_>>>()?;
    SpectrumTable::new(nonradiative.wavelengths.clone(), values, Some(nonradiative.std.clone()), nonradiative.unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::synthetic;
    use crate::wavelengths;
    use alloc::vec;
    use proptest::prelude::*;

    fn flat_ref(w: &[f64], v: f64) -> SpectrumTable {
        SpectrumTable::from_fn(w, SpectrumUnit::PerCm, |_| v).unwrap()
    }

    fn pair(a: Vec<f64>, r: Vec<f64>, sa: Vec<f64>, sr: Vec<f64>, alpha: f64) -> TubePair {
        let w: Vec<f64> = (0..a.len()).map(|k| 700.0 + 5.0 * k as f64).collect();
        TubePair { alpha_ref: flat_ref(&w, alpha), wavelengths: w, pa_agent: a, pa_ref: r, std_agent: sa, std_ref: sr }
    }

    #[test]
    fn roi_magnitude_examples() {
        let grid = Grid::new(10, 10, 1.0, 1.0, 0.0, 0.0).unwrap();
        let roi = PixelBox::centered3(2, 2);
        let noise = PixelBox::centered3(7, 7);
        let uniform = vec![Complex64::new(0.0, 3.0); 100];
        let m = roi_magnitude(&uniform, &grid, &roi, &noise).unwrap();
        assert_eq!((m.magnitude, m.noise, m.clamped), (0.0, 3.0, false));

        let mut img = vec![Complex64::new(1.0, 0.0); 100];
        for (ix, iz) in roi.pixels() {
            img[grid.offset(ix, iz)] = Complex64::new(0.0, -5.0);
        }
        let m = roi_magnitude(&img, &grid, &roi, &noise).unwrap();
        assert!((m.magnitude - 4.0).abs() < 1e-12 && (m.noise - 1.0).abs() < 1e-12);
        let m = roi_magnitude(&img, &grid, &noise, &roi).unwrap();
        assert!(m.clamped && m.magnitude == 0.0);
        assert!(matches!(roi_magnitude(&img, &grid, &roi, &PixelBox::centered3(3, 3)), Err(Error::Config(_))));
    }

    #[test]
    fn ratio_examples() {
        let p = pair(vec![1.0, 3.0], vec![1.0, 3.0], vec![0.0; 2], vec![0.0; 2], 0.7);
        assert_eq!(agent_spectrum(&p).unwrap(), vec![0.7, 0.7]);
        let p = pair(vec![2.0], vec![1.0], vec![0.0], vec![0.0], 0.5);
        assert_eq!(agent_spectrum(&p).unwrap(), vec![1.0]);
        let p = pair(vec![2.0, 1.0], vec![1.0, 0.0], vec![0.0; 2], vec![0.0; 2], 0.5);
        assert!(matches!(agent_spectrum(&p), Err(Error::Calibration { wavelength, .. }) if wavelength == 705.0));
    }

    #[test]
    fn std_examples() {
        let p = pair(vec![2.0], vec![1.0], vec![0.2], vec![0.1], 1.0);
        let alpha = agent_spectrum(&p).unwrap();
        assert_eq!(alpha, vec![2.0]);
        let s = agent_spectrum_std(&p, &alpha).unwrap()[0];
        // hand arithmetic: 2 * sqrt(0.1² + 0.1²)
        let oracle = 2.0 * (0.01f64 + 0.01).sqrt();
        assert!((s - oracle).abs() < 1e-12);
        assert!((s - 0.282_842_712_474_619).abs() < 1e-12);

        let p = pair(vec![2.0], vec![1.0], vec![0.0], vec![0.0], 1.0);
        assert_eq!(agent_spectrum_std(&p, &[2.0]).unwrap(), vec![0.0]);
        let p = pair(vec![4.0], vec![1.0], vec![0.2], vec![0.0], 1.0);
        let s = agent_spectrum_std(&p, &[4.0]).unwrap()[0];
        assert!((s - 0.05 * 4.0).abs() < 1e-15);
        let p = pair(vec![0.0], vec![1.0], vec![0.2], vec![0.0], 1.0);
        assert!(agent_spectrum_std(&p, &[0.0]).is_err());
    }

    #[test]
    fn polynomial_reproduces_cubic_and_constant() {
        let w = wavelengths::calibration();
        let cubic = SpectrumTable::from_fn(&w, SpectrumUnit::PerCm, |l| {
            let t = (l - 760.0) / 100.0;
            1.0 + 0.5 * t - 0.3 * t * t + 0.2 * t * t * t
        })
        .unwrap();
        let fit = smooth_spectrum(&cubic, 9).unwrap();
        for (&l, &v) in cubic.wavelengths.iter().zip(&cubic.values) {
            assert!(((fit.eval(l) - v) / v).abs() < 1e-9);
        }
        let flat = flat_ref(&w, 2.5);
        let fit = smooth_spectrum(&flat, 9).unwrap();
        assert!((fit.coeffs[0] - 2.5).abs() < 1e-9);
        assert!(fit.coeffs[1..].iter().all(|c| c.abs() < 1e-9));
        assert!(matches!(smooth_spectrum(&SpectrumTable::from_fn(&w[..9], SpectrumUnit::PerCm, |_| 1.0).unwrap(), 9), Err(Error::Fit(_))));
    }

    #[test]
    fn ninth_order_smoothing_of_agent() {
        let t = SpectrumTable::from_fn(&wavelengths::calibration(), SpectrumUnit::PerCm, synthetic::agent).unwrap();
        let fit = smooth_spectrum(&t, 9).unwrap();
        let peak = t.values.iter().cloned().fold(0.0, f64::max);
        assert!(fit.rms_residual < 0.005 * peak, "rms {}", fit.rms_residual);
        // argmax stays within one node spacing
        let smooth = SpectrumTable::from_fn(&t.wavelengths, SpectrumUnit::PerCm, |l| fit.eval(l)).unwrap();
        assert!((smooth.argmax_wavelength() - t.argmax_wavelength()).abs() <= 5.0);
    }

    #[test]
    fn radiative_is_difference() {
        let w = wavelengths::calibration();
        let nr = SpectrumTable::from_fn(&w, SpectrumUnit::PerCm, synthetic::agent).unwrap();
        let rad = radiative_component(&synthetic::agent_table().scaled(1.0), &nr).unwrap();
        assert!(rad.values.iter().all(|v| v.abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn ratio_scale_equivariant(a in proptest::collection::vec(0.1f64..10.0, 5), r in proptest::collection::vec(0.1f64..10.0, 5),
                                   f in proptest::collection::vec(0.01f64..100.0, 5)) {
            let p = pair(a.clone(), r.clone(), vec![0.0; 5], vec![0.0; 5], 1.3);
            let q = pair(a.iter().zip(&f).map(|(x, k)| x * k).collect(), r.iter().zip(&f).map(|(x, k)| x * k).collect(), vec![0.0; 5], vec![0.0; 5], 1.3);
            for (u, v) in agent_spectrum(&p).unwrap().iter().zip(agent_spectrum(&q).unwrap()) {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs());
            }
        }

        #[test]
        fn std_homogeneous_degree_one(sa in 0.0f64..1.0, sr in 0.0f64..1.0, k in 0.0f64..10.0) {
            let p = pair(vec![2.0], vec![1.5], vec![sa], vec![sr], 1.0);
            let q = pair(vec![2.0], vec![1.5], vec![k * sa], vec![k * sr], 1.0);
            let alpha = agent_spectrum(&p).unwrap();
            let s1 = agent_spectrum_std(&p, &alpha).unwrap()[0];
            let s2 = agent_spectrum_std(&q, &alpha).unwrap()[0];
            prop_assert!((s2 - k * s1).abs() <= 1e-12 * (1.0 + k * s1));
        }
    }
}
