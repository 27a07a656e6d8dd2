//! Agent identification by spectral similarity.
//!
//! The per-pixel score is the cosine similarity between the measured spectrum
//! and a reference spectrum (no mean subtraction, so it is not a Pearson
//! correlation). Because both spectra are positive the score crowds into
//! roughly `[0.9, 1.0]`; a steep sigmoid with its midpoint inside that band
//! turns it into a weight in `(0, 1)`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine similarity `Σ m·r / (‖m‖ ‖r‖)`. A zero measured vector scores 0.
pub fn pixel_ncc(measured: &[f64], reference: &[f64]) -> Result<f64> {
    if measured.len() != reference.len() || reference.len() < 2 {
        return Err(Error::ShapeMismatch(alloc::format!("spectra of length {} and {} (need equal lengths >= 2)", measured.len(), reference.len())));
    }
    let rr: f64 = reference.iter().map(|r| r * r).sum();
    if !(rr > 0.0) {
        return Err(Error::Config("reference spectrum has zero norm".into()));
    }
    let mm: f64 = measured.iter().map(|m| m * m).sum();
    if mm == 0.0 {
        return Ok(0.0);
    }
    let mr: f64 = measured.iter().zip(reference).map(|(m, r)| m * r).sum();
    Ok((mr / (mm.sqrt() * rr.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    /// Slope.
    pub a: f64,
    /// Score at which the weight is one half.
    pub b: f64,
}

impl Default for SigmoidParams {
    fn default() -> Self {
        SigmoidParams { a: 300.0, b: 0.978 }
    }
}

/// `1 / (1 + exp(-a (ncc - b)))`.
pub fn sigmoid_weight(ncc: f64, params: SigmoidParams) -> f64 {
    let t = params.a * (ncc - params.b);
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Per-pixel similarity scores and sigmoid weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NccMap {
    pub nx: usize,
    pub nz: usize,
    pub ncc: Vec<f64>,
    pub weights: Vec<f64>,
    pub params: SigmoidParams,
}

/// Builds the map from per-wavelength magnitude images (`spectra[j][pixel]`).
pub fn ncc_map(spectra: &[Vec<f64>], reference: &[f64], nx: usize, nz: usize, params: SigmoidParams) -> Result<NccMap> {
    if spectra.len() != reference.len() {
        return Err(Error::ShapeMismatch("one image per reference wavelength is required".into()));
    }
    if spectra.iter().any(|im| im.len() != nx * nz) {
        return Err(Error::ShapeMismatch("spectral images do not match the grid".into()));
    }
    let mut measured = alloc::vec![0.0; spectra.len()];
    let mut ncc = Vec::with_capacity(nx * nz);
    for k in 0..nx * nz {
        for (m, im) in measured.iter_mut().zip(spectra) {
            *m = im[k];
        }
        ncc.push(pixel_ncc(&measured, reference)?);
    }
    let weights = ncc.iter().map(|&c| sigmoid_weight(c, params)).collect();
    Ok(NccMap { nx, nz, ncc, weights, params })
}

/// Pixel-wise product of the compounded image with the weight map.
pub fn agent_weighted_image(image: &[Complex64], map: &NccMap) -> Result<Vec<Complex64>> {
    if image.len() != map.weights.len() {
        return Err(Error::ShapeMismatch("image and weight map differ in size".into()));
    }
    Ok(image.iter().zip(&map.weights).map(|(z, w)| z * *w).collect())
}

/// Display ranges for the overlay, in dB below each layer's own maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayStyle {
    pub pa_range_db: f64,
    pub anatomy_range_db: f64,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        OverlayStyle { pa_range_db: 30.0, anatomy_range_db: 50.0 }
    }
}

/// Maps `value` to `[0, 1]` on a dB scale spanning `range_db` below `max`.
pub fn db_level(value: f64, max: f64, range_db: f64) -> f64 {
    if !(max > 0.0) || !(value > 0.0) {
        return 0.0;
    }
    let db = 20.0 * (value / max).log10();
    ((db + range_db) / range_db).clamp(0.0, 1.0)
}

/// "Hot" colormap: black, red, yellow, white.
pub fn hot(t: f64) -> [u8; 3] {
    let ch = |v: f64| (255.0 * v.clamp(0.0, 1.0)).round() as u8;
    [ch(3.0 * t), ch(3.0 * t - 1.0), ch(3.0 * t - 2.0)]
}

/// Hot-colored PA on a grayscale anatomy layer; PA opacity equals its display level.
pub fn overlay(weighted: &[f64], anatomy: &[f64], style: OverlayStyle) -> Result<Vec<[u8; 3]>> {
    if weighted.len() != anatomy.len() {
        return Err(Error::ShapeMismatch("PA and anatomy images differ in size".into()));
    }
    let pa_max = weighted.iter().cloned().fold(0.0, f64::max);
    let us_max = anatomy.iter().cloned().fold(0.0, f64::max);
    Ok(weighted
        .iter()
        .zip(anatomy)
        .map(|(&p, &u)| {
            let g = db_level(u, us_max, style.anatomy_range_db);
            let t = db_level(p, pa_max, style.pa_range_db);
            let color = hot(t);
            let mut px = [0u8; 3];
            for (c, out) in color.iter().zip(px.iter_mut()) {
                let v = (1.0 - t) * 255.0 * g + t * *c as f64;
                *out = v.round().clamp(0.0, 255.0) as u8;
            }
            px
        })
        .collect())
}

/// Non-negative least squares `min ‖A x - b‖, x >= 0` (Lawson-Hanson active set).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::ShapeMismatch("NNLS right-hand side length".into()));
    }
    let tol = 1e-12 * a.norm().max(1.0) * b.norm().max(1.0);
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = alloc::vec![false; n];
    for _ in 0..3 * n + 10 {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = DMatrix::from_fn(m, idx.len(), |r, c| a[(r, idx[c])]);
            let z_sub = sub.svd(true, true).solve(b, 1e-14).map_err(|e| Error::Fit(e.into()))?;
            let mut z = DVector::<f64>::zeros(n);
            for (c, &k) in idx.iter().enumerate() {
                z[k] = z_sub[c];
            }
            if idx.iter().all(|&k| z[k] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &k in &idx {
                if z[k] <= 0.0 {
                    alpha = alpha.min(x[k] / (x[k] - z[k]));
                }
            }
            x += (z - &x) * alpha;
            for &k in &idx {
                if x[k].abs() <= tol {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
        }
    }
    Ok(x)
}

/// Linear unmixing baseline: per-pixel NNLS abundances of each dictionary spectrum.
///
/// `spectra[j][pixel]` are measured magnitudes, `dictionary[c][j]` the component
/// spectra at the same wavelengths. Returns `abundance[c][pixel]`.
pub fn linear_unmix(spectra: &[Vec<f64>], dictionary: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let nw = spectra.len();
    if dictionary.iter().any(|d| d.len() != nw) || dictionary.is_empty() {
        return Err(Error::ShapeMismatch("dictionary spectra must match the wavelength count".into()));
    }
    let npx = spectra.first().map_or(0, |s| s.len());
    let a = DMatrix::from_fn(nw, dictionary.len(), |j, c| dictionary[c][j]);
    let mut out = alloc::vec![alloc::vec![0.0; npx]; dictionary.len()];
    for k in 0..npx {
        let b = DVector::from_fn(nw, |j, _| spectra[j][k]);
        if b.iter().all(|v| *v == 0.0) {
            continue;
        }
        let x = nnls(&a, &b)?;
        for c in 0..dictionary.len() {
            out[c][k] = x[c];
        }
    }
    Ok(out)
}
