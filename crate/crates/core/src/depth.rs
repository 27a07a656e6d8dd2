//! Imaging-depth sensitivity: C-scans, ROI statistics above the noise floor and
//! straight-line fits of signal (dB) against depth.

use alloc::vec::Vec;
use core::ops::Range;
use serde::{Deserialize, Serialize};

use crate::compensate::mean_std;
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, PixelBox};
use crate::simulate::gaussian_pairs;
use crate::units::amplitude_db;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Pa,
    Nirf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub depth_mm: f64,
    pub signal_db: f64,
    #[serde(default)]
    pub std_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSeries {
    pub modality: Modality,
    pub points: Vec<DepthPoint>,
    pub noise_floor_db: f64,
    /// Uncertainty of the floor, propagated into the maximum depth.
    #[serde(default)]
    pub noise_floor_std_db: f64,
    /// Axial averaging range of the C-scans the points came from.
    #[serde(default)]
    pub averaging_range_mm: Option<f64>,
}

impl DepthSeries {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(invalid("depth series", "need at least 2 points"));
        }
        if self.points.windows(2).any(|w| !(w[1].depth_mm > w[0].depth_mm)) {
            return Err(invalid("depth series", "depths must be strictly increasing"));
        }
        let with_std = self.points.iter().filter(|p| p.std_db.is_some()).count();
        if with_std != 0 && with_std != self.points.len() {
            return Err(invalid("depth series", "either every point or none carries a std"));
        }
        if self.points.iter().any(|p| p.std_db.is_some_and(|s| !(s > 0.0 && s.is_finite()))) {
            return Err(invalid("depth series", "stds must be positive and finite"));
        }
        if self.points.iter().any(|p| !p.depth_mm.is_finite() || !p.signal_db.is_finite()) || !self.noise_floor_db.is_finite() {
            return Err(invalid("depth series", "non-finite value"));
        }
        if !(self.noise_floor_std_db >= 0.0) {
            return Err(invalid("depth series", "negative noise floor std"));
        }
        Ok(())
    }
}

/// `signal_db = slope · depth + intercept`, with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthFit {
    pub modality: Modality,
    /// dB/mm
    pub slope: f64,
    pub slope_std: f64,
    /// dB
    pub intercept: f64,
    pub intercept_std: f64,
    pub covariance: f64,
    pub r_squared: f64,
    /// Depth where the line meets the noise floor; `None` unless the slope is negative.
    pub max_depth_mm: Option<f64>,
    pub max_depth_std_mm: Option<f64>,
    pub noise_floor_db: f64,
    /// True when the points were weighted by `1/std²`.
    pub weighted: bool,
}

/// `(floor − b) / a` for a decaying line.
pub fn max_depth(slope: f64, intercept: f64, floor_db: f64) -> Option<f64> {
    (slope < 0.0).then(|| (floor_db - intercept) / slope)
}

/// First-order std of [`max_depth`] given parameter variances and the slope/intercept covariance.
pub fn max_depth_std(slope: f64, intercept: f64, floor_db: f64, var_slope: f64, var_intercept: f64, cov: f64, var_floor: f64) -> Option<f64> {
    let d = max_depth(slope, intercept, floor_db)?;
    let (ga, gb, gf) = (-d / slope, -1.0 / slope, 1.0 / slope);
    let var = ga * ga * var_slope + gb * gb * var_intercept + 2.0 * ga * gb * cov + gf * gf * var_floor;
    Some(var.max(0.0).sqrt())
}

/// Weighted least squares on `(depth, dB)`.
///
/// With stds the covariance is `(XᵀWX)⁻¹` (known measurement errors); without
/// them it is scaled by the residual variance.
pub fn fit_depth_decay(series: &DepthSeries) -> Result<DepthFit> {
    series.validate()?;
    let pts = &series.points;
    let weighted = pts[0].std_db.is_some();
    let w: Vec<f64> = pts.iter().map(|p| p.std_db.map_or(1.0, |s| 1.0 / (s * s))).collect();
    let sw: f64 = w.iter().sum();
    let xm = pts.iter().zip(&w).map(|(p, w)| w * p.depth_mm).sum::<f64>() / sw;
    let ym = pts.iter().zip(&w).map(|(p, w)| w * p.signal_db).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.depth_mm - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.depth_mm - xm) * (p.signal_db - ym)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("depths are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.signal_db - slope * p.depth_mm - intercept).powi(2)).sum();
    let tss: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.signal_db - ym).powi(2)).sum();
    let scale = if weighted {
        1.0
    } else if pts.len() > 2 {
        rss / (pts.len() - 2) as f64
    } else {
        0.0
    };
    let var_slope = scale / sxx;
    let var_intercept = scale * (1.0 / sw + xm * xm / sxx);
    let cov = -scale * xm / sxx;
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    let floor = series.noise_floor_db;
    let var_floor = series.noise_floor_std_db.powi(2);
    Ok(DepthFit {
        modality: series.modality,
        slope,
        slope_std: var_slope.sqrt(),
        intercept,
        intercept_std: var_intercept.sqrt(),
        covariance: cov,
        r_squared,
        max_depth_mm: max_depth(slope, intercept, floor),
        max_depth_std_mm: max_depth_std(slope, intercept, floor, var_slope, var_intercept, cov, var_floor),
        noise_floor_db: floor,
        weighted,
    })
}

/// En-face image: axial mean of B-scan magnitudes, `values[iy * nx + ix]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CScan {
    pub nx: usize,
    /// Number of B-scans (elevation positions).
    pub ny: usize,
    pub values: Vec<f64>,
    pub center_mm: f64,
    pub range_mm: f64,
    pub window: Range<usize>,
}

impl CScan {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }
}

/// Averages each magnitude B-scan over the axial pixels within `range_mm` of `center_mm`.
pub fn cscan_from_volume(bscans: &[Vec<f64>], grid: &Grid, center_mm: f64, range_mm: f64) -> Result<CScan> {
    if bscans.iter().any(|b| b.len() != grid.len()) {
        return Err(Error::ShapeMismatch("B-scan size differs from grid".into()));
    }
    let window = grid
        .axial_window(center_mm, range_mm)
        .ok_or_else(|| Error::Config(alloc::format!("axial window {center_mm}±{} mm holds no pixel", range_mm / 2.0)))?;
    let n = window.len() as f64;
    let mut values = Vec::with_capacity(bscans.len() * grid.nx);
    for b in bscans {
        for ix in 0..grid.nx {
            values.push(window.clone().map(|iz| b[grid.offset(ix, iz)]).sum::<f64>() / n);
        }
    }
    Ok(CScan { nx: grid.nx, ny: bscans.len(), values, center_mm, range_mm, window })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiStats {
    /// Mean and sample std of the selected target pixels (0 when none).
    pub mean: f64,
    pub std: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub threshold: f64,
    pub n_selected: usize,
}

impl RoiStats {
    /// No target pixel cleared the threshold.
    pub fn below_sensitivity(&self) -> bool {
        self.n_selected == 0
    }

    /// Signal in dB with a first-order dB std; `None` below sensitivity.
    pub fn to_db_point(&self, depth_mm: f64) -> Option<DepthPoint> {
        if self.below_sensitivity() || !(self.mean > 0.0) {
            return None;
        }
        let std_db = 20.0 / core::f64::consts::LN_10 * self.std / self.mean;
        Some(DepthPoint { depth_mm, signal_db: amplitude_db(self.mean), std_db: (std_db > 0.0).then_some(std_db) })
    }

    pub fn noise_floor_db(&self) -> f64 {
        amplitude_db(self.noise_mean)
    }
}

/// Selects target pixels strictly above `noise mean + 3σ`, or above the noise
/// mean alone when `fallback` is set. Boxes index the C-scan as `(ix, iy)`.
pub fn roi_signal_stats(cscan: &CScan, target: &PixelBox, noise: &PixelBox, fallback: bool) -> Result<RoiStats> {
    target.check_in(cscan.nx, cscan.ny)?;
    noise.check_in(cscan.nx, cscan.ny)?;
    if target.overlaps(noise) {
        return Err(Error::Config("target and noise regions overlap".into()));
    }
    let nv: Vec<f64> = noise.pixels().map(|(ix, iy)| cscan.get(ix, iy)).collect();
    let (noise_mean, noise_std) = mean_std(&nv);
    let threshold = if fallback { noise_mean } else { noise_mean + 3.0 * noise_std };
    let sel: Vec<f64> = target.pixels().map(|(ix, iy)| cscan.get(ix, iy)).filter(|v| *v > threshold).collect();
    let (mean, std) = if sel.is_empty() { (0.0, 0.0) } else { mean_std(&sel) };
    Ok(RoiStats { mean, std, noise_mean, noise_std, threshold, n_selected: sel.len() })
}

/// Exponential decay plus Gaussian dB noise, for exercising the fit path.
pub fn toy_nirf_series(depths_mm: &[f64], slope: f64, intercept: f64, noise_std_db: f64, floor_db: f64, seed: u64) -> DepthSeries {
    let noise = gaussian_pairs(seed, 0, depths_mm.len(), noise_std_db);
    let points = depths_mm
        .iter()
        .zip(&noise)
        .map(|(&d, n)| DepthPoint { depth_mm: d, signal_db: slope * d + intercept + n.re, std_db: (noise_std_db > 0.0).then_some(noise_std_db) })
        .collect();
    DepthSeries { modality: Modality::Nirf, points, noise_floor_db: floor_db, noise_floor_std_db: 0.0, averaging_range_mm: None }
}
