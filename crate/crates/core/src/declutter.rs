//! Compressed averaging over fibers.
//!
//! Each fiber's IQ amplitude is raised to the power `p` (phase kept), the
//! compressed samples are averaged over fibers and the result is raised back to
//! `1/p`. A stationary PA source whose magnitude changes only slowly from fiber
//! to fiber survives; clutter present in a few fibers is pushed down by roughly
//! `N^(1/p - 1)` beyond plain averaging.

use alloc::vec::Vec;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::simulate::IqVolume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    /// Root exponent `p`, `0 < p <= 1`.
    pub exponent: f64,
    /// When false the fiber average is a plain mean.
    pub enabled: bool,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig { exponent: 0.25, enabled: true }
    }
}

impl CompressionConfig {
    pub fn new(exponent: f64) -> Result<Self> {
        let c = CompressionConfig { exponent, enabled: true };
        c.validate()?;
        Ok(c)
    }

    pub fn off() -> Self {
        CompressionConfig { exponent: 1.0, enabled: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exponent > 0.0 && self.exponent <= 1.0) {
            return Err(invalid("compression", "exponent must satisfy 0 < p <= 1"));
        }
        Ok(())
    }

    fn effective_exponent(&self) -> f64 {
        if self.enabled {
            self.exponent
        } else {
            1.0
        }
    }
}

/// `|z|^p · phase(z)`, with `compress(0) = 0`.
#[inline]
pub fn compress(z: Complex64, p: f64) -> Complex64 {
    let r = z.norm();
    if r == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    z * (r.powf(p) / r)
}

/// Inverse of [`compress`]: `|z|^(1/p) · phase(z)`.
#[inline]
pub fn decompress(z: Complex64, p: f64) -> Complex64 {
    compress(z, 1.0 / p)
}

/// Mean taken as deviations from the first sample so fiber-constant input is reproduced exactly.
fn mean(samples: impl Iterator<Item = Complex64>) -> Complex64 {
    let mut first = None;
    let mut acc = Complex64::new(0.0, 0.0);
    let mut n = 0usize;
    for s in samples {
        let f = *first.get_or_insert(s);
        acc += s - f;
        n += 1;
    }
    match first {
        Some(f) => f + acc / n as f64,
        None => Complex64::new(0.0, 0.0),
    }
}

/// Compressed average of one pixel's samples across fibers.
pub fn compressed_average(samples: &[Complex64], config: &CompressionConfig) -> Complex64 {
    let p = config.effective_exponent();
    if p == 1.0 {
        return mean(samples.iter().copied());
    }
    let m = mean(samples.iter().map(|&z| compress(z, p)));
    decompress(m, p)
}

/// Compressed average of wavelength `j` of `volume`, pixel by pixel.
pub fn compressed_average_wavelength(volume: &IqVolume, j: usize, config: &CompressionConfig) -> Vec<Complex64> {
    let n = volume.grid.len();
    let images: Vec<&[Complex64]> = (0..volume.n_fibers).map(|i| volume.image(j, i)).collect();
    let mut column = alloc::vec![Complex64::new(0.0, 0.0); volume.n_fibers];
    (0..n)
        .map(|k| {
            for (c, im) in column.iter_mut().zip(&images) {
                *c = im[k];
            }
            compressed_average(&column, config)
        })
        .collect()
}

/// Reduces every wavelength of `volume` over fibers; the result has one "fiber".
pub fn declutter_volume(volume: &IqVolume, config: &CompressionConfig) -> Result<IqVolume> {
    config.validate()?;
    let images = (0..volume.n_wavelengths()).map(|j| compressed_average_wavelength(volume, j, config)).collect();
    let mut out = IqVolume::from_images(volume.grid, volume.wavelengths.clone(), 1, images)?;
    out.meta = volume.meta.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn compress_examples() {
        let phi = 0.7;
        let z = Complex64::from_polar(16.0, phi);
        let w = compress(z, 0.25);
        assert!((w.norm() - 2.0).abs() < 1e-14);
        assert!((w.arg() - phi).abs() < 1e-14);
        assert_eq!(compress(c(0.0, 0.0), 0.25), c(0.0, 0.0));
        let u = Complex64::from_polar(1.0, -2.1);
        assert!((compress(u, 0.25) - u).norm() < 1e-15);
    }

    #[test]
    fn lone_fiber_closed_form() {
        let a = 3.7;
        let phi = 1.1;
        let mut samples = vec![c(0.0, 0.0); 20];
        samples[4] = Complex64::from_polar(a, phi);
        let out = compressed_average(&samples, &CompressionConfig::default());
        assert!(((out.norm() - a / 160_000.0) / (a / 160_000.0)).abs() < 1e-12);
        assert!((out.arg() - phi).abs() < 1e-12);
        let plain = compressed_average(&samples, &CompressionConfig::off());
        assert!(((plain.norm() - a / 20.0) / (a / 20.0)).abs() < 1e-14);
    }

    #[test]
    fn suppression_factor_decreases_with_p() {
        let n = 20usize;
        let mut samples = vec![c(0.0, 0.0); n];
        samples[0] = c(1.0, 0.0);
        let mut last = f64::INFINITY;
        for p in [0.25, 0.5, 1.0] {
            let out = compressed_average(&samples, &CompressionConfig::new(p).unwrap()).norm();
            let factor = (1.0 / out) / n as f64; // extra suppression beyond plain averaging
            let expect = (n as f64).powf(1.0 / p - 1.0);
            assert!(((factor - expect) / expect).abs() < 1e-9, "p={p}");
            assert!(factor < last);
            last = factor;
        }
        assert!((last - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_exponent() {
        assert!(CompressionConfig::new(0.0).is_err());
        assert!(CompressionConfig::new(1.5).is_err());
    }

    fn arb_samples() -> impl Strategy<Value = Vec<Complex64>> {
        proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0).prop_map(|(a, b)| c(a, b)), 1..24)
    }

    proptest! {
        #[test]
        fn identity_on_fiber_constant(re in -100.0f64..100.0, im in -100.0f64..100.0, n in 1usize..30, p in 0.1f64..1.0) {
            let z = c(re, im);
            let out = compressed_average(&vec![z; n], &CompressionConfig::new(p).unwrap());
            prop_assert!((out - z).norm() <= 1e-12 * z.norm().max(1e-300));
        }

        #[test]
        fn phase_equivariance(s in arb_samples(), psi in -3.1f64..3.1) {
            let cfg = CompressionConfig::default();
            let rot = Complex64::from_polar(1.0, psi);
            let rotated: Vec<_> = s.iter().map(|z| z * rot).collect();
            let a = compressed_average(&rotated, &cfg);
            let b = compressed_average(&s, &cfg) * rot;
            prop_assert!((a - b).norm() <= 1e-9 * (1.0 + b.norm()));
        }

        #[test]
        fn scale_equivariance(s in arb_samples(), k in 0.001f64..1000.0) {
            let cfg = CompressionConfig::default();
            let scaled: Vec<_> = s.iter().map(|z| z * k).collect();
            let a = compressed_average(&scaled, &cfg);
            let b = compressed_average(&s, &cfg) * k;
            prop_assert!((a - b).norm() <= 1e-9 * (1e-12 + b.norm()));
        }
    }
}
