//! Image grid (B-scan plane) and pixel boxes.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Regular B-scan grid. `z = 0` is the tissue surface and depth grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub nz: usize,
    /// Lateral pixel pitch (mm).
    pub dx: f64,
    /// Axial pixel pitch (mm).
    pub dz: f64,
    /// Lateral origin (mm) of the left edge of pixel 0.
    pub x0: f64,
    /// Axial origin (mm) of the top edge of pixel 0.
    pub z0: f64,
}

impl Grid {
    pub fn new(nx: usize, nz: usize, dx: f64, dz: f64, x0: f64, z0: f64) -> Result<Self> {
        let g = Grid { nx, nz, dx, dz, x0, z0 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.nz == 0 {
            return Err(invalid("grid", "nx and nz must be at least 1"));
        }
        if !(self.dx > 0.0 && self.dz > 0.0) || !self.dx.is_finite() || !self.dz.is_finite() {
            return Err(invalid("grid", "pixel pitch must be positive and finite"));
        }
        if !self.x0.is_finite() || !self.z0.is_finite() {
            return Err(invalid("grid", "origin must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major offset (`iz * nx + ix`), unchecked.
    #[inline]
    pub fn offset(&self, ix: usize, iz: usize) -> usize {
        iz * self.nx + ix
    }

    pub fn check_index(&self, ix: usize, iz: usize) -> Result<()> {
        if ix >= self.nx || iz >= self.nz {
            return Err(Error::IndexOutOfRange { ix, iz, nx: self.nx, nz: self.nz });
        }
        Ok(())
    }

    /// Physical center `(x, z)` in mm of pixel `(ix, iz)`.
    pub fn pixel_center(&self, ix: usize, iz: usize) -> Result<(f64, f64)> {
        self.check_index(ix, iz)?;
        Ok((self.x_center(ix), self.z_center(iz)))
    }

    #[inline]
    pub fn x_center(&self, ix: usize) -> f64 {
        self.x0 + (ix as f64 + 0.5) * self.dx
    }

    #[inline]
    pub fn z_center(&self, iz: usize) -> f64 {
        self.z0 + (iz as f64 + 0.5) * self.dz
    }

    /// Index of the pixel containing `(x, z)`, if it lies on the grid.
    pub fn nearest_index(&self, x: f64, z: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.x0) / self.dx).floor();
        let fz = ((z - self.z0) / self.dz).floor();
        if fx < 0.0 || fz < 0.0 || !fx.is_finite() || !fz.is_finite() {
            return None;
        }
        let (ix, iz) = (fx as usize, fz as usize);
        (ix < self.nx && iz < self.nz).then_some((ix, iz))
    }

    /// Axial index range whose pixel centers fall within `[center - range/2, center + range/2]`.
    pub fn axial_window(&self, center_mm: f64, range_mm: f64) -> Option<core::ops::Range<usize>> {
        let lo = center_mm - 0.5 * range_mm;
        let hi = center_mm + 0.5 * range_mm;
        let eps = 1e-9 * self.dz;
        let first = (0..self.nz).find(|&iz| self.z_center(iz) >= lo - eps)?;
        let last = (first..self.nz).take_while(|&iz| self.z_center(iz) <= hi + eps).last()?;
        Some(first..last + 1)
    }
}

/// Position in tissue coordinates (mm): `x` along the array, `y` elevation, `z` depth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Axis-aligned pixel rectangle `[ix0, ix0+width) x [iz0, iz0+height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub ix0: usize,
    pub iz0: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelBox {
    pub const fn new(ix0: usize, iz0: usize, width: usize, height: usize) -> Self {
        PixelBox { ix0, iz0, width, height }
    }

    /// 3x3 box centered on `(ix, iz)`.
    pub fn centered3(ix: usize, iz: usize) -> Self {
        PixelBox::new(ix.saturating_sub(1), iz.saturating_sub(1), 3, 3)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, ix: usize, iz: usize) -> bool {
        ix >= self.ix0 && ix < self.ix0 + self.width && iz >= self.iz0 && iz < self.iz0 + self.height
    }

    pub fn overlaps(&self, other: &PixelBox) -> bool {
        self.ix0 < other.ix0 + other.width
            && other.ix0 < self.ix0 + self.width
            && self.iz0 < other.iz0 + other.height
            && other.iz0 < self.iz0 + self.height
    }

    pub fn fits(&self, nx: usize, nz: usize) -> bool {
        !self.is_empty() && self.ix0 + self.width <= nx && self.iz0 + self.height <= nz
    }

    pub fn check_in(&self, nx: usize, nz: usize) -> Result<()> {
        if self.fits(nx, nz) {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!("pixel box {:?} does not fit a {}x{} image", self, nx, nz)))
        }
    }

    /// Iterates `(ix, iz)` in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.iz0..self.iz0 + self.height).flat_map(move |iz| (self.ix0..self.ix0 + self.width).map(move |ix| (ix, iz)))
    }
}
