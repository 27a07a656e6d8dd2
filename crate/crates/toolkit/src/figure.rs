//! 8-bit figures (PNG, or PGM/PPM) with a JSON colorbar sidecar.

use std::path::Path;

use pausim_core::unmix::db_level;
use serde::{Deserialize, Serialize};

use crate::error::io_err;
use crate::hash::Provenance;
use crate::volume::{sidecar_path, write_json};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pixels {
    Gray(Vec<u8>),
    Rgb(Vec<[u8; 3]>),
}

/// Row-major image, first row at the top (shallowest depth).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Figure {
    pub width: usize,
    pub height: usize,
    pub pixels: Pixels,
}

/// How gray levels map back to data values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Colorbar {
    pub colormap: String,
    /// `"db"`: level 0 is `floor` dB and 255 is `ceiling` dB relative to `reference`.
    /// `"linear"`: level 0 is `floor`, 255 is `ceiling`, in data units.
    pub scale: String,
    pub floor: f64,
    pub ceiling: f64,
    pub reference: f64,
    pub levels: u32,
    #[serde(flatten)]
    pub provenance: Provenance,
}

fn level(t: f64) -> u8 {
    (255.0 * t.clamp(0.0, 1.0)).round() as u8
}

/// Magnitudes on a dB scale spanning `range_db` below the image maximum.
pub fn gray_db(values: &[f64], width: usize, height: usize, range_db: f64) -> (Figure, Colorbar) {
    let max = values.iter().cloned().fold(0.0, f64::max);
    let pixels = values.iter().map(|&v| level(db_level(v, max, range_db))).collect();
    let bar = Colorbar {
        colormap: "gray".into(),
        scale: "db".into(),
        floor: -range_db,
        ceiling: 0.0,
        reference: max,
        levels: 256,
        provenance: Provenance::default(),
    };
    (Figure { width, height, pixels: Pixels::Gray(pixels) }, bar)
}

/// Values clamped to `[floor, ceiling]` and mapped linearly.
pub fn gray_linear(values: &[f64], width: usize, height: usize, floor: f64, ceiling: f64) -> (Figure, Colorbar) {
    let span = ceiling - floor;
    let pixels = values.iter().map(|&v| if span > 0.0 { level((v - floor) / span) } else { 0 }).collect();
    let bar =
        Colorbar { colormap: "gray".into(), scale: "linear".into(), floor, ceiling, reference: 1.0, levels: 256, provenance: Provenance::default() };
    (Figure { width, height, pixels: Pixels::Gray(pixels) }, bar)
}

impl Figure {
    fn check(&self) -> Result<()> {
        let n = match &self.pixels {
            Pixels::Gray(p) => p.len(),
            Pixels::Rgb(p) => p.len(),
        };
        if n != self.width * self.height || n == 0 {
            return Err(Error::Config(format!("{} pixels for a {}x{} figure", n, self.width, self.height)));
        }
        Ok(())
    }

    fn raw(&self) -> Vec<u8> {
        match &self.pixels {
            Pixels::Gray(p) => p.clone(),
            Pixels::Rgb(p) => p.iter().flatten().copied().collect(),
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        self.check()?;
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
        enc.set_color(match self.pixels {
            Pixels::Gray(_) => png::ColorType::Grayscale,
            Pixels::Rgb(_) => png::ColorType::Rgb,
        });
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Default);
        let err = |source| Error::Png { path: "<memory>".into(), source };
        let mut w = enc.write_header().map_err(err)?;
        w.write_image_data(&self.raw()).map_err(err)?;
        w.finish().map_err(err)?;
        Ok(out)
    }

    /// Binary PGM for gray figures, PPM for color.
    pub fn encode_pnm(&self) -> Result<Vec<u8>> {
        self.check()?;
        let magic = match self.pixels {
            Pixels::Gray(_) => "P5",
            Pixels::Rgb(_) => "P6",
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.raw());
        Ok(out)
    }

    /// Writes by extension (`.png`, `.pgm`, `.ppm`) plus the colorbar sidecar.
    pub fn write(&self, path: &Path, colorbar: &Colorbar) -> Result<()> {
        let bytes = match path.extension().and_then(|e| e.to_str()) {
            Some("png") => self.encode_png()?,
            Some("pgm") | Some("ppm") => self.encode_pnm()?,
            _ => return Err(Error::Config(format!("unsupported figure format: {}", path.display()))),
        };
        std::fs::write(path, bytes).map_err(io_err(path))?;
        write_json(&sidecar_path(path), colorbar)
    }
}
