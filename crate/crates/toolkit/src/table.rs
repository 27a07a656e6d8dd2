//! CSV tables: spectra `(wavelength_nm, value[, std])` and depth series
//! `(depth_mm, signal_db[, std_db])`.
//!
//! Lines starting with `#` are comments; a first row that does not parse as
//! numbers is taken as a header.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use pausim_core::depth::DepthPoint;
use pausim_core::spectrum::{SpectrumTable, SpectrumUnit};

use crate::error::io_err;
use crate::{Error, Result};

fn read_rows(path: &Path, min_cols: usize, max_cols: usize) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
    let mut rows = Vec::new();
    for (n, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
        let fields: Vec<&str> = rec.iter().filter(|f| !f.is_empty()).collect();
        if fields.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) if (min_cols..=max_cols).contains(&v.len()) => rows.push(v),
            Err(_) if n == 0 => continue,
            _ => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("row {}: expected {min_cols} to {max_cols} numeric columns", n + 1),
                })
            }
        }
    }
    Ok(rows)
}

pub fn read_spectrum(path: &Path, unit: SpectrumUnit) -> Result<SpectrumTable> {
    let rows = read_rows(path, 2, 3)?;
    let has_std = rows.iter().all(|r| r.len() == 3);
    let table = SpectrumTable::new(
        rows.iter().map(|r| r[0]).collect(),
        rows.iter().map(|r| r[1]).collect(),
        has_std.then(|| rows.iter().map(|r| r[2]).collect()),
        unit,
    )?;
    Ok(table)
}

pub fn write_spectrum(path: &Path, table: &SpectrumTable) -> Result<()> {
    let mut f = File::create(path).map_err(io_err(path))?;
    let mut text = String::from("wavelength_nm,value,std\n");
    for k in 0..table.len() {
        text.push_str(&format!("{},{},{}\n", table.wavelengths[k], table.values[k], table.std[k]));
    }
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

pub fn read_depth_points(path: &Path) -> Result<Vec<DepthPoint>> {
    Ok(read_rows(path, 2, 3)?.into_iter().map(|r| DepthPoint { depth_mm: r[0], signal_db: r[1], std_db: r.get(2).copied() }).collect())
}

pub fn write_depth_points(path: &Path, points: &[DepthPoint]) -> Result<()> {
    let mut text = String::from("depth_mm,signal_db,std_db\n");
    for p in points {
        match p.std_db {
            Some(s) => text.push_str(&format!("{},{},{}\n", p.depth_mm, p.signal_db, s)),
            None => text.push_str(&format!("{},{}\n", p.depth_mm, p.signal_db)),
        }
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Writes named columns of equal length.
pub fn write_columns(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    let n = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != n) || header.len() != columns.len() {
        return Err(Error::Config("columns differ in length".into()));
    }
    let mut text = header.join(",");
    text.push('\n');
    for k in 0..n {
        let row: Vec<String> = columns.iter().map(|c| c[k].to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io_err(path))
}
