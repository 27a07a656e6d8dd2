//! The full chain: simulate, compensate, declutter, unmix, report.
//!
//! Every stage consumes the `f32`-rounded output of the previous one, so
//! re-running a stage from the files on disk reproduces the single-shot
//! outputs byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pausim_core::compensate::{compensate, compound, CompensationConfig, FitConfig, OpticalFit, SelectionConfig};
use pausim_core::declutter::{declutter_volume, CompressionConfig};
use pausim_core::fiber::FiberArray;
use pausim_core::grid::{Grid, PixelBox};
use pausim_core::optics::MediumOptics;
use pausim_core::psf::PsfModel;
use pausim_core::scene::Scene;
use pausim_core::simulate::{synthesize_bmode, IqVolume, VolumeMeta};
use pausim_core::spectrum::{synthetic, SpectrumTable, SpectrumUnit};
use pausim_core::unmix::{agent_weighted_image, ncc_map, overlay, pixel_ncc, NccMap, OverlayStyle, SigmoidParams};
use pausim_core::{Complex64, Error as CoreError};
use serde::{Deserialize, Serialize};

use crate::error::io_err;
use crate::figure::{gray_db, gray_linear, Colorbar, Figure, Pixels};
use crate::hash::{json_hash, sha256_hex, Provenance};
use crate::plot::{Plot, Series};
use crate::scene_io::{bundled_study2, load_scene, scene_hash};
use crate::table::{read_spectrum, write_columns};
use crate::volume::{quantize, save_volume, sidecar_path, write_json};
use crate::{parallel, Error, Result, BUILD_ID};

/// Scene reference resolving to the bundled injected-agent phantom.
pub const BUNDLED_STUDY2: &str = "bundled:study2";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Display {
    /// Dynamic range of the PA figures.
    pub range_db: f64,
    pub overlay: OverlayStyle,
    /// Speckle std of the synthetic B-mode anatomy layer.
    pub speckle_sigma: f64,
    /// NCC mapped to black; 1 maps to white.
    pub ncc_floor: f64,
}

impl Default for Display {
    fn default() -> Self {
        Display { range_db: 40.0, overlay: OverlayStyle::default(), speckle_sigma: 0.05, ncc_floor: 0.9 }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Scene JSON path relative to the config file, or `bundled:study2`.
    pub scene: String,
    #[serde(default)]
    pub psf: PsfModel,
    /// Subset of the scene wavelengths to simulate (default: all).
    #[serde(default)]
    pub wavelengths: Option<Vec<f64>>,
    /// Overrides the scene seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Overrides the scene noise level.
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    #[serde(default = "yes")]
    pub compensate: bool,
    #[serde(default)]
    pub declutter: CompressionConfig,
    #[serde(default)]
    pub sigmoid: SigmoidParams,
    /// Reference spectrum CSV relative to the config file (default: the bundled agent spectrum).
    #[serde(default)]
    pub reference: Option<String>,
    pub selection: SelectionConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub compensation: CompensationConfig,
    /// Region where double-depth clutter is expected, for the clutter metric.
    #[serde(default)]
    pub clutter_roi: Option<PixelBox>,
    /// `(x, z)` in mm of the pixel whose spectrum is plotted.
    pub spectrum_pixel_mm: [f64; 2],
    #[serde(default)]
    pub display: Display,
}

impl PipelineConfig {
    /// Configuration for the bundled injected-agent phantom.
    pub fn study2() -> Self {
        PipelineConfig {
            scene: BUNDLED_STUDY2.into(),
            psf: PsfModel::default(),
            wavelengths: None,
            seed: None,
            noise_sigma: None,
            compensate: true,
            declutter: CompressionConfig::default(),
            sigmoid: SigmoidParams::default(),
            reference: None,
            // 4-10.5 mm holds both targets and none of the double-depth artifacts
            selection: SelectionConfig { fit_roi: Some(PixelBox::new(0, 20, 64, 65)), ..SelectionConfig::new(PixelBox::new(0, 140, 64, 20)) },
            fit: FitConfig::default(),
            compensation: CompensationConfig::default(),
            clutter_roi: Some(PixelBox::new(0, 85, 64, 30)),
            spectrum_pixel_mm: [-2.0, 8.0],
            display: Display::default(),
        }
    }

    /// Checks the toggles against each other; referenced files are checked when loaded.
    pub fn validate(&self) -> Result<()> {
        if let Some(ws) = &self.wavelengths {
            if ws.len() < 2 {
                return Err(Error::Config("unmixing needs at least two wavelengths".into()));
            }
        }
        self.declutter.validate()?;
        if self.display.range_db <= 0.0 || self.display.ncc_floor.is_nan() || self.display.ncc_floor >= 1.0 {
            return Err(Error::Config("display range must be positive and the NCC floor below 1".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        json_hash(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::volume::read_json(path)
    }
}

/// Loads the scene and applies the config overrides.
pub fn prepare_scene(config: &PipelineConfig, base: &Path) -> Result<Scene> {
    config.validate()?;
    let mut scene = if config.scene == BUNDLED_STUDY2 { bundled_study2() } else { load_scene(&base.join(&config.scene))? };
    if let Some(ws) = &config.wavelengths {
        let entries = ws.iter().map(|&w| scene.medium.at(w).copied()).collect::<pausim_core::Result<Vec<_>>>()?;
        scene.medium = MediumOptics::new(entries)?;
    }
    if let Some(seed) = config.seed {
        scene.rng_seed = seed;
    }
    if let Some(sigma) = config.noise_sigma {
        scene.noise_sigma = sigma;
    }
    scene.validate()?;
    Ok(scene)
}

pub fn load_reference(config: &PipelineConfig, base: &Path) -> Result<SpectrumTable> {
    match &config.reference {
        Some(p) => read_spectrum(&base.join(p), SpectrumUnit::PerCm),
        None => Ok(synthetic::agent_table()),
    }
}

pub fn stage_simulate(scene: &Scene, psf: &PsfModel) -> Result<IqVolume> {
    let mut v = quantize(&parallel::synthesize_volume(scene, psf)?);
    v.meta = VolumeMeta { seed: scene.rng_seed, scene_hash: scene_hash(scene) };
    Ok(v)
}

/// Fit outcome for one wavelength; `fit` is `None` when it was skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub wavelength_nm: f64,
    pub fit: Option<OpticalFit>,
    pub skipped: Option<String>,
    pub near_field_mm: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CompensateOutput {
    pub fits: Vec<FitEntry>,
    pub volume: IqVolume,
}

/// Per-wavelength fits and compensation. Wavelengths without usable signal are
/// zeroed in the output and reported as skipped.
pub fn stage_compensate(
    volume: &IqVolume,
    fibers: &FiberArray,
    selection: &SelectionConfig,
    fit: &FitConfig,
    config: &CompensationConfig,
) -> Result<CompensateOutput> {
    let results = parallel::fit_all(volume, fibers, selection, fit);
    let mut fits = Vec::new();
    let mut ok = Vec::new();
    for (j, r) in results.into_iter().enumerate() {
        let w = volume.wavelengths[j];
        match r {
            Ok(f) => {
                ok.push(j);
                fits.push(FitEntry { wavelength_nm: w, fit: Some(f), skipped: None, near_field_mm: None });
            }
            Err(e @ CoreError::NoSignal { .. }) => {
                log::warn!("{w} nm: {e}; compensation skipped");
                fits.push(FitEntry { wavelength_nm: w, fit: None, skipped: Some(e.to_string()), near_field_mm: None });
            }
            Err(e) => return Err(e.into()),
        }
    }
    if ok.is_empty() {
        return Err(Error::Config("no wavelength has signal above the noise threshold".into()));
    }
    let images = ok.iter().flat_map(|&j| (0..volume.n_fibers).map(move |i| (j, i))).map(|(j, i)| volume.image(j, i).to_vec()).collect();
    let sub = IqVolume::from_images(volume.grid, ok.iter().map(|&j| volume.wavelengths[j]).collect(), volume.n_fibers, images)?;
    let good: Vec<OpticalFit> = fits.iter().filter_map(|f| f.fit.clone()).collect();
    let comp = compensate(&sub, &good, fibers, config)?;
    let mut out = IqVolume::zeros(volume.grid, volume.wavelengths.clone(), volume.n_fibers);
    out.meta = volume.meta.clone();
    for (k, &j) in ok.iter().enumerate() {
        fits[j].near_field_mm = Some(comp.near_field_mm[k]);
        for i in 0..volume.n_fibers {
            out.image_mut(j, i).copy_from_slice(comp.volume.image(k, i));
        }
    }
    Ok(CompensateOutput { fits, volume: quantize(&out) })
}

pub fn stage_declutter(volume: &IqVolume, config: &CompressionConfig) -> Result<IqVolume> {
    let mut v = quantize(&declutter_volume(volume, config)?);
    v.meta = volume.meta.clone();
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct UnmixOutput {
    /// `spectra[j][pixel]`: magnitude of the reduced image at wavelength `j`.
    pub spectra: Vec<Vec<f64>>,
    pub reference: Vec<f64>,
    pub map: NccMap,
    pub compounded: Vec<Complex64>,
    pub weighted: Vec<Complex64>,
}

/// NCC weighting of a fiber-reduced volume (one image per wavelength).
pub fn stage_unmix(reduced: &IqVolume, reference: &SpectrumTable, params: SigmoidParams) -> Result<UnmixOutput> {
    if reduced.n_wavelengths() < 2 {
        return Err(Error::Config("unmixing needs at least two wavelengths".into()));
    }
    if reduced.n_fibers != 1 {
        return Err(Error::Config(format!("unmixing expects a fiber-reduced volume, got {} fibers", reduced.n_fibers)));
    }
    let images: Vec<Vec<Complex64>> = (0..reduced.n_wavelengths()).map(|j| reduced.image(j, 0).to_vec()).collect();
    let spectra: Vec<Vec<f64>> = images.iter().map(|im| im.iter().map(|z| z.norm()).collect()).collect();
    let reference = reference.sample_many(&reduced.wavelengths)?;
    let g = reduced.grid;
    let map = ncc_map(&spectra, &reference, g.nx, g.nz, params)?;
    let compounded = compound(&images);
    let weighted = agent_weighted_image(&compounded, &map)?;
    Ok(UnmixOutput { spectra, reference, map, compounded, weighted })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub outputs: Vec<OutputRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    #[serde(flatten)]
    pub entry: FitEntry,
    pub true_mu_eff: f64,
    pub true_mu_s_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub pixel: (usize, usize),
    pub wavelengths_nm: Vec<f64>,
    pub reference: Vec<f64>,
    /// `|Σ_i IQ_i|` of the simulated data.
    pub original: Vec<f64>,
    /// Magnitude after compensation and fiber reduction.
    pub corrected: Vec<f64>,
    pub ncc_original: f64,
    pub ncc_corrected: f64,
    /// Least-squares constant mapping the reference onto `corrected`.
    pub scale: f64,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterReport {
    pub clutter_roi: PixelBox,
    /// Clutter-region over signal-region energy of the compounded image, plain fiber mean.
    pub plain_db: f64,
    /// The same with the configured fiber reduction.
    pub configured_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorberReport {
    pub id: String,
    pub peak_compounded: f64,
    pub peak_weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub build_id: String,
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub config_hash: String,
    pub scene_hash: String,
    pub seed: Option<u64>,
    pub stages: Vec<StageRecord>,
    pub fits: Vec<FitRecord>,
    pub spectrum: Option<SpectrumReport>,
    pub clutter: Option<ClutterReport>,
    pub absorbers: Vec<AbsorberReport>,
}

pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

struct Run<'a> {
    out: &'a Path,
    report: Report,
    timings: BTreeMap<String, f64>,
    provenance: Provenance,
}

impl Run<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> std::result::Result<T, (String, Error)> {
        log::info!("stage {name}");
        let t0 = Instant::now();
        self.report.stages.push(StageRecord { name: name.into(), outputs: Vec::new() });
        let r = f(self);
        self.timings.insert(name.into(), t0.elapsed().as_secs_f64());
        r.map_err(|e| (name.to_string(), e))
    }

    /// Records `file` (and its sidecar, if any) under the current stage.
    fn record(&mut self, file: &str) -> Result<()> {
        let stage = self.report.stages.last_mut().expect("inside a stage");
        for f in [file.to_string(), format!("{file}.json")] {
            let path = self.out.join(&f);
            if f != file && !path.exists() {
                continue;
            }
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            stage.outputs.push(OutputRecord { file: f, sha256: sha256_hex(&bytes) });
        }
        Ok(())
    }

    fn volume(&mut self, file: &str, v: &IqVolume, stage: &str) -> Result<()> {
        save_volume(&self.out.join(file), v, &self.provenance, stage)?;
        self.record(file)
    }

    fn figure(&mut self, file: &str, fig: &Figure, mut bar: Colorbar) -> Result<()> {
        bar.provenance = self.provenance.clone();
        fig.write(&self.out.join(file), &bar)?;
        self.record(file)
    }

    fn json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<()> {
        write_json(&self.out.join(file), value)?;
        self.record(file)
    }
}

/// Stretches columns so pixels are square when `dx` is a multiple of `dz`.
fn display_figure(values: &[f64], grid: &Grid, build: impl Fn(&[f64], usize, usize) -> (Figure, Colorbar)) -> (Figure, Colorbar) {
    let r = ((grid.dx / grid.dz).round() as usize).max(1);
    let wide: Vec<f64> = (0..grid.nz).flat_map(|iz| (0..grid.nx * r).map(move |c| values[grid.offset(c / r, iz)])).collect();
    build(&wide, grid.nx * r, grid.nz)
}

fn display_rgb(rgb: &[[u8; 3]], grid: &Grid) -> Figure {
    let r = ((grid.dx / grid.dz).round() as usize).max(1);
    let wide = (0..grid.nz).flat_map(|iz| (0..grid.nx * r).map(move |c| rgb[grid.offset(c / r, iz)])).collect();
    Figure { width: grid.nx * r, height: grid.nz, pixels: Pixels::Rgb(wide) }
}

fn magnitudes(image: &[Complex64]) -> Vec<f64> {
    image.iter().map(|z| z.norm()).collect()
}

fn box_energy(image: &[Complex64], grid: &Grid, b: &PixelBox) -> f64 {
    b.pixels().map(|(ix, iz)| image[grid.offset(ix, iz)].norm_sqr()).sum()
}

fn clutter_db(image: &[Complex64], grid: &Grid, clutter: &PixelBox, signal: Option<&PixelBox>) -> f64 {
    let c = box_energy(image, grid, clutter);
    let s = match signal {
        Some(b) => box_energy(image, grid, b),
        None => image.iter().map(|z| z.norm_sqr()).sum::<f64>() - c,
    };
    10.0 * (c / s).log10()
}

fn spectrum_report(raw: &IqVolume, unmix: &UnmixOutput, pixel: (usize, usize)) -> Result<SpectrumReport> {
    let k = raw.grid.offset(pixel.0, pixel.1);
    let original: Vec<f64> = (0..raw.n_wavelengths()).map(|j| raw.fiber_sum(j)[k].norm()).collect();
    let corrected: Vec<f64> = unmix.spectra.iter().map(|s| s[k]).collect();
    let r = &unmix.reference;
    let scale = corrected.iter().zip(r).map(|(c, r)| c * r).sum::<f64>() / r.iter().map(|r| r * r).sum::<f64>();
    let max_relative_error = corrected.iter().zip(r).map(|(c, r)| (c - scale * r).abs() / (scale * r)).fold(0.0, f64::max);
    Ok(SpectrumReport {
        pixel,
        wavelengths_nm: raw.wavelengths.clone(),
        reference: r.clone(),
        ncc_original: pixel_ncc(&original, r)?,
        ncc_corrected: pixel_ncc(&corrected, r)?,
        original,
        corrected,
        scale,
        max_relative_error,
    })
}

fn spectrum_plot(s: &SpectrumReport) -> Plot {
    // both measured curves are scaled onto the reference by least squares
    let fit = |v: &[f64]| {
        let c = v.iter().zip(&s.reference).map(|(a, b)| a * b).sum::<f64>() / v.iter().map(|a| a * a).sum::<f64>();
        v.iter().map(|a| a * c).collect::<Vec<_>>()
    };
    Plot {
        title: format!("Pixel spectrum at ({}, {})", s.pixel.0, s.pixel.1),
        x_label: "Wavelength (nm)".into(),
        y_label: "Absorption (cm^-1)".into(),
        series: vec![
            Series::line("reference", &s.wavelengths_nm, &s.reference, "black"),
            Series::markers("original", &s.wavelengths_nm, &fit(&s.original), "#1f77b4"),
            Series::markers("corrected", &s.wavelengths_nm, &fit(&s.corrected), "#d62728"),
        ],
    }
}

/// Writes the NCC map, the weighted image and the anatomy overlay; returns the file names.
pub fn write_unmix_figures(
    out: &Path,
    scene: &Scene,
    config: &PipelineConfig,
    u: &UnmixOutput,
    provenance: &Provenance,
) -> Result<[&'static str; 3]> {
    let grid = scene.grid;
    let write = |file: &str, fig: &Figure, mut bar: Colorbar| {
        bar.provenance = provenance.clone();
        fig.write(&out.join(file), &bar)
    };
    let weighted = magnitudes(&u.weighted);
    let (fig, bar) = display_figure(&u.map.ncc, &grid, |v, w, h| gray_linear(v, w, h, config.display.ncc_floor, 1.0));
    write("ncc_map.png", &fig, bar)?;
    let (fig, bar) = display_figure(&weighted, &grid, |v, w, h| gray_db(v, w, h, config.display.range_db));
    write("weighted.png", &fig, bar)?;
    let anatomy = synthesize_bmode(scene, &config.psf, config.display.speckle_sigma);
    let rgb = overlay(&weighted, &anatomy, config.display.overlay)?;
    let bar = Colorbar {
        colormap: "hot-over-gray".into(),
        scale: "db".into(),
        floor: -config.display.overlay.pa_range_db,
        ceiling: 0.0,
        reference: weighted.iter().cloned().fold(0.0, f64::max),
        levels: 256,
        provenance: Provenance::default(),
    };
    write("overlay.png", &display_rgb(&rgb, &grid), bar)?;
    Ok(["ncc_map.png", "weighted.png", "overlay.png"])
}

/// Runs every stage, writing outputs, `report.json` and `timings.json` into
/// `out`. On failure the report names the failed stage and the error is returned.
pub fn run_pipeline(config: &PipelineConfig, base: &Path, out: &Path) -> Result<Report> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut run = Run {
        out,
        report: Report {
            build_id: BUILD_ID.into(),
            status: "running".into(),
            failed_stage: None,
            error: None,
            config_hash: config.hash(),
            scene_hash: String::new(),
            seed: None,
            stages: Vec::new(),
            fits: Vec::new(),
            spectrum: None,
            clutter: None,
            absorbers: Vec::new(),
        },
        timings: BTreeMap::new(),
        provenance: Provenance::new("", config.hash()),
    };
    let t0 = Instant::now();
    let result = execute(&mut run, config, base);
    run.timings.insert("total".into(), t0.elapsed().as_secs_f64());
    match &result {
        Ok(()) => run.report.status = "ok".into(),
        Err((stage, e)) => {
            run.report.status = "failed".into();
            run.report.failed_stage = Some(stage.clone());
            run.report.error = Some(e.to_string());
        }
    }
    write_json(&out.join(REPORT_FILE), &run.report)?;
    write_json(&out.join(TIMINGS_FILE), &run.timings)?;
    match result {
        Ok(()) => Ok(run.report),
        Err((stage, e)) => Err(Error::Config(format!("stage {stage} failed: {e}"))),
    }
}

fn execute(run: &mut Run, config: &PipelineConfig, base: &Path) -> std::result::Result<(), (String, Error)> {
    let (scene, reference) = run.stage("scene", |run| {
        let scene = prepare_scene(config, base)?;
        let reference = load_reference(config, base)?;
        run.report.scene_hash = scene_hash(&scene);
        run.report.seed = Some(scene.rng_seed);
        run.provenance.scene_hash = run.report.scene_hash.clone();
        run.json("scene.json", &scene)?;
        run.json("config.json", config)?;
        Ok((scene, reference))
    })?;
    let grid = scene.grid;

    let raw = run.stage("simulate", |run| {
        let v = stage_simulate(&scene, &config.psf)?;
        run.volume("simulated.iq", &v, "simulate")?;
        Ok(v)
    })?;

    let comp = run.stage("compensate", |run| {
        if !config.compensate {
            return Ok(raw.clone());
        }
        let c = stage_compensate(&raw, &scene.fibers, &config.selection, &config.fit, &config.compensation)?;
        for e in &c.fits {
            let truth = scene.medium.at(e.wavelength_nm)?.diffusion();
            run.report.fits.push(FitRecord { entry: e.clone(), true_mu_eff: truth.mu_eff, true_mu_s_prime: truth.mu_s_prime });
        }
        run.volume("compensated.iq", &c.volume, "compensate")?;
        let fits = FitsFile { provenance: run.provenance.clone(), fits: c.fits.clone() };
        run.json("fits.json", &fits)?;
        Ok(c.volume)
    })?;

    let (plain, reduced) = run.stage("declutter", |run| {
        let plain = stage_declutter(&comp, &CompressionConfig::off())?;
        let reduced = if config.declutter.enabled { stage_declutter(&comp, &config.declutter)? } else { plain.clone() };
        run.volume("decluttered.iq", &reduced, "declutter")?;
        let plain_img = compound(&(0..plain.n_wavelengths()).map(|j| plain.image(j, 0).to_vec()).collect::<Vec<_>>());
        let reduced_img = compound(&(0..reduced.n_wavelengths()).map(|j| reduced.image(j, 0).to_vec()).collect::<Vec<_>>());
        let (fig, bar) = display_figure(&magnitudes(&plain_img), &grid, |v, w, h| gray_db(v, w, h, config.display.range_db));
        run.figure("compensated.png", &fig, bar)?;
        let (fig, bar) = display_figure(&magnitudes(&reduced_img), &grid, |v, w, h| gray_db(v, w, h, config.display.range_db));
        run.figure("decluttered.png", &fig, bar)?;
        if let Some(roi) = config.clutter_roi {
            roi.check_in(grid.nx, grid.nz).map_err(Error::from)?;
            let signal = config.selection.fit_roi;
            run.report.clutter = Some(ClutterReport {
                clutter_roi: roi,
                plain_db: clutter_db(&plain_img, &grid, &roi, signal.as_ref()),
                configured_db: clutter_db(&reduced_img, &grid, &roi, signal.as_ref()),
            });
        }
        Ok((plain, reduced))
    })?;
    drop(plain);

    run.stage("unmix", |run| {
        let u = stage_unmix(&reduced, &reference, config.sigmoid)?;
        for f in write_unmix_figures(run.out, &scene, config, &u, &run.provenance)? {
            run.record(f)?;
        }

        let [x, z] = config.spectrum_pixel_mm;
        let pixel =
            grid.nearest_index(x + 1e-9, z + 1e-9).ok_or_else(|| Error::Config(format!("spectrum pixel ({x}, {z}) mm is outside the grid")))?;
        let s = spectrum_report(&raw, &u, pixel)?;
        let path = run.out.join("spectrum.svg");
        fs::write(&path, spectrum_plot(&s).to_svg()).map_err(io_err(&path))?;
        write_json(&sidecar_path(&path), &run.provenance)?;
        run.record("spectrum.svg")?;
        let path = run.out.join("spectrum.csv");
        write_columns(
            &path,
            &["wavelength_nm", "reference", "original", "corrected"],
            &[&s.wavelengths_nm, &s.reference, &s.original, &s.corrected],
        )?;
        write_json(&sidecar_path(&path), &run.provenance)?;
        run.record("spectrum.csv")?;
        run.report.spectrum = Some(s);

        for a in &scene.absorbers {
            let peak = |im: &[Complex64]| a.concentration.nonzero().map(|(ix, iz, _)| im[grid.offset(ix, iz)].norm()).fold(0.0, f64::max);
            run.report.absorbers.push(AbsorberReport { id: a.id.clone(), peak_compounded: peak(&u.compounded), peak_weighted: peak(&u.weighted) });
        }
        Ok(())
    })?;
    Ok(())
}

/// `fits.json`: per-wavelength fit results with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitsFile {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub fits: Vec<FitEntry>,
}

/// Re-hashes every output listed in a report; returns the mismatching files.
pub fn verify_outputs(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut bad = Vec::new();
    for o in report.stages.iter().flat_map(|s| &s.outputs) {
        let p = dir.join(&o.file);
        match fs::read(&p) {
            Ok(bytes) if sha256_hex(&bytes) == o.sha256 => {}
            _ => bad.push(p),
        }
    }
    Ok(bad)
}
