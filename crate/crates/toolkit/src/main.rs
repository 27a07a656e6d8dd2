use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pausim::core::calibrate::{calibrate, radiative_component, tube_pair_from_volumes, StdPooling};
use pausim::core::declutter::CompressionConfig;
use pausim::core::depth::{fit_depth_decay, DepthSeries, Modality};
use pausim::core::grid::PixelBox;
use pausim::core::spectrum::SpectrumUnit;
use pausim::hash::Provenance;
use pausim::parallel;
use pausim::pipeline::{self, PipelineConfig, Report};
use pausim::plot::{Plot, Series};
use pausim::scene_io::{named_phantom, save_scene, scene_hash, PHANTOM_NAMES};
use pausim::table::{read_depth_points, read_spectrum, write_spectrum};
use pausim::volume::{load_volume, save_volume};

#[derive(Parser)]
#[command(name = "pausim", version = env!("CARGO_PKG_VERSION"), about = "Fast-sweep photoacoustic phantom simulator and spectroscopic processing chain")]
struct Cli {
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    /// Worker thread cap (0: all cores). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline config JSON (default: the bundled injected-agent study).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene JSON replacing the one named in the config.
    #[arg(long)]
    scene: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> anyhow::Result<(PipelineConfig, PathBuf)> {
        let (mut cfg, base) = self.load_config()?;
        if let Some(s) = &self.scene {
            let abs = std::path::absolute(s).with_context(|| format!("resolving {}", s.display()))?;
            cfg.scene = abs.to_string_lossy().into_owned();
        }
        Ok((cfg, base))
    }

    fn load_config(&self) -> anyhow::Result<(PipelineConfig, PathBuf)> {
        match &self.config {
            Some(p) => {
                let cfg = PipelineConfig::load(p)?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                Ok((cfg, base))
            }
            None => Ok((PipelineConfig::study2(), PathBuf::from("."))),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a bundled phantom as scene JSON.
    Phantom {
        #[arg(long, value_parser = PHANTOM_NAMES)]
        name: String,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize the IQ volume of the configured scene.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover an agent spectrum from co-located tube volumes.
    Calibrate {
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Reference absorber spectrum CSV (cm⁻¹).
        #[arg(long)]
        alpha_ref: PathBuf,
        /// Center pixel `ix,iz` of the 3x3 signal box.
        #[arg(long, value_parser = parse_pixel)]
        roi: (usize, usize),
        /// Center pixel `ix,iz` of the 3x3 noise box.
        #[arg(long, value_parser = parse_pixel)]
        noise_roi: (usize, usize),
        #[arg(long, default_value_t = 9)]
        order: usize,
        #[arg(long, value_enum, default_value_t = Pooling::Across)]
        pooling: Pooling,
        /// Total absorption CSV; adds the radiative component to the outputs.
        #[arg(long)]
        total: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit optical properties per wavelength and compensate the fluence.
    Compensate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reduce the fibers of each wavelength by compressed averaging.
    Declutter {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        input: PathBuf,
        /// `p=<float>` or `off`.
        #[arg(long, value_parser = parse_declutter)]
        declutter: Option<CompressionConfig>,
        #[arg(long)]
        out: PathBuf,
    },
    /// NCC-weight a fiber-reduced volume against a reference spectrum.
    Unmix {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a dB-domain depth series and estimate the maximum imaging depth.
    Depthfit {
        /// CSV `depth_mm,signal_db[,std_db]`.
        #[arg(long)]
        series: PathBuf,
        #[arg(long, value_enum, default_value_t = ModalityArg::Pa)]
        modality: ModalityArg,
        /// Noise floor (dB).
        #[arg(long, allow_hyphen_values = true)]
        floor: f64,
        #[arg(long, default_value_t = 0.0)]
        floor_std: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full chain.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// `p=<float>` or `off`.
        #[arg(long, value_parser = parse_declutter)]
        declutter: Option<CompressionConfig>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify and summarize the report of a run.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Pooling {
    Across,
    Per,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Pa,
    Nirf,
}

fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected ix,iz")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

fn parse_declutter(s: &str) -> Result<CompressionConfig, String> {
    if s == "off" {
        return Ok(CompressionConfig::off());
    }
    let p = s.strip_prefix("p=").ok_or("expected p=<float> or off")?;
    let p: f64 = p.parse().map_err(|e| format!("{e}"))?;
    CompressionConfig::new(p).map_err(|e| e.to_string())
}

fn box3(center: (usize, usize)) -> anyhow::Result<PixelBox> {
    if center.0 == 0 || center.1 == 0 {
        bail!("3x3 box center {center:?} touches the grid edge");
    }
    Ok(PixelBox::centered3(center.0, center.1))
}

fn create_dir(p: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info })
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    let threads = cli.threads;
    let result = parallel::with_threads(threads, move || dispatch(cli.command)).map_err(anyhow::Error::from).and_then(|r| r);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already embed their source text
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            log::error!("{msg}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Phantom { name, noise_sigma, seed, out } => {
            let mut scene = named_phantom(&name).expect("validated by clap");
            if let Some(s) = noise_sigma {
                scene.noise_sigma = s;
            }
            if let Some(s) = seed {
                scene.rng_seed = s;
            }
            scene.validate()?;
            save_scene(&out, &scene)?;
            log::info!("wrote {} ({})", out.display(), scene_hash(&scene));
        }
        Command::Simulate { config, out } => {
            let (cfg, base) = config.load()?;
            let scene = pipeline::prepare_scene(&cfg, &base)?;
            create_dir(&out)?;
            let v = pipeline::stage_simulate(&scene, &cfg.psf)?;
            save_volume(&out.join("simulated.iq"), &v, &Provenance::new(scene_hash(&scene), cfg.hash()), "simulate")?;
        }
        Command::Calibrate { agent, reference, alpha_ref, roi, noise_roi, order, pooling, total, out } => {
            let (a, side_a) = load_volume(&agent, None)?;
            let (r, _) = load_volume(&reference, None)?;
            let alpha = read_spectrum(&alpha_ref, SpectrumUnit::PerCm)?;
            let pooling = match pooling {
                Pooling::Across => StdPooling::AcrossWavelengths,
                Pooling::Per => StdPooling::PerWavelength,
            };
            let pair = tube_pair_from_volumes(&a, &r, &box3(roi)?, &box3(noise_roi)?, &alpha, pooling)?;
            let result = calibrate(&pair, Some(order))?;
            create_dir(&out)?;
            write_spectrum(&out.join("agent_spectrum.csv"), &result.alpha_agent)?;
            pausim::volume::write_json(&out.join("calibration.json"), &(&result, &pair, &side_a.provenance))?;
            if let Some(t) = total {
                let total = read_spectrum(&t, SpectrumUnit::PerCm)?;
                write_spectrum(&out.join("radiative_spectrum.csv"), &radiative_component(&total, &result.alpha_agent)?)?;
            }
            if let Some(p) = &result.poly {
                log::info!("order-{} fit, RMS residual {:.3e}", p.order, p.rms_residual);
            }
        }
        Command::Compensate { config, input, out } => {
            let (cfg, base) = config.load()?;
            let scene = pipeline::prepare_scene(&cfg, &base)?;
            let prov = Provenance::new(scene_hash(&scene), cfg.hash());
            let (v, _) = load_volume(&input, Some(&prov))?;
            let c = pipeline::stage_compensate(&v, &scene.fibers, &cfg.selection, &cfg.fit, &cfg.compensation)?;
            create_dir(&out)?;
            save_volume(&out.join("compensated.iq"), &c.volume, &prov, "compensate")?;
            pausim::volume::write_json(&out.join("fits.json"), &pipeline::FitsFile { provenance: prov, fits: c.fits })?;
        }
        Command::Declutter { config, input, declutter, out } => {
            let (mut cfg, base) = config.load()?;
            let scene = pipeline::prepare_scene(&cfg, &base)?;
            // the input was produced under the unmodified config
            let (v, _) = load_volume(&input, Some(&Provenance::new(scene_hash(&scene), cfg.hash())))?;
            if let Some(d) = declutter {
                cfg.declutter = d;
            }
            let reduced = pipeline::stage_declutter(&v, &cfg.declutter)?;
            create_dir(&out)?;
            save_volume(&out.join("decluttered.iq"), &reduced, &Provenance::new(scene_hash(&scene), cfg.hash()), "declutter")?;
        }
        Command::Unmix { config, input, out } => {
            let (cfg, base) = config.load()?;
            let scene = pipeline::prepare_scene(&cfg, &base)?;
            let prov = Provenance::new(scene_hash(&scene), cfg.hash());
            let (v, _) = load_volume(&input, Some(&Provenance::new(prov.scene_hash.clone(), "")))?;
            let reference = pipeline::load_reference(&cfg, &base)?;
            let u = pipeline::stage_unmix(&v, &reference, cfg.sigmoid)?;
            create_dir(&out)?;
            pipeline::write_unmix_figures(&out, &scene, &cfg, &u, &prov)?;
        }
        Command::Depthfit { series, modality, floor, floor_std, out } => {
            let points = read_depth_points(&series)?;
            let modality = match modality {
                ModalityArg::Pa => Modality::Pa,
                ModalityArg::Nirf => Modality::Nirf,
            };
            let s = DepthSeries { modality, points, noise_floor_db: floor, noise_floor_std_db: floor_std, averaging_range_mm: None };
            let fit = fit_depth_decay(&s)?;
            create_dir(&out)?;
            pausim::volume::write_json(&out.join("depth_fit.json"), &fit)?;
            std::fs::write(out.join("depth_fit.svg"), depth_plot(&s, &fit).to_svg())?;
            match (fit.max_depth_mm, fit.max_depth_std_mm) {
                (Some(d), Some(sd)) => log::info!("slope {:.3} dB/mm, max depth {d:.1} ± {sd:.1} mm", fit.slope),
                (Some(d), None) => log::info!("slope {:.3} dB/mm, max depth {d:.1} mm", fit.slope),
                _ => log::info!("slope {:.3} dB/mm, no maximum depth (non-negative slope)", fit.slope),
            }
        }
        Command::Run { config, declutter, out } => {
            let (mut cfg, base) = config.load()?;
            if let Some(d) = declutter {
                cfg.declutter = d;
            }
            let report = pipeline::run_pipeline(&cfg, &base, &out)?;
            print_summary(&report);
        }
        Command::Report { dir } => {
            let report: Report = pausim::volume::read_json(&dir.join(pipeline::REPORT_FILE))?;
            print_summary(&report);
            let bad = pipeline::verify_outputs(&report, &dir)?;
            if !bad.is_empty() {
                for b in &bad {
                    eprintln!("checksum mismatch: {}", b.display());
                }
                bail!("{} output(s) do not match the report", bad.len());
            }
            if report.status != "ok" {
                bail!("run failed at stage {}", report.failed_stage.as_deref().unwrap_or("?"));
            }
        }
    }
    Ok(())
}

fn depth_plot(s: &DepthSeries, fit: &pausim::core::depth::DepthFit) -> Plot {
    let name = match s.modality {
        Modality::Pa => "PA",
        Modality::Nirf => "NIRF",
    };
    let d: Vec<f64> = s.points.iter().map(|p| p.depth_mm).collect();
    let y: Vec<f64> = s.points.iter().map(|p| p.signal_db).collect();
    let end = fit.max_depth_mm.unwrap_or(d[d.len() - 1]).max(d[d.len() - 1]);
    let mut data = Series::markers("measured", &d, &y, "#1f77b4");
    if s.points.iter().all(|p| p.std_db.is_some()) {
        data.err = Some(s.points.iter().map(|p| p.std_db.unwrap_or(0.0)).collect());
    }
    let mut floor = Series::line("noise floor", &[0.0, end], &[s.noise_floor_db; 2], "#bcbd22");
    floor.dashed = true;
    Plot {
        title: format!("{}: {:.2} dB/mm", name, fit.slope),
        x_label: "Depth (mm)".into(),
        y_label: "Signal (dB)".into(),
        series: vec![data, Series::line("fit", &[0.0, end], &[fit.intercept, fit.intercept + fit.slope * end], "#d62728"), floor],
    }
}

fn print_summary(r: &Report) {
    println!("{} | status {} | scene {} | config {}", r.build_id, r.status, &r.scene_hash[..r.scene_hash.len().min(12)], &r.config_hash[..12]);
    for f in &r.fits {
        match &f.entry.fit {
            Some(fit) => println!(
                "  {:>6.1} nm  mu_eff {:.4} (true {:.4})  mu_s' {:.3} (true {:.3})  pixels {}",
                f.entry.wavelength_nm, fit.mu_eff, f.true_mu_eff, fit.mu_s_prime, f.true_mu_s_prime, fit.n_pixels
            ),
            None => println!("  {:>6.1} nm  skipped", f.entry.wavelength_nm),
        }
    }
    if let Some(s) = &r.spectrum {
        println!(
            "  spectrum NCC original {:.5}, corrected {:.5}, max rel error {:.2}%",
            s.ncc_original,
            s.ncc_corrected,
            100.0 * s.max_relative_error
        );
    }
    if let Some(c) = &r.clutter {
        println!("  clutter/signal energy {:.1} dB plain, {:.1} dB configured", c.plain_db, c.configured_db);
    }
    for a in &r.absorbers {
        println!("  {:<8} peak {:.4e} compounded, {:.4e} weighted", a.id, a.peak_compounded, a.peak_weighted);
    }
}
