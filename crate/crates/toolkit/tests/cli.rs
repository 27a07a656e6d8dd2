use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pausim::pipeline::{PipelineConfig, Report, REPORT_FILE};
use pausim::volume::{read_json, write_json};
use tempfile::TempDir;

fn pausim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pausim")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = pausim(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn report(dir: &Path) -> Report {
    read_json(&dir.join(REPORT_FILE)).unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

#[test]
fn version_prints_build_id() {
    let out = ok(&["--version"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), pausim::BUILD_ID);
}

#[test]
fn run_writes_every_figure_and_a_clean_report() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    ok(&["-q", "run", "--out", s(&out)]);
    let names = files(&out);
    for f in [
        "simulated.iq",
        "compensated.iq",
        "decluttered.iq",
        "fits.json",
        "report.json",
        "timings.json",
        "compensated.png",
        "decluttered.png",
        "weighted.png",
        "overlay.png",
        "ncc_map.png",
        "spectrum.svg",
        "spectrum.csv",
    ] {
        assert!(names.contains(&f.to_string()), "missing {f}");
    }
    for f in names.iter().filter(|f| f.ends_with(".iq") || f.ends_with(".png") || f.starts_with("spectrum.")) {
        if !f.ends_with(".json") {
            assert!(names.contains(&format!("{f}.json")), "no sidecar for {f}");
        }
    }
    let r = report(&out);
    assert_eq!(r.status, "ok");
    assert_eq!(r.build_id, pausim::BUILD_ID);
    assert_eq!(r.stages.iter().map(|s| s.name.as_str()).collect::<Vec<_>>(), ["scene", "simulate", "compensate", "declutter", "unmix"]);
    let timings: std::collections::BTreeMap<String, f64> = read_json(&out.join("timings.json")).unwrap();
    assert!(timings["total"] > 0.0);
    ok(&["-q", "report", "--dir", s(&out)]);
}

#[test]
fn rerunning_stages_from_persisted_volumes_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let full = tmp.path().join("full");
    let staged = tmp.path().join("staged");
    let cfg = data("config-study2.json");
    let cfg = s(&cfg);
    ok(&["-q", "run", "--config", cfg, "--out", s(&full)]);
    ok(&["-q", "simulate", "--config", cfg, "--out", s(&staged)]);
    ok(&["-q", "compensate", "--config", cfg, "--input", s(&full.join("simulated.iq")), "--out", s(&staged)]);
    ok(&["-q", "declutter", "--config", cfg, "--input", s(&full.join("compensated.iq")), "--out", s(&staged)]);
    ok(&["-q", "unmix", "--config", cfg, "--input", s(&full.join("decluttered.iq")), "--out", s(&staged)]);
    let names = files(&staged);
    assert_eq!(names.len(), 13);
    for f in names {
        assert_eq!(fs::read(staged.join(&f)).unwrap(), fs::read(full.join(&f)).unwrap(), "{f} differs");
    }
}

#[test]
fn loaders_reject_volumes_from_another_scene() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("a");
    ok(&["-q", "simulate", "--out", s(&out)]);
    let mut cfg = PipelineConfig::study2();
    cfg.seed = Some(99);
    let cfg_path = tmp.path().join("other.json");
    write_json(&cfg_path, &cfg).unwrap();
    let r = pausim(&["-q", "compensate", "--config", s(&cfg_path), "--input", s(&out.join("simulated.iq")), "--out", s(&tmp.path().join("b"))]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("scene hash mismatch"));
}

#[test]
fn declutter_off_leaves_clutter_and_on_removes_it() {
    let tmp = TempDir::new().unwrap();
    let (off, on) = (tmp.path().join("off"), tmp.path().join("on"));
    ok(&["-q", "run", "--declutter", "off", "--out", s(&off)]);
    ok(&["-q", "run", "--declutter", "p=0.25", "--out", s(&on)]);
    let c_off = report(&off).clutter.unwrap();
    let c_on = report(&on).clutter.unwrap();
    assert_eq!(c_off.configured_db, c_off.plain_db);
    assert!(c_on.configured_db < c_off.configured_db - 30.0, "{c_on:?} vs {c_off:?}");
    assert!(pausim(&["run", "--declutter", "p=2", "--out", s(&tmp.path().join("bad"))]).status.code() != Some(0));
}

#[test]
fn failed_stage_is_marked_and_partial_outputs_kept() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = PipelineConfig::study2();
    cfg.spectrum_pixel_mm = [40.0, 8.0];
    let cfg_path = tmp.path().join("cfg.json");
    write_json(&cfg_path, &cfg).unwrap();
    let out = tmp.path().join("run");
    let r = pausim(&["-q", "run", "--config", s(&cfg_path), "--out", s(&out)]);
    assert!(!r.status.success());
    let rep = report(&out);
    assert_eq!(rep.status, "failed");
    assert_eq!(rep.failed_stage.as_deref(), Some("unmix"));
    assert!(rep.error.unwrap().contains("outside the grid"));
    assert!(out.join("decluttered.iq").exists());
    assert!(!pausim(&["-q", "report", "--dir", s(&out)]).status.success());

    cfg.scene = "missing.json".into();
    write_json(&cfg_path, &cfg).unwrap();
    assert!(!pausim(&["-q", "run", "--config", s(&cfg_path), "--out", s(&out)]).status.success());
    assert_eq!(report(&out).failed_stage.as_deref(), Some("scene"));
}

#[test]
fn report_detects_tampered_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    ok(&["-q", "run", "--out", s(&out)]);
    let p = out.join("fits.json");
    let mut text = fs::read_to_string(&p).unwrap();
    text.push(' ');
    fs::write(&p, text).unwrap();
    let r = pausim(&["report", "--dir", s(&out)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("fits.json"));
}

#[test]
fn calibrate_recovers_the_agent_from_simulated_tubes() {
    let tmp = TempDir::new().unwrap();
    let t = |n: &str| tmp.path().join(n);
    ok(&["-q", "phantom", "--name", "tube-agent", "--out", s(&t("agent.json"))]);
    ok(&["-q", "phantom", "--name", "tube-ref", "--out", s(&t("ref.json"))]);
    ok(&["-q", "simulate", "--scene", s(&t("agent.json")), "--out", s(&t("a"))]);
    ok(&["-q", "simulate", "--scene", s(&t("ref.json")), "--out", s(&t("r"))]);
    let (alpha, total) = (data("reference-absorber.csv"), data("agent-total.csv"));
    ok(&[
        "-q",
        "calibrate",
        "--agent",
        s(&t("a/simulated.iq")),
        "--reference",
        s(&t("r/simulated.iq")),
        "--alpha-ref",
        s(&alpha),
        "--roi",
        "32,60",
        "--noise-roi",
        "1,141",
        "--total",
        s(&total),
        "--out",
        s(&t("out")),
    ]);
    let got = pausim::table::read_spectrum(&t("out/agent_spectrum.csv"), pausim::core::spectrum::SpectrumUnit::PerCm).unwrap();
    for (w, v) in got.wavelengths.iter().zip(&got.values) {
        let truth = pausim::core::spectrum::synthetic::agent(*w);
        assert!((v / truth - 1.0).abs() < 0.01, "{w} nm: {v} vs {truth}");
    }
    let rad = pausim::table::read_spectrum(&t("out/radiative_spectrum.csv"), pausim::core::spectrum::SpectrumUnit::PerCm).unwrap();
    assert!(rad.values.iter().all(|&v| v > 0.0));
}

#[test]
fn depthfit_writes_report_and_plot() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("series.csv");
    let rows: String = (1..=10).map(|k| format!("{},{},0.5\n", 2 * k, 17.12 - 0.41 * (2 * k) as f64)).collect();
    fs::write(&csv, format!("depth_mm,signal_db,std_db\n{rows}")).unwrap();
    let out = tmp.path().join("fit");
    ok(&["-q", "depthfit", "--series", s(&csv), "--modality", "pa", "--floor", "3.18", "--out", s(&out)]);
    let fit: pausim::core::depth::DepthFit = read_json(&out.join("depth_fit.json")).unwrap();
    assert!((fit.max_depth_mm.unwrap() - 34.0).abs() < 1e-9);
    let svg = fs::read_to_string(out.join("depth_fit.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("PA: -0.41 dB/mm"));
}

#[test]
fn phantom_names_round_trip_through_files() {
    let tmp = TempDir::new().unwrap();
    for name in pausim::scene_io::PHANTOM_NAMES {
        let p = tmp.path().join(format!("{name}.json"));
        ok(&["-q", "phantom", "--name", name, "--out", s(&p)]);
        assert_eq!(pausim::scene_io::load_scene(&p).unwrap(), pausim::scene_io::named_phantom(name).unwrap());
    }
    assert!(!pausim(&["phantom", "--name", "nope", "--out", s(&tmp.path().join("x.json"))]).status.success());
    let p = tmp.path().join("study2.json");
    assert_eq!(fs::read_to_string(p).unwrap(), pausim::scene_io::STUDY2_JSON);
}
