//! Scene documents.

use std::fs;
use std::path::Path;

use pausim_core::phantom;
use pausim_core::scene::Scene;
use pausim_core::wavelengths::STUDY2;

use crate::error::{io_err, json_err};
use crate::hash::json_hash;
use crate::Result;

/// The bundled injected-agent phantom, as shipped in `data/phantom-study2.json`.
pub const STUDY2_JSON: &str = include_str!("../data/phantom-study2.json");

pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let scene: Scene = serde_json::from_str(&text).map_err(json_err(path))?;
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(path: &Path, scene: &Scene) -> Result<()> {
    let text = serde_json::to_string_pretty(scene).map_err(json_err(path))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Digest of the scene content, independent of file formatting.
pub fn scene_hash(scene: &Scene) -> String {
    json_hash(scene)
}

pub fn bundled_study2() -> Scene {
    serde_json::from_str(STUDY2_JSON).expect("bundled phantom parses")
}

/// Named phantoms available to the `phantom` subcommand.
pub fn named_phantom(name: &str) -> Option<Scene> {
    let cal = pausim_core::wavelengths::calibration();
    Some(match name {
        "study2" => phantom::study2(&STUDY2, 0.0, 1),
        "point" => phantom::point_target(8.0, 0.0, &STUDY2),
        "tube-agent" => phantom::tube(pausim_core::spectrum::synthetic::agent_table(), "agent", &cal),
        "tube-ref" => phantom::tube(pausim_core::spectrum::synthetic::reference_table(), "ref", &cal),
        "slab" => phantom::depth_slab(8.0, &[795.0], 0.0, 1),
        _ => return None,
    })
}

pub const PHANTOM_NAMES: [&str; 5] = ["study2", "point", "tube-agent", "tube-ref", "slab"];
