pub mod ablate;
pub mod eval;
pub mod figure1;
pub mod mesh;
pub mod render;
pub mod scene_validate;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};
use srdflab_core::scene::load_scene;
use srdflab_core::{Scene, Vec3};

/// "ghost" and "room" are compiled in; anything else is a scene JSON path.
pub fn load_scene_arg(arg: &str) -> Result<Scene> {
    match arg {
        "ghost" => Ok(Scene::ghost()),
        "room" => Ok(Scene::room()),
        path => load_scene(Path::new(path)).with_context(|| format!("loading scene {path}")),
    }
}

/// clap value parser for "x,y,z".
pub fn parse_vec3(text: &str) -> Result<Vec3, String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got {text:?}"));
    }
    let mut v = [0.0f64; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .trim()
            .parse()
            .map_err(|_| format!("bad coordinate {p:?} in {text:?}"))?;
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}
