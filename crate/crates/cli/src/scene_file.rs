//! JSON scene documents.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use splineup::{Gaussian2D, Scene};

use crate::error::{CliError, Result};

pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianRecord {
    pub mean: [f64; 2],
    pub log_scale: [f64; 2],
    pub rotation: f64,
    pub opacity_logit: f64,
    pub color: [f64; 3],
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: u32,
    pub reference_resolution: [usize; 2],
    pub background: [f64; 3],
    pub gaussians: Vec<GaussianRecord>,
}

impl From<&Scene> for SceneFile {
    fn from(scene: &Scene) -> Self {
        Self {
            version: SCENE_VERSION,
            reference_resolution: [scene.reference_resolution.0, scene.reference_resolution.1],
            background: scene.background,
            gaussians: scene
                .gaussians
                .iter()
                .map(|g| GaussianRecord {
                    mean: g.mean,
                    log_scale: g.log_scale,
                    rotation: g.rotation,
                    opacity_logit: g.opacity_logit,
                    color: g.color,
                    depth: g.depth,
                })
                .collect(),
        }
    }
}

impl SceneFile {
    pub fn into_scene(self) -> Result<Scene> {
        if self.version != SCENE_VERSION {
            return Err(CliError::Invalid(format!(
                "unsupported scene version {} (expected {SCENE_VERSION})",
                self.version
            )));
        }
        let [w, h] = self.reference_resolution;
        let mut scene = Scene::new((w, h), self.background);
        scene.gaussians = self
            .gaussians
            .into_iter()
            .map(|g| Gaussian2D {
                mean: g.mean,
                log_scale: g.log_scale,
                rotation: g.rotation,
                opacity_logit: g.opacity_logit,
                color: g.color,
                depth: g.depth,
            })
            .collect();
        scene.validate()?;
        Ok(scene)
    }
}

pub fn parse_scene(text: &str, path: &Path) -> Result<Scene> {
    let file: SceneFile = serde_json::from_str(text).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    file.into_scene()
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_scene(&text, path)
}

pub fn scene_to_json(scene: &Scene) -> String {
    let mut text = serde_json::to_string_pretty(&SceneFile::from(scene)).expect("scene records always serialize");
    text.push('\n');
    text
}

pub fn save_scene(path: &Path, scene: &Scene) -> Result<()> {
    fs::write(path, scene_to_json(scene)).map_err(|e| CliError::io(path, e))
}
