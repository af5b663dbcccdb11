//! Posed view directories accepted by `relight`.
//!
//! Either a scene directory written by `gen-data` (its input views are
//! relit at its denoising cameras) or a directory with `views.json`:
//!
//! ```json
//! { "views":   [ { "image": "a.png", "camera": { ... } } ],
//!   "targets": [ { ... } ] }
//! ```
//!
//! `targets` is optional and defaults to the input cameras.

use std::path::Path;

use relit_core::cameras::{Camera, CameraRecord};
use relit_core::data_synth::dataset::{read_example, MANIFEST_FILE};
use relit_core::io::{self, png};
use relit_core::model::ViewSet;
use relit_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const VIEWS_FILE: &str = "views.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub image: String,
    pub camera: CameraRecord,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewsFile {
    pub views: Vec<ViewEntry>,
    #[serde(default)]
    pub targets: Option<Vec<CameraRecord>>,
}

/// Input views and the cameras to denoise at.
pub fn load_views(dir: &Path) -> Result<(ViewSet, Vec<Camera>)> {
    if dir.join(MANIFEST_FILE).exists() {
        let ex = read_example(dir)?;
        let targets = ex.denoise_cameras().to_vec();
        return Ok((ViewSet::new(ex.input_images, ex.input_cameras)?, targets));
    }
    let path = dir.join(VIEWS_FILE);
    if !path.exists() {
        return Err(Error::InvalidArgument(format!(
            "{} has neither {MANIFEST_FILE} nor {VIEWS_FILE}",
            dir.display()
        )));
    }
    let file: ViewsFile = io::read_json(&path)?;
    if file.views.is_empty() {
        return Err(Error::format(&path, "no views listed"));
    }
    let mut images = Vec::new();
    let mut cameras = Vec::new();
    for v in &file.views {
        let cam = Camera::from_record(&v.camera)?;
        let img = png::read(&dir.join(&v.image))?;
        if img.width != cam.width || img.height != cam.height {
            return Err(Error::Shape(format!(
                "{} is {}x{} but its camera is {}x{}",
                v.image, img.width, img.height, cam.width, cam.height
            )));
        }
        images.extend(img.data.iter().map(|&x| x as f64));
        cameras.push(cam);
    }
    let targets = match &file.targets {
        Some(recs) => recs.iter().map(Camera::from_record).collect::<Result<Vec<_>>>()?,
        None => cameras.clone(),
    };
    Ok((ViewSet::new(images, cameras)?, targets))
}
