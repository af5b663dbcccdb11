//! On-disk dataset: one directory per example plus a top-level index.
//!
//! ```text
//! out/
//!   index.json            config, train and val example names
//!   scene_00000/
//!     manifest.json       seed, scene, cameras, scales, file names
//!     env_input.pfm       normalized input lighting
//!     env_target.pfm      normalized target lighting
//!     input_00.png ...    input views (8-bit, gamma-encoded)
//!     target_00.png ...   denoising views, then extra views
//!     input_mask_00.png   foreground masks, likewise for targets
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cameras::{Camera, CameraRecord};
use crate::error::{Error, Result};
use crate::io::{self, RgbImage};
use crate::rng;
use crate::tokenization::envmap::EnvMap;

use super::{make_example, DataConfig, Example, LightingSample, Scene};

pub const INDEX_FILE: &str = "index.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub seed: u64,
    pub config: DataConfig,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub image_size: usize,
    pub scene: Scene,
    pub denoise_views: usize,
    pub input_cameras: Vec<CameraRecord>,
    pub target_cameras: Vec<CameraRecord>,
    pub env_input: String,
    pub env_target: String,
    pub input_scale: f64,
    pub target_scale: f64,
    pub input_images: Vec<String>,
    pub input_masks: Vec<String>,
    pub target_images: Vec<String>,
    pub target_masks: Vec<String>,
}

/// Number of training examples for `k` scenes; the rest are validation.
pub fn train_count(k: usize) -> usize {
    k - k.div_ceil(8)
}

pub fn example_name(i: usize) -> String {
    format!("scene_{i:05}")
}

/// Seed of the `i`-th example of a dataset generated from `seed`.
pub fn example_seed(seed: u64, i: usize) -> u64 {
    rng::label(&[seed, i as u64])
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|v| format!("{prefix}_{v:02}.png")).collect()
}

fn split_images(data: &[f64], size: usize, views: usize) -> Vec<RgbImage> {
    let n = size * size * 3;
    (0..views)
        .map(|v| RgbImage {
            width: size,
            height: size,
            data: data[v * n..(v + 1) * n].iter().map(|&x| x as f32).collect(),
        })
        .collect()
}

fn mask_images(mask: &[bool], size: usize, views: usize) -> Vec<RgbImage> {
    let n = size * size;
    (0..views)
        .map(|v| RgbImage {
            width: size,
            height: size,
            data: mask[v * n..(v + 1) * n].iter().flat_map(|&m| [if m { 1.0 } else { 0.0 }; 3]).collect(),
        })
        .collect()
}

pub fn write_example(dir: &Path, ex: &Example) -> Result<()> {
    io::create_dir_all(dir)?;
    let nin = ex.input_cameras.len();
    let nt = ex.target_cameras.len();
    let manifest = Manifest {
        seed: ex.seed,
        image_size: ex.size,
        scene: ex.scene.clone(),
        denoise_views: ex.denoise_views,
        input_cameras: ex.input_cameras.iter().map(Camera::to_record).collect(),
        target_cameras: ex.target_cameras.iter().map(Camera::to_record).collect(),
        env_input: "env_input.pfm".into(),
        env_target: "env_target.pfm".into(),
        input_scale: ex.input_light.scale_applied,
        target_scale: ex.target_light.scale_applied,
        input_images: names("input", nin),
        input_masks: names("input_mask", nin),
        target_images: names("target", nt),
        target_masks: names("target_mask", nt),
    };
    ex.input_light.env.write_pfm(&dir.join(&manifest.env_input))?;
    ex.target_light.env.write_pfm(&dir.join(&manifest.env_target))?;
    let groups = [
        (&manifest.input_images, split_images(&ex.input_images, ex.size, nin)),
        (&manifest.input_masks, mask_images(&ex.input_masks, ex.size, nin)),
        (&manifest.target_images, split_images(&ex.target_images, ex.size, nt)),
        (&manifest.target_masks, mask_images(&ex.target_masks, ex.size, nt)),
    ];
    for (files, imgs) in groups {
        for (f, img) in files.iter().zip(&imgs) {
            io::png::write(&dir.join(f), img)?;
        }
    }
    io::write_json(&dir.join(MANIFEST_FILE), &manifest)
}

fn read_images(dir: &Path, files: &[String], size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(files.len() * size * size * 3);
    for f in files {
        let path = dir.join(f);
        let img = io::png::read(&path)?;
        if img.width != size || img.height != size {
            return Err(Error::format(&path, format!("expected {size}x{size}, got {}x{}", img.width, img.height)));
        }
        out.extend(img.data.iter().map(|&v| v as f64));
    }
    Ok(out)
}

fn read_masks(dir: &Path, files: &[String], size: usize) -> Result<Vec<bool>> {
    Ok(read_images(dir, files, size)?.chunks_exact(3).map(|px| px[0] > 0.5).collect())
}

fn read_envmap(path: &Path) -> Result<EnvMap> {
    EnvMap::read_pfm(path)
}

pub fn read_example(dir: &Path) -> Result<Example> {
    let m: Manifest = io::read_json(&dir.join(MANIFEST_FILE))?;
    let cams = |recs: &[CameraRecord]| recs.iter().map(Camera::from_record).collect::<Result<Vec<_>>>();
    let input_cameras = cams(&m.input_cameras)?;
    let target_cameras = cams(&m.target_cameras)?;
    if m.input_images.len() != input_cameras.len()
        || m.target_images.len() != target_cameras.len()
        || m.input_masks.len() != input_cameras.len()
        || m.target_masks.len() != target_cameras.len()
        || m.denoise_views > target_cameras.len()
    {
        return Err(Error::format(dir.join(MANIFEST_FILE), "view counts are inconsistent"));
    }
    m.scene.validate()?;
    let size = m.image_size;
    Ok(Example {
        seed: m.seed,
        size,
        input_light: LightingSample::new(read_envmap(&dir.join(&m.env_input))?, m.input_scale),
        target_light: LightingSample::new(read_envmap(&dir.join(&m.env_target))?, m.target_scale),
        input_images: read_images(dir, &m.input_images, size)?,
        input_masks: read_masks(dir, &m.input_masks, size)?,
        target_images: read_images(dir, &m.target_images, size)?,
        target_masks: read_masks(dir, &m.target_masks, size)?,
        scene: m.scene,
        input_cameras,
        target_cameras,
        denoise_views: m.denoise_views,
    })
}

/// Generates `k` examples in parallel and writes them with an index.
pub fn generate_dataset(out: &Path, k: usize, seed: u64, cfg: &DataConfig) -> Result<DatasetIndex> {
    if k == 0 {
        return Err(Error::InvalidArgument("scene count must be positive".into()));
    }
    cfg.validate()?;
    io::create_dir_all(out)?;
    (0..k).into_par_iter().try_for_each(|i| {
        let ex = make_example(example_seed(seed, i), cfg)?;
        write_example(&out.join(example_name(i)), &ex)
    })?;
    let all: Vec<String> = (0..k).map(example_name).collect();
    let nt = train_count(k);
    let index = DatasetIndex {
        seed,
        config: cfg.clone(),
        train: all[..nt].to_vec(),
        val: all[nt..].to_vec(),
    };
    io::write_json(&out.join(INDEX_FILE), &index)?;
    Ok(index)
}

/// A dataset directory opened through its index.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub index: DatasetIndex,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let index = io::read_json(&root.join(INDEX_FILE))?;
        Ok(Self { root: root.to_path_buf(), index })
    }

    fn load(&self, names: &[String]) -> Result<Vec<Example>> {
        names.par_iter().map(|n| read_example(&self.root.join(n))).collect()
    }

    pub fn load_train(&self) -> Result<Vec<Example>> {
        self.load(&self.index.train)
    }

    pub fn load_val(&self) -> Result<Vec<Example>> {
        self.load(&self.index.val)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DataConfig {
        DataConfig { image_size: 12, ..DataConfig::default() }
    }

    #[test]
    fn split_rule() {
        assert_eq!(train_count(8), 7);
        assert_eq!(train_count(1), 0);
        assert_eq!(train_count(9), 7);
        assert_eq!(train_count(256), 224);
    }

    #[test]
    fn example_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for seed in [0, 17, 99] {
            let ex = make_example(seed, &cfg()).unwrap();
            let path = dir.path().join(format!("ex{seed}"));
            write_example(&path, &ex).unwrap();
            assert_eq!(read_example(&path).unwrap(), ex);
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ia = generate_dataset(a.path(), 3, 5, &cfg()).unwrap();
        generate_dataset(b.path(), 3, 5, &cfg()).unwrap();
        assert_eq!(ia.train.len(), 2);
        assert_eq!(ia.val, vec![example_name(2)]);
        for n in ia.train.iter().chain(&ia.val) {
            for entry in std::fs::read_dir(a.path().join(n)).unwrap() {
                let entry = entry.unwrap();
                let other = b.path().join(n).join(entry.file_name());
                assert_eq!(std::fs::read(entry.path()).unwrap(), std::fs::read(other).unwrap());
            }
        }
        let ds = Dataset::open(a.path()).unwrap();
        assert_eq!(ds.load_val().unwrap()[0], make_example(example_seed(5, 2), &cfg()).unwrap());
    }

    #[test]
    fn corrupt_manifest_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        write_example(dir.path(), &make_example(1, &cfg()).unwrap()).unwrap();
        std::fs::write(dir.path().join(MANIFEST_FILE), "{\"seed\": 1}").unwrap();
        assert_eq!(read_example(dir.path()).unwrap_err().category(), "format");
    }
}
