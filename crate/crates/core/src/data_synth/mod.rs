//! Procedural training data: random scenes, blob environment maps,
//! analytic reference shading and per-scene lighting normalization.

pub mod dataset;
pub mod envgen;
pub mod normalize;
pub mod scene;
pub mod shading;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cameras::Camera;
use crate::error::{Error, Result};
use crate::io::RgbImage;
use crate::math::{self, Vec3};
use crate::rng;
use crate::tokenization::envmap::{augment_envmap, EnvMap};

pub use envgen::{gen_envmap, ENV_HEIGHT, ENV_WIDTH};
pub use normalize::{normalize_lighting, NormalizedLighting};
pub use scene::Scene;
pub use shading::{project_envmap_sh, shade_reference, Lighting};

/// Layout of a generated example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub image_size: usize,
    pub input_views: usize,
    pub denoise_views: usize,
    pub extra_views: usize,
    pub camera_radius: f64,
    /// Focal length in units of the image width.
    pub focal_scale: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            input_views: 4,
            denoise_views: 4,
            extra_views: 2,
            camera_radius: 2.7,
            focal_scale: 1.25,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.input_views == 0 || self.denoise_views == 0 {
            return Err(Error::Config("image_size, input_views and denoise_views must be positive".into()));
        }
        if !(self.camera_radius > 1.0) || !(self.focal_scale > 0.0) {
            return Err(Error::Config("camera_radius must exceed 1 and focal_scale be positive".into()));
        }
        Ok(())
    }

    pub fn target_views(&self) -> usize {
        self.denoise_views + self.extra_views
    }
}

/// A normalized environment map with its irradiance cache.
#[derive(Clone, Debug, PartialEq)]
pub struct LightingSample {
    pub env: EnvMap,
    pub scale_applied: f64,
    pub sh9: [[f64; 3]; 9],
}

impl LightingSample {
    pub fn new(env: EnvMap, scale_applied: f64) -> Self {
        Self { sh9: project_envmap_sh(&env), env, scale_applied }
    }
}

/// One scene seen under an input lighting and a target lighting.
///
/// Images are `views × H × W × 3` in `[0, 1]`, already quantized to 8 bits;
/// masks mark pixels covered by geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub seed: u64,
    pub size: usize,
    pub scene: Scene,
    pub input_cameras: Vec<Camera>,
    /// Denoising cameras followed by the extra supervision cameras.
    pub target_cameras: Vec<Camera>,
    pub denoise_views: usize,
    pub input_light: LightingSample,
    pub target_light: LightingSample,
    pub input_images: Vec<f64>,
    pub input_masks: Vec<bool>,
    pub target_images: Vec<f64>,
    pub target_masks: Vec<bool>,
}

impl Example {
    pub fn pixels(&self) -> usize {
        self.size * self.size
    }

    pub fn denoise_cameras(&self) -> &[Camera] {
        &self.target_cameras[..self.denoise_views]
    }

    pub fn extra_cameras(&self) -> &[Camera] {
        &self.target_cameras[self.denoise_views..]
    }

    pub fn input_image(&self, v: usize) -> &[f64] {
        let n = self.pixels() * 3;
        &self.input_images[v * n..(v + 1) * n]
    }

    pub fn target_image(&self, v: usize) -> &[f64] {
        let n = self.pixels() * 3;
        &self.target_images[v * n..(v + 1) * n]
    }

    pub fn target_mask(&self, v: usize) -> &[bool] {
        let n = self.pixels();
        &self.target_masks[v * n..(v + 1) * n]
    }

    /// First `denoise_views` target images, the diffusion variable.
    pub fn denoise_images(&self) -> &[f64] {
        &self.target_images[..self.denoise_views * self.pixels() * 3]
    }
}

/// Random camera on the sphere of `radius`, looking at the origin, kept
/// away from the poles so the up vector stays well defined.
pub fn random_camera(rng: &mut rng::Rng, radius: f64, size: usize, focal_scale: f64) -> Result<Camera> {
    let dir: Vec3 = loop {
        let d = envgen::random_direction(rng);
        if d[2].abs() < 0.9 {
            break d;
        }
    };
    let f = focal_scale * size as f64;
    Camera::look_at(math::scale(dir, radius), [0.0; 3], [0.0, 0.0, 1.0], f, size, size)
}

fn random_lighting(rng: &mut rng::Rng) -> EnvMap {
    let env = gen_envmap(rng.random());
    augment_envmap(&env, rng.random_range(0..ENV_WIDTH as i64) as isize, rng.random())
}

fn shade_views(scene: &Scene, light: &Lighting, cams: &[Camera], seed: u64, group: u64) -> (Vec<f64>, Vec<bool>) {
    let mut imgs = Vec::new();
    let mut masks = Vec::new();
    for (v, cam) in cams.iter().enumerate() {
        let (img, mask) = shade_reference(scene, light, cam, rng::label(&[seed, group, v as u64]));
        imgs.extend(img);
        masks.extend(mask);
    }
    (imgs, masks)
}

fn quantize_ldr(values: &[f64], size: usize, views: usize) -> Result<Vec<f64>> {
    let data = values.iter().map(|&v| v as f32).collect();
    let img = RgbImage::from_data(size, size * views, data)?.quantized_u8();
    Ok(img.data.iter().map(|&v| v as f64).collect())
}

/// Builds the example for `seed`: one scene, input views under one random
/// lighting and target views under another.
pub fn make_example(seed: u64, cfg: &DataConfig) -> Result<Example> {
    cfg.validate()?;
    let mut r = rng::stream(seed, rng::label(&[0xda7a]));
    let scene = Scene::random(&mut r);
    let env_a = random_lighting(&mut r);
    let env_b = random_lighting(&mut r);
    let size = cfg.image_size;
    let cams = (0..cfg.input_views + cfg.target_views())
        .map(|_| random_camera(&mut r, cfg.camera_radius, size, cfg.focal_scale))
        .collect::<Result<Vec<_>>>()?;
    let (input_cameras, target_cameras) = cams.split_at(cfg.input_views);

    let (hdr_a, input_masks) = shade_views(&scene, &Lighting::new(env_a.clone()), input_cameras, seed, 0);
    let (hdr_b, target_masks) = shade_views(&scene, &Lighting::new(env_b.clone()), target_cameras, seed, 1);
    let na = normalize_lighting(&env_a, &hdr_a)?;
    let nb = normalize_lighting(&env_b, &hdr_b)?;

    Ok(Example {
        seed,
        size,
        scene,
        input_cameras: input_cameras.to_vec(),
        target_cameras: target_cameras.to_vec(),
        denoise_views: cfg.denoise_views,
        input_light: LightingSample::new(na.env.quantized_f32(), na.scale),
        target_light: LightingSample::new(nb.env.quantized_f32(), nb.scale),
        input_images: quantize_ldr(&na.ldr, size, cfg.input_views)?,
        input_masks,
        target_images: quantize_ldr(&nb.ldr, size, cfg.target_views())?,
        target_masks,
    })
}
