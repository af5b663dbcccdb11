//! HDR equirectangular environment maps and their tone-mapped features.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{pfm, RgbImage};
use crate::math::Vec3;

/// Floor applied inside the log tone mapper so exact zeros stay finite.
pub const LOG_FLOOR: f64 = 1e-6;

const HLG_A: f64 = 0.178_832_77;
const HLG_B: f64 = 0.284_668_92;
const HLG_C: f64 = 0.559_910_73;

/// Equirectangular radiance map, `height × width × 3`, row 0 at the zenith.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvMap {
    pub width: usize,
    pub height: usize,
    pub radiance: Vec<f64>,
}

impl EnvMap {
    pub fn new(width: usize, height: usize, radiance: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("environment map must be non-empty".into()));
        }
        if radiance.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{} radiance values for a {width}x{height} map",
                radiance.len()
            )));
        }
        if let Some(v) = radiance.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "radiance must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self { width, height, radiance })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height * 3]).expect("valid constant map")
    }

    #[inline]
    pub fn texel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.radiance[i], self.radiance[i + 1], self.radiance[i + 2]]
    }

    pub fn max_value(&self) -> f64 {
        self.radiance.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            radiance: self.radiance.iter().map(|v| v * s).collect(),
        }
    }

    /// Rounds every value through `f32`, the on-disk precision.
    pub fn quantized_f32(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            radiance: self.radiance.iter().map(|&v| v as f32 as f64).collect(),
        }
    }

    /// Nearest-texel radiance seen along world direction `dir` (unit).
    pub fn lookup(&self, dir: Vec3) -> [f64; 3] {
        let (row, col) = direction_to_texel(dir, self.height, self.width);
        self.texel(row, col)
    }

    /// Unit direction of the brightest texel (luminance), ties to the first.
    pub fn dominant_direction(&self) -> Vec3 {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for i in 0..self.width * self.height {
            let l = 0.2126 * self.radiance[i * 3] + 0.7152 * self.radiance[i * 3 + 1] + 0.0722 * self.radiance[i * 3 + 2];
            if l > best.0 {
                best = (l, i);
            }
        }
        texel_direction(best.1 / self.width, best.1 % self.width, self.height, self.width)
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.radiance.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_image(img: &RgbImage) -> Result<Self> {
        Self::new(img.width, img.height, img.data.iter().map(|&v| v as f64).collect())
    }

    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        pfm::write(path, &self.to_image())
    }

    pub fn read_pfm(path: &Path) -> Result<Self> {
        Self::from_image(&pfm::read(path)?).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Polar angle of row `i` and azimuth of column `j`.
#[inline]
pub fn texel_angles(row: usize, col: usize, height: usize, width: usize) -> (f64, f64) {
    let theta = (row as f64 + 0.5) / height as f64 * std::f64::consts::PI;
    let phi = (col as f64 + 0.5) / width as f64 * 2.0 * std::f64::consts::PI;
    (theta, phi)
}

#[inline]
pub fn texel_direction(row: usize, col: usize, height: usize, width: usize) -> Vec3 {
    let (theta, phi) = texel_angles(row, col, height, width);
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [st * cp, st * sp, ct]
}

pub fn direction_to_texel(dir: Vec3, height: usize, width: usize) -> (usize, usize) {
    let theta = dir[2].clamp(-1.0, 1.0).acos();
    let mut phi = dir[1].atan2(dir[0]);
    if phi < 0.0 {
        phi += 2.0 * std::f64::consts::PI;
    }
    let row = ((theta / std::f64::consts::PI) * height as f64).floor() as isize;
    let col = ((phi / (2.0 * std::f64::consts::PI)) * width as f64).floor() as isize;
    (
        row.clamp(0, height as isize - 1) as usize,
        col.rem_euclid(width as isize) as usize,
    )
}

/// Unit directions for every texel, `height × width × 3`.
pub fn envmap_ray_dirs(height: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(height * width * 3);
    for row in 0..height {
        for col in 0..width {
            out.extend_from_slice(&texel_direction(row, col, height, width));
        }
    }
    out
}

/// Hybrid log-gamma transfer function on `[0, 1]`.
pub fn hlg(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x <= 1.0 / 12.0 {
        (3.0 * x).sqrt()
    } else {
        HLG_A * (12.0 * x - HLG_B).ln() + HLG_C
    }
}

/// Dark-emphasis (`E1`, log) and bright-emphasis (`E2`, HLG) feature maps.
pub fn tonemap_envmap(env: &EnvMap) -> Result<(Vec<f64>, Vec<f64>)> {
    let max = env.max_value();
    if max <= 0.0 {
        return Err(Error::DegenerateLighting("environment map is all zero".into()));
    }
    let logs: Vec<f64> = env.radiance.iter().map(|&v| v.max(LOG_FLOOR).log10()).collect();
    let max_log = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // a map whose brightest texel is exactly 1 has max log 0
    let denom = if max_log.abs() > 1e-12 { max_log } else { 1.0 };
    let e1 = logs.iter().map(|&l| l / denom).collect();
    let e2 = env.radiance.iter().map(|&v| hlg(v / max)).collect();
    Ok((e1, e2))
}

/// The 9-channel `(E1, E2, D)` feature map fed to the light tokenizer.
pub fn light_features(env: &EnvMap) -> Result<Vec<f64>> {
    let (e1, e2) = tonemap_envmap(env)?;
    let dirs = envmap_ray_dirs(env.height, env.width);
    let mut out = Vec::with_capacity(env.width * env.height * 9);
    for i in 0..env.width * env.height {
        out.extend_from_slice(&e1[i * 3..i * 3 + 3]);
        out.extend_from_slice(&e2[i * 3..i * 3 + 3]);
        out.extend_from_slice(&dirs[i * 3..i * 3 + 3]);
    }
    Ok(out)
}

/// Horizontal rotation by `steps` columns and optional mirror.
pub fn augment_envmap(env: &EnvMap, rotation_steps: isize, flip: bool) -> EnvMap {
    let (w, h) = (env.width, env.height);
    let mut radiance = vec![0.0; env.radiance.len()];
    for row in 0..h {
        for col in 0..w {
            let shifted = (col as isize + rotation_steps).rem_euclid(w as isize) as usize;
            let dst = if flip { w - 1 - shifted } else { shifted };
            let s = (row * w + col) * 3;
            let d = (row * w + dst) * 3;
            radiance[d..d + 3].copy_from_slice(&env.radiance[s..s + 3]);
        }
    }
    EnvMap { width: w, height: h, radiance }
}
