//! Turning images, rays, environment maps and timesteps into tokens.
//!
//! Patch vectors are laid out as `(dy * p + dx) * channels + c`; tokens are
//! ordered view-major, then patch row, then patch column.

pub mod envmap;
pub mod tokenizers;

pub use envmap::{augment_envmap, envmap_ray_dirs, hlg, light_features, tonemap_envmap, EnvMap};
pub use tokenizers::{LightTokenizer, PatchTokenizer, TimestepEmbedder};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Mat;

/// Patch size of input-view tokens.
pub const INPUT_PATCH: usize = 8;
/// Patch size of noisy relit-view tokens.
pub const DENOISE_PATCH: usize = 16;
/// Patch size of light tokens.
pub const LIGHT_PATCH: usize = 8;
/// Image (3) plus Plücker (6) channels; also `(E1, E2, D)` for light.
pub const FEATURE_CHANNELS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenRole {
    InputView,
    Light,
    NoisyRelit,
    Timestep,
}

/// Source location of a token: `(view, patch row, patch col)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchOrigin {
    pub view: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug)]
pub struct TokenSequence<T> {
    pub tokens: Mat<T>,
    pub role: TokenRole,
    pub origins: Vec<PatchOrigin>,
}

impl<T: Real> TokenSequence<T> {
    pub fn len(&self) -> usize {
        self.tokens.rows
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows == 0
    }

    /// Same sequence with every token vector set to zero.
    pub fn zeroed(&self) -> Self {
        Self {
            tokens: Mat::zeros(self.tokens.rows, self.tokens.cols),
            role: self.role,
            origins: self.origins.clone(),
        }
    }
}

/// Number of tokens for `views` images of `height × width` at patch `p`.
pub fn token_count(views: usize, height: usize, width: usize, p: usize) -> Result<usize> {
    check_divisible(height, width, p)?;
    Ok(views * (height / p) * (width / p))
}

/// Tokens in the appearance-stack context: inputs, noisy views, light, and
/// one timestep token.
pub fn context_token_count(
    input: (usize, usize, usize),
    denoise: (usize, usize, usize),
    envmap: (usize, usize),
) -> Result<usize> {
    Ok(token_count(input.0, input.1, input.2, INPUT_PATCH)?
        + token_count(denoise.0, denoise.1, denoise.2, DENOISE_PATCH)?
        + token_count(1, envmap.0, envmap.1, LIGHT_PATCH)?
        + 1)
}

fn check_divisible(height: usize, width: usize, p: usize) -> Result<()> {
    if p == 0 || height % p != 0 || width % p != 0 || height == 0 || width == 0 {
        return Err(Error::Shape(format!(
            "{height}x{width} is not divisible into {p}x{p} patches"
        )));
    }
    Ok(())
}

pub fn patch_origins(views: usize, height: usize, width: usize, p: usize) -> Vec<PatchOrigin> {
    let mut out = Vec::with_capacity(views * (height / p) * (width / p));
    for view in 0..views {
        for row in 0..height / p {
            for col in 0..width / p {
                out.push(PatchOrigin { view, row, col });
            }
        }
    }
    out
}

/// `views × height × width × channels` field to a `tokens × (channels·p²)`
/// patch matrix.
pub fn patchify<T: Real>(field: &[T], views: usize, height: usize, width: usize, channels: usize, p: usize) -> Result<Mat<T>> {
    check_divisible(height, width, p)?;
    if field.len() != views * height * width * channels {
        return Err(Error::Shape(format!(
            "field of {} values is not {views}x{height}x{width}x{channels}",
            field.len()
        )));
    }
    let (gh, gw) = (height / p, width / p);
    let cols = channels * p * p;
    let mut out = Mat::zeros(views * gh * gw, cols);
    for v in 0..views {
        for pr in 0..gh {
            for pc in 0..gw {
                let t = (v * gh + pr) * gw + pc;
                let dst = out.row_mut(t);
                for dy in 0..p {
                    let src = ((v * height + pr * p + dy) * width + pc * p) * channels;
                    dst[dy * p * channels..(dy + 1) * p * channels].copy_from_slice(&field[src..src + p * channels]);
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Real>(patches: &Mat<T>, views: usize, height: usize, width: usize, channels: usize, p: usize) -> Result<Vec<T>> {
    check_divisible(height, width, p)?;
    let (gh, gw) = (height / p, width / p);
    if patches.rows != views * gh * gw || patches.cols != channels * p * p {
        return Err(Error::Shape(format!(
            "{}x{} patch matrix does not match a {views}x{gh}x{gw} grid of {channels}-channel {p}x{p} patches",
            patches.rows, patches.cols
        )));
    }
    let mut field = vec![T::zero(); views * height * width * channels];
    for v in 0..views {
        for pr in 0..gh {
            for pc in 0..gw {
                let src = patches.row((v * gh + pr) * gw + pc);
                for dy in 0..p {
                    let dst = ((v * height + pr * p + dy) * width + pc * p) * channels;
                    field[dst..dst + p * channels].copy_from_slice(&src[dy * p * channels..(dy + 1) * p * channels]);
                }
            }
        }
    }
    Ok(field)
}

/// Per-pixel concatenation of RGB and Plücker channels, one view at a time.
pub fn image_ray_features<T: Real>(images: &[f64], pluckers: &[f64]) -> Result<Vec<T>> {
    if images.len() % 3 != 0 || pluckers.len() != images.len() * 2 {
        return Err(Error::Shape(format!(
            "{} image values do not pair with {} Plücker values",
            images.len(),
            pluckers.len()
        )));
    }
    let pixels = images.len() / 3;
    let mut out = Vec::with_capacity(pixels * FEATURE_CHANNELS);
    for i in 0..pixels {
        out.extend(images[i * 3..i * 3 + 3].iter().map(|&v| T::lit(v)));
        out.extend(pluckers[i * 6..i * 6 + 6].iter().map(|&v| T::lit(v)));
    }
    Ok(out)
}

/// Sinusoidal embedding: `dim/2` sines followed by `dim/2` cosines with
/// geometric frequencies from 1 down to 1e-4.
pub fn sinusoidal_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let frac = if half > 1 { k as f64 / (half - 1) as f64 } else { 0.0 };
        let freq = (-(1e4f64).ln() * frac).exp();
        let angle = t as f64 * freq;
        out[k] = angle.sin();
        out[half + k] = angle.cos();
    }
    out
}
