//! Procedural HDR environment maps made of spherical Gaussian blobs.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::math::{self, Vec3};
use crate::rng::{self, Rng};
use crate::tokenization::envmap::{texel_direction, EnvMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub direction: Vec3,
    /// Spherical Gaussian sharpness λ.
    pub sharpness: f64,
    pub intensity: f64,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobLighting {
    pub ambient: [f64; 3],
    pub blobs: Vec<Blob>,
}

impl BlobLighting {
    /// `ambient + Σ I_k c_k exp(λ_k (μ_k·ω - 1))`.
    pub fn radiance(&self, dir: Vec3) -> [f64; 3] {
        let mut out = self.ambient;
        for b in &self.blobs {
            let w = b.intensity * (b.sharpness * (math::dot(b.direction, dir) - 1.0)).exp();
            for c in 0..3 {
                out[c] += w * b.color[c];
            }
        }
        out
    }

    pub fn rasterize(&self, height: usize, width: usize) -> EnvMap {
        let mut radiance = Vec::with_capacity(height * width * 3);
        for row in 0..height {
            for col in 0..width {
                radiance.extend(self.radiance(texel_direction(row, col, height, width)));
            }
        }
        EnvMap::new(width, height, radiance).expect("blob map is finite and non-negative")
    }

    pub fn random(rng: &mut Rng) -> Self {
        let k = rng.random_range(1..=4);
        let amb = rng.random_range(0.05..0.3);
        let ambient = tint(rng).map(|t| amb * t);
        let blobs = (0..k)
            .map(|_| Blob {
                direction: random_direction(rng),
                sharpness: log_uniform(rng, 8.0, 200.0),
                intensity: rng.random_range(1.0..50.0),
                color: tint(rng),
            })
            .collect();
        Self { ambient, blobs }
    }
}

/// Mildly colored unit-max tint.
fn tint(rng: &mut Rng) -> [f64; 3] {
    let c: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.6..1.0));
    let m = c.iter().cloned().fold(0.0, f64::max);
    c.map(|v| v / m)
}

fn log_uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

pub fn random_direction(rng: &mut Rng) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

pub const ENV_HEIGHT: usize = 32;
pub const ENV_WIDTH: usize = 64;

/// Random blob map at 32×64.
pub fn gen_envmap(seed: u64) -> EnvMap {
    let mut r = rng::stream(seed, 0xe7);
    BlobLighting::random(&mut r).rasterize(ENV_HEIGHT, ENV_WIDTH)
}
