//! Scene-level lighting normalization: energy rescaling of the map and
//! images, 1/99-percentile min-max normalization and gamma.

use crate::error::{Error, Result};
use crate::tokenization::envmap::{texel_angles, EnvMap};

use super::envgen::{ENV_HEIGHT, ENV_WIDTH};

pub const GAMMA: f64 = 2.2;
pub const LOW_PERCENTILE: f64 = 1.0;
pub const HIGH_PERCENTILE: f64 = 99.0;

/// `Σ_pixels,channels env · sin θ_row`.
pub fn weighted_energy(env: &EnvMap) -> f64 {
    let mut total = 0.0;
    for row in 0..env.height {
        let (theta, _) = texel_angles(row, 0, env.height, env.width);
        let s = theta.sin();
        let row_sum: f64 = env.radiance[row * env.width * 3..(row + 1) * env.width * 3].iter().sum();
        total += row_sum * s;
    }
    total
}

/// Target energy: that of a unit constant map at 32×64.
pub fn constant_energy() -> f64 {
    weighted_energy(&EnvMap::constant(ENV_WIDTH, ENV_HEIGHT, 1.0))
}

/// Linear-interpolated percentile of unsorted data (`q` in percent).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

fn percentile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let f = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * f
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedLighting {
    pub env: EnvMap,
    /// Input images multiplied by `scale`.
    pub hdr_scaled: Vec<f64>,
    /// Tonemapped images in `[0, 1]`.
    pub ldr: Vec<f64>,
    pub scale: f64,
}

/// Normalizes an environment map and the HDR images rendered under it.
pub fn normalize_lighting(env: &EnvMap, hdr_images: &[f64]) -> Result<NormalizedLighting> {
    let energy = weighted_energy(env);
    if !(energy > 0.0) || !energy.is_finite() {
        return Err(Error::DegenerateLighting(format!("environment map has weighted energy {energy}")));
    }
    let scale = constant_energy() / energy;
    let env = env.scaled(scale);
    let hdr_scaled: Vec<f64> = hdr_images.iter().map(|&v| v * scale).collect();
    let mut sorted = hdr_scaled.clone();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&sorted, LOW_PERCENTILE);
    let hi = percentile_sorted(&sorted, HIGH_PERCENTILE);
    let range = hi - lo;
    let degenerate = !(range > 1e-12 * hi.abs().max(1e-300));
    let ldr = hdr_scaled
        .iter()
        .map(|&v| {
            let x = if degenerate { 0.5 } else { ((v - lo) / range).clamp(0.0, 1.0) };
            x.powf(1.0 / GAMMA)
        })
        .collect();
    Ok(NormalizedLighting { env, hdr_scaled, ldr, scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_synth::envgen::gen_envmap;
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn uniform_map_scale_matches_direct_sum() {
        let v = 3.0;
        let n = normalize_lighting(&EnvMap::constant(64, 32, v), &[1.0, 2.0]).unwrap();
        let sines: f64 = (0..32).map(|i| ((i as f64 + 0.5) * std::f64::consts::PI / 32.0).sin()).sum();
        let c = constant_energy();
        assert!((n.scale - c / (3.0 * v * 64.0 * sines)).abs() < 1e-15);
        assert!((c - 3.0 * 64.0 * sines).abs() < 1e-9);
    }

    #[test]
    fn percentile_matches_linear_interpolation() {
        let v: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&v, 1.0), 1.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert!((percentile(&[0.0, 10.0], 25.0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn constant_images_map_to_mid_gray() {
        let n = normalize_lighting(&gen_envmap(1), &[0.4; 30]).unwrap();
        for v in n.ldr {
            assert!((v - 0.5f64.powf(1.0 / 2.2)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_map_is_rejected() {
        let err = normalize_lighting(&EnvMap::constant(64, 32, 0.0), &[1.0]).unwrap_err();
        assert_eq!(err.category(), "degenerate-lighting");
    }

    #[test]
    fn scale_invariant_and_idempotent() {
        let env = gen_envmap(7);
        let mut r = rng::stream(7, 1);
        let imgs: Vec<f64> = (0..600).map(|_| r.random_range(0.0..4.0)).collect();
        let base = normalize_lighting(&env, &imgs).unwrap();
        for s in [0.1, 10.0] {
            let pre: Vec<f64> = imgs.iter().map(|v| v * s).collect();
            let n = normalize_lighting(&env.scaled(s), &pre).unwrap();
            for (a, b) in n.env.radiance.iter().zip(&base.env.radiance) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
            for (a, b) in n.ldr.iter().zip(&base.ldr) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
        let twice = normalize_lighting(&base.env, &base.hdr_scaled).unwrap();
        assert!((twice.scale - 1.0).abs() < 1e-12);
        for (a, b) in twice.ldr.iter().zip(&base.ldr) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}
