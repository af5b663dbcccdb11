//! Reference shading used as ground truth: SH irradiance diffuse, Monte
//! Carlo Phong-lobe specular and a single shadow ray.

use rand::Rng as _;

use crate::cameras::Camera;
use crate::gaussians::sh::basis;
use crate::math::{self, Vec3};
use crate::rng;
use crate::tokenization::envmap::{texel_angles, texel_direction, EnvMap};

use super::scene::Scene;

/// Convolution weights of the clamped cosine for bands 0, 1, 2.
const IRRADIANCE_BANDS: [f64; 3] = [std::f64::consts::PI, 2.0 * std::f64::consts::PI / 3.0, std::f64::consts::PI / 4.0];
const SHADOW_FACTOR: f64 = 0.2;
pub const SPECULAR_SAMPLES: usize = 64;

/// Degree-2 SH projection `c_lm = Σ env·Y_lm·sinθ·ΔθΔφ`, per channel.
pub fn project_envmap_sh(env: &EnvMap) -> [[f64; 3]; 9] {
    let (h, w) = (env.height, env.width);
    let dtheta = std::f64::consts::PI / h as f64;
    let dphi = std::f64::consts::TAU / w as f64;
    let mut out = [[0.0; 3]; 9];
    for row in 0..h {
        let (theta, _) = texel_angles(row, 0, h, w);
        let wgt = theta.sin() * dtheta * dphi;
        for col in 0..w {
            let y = basis(texel_direction(row, col, h, w));
            let e = env.texel(row, col);
            for k in 0..9 {
                for c in 0..3 {
                    out[k][c] += e[c] * y[k] * wgt;
                }
            }
        }
    }
    out
}

/// Irradiance at normal `n` from degree-2 SH coefficients, clamped at 0.
pub fn irradiance(sh9: &[[f64; 3]; 9], n: Vec3) -> [f64; 3] {
    let y = basis(n);
    let mut e = [0.0; 3];
    for k in 0..9 {
        let band = if k == 0 { 0 } else if k < 4 { 1 } else { 2 };
        for c in 0..3 {
            e[c] += IRRADIANCE_BANDS[band] * sh9[k][c] * y[k];
        }
    }
    e.map(|v| v.max(0.0))
}

/// Environment lighting with its irradiance cache.
#[derive(Clone, Debug)]
pub struct Lighting {
    pub env: EnvMap,
    pub sh9: [[f64; 3]; 9],
    pub dominant: Vec3,
}

impl Lighting {
    pub fn new(env: EnvMap) -> Self {
        Self {
            sh9: project_envmap_sh(&env),
            dominant: env.dominant_direction(),
            env,
        }
    }
}

fn orthonormal_basis(n: Vec3) -> (Vec3, Vec3) {
    let a = if n[0].abs() > 0.9 { [0.0, 1.0, 0.0] } else { [1.0, 0.0, 0.0] };
    let t = math::normalize(math::cross(a, n));
    (t, math::cross(n, t))
}

/// Average environment radiance over a `cos^n` lobe around `r`, with
/// `samples` stratified draws.
pub fn phong_lobe(env: &EnvMap, r: Vec3, shininess: f64, samples: usize, rng: &mut rng::Rng) -> [f64; 3] {
    let side = (samples as f64).sqrt().ceil() as usize;
    let (t, b) = orthonormal_basis(r);
    let mut acc = [0.0; 3];
    let mut count = 0;
    'outer: for i in 0..side {
        for j in 0..side {
            if count == samples {
                break 'outer;
            }
            let u = (i as f64 + rng.random::<f64>()) / side as f64;
            let v = (j as f64 + rng.random::<f64>()) / side as f64;
            let cos_a = u.powf(1.0 / (shininess + 1.0));
            let sin_a = (1.0 - cos_a * cos_a).max(0.0).sqrt();
            let phi = std::f64::consts::TAU * v;
            let d = math::add(math::add(math::scale(t, sin_a * phi.cos()), math::scale(b, sin_a * phi.sin())), math::scale(r, cos_a));
            let e = env.lookup(d);
            for c in 0..3 {
                acc[c] += e[c];
            }
            count += 1;
        }
    }
    acc.map(|v| v / count as f64)
}

/// Linear HDR image (`H × W × 3`) of `scene` and its foreground mask.
/// Misses are black. Monte Carlo draws are seeded per pixel.
pub fn shade_reference(scene: &Scene, light: &Lighting, camera: &Camera, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let (w, h) = (camera.width, camera.height);
    let mut img = vec![0.0; w * h * 3];
    let mut mask = vec![false; w * h];
    let o = camera.position();
    for y in 0..h {
        for x in 0..w {
            let d = camera.ray_direction_at(x as f64 + 0.5, y as f64 + 0.5);
            let Some(hit) = scene.intersect(o, d, 1e-9) else { continue };
            let p = y * w + x;
            mask[p] = true;
            let prim = &scene.primitives[hit.primitive];
            let n = hit.normal;
            let mut diffuse = irradiance(&light.sh9, n).map(|e| e / std::f64::consts::PI);
            let l = light.dominant;
            if math::dot(n, l) > 0.0 && scene.occluded(math::add(hit.point, math::scale(n, 1e-6)), l) {
                diffuse = diffuse.map(|v| v * SHADOW_FACTOR);
            }
            let mut spec = [0.0; 3];
            if prim.specular > 0.0 {
                let r = math::sub(d, math::scale(n, 2.0 * math::dot(d, n)));
                let mut pr = rng::stream(seed, rng::label(&[p as u64]));
                spec = phong_lobe(&light.env, r, prim.shininess, SPECULAR_SAMPLES, &mut pr);
            }
            for c in 0..3 {
                img[3 * p + c] = prim.albedo[c] * diffuse[c] + prim.specular * spec[c];
            }
        }
    }
    (img, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_synth::envgen::{Blob, BlobLighting};
    use crate::data_synth::scene::{Primitive, Shape};
    use crate::gaussians::sh::Y00;

    fn sphere_scene(specular: f64, shininess: f64) -> Scene {
        Scene {
            primitives: vec![Primitive {
                shape: Shape::Sphere { center: [0.0; 3], radius: 0.6 },
                albedo: [1.0; 3],
                specular,
                shininess,
            }],
        }
    }

    fn camera() -> Camera {
        Camera::look_at([0.0, -2.7, 0.4], [0.0; 3], [0.0, 0.0, 1.0], 35.2, 32, 32).unwrap()
    }

    #[test]
    fn constant_map_projects_to_dc() {
        let mut leak = Vec::new();
        for (h, w) in [(32, 64), (64, 128)] {
            let sh = project_envmap_sh(&EnvMap::constant(w, h, 2.0));
            let expect = 2.0 * (4.0 * std::f64::consts::PI).sqrt();
            assert!((sh[0][0] - expect).abs() / expect < 1e-3);
            let worst = (1..9).map(|k| sh[k][1].abs()).fold(0.0, f64::max);
            assert!(worst < 2e-3 * expect);
            leak.push(worst);
        }
        assert!(leak[1] < 0.5 * leak[0]);
        assert!((Y00 * (4.0 * std::f64::consts::PI).sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_converges_with_resolution() {
        let light = BlobLighting {
            ambient: [0.2; 3],
            blobs: vec![Blob { direction: [0.3, 0.5, 0.81], sharpness: 10.0, intensity: 5.0, color: [1.0; 3] }],
        };
        let c = |h: usize| project_envmap_sh(&light.rasterize(h, 2 * h))[2][0];
        let (a, b, r) = (c(16), c(32), c(256));
        assert!((b - r).abs() < (a - r).abs());
    }

    #[test]
    fn odd_map_has_no_dc() {
        // radiance = 1 + z is even about nothing; its odd part z has zero mean
        let (h, w) = (32, 64);
        let mut env = EnvMap::constant(w, h, 0.0);
        for row in 0..h {
            for col in 0..w {
                let z = texel_direction(row, col, h, w)[2];
                for c in 0..3 {
                    env.radiance[(row * w + col) * 3 + c] = 1.0 + z;
                }
            }
        }
        let sh = project_envmap_sh(&env);
        let expect = (4.0 * std::f64::consts::PI).sqrt();
        assert!((sh[0][0] - expect).abs() / expect < 1e-3);
    }

    #[test]
    fn white_lambertian_sphere_under_constant_light() {
        let light = Lighting::new(EnvMap::constant(64, 32, 0.7));
        let (img, mask) = shade_reference(&sphere_scene(0.0, 16.0), &light, &camera(), 1);
        let mut seen = 0;
        for (p, &m) in mask.iter().enumerate() {
            if m {
                seen += 1;
                for c in 0..3 {
                    assert!((img[3 * p + c] - 0.7).abs() < 0.7 * 2e-3, "{}", img[3 * p + c]);
                }
            } else {
                assert_eq!(&img[3 * p..3 * p + 3], &[0.0; 3]);
            }
        }
        assert!(seen > 100);
    }

    #[test]
    fn sharp_lobe_approaches_mirror_lookup() {
        let env = BlobLighting {
            ambient: [0.3; 3],
            blobs: vec![Blob { direction: [0.0, 0.0, 1.0], sharpness: 4.0, intensity: 3.0, color: [1.0; 3] }],
        }
        .rasterize(32, 64);
        let mut r = rng::stream(2, 0);
        for dir in [[0.0, 0.0, 1.0], [0.6, 0.0, 0.8], [0.0, -1.0, 0.0]] {
            let lobe = phong_lobe(&env, dir, 256.0, SPECULAR_SAMPLES, &mut r);
            let mirror = env.lookup(dir);
            assert!((lobe[0] - mirror[0]).abs() < 0.1 * mirror[0]);
        }
    }

    #[test]
    fn empty_scene_is_black_and_shading_is_deterministic() {
        let light = Lighting::new(EnvMap::constant(64, 32, 1.0));
        let (img, mask) = shade_reference(&Scene::default(), &light, &camera(), 3);
        assert!(img.iter().all(|&v| v == 0.0) && mask.iter().all(|&m| !m));
        let scene = sphere_scene(0.5, 32.0);
        let env = crate::data_synth::envgen::gen_envmap(4);
        let l = Lighting::new(env);
        assert_eq!(shade_reference(&scene, &l, &camera(), 9), shade_reference(&scene, &l, &camera(), 9));
    }

    #[test]
    fn diffuse_shading_is_monotone_in_intensity() {
        let env = crate::data_synth::envgen::gen_envmap(6);
        let scene = sphere_scene(0.0, 16.0);
        let (a, mask) = shade_reference(&scene, &Lighting::new(env.clone()), &camera(), 1);
        let (b, _) = shade_reference(&scene, &Lighting::new(env.scaled(1.5)), &camera(), 1);
        for (p, &m) in mask.iter().enumerate() {
            if m {
                for c in 0..3 {
                    assert!(b[3 * p + c] > a[3 * p + c]);
                }
            }
        }
    }
}
