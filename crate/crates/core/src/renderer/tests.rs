use super::*;
use crate::gaussians::sh::{SH_BASIS, SH_COEFFS, Y00};
use crate::rng;
use rand::Rng as _;

fn front_camera(size: usize) -> Camera {
    Camera::look_at([0.0, -2.7, 0.0], [0.0; 3], [0.0, 0.0, 1.0], 1.1 * size as f64, size, size).unwrap()
}

fn gray_sh(level: f64) -> [f64; SH_COEFFS] {
    let mut sh = [0.0; SH_COEFFS];
    for c in 0..3 {
        sh[c * SH_BASIS] = level / Y00;
    }
    sh
}

/// Gaussian centered exactly on the center of pixel `(x, y)`.
fn on_pixel(cam: &Camera, x: usize, y: usize, depth: f64) -> [f64; 3] {
    let d = cam.ray_direction_at(x as f64 + 0.5, y as f64 + 0.5);
    let f = cam.rotation();
    let fwd = [f[0][2], f[1][2], f[2][2]];
    let t = depth / crate::math::dot(d, fwd);
    crate::math::add(cam.position(), crate::math::scale(d, t))
}

fn random_scene(n: usize, seed: u64) -> GaussianSet<f64> {
    let mut r = rng::stream(seed, 0);
    let mut g = GaussianSet::with_capacity(n);
    for _ in 0..n {
        let pos = [r.random_range(-0.4..0.4), r.random_range(-0.4..0.4), r.random_range(-0.4..0.4)];
        let scale = [r.random_range(0.06..0.2), r.random_range(0.06..0.2), r.random_range(0.06..0.2)];
        let q: [f64; 4] = std::array::from_fn(|_| rng::normal(&mut r));
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut sh = [0.0; SH_COEFFS];
        for c in 0..3 {
            sh[c * SH_BASIS] = r.random_range(0.3..0.8) / Y00;
            for k in 1..SH_BASIS {
                sh[c * SH_BASIS + k] = r.random_range(-0.05..0.05);
            }
        }
        g.push(pos, scale, q.map(|v| v / qn), r.random_range(0.3..0.8), &sh);
    }
    g
}

#[test]
fn empty_set_renders_background() {
    let cam = front_camera(8);
    let target = RenderTarget::for_camera(&cam, [0.2, 0.4, 0.6]);
    let out = render(&GaussianSet::<f64>::zeros(0), &cam, &target, &RenderOptions::default()).unwrap();
    for px in out.color.chunks(3) {
        assert_eq!(px, &[0.2, 0.4, 0.6]);
    }
    assert!(out.alpha.iter().all(|&a| a == 0.0));
}

#[test]
fn full_coverage_gives_splat_color() {
    let cam = front_camera(8);
    let mut g = GaussianSet::with_capacity(1);
    g.push(on_pixel(&cam, 3, 4, 2.7), [0.2; 3], [1.0, 0.0, 0.0, 0.0], 1.0, &gray_sh(0.7));
    let opts = RenderOptions { alpha_max: 1.0, ..RenderOptions::default() };
    let target = RenderTarget::for_camera(&cam, [0.1, 0.1, 0.1]);
    let out = render(&g, &cam, &target, &opts).unwrap();
    let p = (4 * 8 + 3) * 3;
    for k in 0..3 {
        assert!((out.color[p + k] - 0.7).abs() < 1e-12);
    }
}

#[test]
fn two_half_transparent_splats() {
    let cam = front_camera(8);
    let mut g = GaussianSet::with_capacity(2);
    // back splat inserted first to exercise sorting
    g.push(on_pixel(&cam, 2, 2, 3.0), [0.05; 3], [1.0, 0.0, 0.0, 0.0], 0.5, &gray_sh(0.0));
    g.push(on_pixel(&cam, 2, 2, 2.5), [0.05; 3], [1.0, 0.0, 0.0, 0.0], 0.5, &gray_sh(1.0));
    let target = RenderTarget::for_camera(&cam, [0.0; 3]);
    let out = render(&g, &cam, &target, &RenderOptions::default()).unwrap();
    let p = (2 * 8 + 2) * 3;
    assert!((out.color[p] - 0.5).abs() < 1e-12, "{}", out.color[p]);
}

#[test]
fn opacity_gradient_of_sole_splat() {
    let cam = front_camera(8);
    let mut g = GaussianSet::with_capacity(1);
    g.push(on_pixel(&cam, 5, 1, 2.7), [0.02; 3], [1.0, 0.0, 0.0, 0.0], 0.5, &gray_sh(0.8));
    let bg = [0.25; 3];
    let target = RenderTarget::for_camera(&cam, bg);
    let (_, cache) = rasterize(&g, &cam, &target, &RenderOptions::default()).unwrap();
    let mut up = vec![0.0; 8 * 8 * 3];
    up[(8 + 5) * 3] = 1.0;
    let grads = rasterize_backward(&g, &cache, &up).unwrap();
    assert!((grads.opacities[0] - (0.8 - 0.25)).abs() < 1e-12, "{}", grads.opacities[0]);
}

#[test]
fn weights_sum_to_one_and_output_is_bounded() {
    let cam = front_camera(16);
    let mut g = random_scene(8, 4);
    for c in g.sh.chunks_mut(SH_COEFFS) {
        c.copy_from_slice(&gray_sh(1.0));
    }
    let target = RenderTarget::for_camera(&cam, [1.0; 3]);
    let out = render(&g, &cam, &target, &RenderOptions::default()).unwrap();
    assert!(out.color.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    let g = random_scene(8, 4);
    let target = RenderTarget::for_camera(&cam, [0.3; 3]);
    let out = render(&g, &cam, &target, &RenderOptions::default()).unwrap();
    let max_color = 0.9;
    assert!(out.color.iter().all(|&v| (0.0..=max_color).contains(&v)));
}

#[test]
fn linear_in_sh_without_clamp() {
    let cam = front_camera(16);
    let a = random_scene(6, 5);
    let mut r = rng::stream(6, 0);
    let b = a.with_sh((0..a.sh.len()).map(|_| rng::normal(&mut r)).collect()).unwrap();
    let sum = a.with_sh(a.sh.iter().zip(&b.sh).map(|(x, y)| x + y).collect()).unwrap();
    let opts = RenderOptions { clamp_colors: false, ..RenderOptions::default() };
    let target = RenderTarget::for_camera(&cam, [0.0; 3]);
    let ra = render(&a, &cam, &target, &opts).unwrap();
    let rb = render(&b, &cam, &target, &opts).unwrap();
    let rs = render(&sum, &cam, &target, &opts).unwrap();
    for i in 0..rs.color.len() {
        assert!((rs.color[i] - ra.color[i] - rb.color[i]).abs() < 1e-9);
    }
}

#[test]
fn rendering_and_gradients_are_deterministic() {
    let cam = front_camera(16);
    let mut g = random_scene(8, 7);
    // coincident depths exercise the index tie-break
    let p = g.position(0);
    g.positions[3..6].copy_from_slice(&p);
    let target = RenderTarget::for_camera(&cam, [0.1; 3]);
    let (o1, c1) = rasterize(&g, &cam, &target, &RenderOptions::default()).unwrap();
    let (o2, c2) = rasterize(&g, &cam, &target, &RenderOptions::default()).unwrap();
    assert_eq!(o1, o2);
    let up: Vec<f64> = (0..o1.color.len()).map(|i| (i % 7) as f64 * 0.1).collect();
    let g1 = rasterize_backward(&g, &c1, &up).unwrap();
    let g2 = rasterize_backward(&g, &c2, &up).unwrap();
    assert_eq!(g1, g2);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let cam = front_camera(16);
    let g = random_scene(8, 8);
    let target = RenderTarget::for_camera(&cam, [0.1; 3]);
    let (out, cache) = rasterize(&g, &cam, &target, &RenderOptions::default()).unwrap();
    let grads = rasterize_backward(&g, &cache, &vec![0.0; out.color.len()]).unwrap();
    assert!(grads.positions.iter().chain(&grads.scales).chain(&grads.rotations).chain(&grads.opacities).chain(&grads.sh).all(|&v| v == 0.0));
}

#[test]
fn gradients_match_finite_differences() {
    let cam = front_camera(16);
    let g = random_scene(8, 11);
    let target = RenderTarget::for_camera(&cam, [0.2, 0.1, 0.3]);
    let opts = RenderOptions::default();
    let mut r = rng::stream(12, 0);
    let up: Vec<f64> = (0..16 * 16 * 3).map(|_| rng::normal(&mut r)).collect();
    let loss = |g: &GaussianSet<f64>| -> f64 { render(g, &cam, &target, &opts).unwrap().color.iter().zip(&up).map(|(a, b)| a * b).sum() };
    let (_, cache) = rasterize(&g, &cam, &target, &opts).unwrap();
    let grads = rasterize_backward(&g, &cache, &up).unwrap();
    let h = 1e-4;
    let mut worst = 0.0f64;
    let fields: [(fn(&mut GaussianSet<f64>) -> &mut Vec<f64>, fn(&GaussianSet<f64>) -> &Vec<f64>); 5] = [
        (|g| &mut g.positions, |g| &g.positions),
        (|g| &mut g.scales, |g| &g.scales),
        (|g| &mut g.rotations, |g| &g.rotations),
        (|g| &mut g.opacities, |g| &g.opacities),
        (|g| &mut g.sh, |g| &g.sh),
    ];
    for (field_mut, field) in fields {
        let n = field(&g).len();
        for i in (0..n).step_by(if n > 100 { 7 } else { 1 }) {
            let mut gp = g.clone();
            field_mut(&mut gp)[i] += h;
            let mut gm = g.clone();
            field_mut(&mut gm)[i] -= h;
            let num = (loss(&gp) - loss(&gm)) / (2.0 * h);
            let ana = field(&grads)[i];
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(rel < 1e-3, "index {i}: analytic {ana} numeric {num}");
        }
    }
    assert!(worst < 1e-3);
}

/// Composites every projected splat at every pixel, with no binning.
fn brute_force<T: Real>(cache: &RenderCache<T>, background: [T; 3]) -> Vec<T> {
    let (w, h) = (cache.camera.width, cache.camera.height);
    let mut out = vec![T::zero(); w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (T::lit(x as f64 + 0.5), T::lit(y as f64 + 0.5));
            let mut acc = [T::zero(); 3];
            let mut trans = T::one();
            for s in cache.splats() {
                let (dx, dy) = (px - s.mean2d[0], py - s.mean2d[1]);
                let power = T::lit(-0.5) * (s.conic[0] * dx * dx + T::lit(2.0) * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
                if power < s.min_power {
                    continue;
                }
                if let Some(c) = lane_alpha(s, power, px, py, &cache.opts) {
                    for k in 0..3 {
                        acc[k] += s.color[k] * (c.alpha * trans);
                    }
                    trans *= T::one() - c.alpha;
                    if trans < T::lit(cache.opts.min_transmittance) {
                        break;
                    }
                }
            }
            for k in 0..3 {
                out[(y * w + x) * 3 + k] = acc[k] + background[k] * trans;
            }
        }
    }
    out
}

fn elongated_scene(n: usize, seed: u64) -> GaussianSet<f64> {
    let mut g = random_scene(n, seed);
    let mut r = rng::stream(seed, 1);
    for s in g.scales.chunks_exact_mut(3) {
        s[r.random_range(0..3)] *= r.random_range(2.0..5.0);
        s[r.random_range(0..3)] *= r.random_range(0.05..0.5);
    }
    g
}

#[test]
fn tile_binning_matches_brute_force_compositing() {
    let cam = Camera::look_at([0.4, -2.6, 0.5], [0.0; 3], [0.0, 0.0, 1.0], 40.0, 37, 29).unwrap();
    let bg = [0.1, 0.2, 0.3];
    let target = RenderTarget::for_camera(&cam, bg);
    for seed in 0..3 {
        let g = elongated_scene(300, seed);
        let (out, cache) = rasterize(&g, &cam, &target, &RenderOptions::default()).unwrap();
        let bf = brute_force(&cache, bg);
        let worst = out.color.iter().zip(&bf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert_eq!(worst, 0.0, "seed {seed}");
        let g32 = g.cast::<f32>();
        let (out32, cache32) = rasterize(&g32, &cam, &target, &RenderOptions::default()).unwrap();
        assert_eq!(out32.color, brute_force(&cache32, bg.map(|v| v as f32)));
    }
}
