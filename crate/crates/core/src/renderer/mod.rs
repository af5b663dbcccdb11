//! Differentiable Gaussian splatting.
//!
//! Splats are sorted globally by `(depth, index)` and binned, in that
//! order, into square pixel tiles by their α-threshold box. A pixel walks
//! its tile's list; splats whose box misses the pixel fall below the α
//! threshold there and are skipped, so the binning does not change the
//! image. The backward
//! pass replays each pixel front to back, then walks the list in reverse
//! with the recurrence `A_{i-1} = α_i c_i + (1 - α_i) A_i`, which gives
//! `∂C/∂α_i = T_i (c_i - A_i)` without dividing by `1 - α_i`.

pub mod project;

use rayon::prelude::*;

use crate::cameras::Camera;
use crate::error::{Error, Result};
use crate::gaussians::{GaussianGrads, GaussianSet};
use crate::io::image::RgbImage;
use crate::real::Real;

pub use project::{project_backward, project_gaussian, CameraT, Splat2D, SplatGrad};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderTarget {
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
}

impl RenderTarget {
    pub fn new(width: usize, height: usize, background: [f64; 3]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("render target {width}x{height} must be non-empty")));
        }
        Ok(Self { width, height, background })
    }

    pub fn for_camera(cam: &Camera, background: [f64; 3]) -> Self {
        Self { width: cam.width, height: cam.height, background }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    /// Contributions with smaller α are skipped.
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Clamp SH colors at zero per Gaussian before compositing.
    pub clamp_colors: bool,
    /// Added to the diagonal of every screen-space covariance (px²).
    pub low_pass: f64,
    /// Gaussians with camera depth at or below this are culled.
    pub near_clip: f64,
    /// Compositing stops once transmittance falls below this; 0 disables.
    pub min_transmittance: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.999,
            clamp_colors: true,
            low_pass: 0.3,
            near_clip: 0.2,
            min_transmittance: 1e-4,
        }
    }
}

/// Linear RGB image (`H × W × 3`) and coverage `1 - T_final`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T> {
    pub width: usize,
    pub height: usize,
    pub color: Vec<T>,
    pub alpha: Vec<T>,
}

impl<T: Real> RenderOutput<T> {
    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_data(self.width, self.height, self.color.iter().map(|v| v.as_f64() as f32).collect())
            .expect("render buffer matches its dimensions")
    }
}

/// Forward state needed by [`rasterize_backward`].
#[derive(Clone, Debug)]
pub struct RenderCache<T> {
    camera: CameraT<T>,
    background: [T; 3],
    opts: RenderOptions,
    splats: Vec<Splat2D<T>>,
    tiles_x: usize,
    offsets: Vec<usize>,
    entries: Vec<u32>,
}

/// Tile edge in pixels.
pub const TILE: usize = 4;

impl<T> RenderCache<T> {
    pub fn splats(&self) -> &[Splat2D<T>] {
        &self.splats
    }

    pub fn pixels(&self) -> usize {
        self.camera.width * self.camera.height
    }

    /// Candidate splats at pixel `(x, y)` in compositing order.
    pub fn pixel_list(&self, x: usize, y: usize) -> impl Iterator<Item = &Splat2D<T>> {
        let t = (y / TILE) * self.tiles_x + x / TILE;
        self.entries[self.offsets[t]..self.offsets[t + 1]].iter().map(move |&s| &self.splats[s as usize])
    }
}

fn target_camera(camera: &Camera, target: &RenderTarget) -> Result<Camera> {
    if camera.width == target.width && camera.height == target.height {
        Ok(camera.clone())
    } else {
        camera.resized(target.width, target.height)
    }
}

/// Inclusive pixel range whose centers lie within `r` of `m`.
fn pixel_span<T: Real>(m: T, r: T, n: usize) -> Option<(usize, usize)> {
    let lo = (m - r - T::lit(0.5)).ceil().max(T::zero());
    let hi = (m + r - T::lit(0.5)).floor().min(T::lit(n as f64 - 1.0));
    if lo > hi {
        None
    } else {
        Some((lo.to_usize()?, hi.to_usize()?))
    }
}

pub fn rasterize<T: Real>(g: &GaussianSet<T>, camera: &Camera, target: &RenderTarget, opts: &RenderOptions) -> Result<(RenderOutput<T>, RenderCache<T>)> {
    g.validate_shapes()?;
    let camera = target_camera(camera, target)?;
    let cam = CameraT::<T>::new(&camera);
    let (w, h) = (target.width, target.height);

    let mut splats: Vec<Splat2D<T>> = (0..g.len()).filter_map(|i| project_gaussian(g, i, &cam, opts)).collect();
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap_or(std::cmp::Ordering::Equal).then(a.index.cmp(&b.index)));

    let (tiles_x, tiles_y) = (w.div_ceil(TILE), h.div_ceil(TILE));
    let spans: Vec<Option<((usize, usize), (usize, usize))>> = splats
        .iter()
        .map(|s| {
            let (x0, x1) = pixel_span(s.mean2d[0], s.radius, w)?;
            let (y0, y1) = pixel_span(s.mean2d[1], s.radius, h)?;
            Some(((x0 / TILE, x1 / TILE), (y0 / TILE, y1 / TILE)))
        })
        .collect();
    let mut offsets = vec![0usize; tiles_x * tiles_y + 1];
    for ((x0, x1), (y0, y1)) in spans.iter().flatten() {
        for ty in *y0..=*y1 {
            for tx in *x0..=*x1 {
                offsets[ty * tiles_x + tx + 1] += 1;
            }
        }
    }
    for t in 0..tiles_x * tiles_y {
        offsets[t + 1] += offsets[t];
    }
    let mut fill = offsets.clone();
    let mut entries = vec![0u32; offsets[tiles_x * tiles_y]];
    for (s, span) in spans.iter().enumerate() {
        if let Some(((x0, x1), (y0, y1))) = span {
            for ty in *y0..=*y1 {
                for tx in *x0..=*x1 {
                    let t = ty * tiles_x + tx;
                    entries[fill[t]] = s as u32;
                    fill[t] += 1;
                }
            }
        }
    }
    let cache = RenderCache {
        camera: cam,
        background: target.background.map(T::lit),
        opts: *opts,
        splats,
        tiles_x,
        offsets,
        entries,
    };
    let mut color = vec![T::zero(); w * h * 3];
    let mut alpha = vec![T::zero(); w * h];
    color
        .par_chunks_mut(w * 3 * TILE)
        .zip(alpha.par_chunks_mut(w * TILE))
        .enumerate()
        .for_each(|(ty, (crow, arow))| {
            for tx in 0..tiles_x {
                let mut acc = [[T::zero(); 3]; LANES];
                let trans = walk_tile(&cache, tx, ty, |i, si, c, t| {
                    let col = &cache.splats[si as usize].color;
                    let wgt = c.alpha * t;
                    for k in 0..3 {
                        acc[i][k] += col[k] * wgt;
                    }
                });
                for i in 0..LANES {
                    let (x, y) = (tx * TILE + i % TILE, i / TILE);
                    if x >= w || y * w + x >= arow.len() {
                        continue;
                    }
                    let p = y * w + x;
                    for k in 0..3 {
                        crow[3 * p + k] = acc[i][k] + cache.background[k] * trans[i];
                    }
                    arow[p] = T::one() - trans[i];
                }
            }
        });
    Ok((RenderOutput { width: w, height: h, color, alpha }, cache))
}

/// One accepted splat contribution at a pixel.
#[derive(Clone, Copy, Debug)]
struct Contribution<T> {
    alpha: T,
    gauss: T,
    dx: T,
    dy: T,
    capped: bool,
}

/// α and Gaussian falloff of a splat at a pixel center. `None` when the
/// contribution is skipped.
#[inline]
fn lane_alpha<T: Real>(s: &Splat2D<T>, power: T, px: T, py: T, opts: &RenderOptions) -> Option<Contribution<T>> {
    let dx = px - s.mean2d[0];
    let dy = py - s.mean2d[1];
    let gauss = power.exp();
    let raw = s.opacity * gauss;
    let cap = T::lit(opts.alpha_max);
    let capped = raw > cap;
    let alpha = if capped { cap } else { raw };
    if alpha < T::lit(opts.alpha_min) {
        return None;
    }
    Some(Contribution { alpha, gauss, dx, dy, capped })
}

const LANES: usize = TILE * TILE;

/// Front-to-back traversal of tile `(tx, ty)`. Calls `visit(lane, splat,
/// contribution, transmittance_before)` for every accepted contribution
/// and returns the final transmittance per lane. Lane `i` is pixel
/// `(tx*TILE + i%TILE, ty*TILE + i/TILE)`; lanes outside the image report 1.
fn walk_tile<T: Real>(cache: &RenderCache<T>, tx: usize, ty: usize, mut visit: impl FnMut(usize, u32, &Contribution<T>, T)) -> [T; LANES] {
    let (w, h) = (cache.camera.width, cache.camera.height);
    let mut px = [T::zero(); LANES];
    let mut py = [T::zero(); LANES];
    let mut live = [false; LANES];
    let mut n_live = 0;
    for i in 0..LANES {
        let (x, y) = (tx * TILE + i % TILE, ty * TILE + i / TILE);
        px[i] = T::lit(x as f64 + 0.5);
        py[i] = T::lit(y as f64 + 0.5);
        if x < w && y < h {
            live[i] = true;
            n_live += 1;
        }
    }
    let mut trans = [T::one(); LANES];
    let stop = T::lit(cache.opts.min_transmittance);
    let half = T::lit(-0.5);
    let two = T::lit(2.0);
    let t = ty * cache.tiles_x + tx;
    for &si in &cache.entries[cache.offsets[t]..cache.offsets[t + 1]] {
        let s = &cache.splats[si as usize];
        let mut power = [T::zero(); LANES];
        for i in 0..LANES {
            let dx = px[i] - s.mean2d[0];
            let dy = py[i] - s.mean2d[1];
            power[i] = half * (s.conic[0] * dx * dx + two * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
        }
        for i in 0..LANES {
            if !live[i] || power[i] < s.min_power {
                continue;
            }
            if let Some(c) = lane_alpha(s, power[i], px[i], py[i], &cache.opts) {
                visit(i, si, &c, trans[i]);
                trans[i] *= T::one() - c.alpha;
                if trans[i] < stop {
                    live[i] = false;
                    n_live -= 1;
                }
            }
        }
        if n_live == 0 {
            break;
        }
    }
    trans
}

/// Tile rows per gradient chunk. Chunks are reduced in order, so
/// gradients do not depend on the thread count.
const CHUNK_TILE_ROWS: usize = 2;

/// Exact gradients of `Σ dcolor · color` w.r.t. every Gaussian parameter.
pub fn rasterize_backward<T: Real>(g: &GaussianSet<T>, cache: &RenderCache<T>, dcolor: &[T]) -> Result<GaussianGrads<T>> {
    let (w, h) = (cache.camera.width, cache.camera.height);
    if dcolor.len() != w * h * 3 {
        return Err(Error::Shape(format!("image gradient has {} values, expected {}", dcolor.len(), w * h * 3)));
    }
    let n = cache.splats.len();
    let tiles_y = h.div_ceil(TILE);
    let chunks: Vec<Vec<SplatGrad<T>>> = (0..tiles_y.div_ceil(CHUNK_TILE_ROWS))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = vec![SplatGrad::zero(); n];
            let mut touched: Vec<Vec<(u32, Contribution<T>, T)>> = vec![Vec::new(); LANES];
            for ty in chunk * CHUNK_TILE_ROWS..((chunk + 1) * CHUNK_TILE_ROWS).min(tiles_y) {
                for tx in 0..cache.tiles_x {
                    tile_backward(cache, tx, ty, dcolor, &mut touched, &mut acc);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![SplatGrad::zero(); n];
    for c in &chunks {
        for (t, v) in total.iter_mut().zip(c) {
            t.add(v);
        }
    }
    let mut out = GaussianSet::zeros(g.len());
    for (s, d) in cache.splats.iter().zip(&total) {
        project_backward(g, s, d, &cache.camera, &cache.opts, &mut out);
    }
    Ok(out)
}

#[allow(clippy::type_complexity)]
fn tile_backward<T: Real>(
    cache: &RenderCache<T>,
    tx: usize,
    ty: usize,
    dcolor: &[T],
    touched: &mut [Vec<(u32, Contribution<T>, T)>],
    acc: &mut [SplatGrad<T>],
) {
    let (w, h) = (cache.camera.width, cache.camera.height);
    let pixel = |i: usize| -> Option<usize> {
        let (x, y) = (tx * TILE + i % TILE, ty * TILE + i / TILE);
        (x < w && y < h).then_some(y * w + x)
    };
    let any = (0..LANES).filter_map(pixel).any(|p| dcolor[3 * p..3 * p + 3].iter().any(|&v| v != T::zero()));
    if !any {
        return;
    }
    for t in touched.iter_mut() {
        t.clear();
    }
    walk_tile(cache, tx, ty, |i, si, c, t| touched[i].push((si, *c, t)));
    let half = T::lit(0.5);
    for (i, list) in touched.iter().enumerate() {
        let Some(p) = pixel(i) else { continue };
        let up = &dcolor[3 * p..3 * p + 3];
        let mut suffix = cache.background;
        for &(si, c, t_i) in list.iter().rev() {
            let s = &cache.splats[si as usize];
            let gs = &mut acc[si as usize];
            let a = c.alpha;
            let mut dalpha = T::zero();
            for k in 0..3 {
                gs.color[k] += up[k] * a * t_i;
                dalpha += up[k] * t_i * (s.color[k] - suffix[k]);
                suffix[k] = a * s.color[k] + (T::one() - a) * suffix[k];
            }
            if c.capped {
                continue;
            }
            gs.opacity += dalpha * c.gauss;
            let dgauss = dalpha * s.opacity * c.gauss;
            let (dx, dy) = (c.dx, c.dy);
            gs.mean2d[0] += dgauss * (s.conic[0] * dx + s.conic[1] * dy);
            gs.mean2d[1] += dgauss * (s.conic[1] * dx + s.conic[2] * dy);
            gs.conic[0] -= half * dgauss * dx * dx;
            gs.conic[1] -= half * dgauss * dx * dy;
            gs.conic[2] -= half * dgauss * dy * dy;
        }
    }
}

/// Convenience forward pass returning only the image.
pub fn render<T: Real>(g: &GaussianSet<T>, camera: &Camera, target: &RenderTarget, opts: &RenderOptions) -> Result<RenderOutput<T>> {
    Ok(rasterize(g, camera, target, opts)?.0)
}

#[cfg(test)]
mod tests;
