//! The full relighting network: input tokenizer, geometry stack, geometry
//! head, and the appearance denoiser that predicts SH for the fixed
//! per-pixel Gaussians.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::block::{BlockCache, Stack};
use crate::backbone::checkpoint;
use crate::backbone::layers::{Module, Param};
use crate::backbone::BackboneConfig;
use crate::cameras::{pixel_rays, plucker_embed, Camera, RayMap};
use crate::diffusion::{NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::gaussians::decode::DecodeCache;
use crate::gaussians::{activate_gaussians, activate_gaussians_backward, DecodeHead, GaussianGrads, GaussianSet, DEFAULT_FAR, DEFAULT_NEAR};
use crate::real::Real;
use crate::renderer::{rasterize, rasterize_backward, RenderCache, RenderOptions, RenderTarget};
use crate::rng::Rng;
use crate::tensor::Mat;
use crate::tokenization::envmap::EnvMap;
use crate::tokenization::tokenizers::{LightCache, LightTokenizer, PatchCache, PatchTokenizer, TimestepCache, TimestepEmbedder};
use crate::tokenization::{TokenRole, DENOISE_PATCH, FEATURE_CHANNELS, INPUT_PATCH, LIGHT_PATCH};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub input_patch: usize,
    pub denoise_patch: usize,
    pub light_patch: usize,
    /// Depth range along input pixel rays.
    pub near: f64,
    pub far: f64,
    pub timesteps: usize,
    pub schedule: ScheduleKind,
    /// Environment map size used when no map is given (masked branch).
    pub envmap_height: usize,
    pub envmap_width: usize,
    /// `false` removes the noisy-view tokens, giving a deterministic
    /// single-pass predictor (ablation).
    pub noisy_tokens: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            input_patch: INPUT_PATCH,
            denoise_patch: DENOISE_PATCH,
            light_patch: LIGHT_PATCH,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
            timesteps: 1000,
            schedule: ScheduleKind::Linear,
            envmap_height: 32,
            envmap_width: 64,
            noisy_tokens: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.input_patch == 0 || self.denoise_patch == 0 || self.light_patch == 0 {
            return Err(Error::Config("patch sizes must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Config(format!("need 0 < near < far, got {} and {}", self.near, self.far)));
        }
        if self.timesteps < 2 {
            return Err(Error::Config("timesteps must be at least 2".into()));
        }
        if self.envmap_height % self.light_patch != 0 || self.envmap_width % self.light_patch != 0 {
            return Err(Error::Config("envmap size must be divisible by the light patch".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.schedule, self.timesteps)
    }
}

/// Posed images sharing one resolution. `images` is `N × H × W × 3`.
#[derive(Clone, Debug)]
pub struct ViewSet {
    pub images: Vec<f64>,
    pub cameras: Vec<Camera>,
}

impl ViewSet {
    pub fn new(images: Vec<f64>, cameras: Vec<Camera>) -> Result<Self> {
        let vs = Self { images, cameras };
        vs.validate()?;
        Ok(vs)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn size(&self) -> (usize, usize) {
        self.cameras.first().map_or((0, 0), |c| (c.height, c.width))
    }

    fn validate(&self) -> Result<()> {
        let (h, w) = self.size();
        if self.cameras.is_empty() {
            return Err(Error::Shape("view set is empty".into()));
        }
        if self.cameras.iter().any(|c| c.height != h || c.width != w) {
            return Err(Error::Shape("views differ in resolution".into()));
        }
        if self.images.len() != self.len() * h * w * 3 {
            return Err(Error::Shape(format!("{} image values for {} views of {w}x{h}", self.images.len(), self.len())));
        }
        Ok(())
    }
}

/// Per-pixel concatenation of RGB (in the working precision) and Plücker
/// channels.
fn ray_features<T: Real>(images: &[T], cameras: &[Camera]) -> Vec<T> {
    let mut out = Vec::with_capacity(images.len() * 3);
    let mut p = 0;
    for cam in cameras {
        let pl = plucker_embed(&pixel_rays(cam));
        for px in pl.chunks_exact(6) {
            out.extend_from_slice(&images[3 * p..3 * p + 3]);
            out.extend(px.iter().map(|&v| T::lit(v)));
            p += 1;
        }
    }
    out
}

/// Light conditioning for one appearance pass.
#[derive(Clone, Copy, Debug)]
pub enum Light<'a> {
    Env(&'a EnvMap),
    /// Light tokens replaced by zeros (unconditional branch), with the
    /// token count of an `h × w` map.
    Masked { height: usize, width: usize },
}

/// Forward state of the geometry branch. Constant across denoising steps.
#[derive(Clone, Debug)]
pub struct GeometryPass<T> {
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub rays: Vec<RayMap>,
    pub tokens: Mat<T>,
    pub raw: Vec<T>,
    /// Geometry with zero SH.
    pub gaussians: GaussianSet<T>,
    input_cache: PatchCache<T>,
    stack_cache: Vec<BlockCache<T>>,
    head_cache: DecodeCache<T>,
}

/// Forward state of one appearance (denoiser) pass.
#[derive(Clone, Debug)]
pub struct AppearancePass<T> {
    pub sh: Vec<T>,
    noisy: Option<(PatchCache<T>, usize)>,
    light: Option<LightCache<T>>,
    light_tokens: usize,
    time: TimestepCache<T>,
    stack_cache: Vec<BlockCache<T>>,
    head_cache: DecodeCache<T>,
    geo_offset: usize,
    total: usize,
}

#[derive(Clone, Debug)]
pub struct RelitModel<T> {
    pub config: ModelConfig,
    pub input_tokenizer: PatchTokenizer<T>,
    pub noisy_tokenizer: PatchTokenizer<T>,
    pub light_tokenizer: LightTokenizer<T>,
    pub timestep: TimestepEmbedder<T>,
    pub geometry_stack: Stack<T>,
    pub appearance_stack: Stack<T>,
    pub geometry_head: DecodeHead<T>,
    pub sh_head: DecodeHead<T>,
}

impl<T: Real> RelitModel<T> {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.backbone.d;
        Ok(Self {
            input_tokenizer: PatchTokenizer::new("input_tokenizer", TokenRole::InputView, config.input_patch, FEATURE_CHANNELS, d, rng),
            noisy_tokenizer: PatchTokenizer::new("noisy_tokenizer", TokenRole::NoisyRelit, config.denoise_patch, FEATURE_CHANNELS, d, rng),
            light_tokenizer: LightTokenizer::new("light_tokenizer", config.light_patch, d, rng),
            timestep: TimestepEmbedder::new("timestep", d, rng),
            geometry_stack: config.backbone.geometry_stack(rng),
            appearance_stack: config.backbone.appearance_stack(rng),
            geometry_head: DecodeHead::geometry("geometry_head", d, config.input_patch, rng),
            sh_head: DecodeHead::sh("sh_head", d, config.input_patch, rng),
            config,
        })
    }

    /// Input views to tokens and pixel-aligned Gaussian geometry.
    pub fn encode_geometry(&self, inputs: &ViewSet) -> Result<GeometryPass<T>> {
        inputs.validate()?;
        let (h, w) = inputs.size();
        let n = inputs.len();
        let images: Vec<T> = inputs.images.iter().map(|&v| T::lit(v)).collect();
        let feats = ray_features(&images, &inputs.cameras);
        let (seq, input_cache) = self.input_tokenizer.forward(&feats, n, h, w)?;
        let (tokens, stack_cache) = self.geometry_stack.forward(&seq.tokens)?;
        let (raw, head_cache) = self.geometry_head.forward(&tokens, n, h, w)?;
        let rays: Vec<RayMap> = inputs.cameras.iter().map(pixel_rays).collect();
        let gaussians = activate_gaussians(&raw, &rays, self.config.near, self.config.far)?;
        Ok(GeometryPass {
            views: n,
            height: h,
            width: w,
            rays,
            tokens,
            raw,
            gaussians,
            input_cache,
            stack_cache,
            head_cache,
        })
    }

    /// One denoiser pass: noisy views `x_t` (`N' × H × W × 3`) at
    /// `cameras`, lighting and timestep to per-Gaussian SH.
    pub fn predict_sh(&self, geo: &GeometryPass<T>, noisy: &[T], cameras: &[Camera], light: Light<'_>, t: usize) -> Result<AppearancePass<T>> {
        let d = self.config.backbone.d;
        let mut parts: Vec<Mat<T>> = Vec::with_capacity(4);
        let noisy_cache = if self.config.noisy_tokens {
            let (h, w) = cameras.first().map(|c| (c.height, c.width)).ok_or_else(|| Error::Shape("no denoising cameras".into()))?;
            if noisy.len() != cameras.len() * h * w * 3 {
                return Err(Error::Shape(format!("{} noisy values for {} views of {w}x{h}", noisy.len(), cameras.len())));
            }
            let feats = ray_features(noisy, cameras);
            let (seq, cache) = self.noisy_tokenizer.forward(&feats, cameras.len(), h, w)?;
            let count = seq.len();
            parts.push(seq.tokens);
            Some((cache, count))
        } else {
            None
        };
        let (light_cache, light_tokens) = match light {
            Light::Env(env) => {
                let (seq, cache) = self.light_tokenizer.forward(env)?;
                let n = seq.len();
                parts.push(seq.tokens);
                (Some(cache), n)
            }
            Light::Masked { height, width } => {
                let p = self.config.light_patch;
                let n = crate::tokenization::token_count(1, height, width, p)?;
                parts.push(Mat::zeros(n, d));
                (None, n)
            }
        };
        let geo_offset = parts.iter().map(|m| m.rows).sum();
        parts.push(geo.tokens.clone());
        let (tseq, time) = self.timestep.forward(t, self.config.timesteps)?;
        parts.push(tseq.tokens);
        let refs: Vec<&Mat<T>> = parts.iter().collect();
        let all = Mat::vstack(&refs)?;
        let total = all.rows;
        let (out, stack_cache) = self.appearance_stack.forward(&all)?;
        let geo_out = out.slice_rows(geo_offset, geo.tokens.rows);
        let (sh, head_cache) = self.sh_head.forward(&geo_out, geo.views, geo.height, geo.width)?;
        Ok(AppearancePass {
            sh,
            noisy: noisy_cache,
            light: light_cache,
            light_tokens,
            time,
            stack_cache,
            head_cache,
            geo_offset,
            total,
        })
    }

    /// Masked-light branch for an optional map.
    pub fn masked_light(&self, env: Option<&EnvMap>) -> Light<'static> {
        match env {
            Some(e) => Light::Masked { height: e.height, width: e.width },
            None => Light::Masked {
                height: self.config.envmap_height,
                width: self.config.envmap_width,
            },
        }
    }

    /// Accumulates parameter gradients given gradients w.r.t. the relit
    /// Gaussians (geometry and SH).
    pub fn backward(&mut self, geo: &GeometryPass<T>, app: &AppearancePass<T>, dgauss: &GaussianGrads<T>) -> Result<()> {
        let d = self.config.backbone.d;
        let dgeo_out = self.sh_head.backward(&app.head_cache, &dgauss.sh)?;
        let mut dall = Mat::zeros(app.total, d);
        for r in 0..dgeo_out.rows {
            dall.row_mut(app.geo_offset + r).copy_from_slice(dgeo_out.row(r));
        }
        let dx = self.appearance_stack.backward(&app.stack_cache, &dall);
        let mut row = 0;
        if let Some((cache, count)) = &app.noisy {
            self.noisy_tokenizer.backward(cache, &dx.slice_rows(0, *count));
            row += count;
        }
        if let Some(cache) = &app.light {
            self.light_tokenizer.backward(cache, &dx.slice_rows(row, app.light_tokens));
        }
        let dgeo_from_app = dx.slice_rows(app.geo_offset, geo.tokens.rows);
        self.timestep.backward(&app.time, &dx.slice_rows(app.total - 1, 1));

        let draw = activate_gaussians_backward(&geo.raw, &geo.rays, self.config.near, self.config.far, dgauss);
        let mut dtokens = self.geometry_head.backward(&geo.head_cache, &draw)?;
        dtokens.add_assign(&dgeo_from_app);
        let dinput = self.geometry_stack.backward(&geo.stack_cache, &dtokens);
        self.input_tokenizer.backward(&geo.input_cache, &dinput);
        Ok(())
    }
}

impl<T: Real> Module<T> for RelitModel<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.input_tokenizer.visit(f);
        self.noisy_tokenizer.visit(f);
        self.light_tokenizer.visit(f);
        self.timestep.visit(f);
        self.geometry_stack.visit(f);
        self.appearance_stack.visit(f);
        self.geometry_head.visit(f);
        self.sh_head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.input_tokenizer.visit_mut(f);
        self.noisy_tokenizer.visit_mut(f);
        self.light_tokenizer.visit_mut(f);
        self.timestep.visit_mut(f);
        self.geometry_stack.visit_mut(f);
        self.appearance_stack.visit_mut(f);
        self.geometry_head.visit_mut(f);
        self.sh_head.visit_mut(f);
    }
}

/// Renders a Gaussian set at several cameras with a black background.
pub fn render_views<T: Real>(g: &GaussianSet<T>, cameras: &[Camera], opts: &RenderOptions) -> Result<(Vec<T>, Vec<RenderCache<T>>)> {
    let mut images = Vec::new();
    let mut caches = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let (out, cache) = rasterize(g, cam, &RenderTarget::for_camera(cam, [0.0; 3]), opts)?;
        images.extend(out.color);
        caches.push(cache);
    }
    Ok((images, caches))
}

/// Sums the Gaussian gradients of all rendered views.
pub fn render_views_backward<T: Real>(g: &GaussianSet<T>, caches: &[RenderCache<T>], dimages: &[T]) -> Result<GaussianGrads<T>> {
    let mut total = GaussianSet::zeros(g.len());
    let mut off = 0;
    for cache in caches {
        let n = cache.pixels() * 3;
        let gr = rasterize_backward(g, cache, &dimages[off..off + n])?;
        for (dst, src) in [
            (&mut total.positions, &gr.positions),
            (&mut total.scales, &gr.scales),
            (&mut total.rotations, &gr.rotations),
            (&mut total.opacities, &gr.opacities),
            (&mut total.sh, &gr.sh),
        ] {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += *b;
            }
        }
        off += n;
    }
    if off != dimages.len() {
        return Err(Error::Shape(format!("{} image-gradient values for {off} rendered values", dimages.len())));
    }
    Ok(total)
}

/// Writes the model weights with its configuration as checkpoint metadata.
pub fn save_model<T: Real>(path: &Path, model: &RelitModel<T>) -> Result<()> {
    let meta = serde_json::to_string(&model.config).map_err(|e| Error::format(path, e.to_string()))?;
    checkpoint::save(path, &meta, model)
}

/// Rebuilds a model from a checkpoint written by [`save_model`].
pub fn load_model<T: Real>(path: &Path) -> Result<RelitModel<T>> {
    let ckpt = checkpoint::load(path)?;
    let config: ModelConfig = serde_json::from_str(&ckpt.meta).map_err(|e| Error::format(path, format!("bad model metadata: {e}")))?;
    let mut model = RelitModel::new(config, &mut crate::rng::stream(0, 0))?;
    ckpt.apply(&mut model, path)?;
    Ok(model)
}
