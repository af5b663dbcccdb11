//! Held-out relighting evaluation against two reference predictors:
//! copying the input view closest to each target camera, and the
//! light-masked (unconditional) model.

use crate::data_synth::Example;
use crate::diffusion::sampler::{sample_relit, SamplerConfig};
use crate::error::Result;
use crate::math;
use crate::model::{render_views, RelitModel, ViewSet};
use crate::real::Real;
use crate::renderer::RenderOptions;

use super::metrics::{channel_align, psnr};

/// Mean masked PSNR (dB) after per-channel alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RelightScores {
    pub conditional: f64,
    pub input_copy: f64,
    pub unconditional: f64,
    pub views: usize,
}

/// PSNR of `pred` against `gt` on the foreground after channel alignment.
pub fn aligned_psnr(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    let aligned = channel_align(pred, gt, Some(mask))?;
    psnr(&aligned, gt, Some(mask))
}

/// Index of the input camera whose viewing direction from the origin is
/// closest to that of `target`.
pub fn nearest_input_view(ex: &Example, target: usize) -> usize {
    let dir = math::normalize(ex.target_cameras[target].position());
    (0..ex.input_cameras.len())
        .max_by(|&a, &b| {
            let da = math::dot(math::normalize(ex.input_cameras[a].position()), dir);
            let db = math::dot(math::normalize(ex.input_cameras[b].position()), dir);
            da.total_cmp(&db).then(b.cmp(&a))
        })
        .unwrap_or(0)
}

/// Relights `ex` and renders every target view (denoising and extra).
pub fn relight_example<T: Real>(model: &RelitModel<T>, ex: &Example, conditional: bool, sampler: &SamplerConfig) -> Result<Vec<f64>> {
    let inputs = ViewSet::new(ex.input_images.clone(), ex.input_cameras.clone())?;
    let env = conditional.then_some(&ex.target_light.env);
    let opts = RenderOptions::default();
    let out = sample_relit(model, &inputs, env, ex.denoise_cameras(), sampler, &opts)?;
    let (images, _) = render_views(&out.gaussians, &ex.target_cameras, &opts)?;
    Ok(images.iter().map(|v| v.as_f64()).collect())
}

/// Scores on every target view of every example; views without
/// foreground are skipped.
pub fn evaluate_relighting<T: Real>(model: &RelitModel<T>, examples: &[Example], sampler: &SamplerConfig) -> Result<RelightScores> {
    let mut s = RelightScores::default();
    for ex in examples {
        let cond = relight_example(model, ex, true, sampler)?;
        let uncond = relight_example(model, ex, false, sampler)?;
        let n = ex.pixels() * 3;
        for v in 0..ex.target_cameras.len() {
            let mask = ex.target_mask(v);
            if !mask.iter().any(|&m| m) {
                continue;
            }
            let gt = ex.target_image(v);
            s.conditional += aligned_psnr(&cond[v * n..(v + 1) * n], gt, mask)?;
            s.unconditional += aligned_psnr(&uncond[v * n..(v + 1) * n], gt, mask)?;
            s.input_copy += aligned_psnr(ex.input_image(nearest_input_view(ex, v)), gt, mask)?;
            s.views += 1;
        }
    }
    if s.views > 0 {
        let k = s.views as f64;
        s.conditional /= k;
        s.unconditional /= k;
        s.input_copy /= k;
    }
    Ok(s)
}
