//! Joint end-to-end training of both stacks with diffusion supervision.

pub mod eval;
pub mod loss;
pub mod metrics;
pub mod optim;

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::backbone::layers::Module;
use crate::data_synth::Example;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::gaussians::GaussianSet;
use crate::io;
use crate::model::{render_views, render_views_backward, save_model, AppearancePass, GeometryPass, Light, RelitModel, ViewSet};
use crate::real::Real;
use crate::renderer::{RenderCache, RenderOptions};
use crate::rng;

pub use loss::{image_loss, LossTerms};
pub use metrics::{channel_align, psnr, ssim};
pub use optim::{clip_decision, learning_rate, AdamW, ClipDecision};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iters: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_iters: usize,
    pub perceptual_start_iter: usize,
    pub grad_clip: f64,
    pub grad_skip_norm: f64,
    pub cfg_drop_prob: f64,
    pub loss_perceptual_weight: f64,
    /// Checkpoint interval in iterations; 0 writes only the final model.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            iters: 2000,
            peak_lr: 2e-4,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            warmup_iters: 100,
            perceptual_start_iter: 200,
            grad_clip: 1.0,
            grad_skip_norm: 20.0,
            cfg_drop_prob: 0.1,
            loss_perceptual_weight: 0.5,
            checkpoint_every: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iters == 0 {
            return Err(Error::Config("batch_size and iters must be positive".into()));
        }
        if self.warmup_iters >= self.iters {
            return Err(Error::Config(format!("warmup_iters {} must be below iters {}", self.warmup_iters, self.iters)));
        }
        let positive = [self.peak_lr, self.grad_clip, self.grad_skip_norm, self.eps];
        if positive.iter().any(|v| !(*v > 0.0)) || self.weight_decay < 0.0 || self.loss_perceptual_weight < 0.0 {
            return Err(Error::Config("rates, clip and skip thresholds must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.cfg_drop_prob) {
            return Err(Error::Config("cfg_drop_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Random choices for one training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub t: usize,
    pub noise: Vec<f64>,
    pub drop_light: bool,
}

impl Draw {
    pub fn sample(r: &mut rng::Rng, timesteps: usize, values: usize, drop_prob: f64) -> Self {
        let t = r.random_range(0..timesteps);
        let drop_light = r.random::<f64>() < drop_prob;
        Self { t, noise: rng::normals(r, values), drop_light }
    }
}

/// Forward state of one example, kept for its backward pass.
pub struct ItemGraph<T> {
    pub terms: LossTerms,
    pub gaussians: GaussianSet<T>,
    pub images: Vec<T>,
    geo: GeometryPass<T>,
    app: AppearancePass<T>,
    caches: Vec<RenderCache<T>>,
    dimages: Vec<f64>,
}

/// Noises the denoising views, predicts SH, renders every target view and
/// scores it against the ground truth.
pub fn item_forward<T: Real>(
    model: &RelitModel<T>,
    ex: &Example,
    draw: &Draw,
    schedule: &NoiseSchedule,
    opts: &RenderOptions,
    perceptual_weight: f64,
    use_perceptual: bool,
) -> Result<ItemGraph<T>> {
    let inputs = ViewSet::new(ex.input_images.clone(), ex.input_cameras.clone())?;
    let geo = model.encode_geometry(&inputs)?;
    let x0: Vec<T> = ex.denoise_images().iter().map(|&v| T::lit(v)).collect();
    let noise: Vec<T> = draw.noise.iter().map(|&v| T::lit(v)).collect();
    let xt = schedule.q_sample(&x0, draw.t, &noise)?;
    let light = if draw.drop_light {
        model.masked_light(Some(&ex.target_light.env))
    } else {
        Light::Env(&ex.target_light.env)
    };
    let app = model.predict_sh(&geo, &xt, ex.denoise_cameras(), light, draw.t)?;
    let gaussians = geo.gaussians.with_sh(app.sh.clone())?;
    let (images, caches) = render_views(&gaussians, &ex.target_cameras, opts)?;
    let pred: Vec<f64> = images.iter().map(|v| v.as_f64()).collect();
    let (terms, dimages) = image_loss(&pred, &ex.target_images, ex.target_cameras.len(), ex.size, ex.size, perceptual_weight, use_perceptual)?;
    Ok(ItemGraph { terms, gaussians, images, geo, app, caches, dimages })
}

/// Accumulates `scale ·` the loss gradient into the model parameters.
pub fn item_backward<T: Real>(model: &mut RelitModel<T>, graph: &ItemGraph<T>, scale: f64) -> Result<()> {
    let dimages: Vec<T> = graph.dimages.iter().map(|&g| T::lit(g * scale)).collect();
    let dgauss = render_views_backward(&graph.gaussians, &graph.caches, &dimages)?;
    model.backward(&graph.geo, &graph.app, &dgauss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub iter: usize,
    pub loss: LossTerms,
    pub grad_norm: f64,
    pub lr: f64,
    pub skipped: bool,
}

pub struct Trainer<T> {
    pub model: RelitModel<T>,
    pub config: TrainConfig,
    pub optimizer: AdamW,
    pub schedule: NoiseSchedule,
    pub render: RenderOptions,
    pub iter: usize,
    pub skipped: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: RelitModel<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(&model, config.beta1, config.beta2, config.eps, config.weight_decay);
        Ok(Self {
            schedule: model.config.schedule()?,
            model,
            config,
            optimizer,
            render: RenderOptions::default(),
            iter: 0,
            skipped: 0,
        })
    }

    /// Batch indices and per-example draws for the current iteration.
    fn draws(&self, data: &[Example]) -> Vec<(usize, Draw)> {
        let mut r = rng::stream(self.config.seed, rng::label(&[0xba7c, self.iter as u64]));
        (0..self.config.batch_size)
            .map(|_| {
                let i = r.random_range(0..data.len());
                let n = data[i].denoise_images().len();
                (i, Draw::sample(&mut r, self.schedule.len(), n, self.config.cfg_drop_prob))
            })
            .collect()
    }

    /// Computes the batch gradient and applies the guarded update.
    pub fn step(&mut self, data: &[Example]) -> Result<StepMetrics> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let cfg = self.config.clone();
        let use_perceptual = self.iter >= cfg.perceptual_start_iter;
        let lr = learning_rate(self.iter, cfg.peak_lr, cfg.warmup_iters, cfg.iters);
        let inv = 1.0 / cfg.batch_size as f64;
        self.model.zero_grad();
        let mut loss = LossTerms::default();
        let mut finite = true;
        for (i, draw) in self.draws(data) {
            let graph = item_forward(&self.model, &data[i], &draw, &self.schedule, &self.render, cfg.loss_perceptual_weight, use_perceptual)?;
            if !graph.terms.total.is_finite() {
                finite = false;
                break;
            }
            loss.total += graph.terms.total * inv;
            loss.l2 += graph.terms.l2 * inv;
            loss.perceptual += graph.terms.perceptual * inv;
            item_backward(&mut self.model, &graph, inv)?;
        }
        let grad_norm = if finite { optim::grad_norm(&self.model) } else { f64::NAN };
        let skipped = match clip_decision(grad_norm, cfg.grad_clip, cfg.grad_skip_norm) {
            ClipDecision::Apply { scale } => {
                self.optimizer.update(&mut self.model, lr, scale);
                false
            }
            ClipDecision::Skip => {
                log::warn!("iteration {}: skipping update, gradient norm {grad_norm}", self.iter);
                self.skipped += 1;
                true
            }
        };
        let metrics = StepMetrics { iter: self.iter, loss, grad_norm, lr, skipped };
        self.iter += 1;
        Ok(metrics)
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const MODEL_FILE: &str = "model.ckpt";

#[derive(Serialize)]
struct CsvRow {
    iter: usize,
    loss: f64,
    l2: f64,
    perceptual: f64,
    grad_norm: f64,
    lr: f64,
    skipped: u8,
}

/// Runs the remaining iterations. With `out`, appends every step to
/// `metrics.csv`, checkpoints periodically and writes the final model.
pub fn train<T: Real>(trainer: &mut Trainer<T>, data: &[Example], out: Option<&Path>) -> Result<Vec<StepMetrics>> {
    let mut writer = match out {
        Some(dir) => {
            io::create_dir_all(dir)?;
            let path = dir.join(METRICS_FILE);
            let file = std::fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
            let fresh = file.metadata().map(|m| m.len() == 0).unwrap_or(true);
            Some((csv::WriterBuilder::new().has_headers(fresh).from_writer(file), path))
        }
        None => None,
    };
    let mut history = Vec::with_capacity(trainer.config.iters);
    while trainer.iter < trainer.config.iters {
        let m = trainer.step(data)?;
        if let Some((w, path)) = writer.as_mut() {
            let row = CsvRow {
                iter: m.iter,
                loss: m.loss.total,
                l2: m.loss.l2,
                perceptual: m.loss.perceptual,
                grad_norm: m.grad_norm,
                lr: m.lr,
                skipped: m.skipped as u8,
            };
            w.serialize(row).and_then(|_| w.flush().map_err(Into::into)).map_err(|e| Error::format(path.as_path(), e.to_string()))?;
        }
        if m.iter % 50 == 0 {
            log::info!("iter {:5} loss {:.5} l2 {:.5} grad {:.3} lr {:.2e}", m.iter, m.loss.total, m.loss.l2, m.grad_norm, m.lr);
        }
        let every = trainer.config.checkpoint_every;
        if let Some(dir) = out {
            if every > 0 && trainer.iter % every == 0 && trainer.iter < trainer.config.iters {
                save_model(&dir.join(CHECKPOINT_FILE), &trainer.model)?;
            }
        }
        history.push(m);
    }
    if let Some(dir) = out {
        save_model(&dir.join(MODEL_FILE), &trainer.model)?;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::data_synth::{make_example, DataConfig};
    use crate::model::ModelConfig;

    fn tiny() -> (RelitModel<f64>, Vec<Example>) {
        let cfg = ModelConfig { backbone: BackboneConfig::with_dim(16, 1, 1), ..ModelConfig::default() };
        let model = RelitModel::new(cfg, &mut rng::stream(1, 0)).unwrap();
        let dcfg = DataConfig { image_size: 16, input_views: 2, denoise_views: 1, extra_views: 1, ..DataConfig::default() };
        let data = (0..2).map(|s| make_example(s, &dcfg).unwrap()).collect();
        (model, data)
    }

    fn params(m: &RelitModel<f64>) -> Vec<f64> {
        let mut v = Vec::new();
        m.visit(&mut |p| v.extend(&p.value));
        v
    }

    fn train_cfg() -> TrainConfig {
        TrainConfig { batch_size: 2, iters: 10, warmup_iters: 2, peak_lr: 1e-3, ..TrainConfig::default() }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { warmup_iters: 2000, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { peak_lr: 0.0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn skipped_step_changes_nothing() {
        let (model, data) = tiny();
        let mut t = Trainer::new(model, TrainConfig { grad_skip_norm: 1e-12, ..train_cfg() }).unwrap();
        t.iter = 3;
        let before = params(&t.model);
        let opt = t.optimizer.clone();
        let m = t.step(&data).unwrap();
        assert!(m.skipped && m.grad_norm > 0.0);
        assert_eq!(t.skipped, 1);
        assert_eq!(params(&t.model), before);
        assert_eq!(t.optimizer, opt);
    }

    #[test]
    fn applied_step_moves_parameters_deterministically() {
        let (model, data) = tiny();
        let mut a = Trainer::new(model.clone(), train_cfg()).unwrap();
        let mut b = Trainer::new(model, train_cfg()).unwrap();
        a.iter = 3;
        b.iter = 3;
        let before = params(&a.model);
        let ma = a.step(&data).unwrap();
        let mb = b.step(&data).unwrap();
        assert!(!ma.skipped);
        assert_eq!(ma, mb);
        assert_eq!(params(&a.model), params(&b.model));
        assert_ne!(params(&a.model), before);
        assert_eq!(a.optimizer.step, 1);
    }

    #[test]
    fn training_writes_log_and_model() {
        let (model, data) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { iters: 3, warmup_iters: 1, checkpoint_every: 2, ..train_cfg() };
        let mut t = Trainer::new(model, cfg).unwrap();
        let hist = train(&mut t, &data, Some(dir.path())).unwrap();
        assert_eq!(hist.len(), 3);
        let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "iter,loss,l2,perceptual,grad_norm,lr,skipped");
        assert_eq!(lines.len(), 4);
        assert!(dir.path().join(CHECKPOINT_FILE).exists());
        let back: RelitModel<f64> = crate::model::load_model(&dir.path().join(MODEL_FILE)).unwrap();
        assert_eq!(back.config, t.model.config);
    }
}
