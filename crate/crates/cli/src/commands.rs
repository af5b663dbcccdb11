use std::path::{Path, PathBuf};

use relit_core::cameras::{Camera, CameraRecord};
use relit_core::config::RunConfig;
use relit_core::data_synth::dataset::{generate_dataset, Dataset};
use relit_core::diffusion::sampler::{sample_relit, SamplerConfig};
use relit_core::gaussians::ply::{self, PlyLayout};
use relit_core::io::{self, pfm, png, RgbImage};
use relit_core::model::{load_model, render_views, RelitModel};
use relit_core::renderer::RenderOptions;
use relit_core::tokenization::envmap::EnvMap;
use relit_core::training::{self, metrics, Trainer};
use relit_core::{rng, Error, Result};

use crate::views::load_views;

pub const PLY_FILE: &str = "gaussians.ply";
pub const CAMERAS_FILE: &str = "cameras.json";
const TURNTABLE_RADIUS: f64 = 2.7;
const TURNTABLE_ELEVATION: f64 = 0.35;

pub fn gen_data(config: &RunConfig, out: &Path, scenes: usize, seed: u64) -> Result<()> {
    let index = generate_dataset(out, scenes, seed, &config.data)?;
    log::info!("wrote {} scenes to {} ({} train, {} val)", scenes, out.display(), index.train.len(), index.val.len());
    Ok(())
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Error::InvalidArgument(format!("--{name} is required (or set paths.{name} in the config)")))
}

pub fn train(config: &RunConfig, data: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let data = required(data, &config.paths.data, "data")?;
    let out = required(out, &config.paths.out, "out")?;
    let examples = Dataset::open(&data)?.load_train()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument(format!("{} has no training scenes", data.display())));
    }
    io::create_dir_all(&out)?;
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, config.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let mut init = rng::stream(config.seed, rng::label(&[0x1417]));
    let model = RelitModel::<f32>::new(config.model.clone(), &mut init)?;
    let mut trainer = Trainer::new(model, config.train.clone())?;
    log::info!("training on {} scenes for {} iterations", examples.len(), config.train.iters);
    let history = training::train(&mut trainer, &examples, Some(&out))?;
    let last = history.last().map(|m| m.loss.total).unwrap_or(f64::NAN);
    log::info!("done: final loss {last:.5}, {} skipped steps, model in {}", trainer.skipped, out.join(training::MODEL_FILE).display());
    Ok(())
}

fn write_frames(out: &Path, prefix: &str, images: &[f32], cams: &[Camera]) -> Result<()> {
    let mut off = 0;
    for (i, cam) in cams.iter().enumerate() {
        let n = cam.width * cam.height * 3;
        let img = RgbImage::from_data(cam.width, cam.height, images[off..off + n].to_vec())?;
        png::write(&out.join(format!("{prefix}_{i:03}.png")), &img)?;
        pfm::write(&out.join(format!("{prefix}_{i:03}.pfm")), &img)?;
        off += n;
    }
    Ok(())
}

pub fn relight(ckpt: &Path, views: &Path, envmap: Option<&Path>, sampler: &SamplerConfig, out: &Path) -> Result<()> {
    if sampler.steps == 0 {
        return Err(Error::InvalidArgument("--steps must be positive".into()));
    }
    let model: RelitModel<f32> = load_model(ckpt)?;
    let (inputs, targets) = load_views(views)?;
    let env = envmap.map(EnvMap::read_pfm).transpose()?;
    if env.is_none() {
        log::warn!("no --envmap given: relighting unconditionally with masked light tokens");
    }
    let result = sample_relit(&model, &inputs, env.as_ref(), &targets, sampler, &RenderOptions::default())?;
    io::create_dir_all(out)?;
    ply::write(&out.join(PLY_FILE), &result.gaussians, PlyLayout::Native)?;
    write_frames(out, "relit", &result.images, &targets)?;
    let records: Vec<CameraRecord> = targets.iter().map(Camera::to_record).collect();
    io::write_json(&out.join(CAMERAS_FILE), &records)?;
    log::info!(
        "relit {} Gaussians over timesteps {:?}; wrote {}",
        result.gaussians.len(),
        result.timesteps,
        out.display()
    );
    Ok(())
}

/// Cameras circling the origin at a fixed elevation.
pub fn turntable(frames: usize, size: usize) -> Result<Vec<Camera>> {
    if frames == 0 || size == 0 {
        return Err(Error::InvalidArgument("turntable needs positive --frames and --size".into()));
    }
    (0..frames)
        .map(|i| {
            let a = i as f64 * std::f64::consts::TAU / frames as f64;
            let (ce, se) = (TURNTABLE_ELEVATION.cos(), TURNTABLE_ELEVATION.sin());
            let eye = [TURNTABLE_RADIUS * ce * a.cos(), TURNTABLE_RADIUS * ce * a.sin(), TURNTABLE_RADIUS * se];
            Camera::look_at(eye, [0.0; 3], [0.0, 0.0, 1.0], 1.25 * size as f64, size, size)
        })
        .collect()
}

pub fn render(ply_path: &Path, camera_path: Option<&Path>, out: &Path, frames: usize, size: usize) -> Result<()> {
    let g = ply::read(ply_path)?;
    let cams = match camera_path {
        Some(p) => {
            let recs: Vec<CameraRecord> = io::read_json(p)?;
            if recs.is_empty() {
                return Err(Error::format(p, "camera path is empty"));
            }
            recs.iter().map(Camera::from_record).collect::<Result<Vec<_>>>()?
        }
        None => turntable(frames, size)?,
    };
    let (images, _) = render_views(&g, &cams, &RenderOptions::default())?;
    io::create_dir_all(out)?;
    write_frames(out, "frame", &images, &cams)?;
    log::info!("rendered {} frames of {} Gaussians to {}", cams.len(), g.len(), out.display());
    Ok(())
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn to_f64(img: &RgbImage) -> Vec<f64> {
    img.data.iter().map(|&v| v as f64).collect()
}

pub fn eval(pred: &Path, gt: &Path, mask: Option<&Path>) -> Result<()> {
    let names: Vec<String> = png_names(pred)?.into_iter().filter(|n| gt.join(n).exists()).collect();
    if names.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no PNG names shared by {} and {}",
            pred.display(),
            gt.display()
        )));
    }
    println!("{:<28} {:>9} {:>7}", "image", "psnr_db", "ssim");
    let (mut sum_p, mut sum_s) = (0.0, 0.0);
    for n in &names {
        let p = png::read(&pred.join(n))?;
        let g = png::read(&gt.join(n))?;
        if (p.width, p.height) != (g.width, g.height) {
            return Err(Error::Shape(format!("{n}: prediction {}x{} vs ground truth {}x{}", p.width, p.height, g.width, g.height)));
        }
        let m = match mask {
            Some(dir) => {
                let img = png::read(&dir.join(n))?;
                if (img.width, img.height) != (g.width, g.height) {
                    return Err(Error::Shape(format!("{n}: mask size differs from the image")));
                }
                Some(img.data.chunks_exact(3).map(|px| px[0] > 0.5).collect::<Vec<bool>>())
            }
            None => None,
        };
        let (pv, gv) = (to_f64(&p), to_f64(&g));
        let aligned = metrics::channel_align(&pv, &gv, m.as_deref())?;
        let psnr = metrics::psnr(&aligned, &gv, m.as_deref())?;
        let ssim = metrics::ssim(&aligned, &gv, g.height, g.width)?;
        println!("{n:<28} {psnr:>9.3} {ssim:>7.4}");
        sum_p += psnr;
        sum_s += ssim;
    }
    let k = names.len() as f64;
    println!("{:<28} {:>9.3} {:>7.4}", "mean", sum_p / k, sum_s / k);
    Ok(())
}
