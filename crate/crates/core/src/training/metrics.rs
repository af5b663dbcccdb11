//! Evaluation metrics on `H × W × 3` images in `[0, 1]`.

use crate::error::{Error, Result};

pub const PSNR_CAP: f64 = 99.0;
const SSIM_TAPS: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check(pred: &[f64], gt: &[f64], mask: Option<&[bool]>) -> Result<()> {
    if pred.len() != gt.len() || pred.len() % 3 != 0 {
        return Err(Error::Shape(format!("images have {} and {} values", pred.len(), gt.len())));
    }
    if let Some(m) = mask {
        if m.len() * 3 != pred.len() {
            return Err(Error::Shape(format!("mask has {} pixels, images {}", m.len(), pred.len() / 3)));
        }
    }
    Ok(())
}

/// Mean squared error over all channels of the (masked) pixels.
pub fn mse(pred: &[f64], gt: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    check(pred, gt, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, (a, b)) in pred.chunks_exact(3).zip(gt.chunks_exact(3)).enumerate() {
        if mask.is_some_and(|m| !m[p]) {
            continue;
        }
        for c in 0..3 {
            sum += (a[c] - b[c]).powi(2);
        }
        n += 3;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("mask selects no pixels".into()));
    }
    Ok(sum / n as f64)
}

/// `−10 log10(MSE)`, capped at 99 dB.
pub fn psnr(pred: &[f64], gt: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let m = mse(pred, gt, mask)?;
    Ok(if m <= 0.0 { PSNR_CAP } else { (-10.0 * m.log10()).min(PSNR_CAP) })
}

/// Per-channel least-squares scale of `pred` onto `gt` over the mask,
/// applied to every pixel.
pub fn channel_align(pred: &[f64], gt: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    check(pred, gt, mask)?;
    let mut num = [0.0; 3];
    let mut den = [0.0; 3];
    for (p, (a, b)) in pred.chunks_exact(3).zip(gt.chunks_exact(3)).enumerate() {
        if mask.is_some_and(|m| !m[p]) {
            continue;
        }
        for c in 0..3 {
            num[c] += a[c] * b[c];
            den[c] += a[c] * a[c];
        }
    }
    let s: [f64; 3] = std::array::from_fn(|c| if den[c] > 0.0 { num[c] / den[c] } else { 1.0 });
    Ok(pred.iter().enumerate().map(|(i, &v)| v * s[i % 3]).collect())
}

fn gaussian_window() -> [f64; SSIM_TAPS] {
    let r = (SSIM_TAPS / 2) as f64;
    let mut w: [f64; SSIM_TAPS] = std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-mode Gaussian filter of one channel.
fn filter(x: &[f64], h: usize, w: usize, k: &[f64; SSIM_TAPS]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_TAPS + 1, w - SSIM_TAPS + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            tmp[y * ow + x0] = (0..SSIM_TAPS).map(|i| k[i] * x[y * w + x0 + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_TAPS).map(|i| k[i] * tmp[(y0 + i) * ow + x0]).sum();
        }
    }
    out
}

/// Mean SSIM over channels with an 11-tap Gaussian window (σ = 1.5) and
/// data range 1.
pub fn ssim(pred: &[f64], gt: &[f64], h: usize, w: usize) -> Result<f64> {
    check(pred, gt, None)?;
    if pred.len() != h * w * 3 {
        return Err(Error::Shape(format!("{} values do not form a {w}x{h} image", pred.len())));
    }
    if h < SSIM_TAPS || w < SSIM_TAPS {
        return Err(Error::InvalidArgument(format!("SSIM needs images of at least {SSIM_TAPS}x{SSIM_TAPS}")));
    }
    let k = gaussian_window();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    for c in 0..3 {
        let a: Vec<f64> = pred.iter().skip(c).step_by(3).copied().collect();
        let b: Vec<f64> = gt.iter().skip(c).step_by(3).copied().collect();
        let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter(&a, h, w, &k);
        let mu_b = filter(&b, h, w, &k);
        let saa = filter(&prod(&a, &a), h, w, &k);
        let sbb = filter(&prod(&b, &b), h, w, &k);
        let sab = filter(&prod(&a, &b), h, w, &k);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / 3.0)
}
