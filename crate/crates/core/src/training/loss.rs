//! Image reconstruction loss: per-pixel MSE plus an edge-map L1 term at
//! full and half resolution standing in for a perceptual loss.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub l2: f64,
    pub perceptual: f64,
}

/// 2×2 average pooling of `views × h × w × 3`; odd trailing rows/columns
/// are dropped.
pub fn downsample(x: &[f64], views: usize, h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![0.0; views * h2 * w2 * 3];
    for v in 0..views {
        for y in 0..h2 {
            for xx in 0..w2 {
                for c in 0..3 {
                    let at = |yy: usize, xc: usize| x[((v * h + yy) * w + xc) * 3 + c];
                    out[((v * h2 + y) * w2 + xx) * 3 + c] =
                        0.25 * (at(2 * y, 2 * xx) + at(2 * y, 2 * xx + 1) + at(2 * y + 1, 2 * xx) + at(2 * y + 1, 2 * xx + 1));
                }
            }
        }
    }
    (out, h2, w2)
}

fn upsample_grad(g: &[f64], views: usize, h: usize, w: usize, out: &mut [f64]) {
    let (h2, w2) = (h / 2, w / 2);
    for v in 0..views {
        for y in 0..h2 {
            for xx in 0..w2 {
                for c in 0..3 {
                    let gv = 0.25 * g[((v * h2 + y) * w2 + xx) * 3 + c];
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        out[((v * h + 2 * y + dy) * w + 2 * xx + dx) * 3 + c] += gv;
                    }
                }
            }
        }
    }
}

/// Mean `|∇pred − ∇gt|` over horizontal and vertical forward differences,
/// accumulating its gradient w.r.t. `pred` into `grad` scaled by `weight`.
fn edge_l1(pred: &[f64], gt: &[f64], views: usize, h: usize, w: usize, weight: f64, grad: &mut [f64]) -> f64 {
    let count = views * 3 * (h * w.saturating_sub(1) + h.saturating_sub(1) * w);
    if count == 0 {
        return 0.0;
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    let idx = |v: usize, y: usize, x: usize, c: usize| ((v * h + y) * w + x) * 3 + c;
    let mut edge = |a: usize, b: usize| {
        let d = (pred[b] - pred[a]) - (gt[b] - gt[a]);
        sum += d.abs();
        let s = weight * inv * d.signum() * (d != 0.0) as u8 as f64;
        grad[b] += s;
        grad[a] -= s;
    };
    for v in 0..views {
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    if x + 1 < w {
                        edge(idx(v, y, x, c), idx(v, y, x + 1, c));
                    }
                    if y + 1 < h {
                        edge(idx(v, y, x, c), idx(v, y + 1, x, c));
                    }
                }
            }
        }
    }
    sum * inv
}

/// Loss over `views × h × w × 3` renders and its gradient w.r.t. `pred`.
pub fn image_loss(
    pred: &[f64],
    gt: &[f64],
    views: usize,
    h: usize,
    w: usize,
    perceptual_weight: f64,
    use_perceptual: bool,
) -> Result<(LossTerms, Vec<f64>)> {
    let n = views * h * w * 3;
    if pred.len() != n || gt.len() != n || n == 0 {
        return Err(Error::Shape(format!(
            "loss expects {n} values ({views} views of {w}x{h}), got pred {} and gt {}",
            pred.len(),
            gt.len()
        )));
    }
    let inv = 1.0 / n as f64;
    let mut grad = vec![0.0; n];
    let mut l2 = 0.0;
    for i in 0..n {
        let d = pred[i] - gt[i];
        l2 += d * d;
        grad[i] = 2.0 * d * inv;
    }
    l2 *= inv;
    let mut perceptual = 0.0;
    if use_perceptual {
        perceptual += edge_l1(pred, gt, views, h, w, perceptual_weight, &mut grad);
        let (p2, h2, w2) = downsample(pred, views, h, w);
        let (g2, _, _) = downsample(gt, views, h, w);
        let mut grad2 = vec![0.0; p2.len()];
        perceptual += edge_l1(&p2, &g2, views, h2, w2, perceptual_weight, &mut grad2);
        upsample_grad(&grad2, views, h, w, &mut grad);
    }
    let total = l2 + if use_perceptual { perceptual_weight * perceptual } else { 0.0 };
    Ok((LossTerms { total, l2, perceptual }, grad))
}
