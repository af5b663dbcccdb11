//! Token-to-pixel decoding heads (LayerNorm, linear, unpatchify).

use crate::backbone::layers::{LayerNorm, LayerNormCache, Linear, Module, Param};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Mat;
use crate::tokenization::{patchify, unpatchify};

use super::sh::{Y00, SH_BASIS, SH_COEFFS};
use super::RAW_CHANNELS;

/// Per-token head producing a `p×p×channels` pixel block. Equivalent to a
/// transposed convolution with kernel = stride = `p`.
#[derive(Clone, Debug)]
pub struct DecodeHead<T> {
    pub patch: usize,
    pub channels: usize,
    pub ln: LayerNorm<T>,
    pub proj: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct DecodeCache<T> {
    ln: LayerNormCache<T>,
    normed: Mat<T>,
    grid: (usize, usize, usize),
}

impl<T: Real> DecodeHead<T> {
    pub fn new(name: &str, d: usize, patch: usize, channels: usize, rng: &mut Rng) -> Self {
        Self {
            patch,
            channels,
            ln: LayerNorm::new(&format!("{name}.ln"), d),
            proj: Linear::new(&format!("{name}.proj"), d, channels * patch * patch, 0.02, rng),
        }
    }

    /// Geometry head: 9 raw channels per pixel.
    pub fn geometry(name: &str, d: usize, patch: usize, rng: &mut Rng) -> Self {
        Self::new(name, d, patch, RAW_CHANNELS, rng)
    }

    /// SH head. The DC bias starts at mid-gray so an untrained model
    /// renders gray rather than black; weights of the view-dependent bands
    /// start at zero.
    pub fn sh(name: &str, d: usize, patch: usize, rng: &mut Rng) -> Self {
        let mut head = Self::new(name, d, patch, SH_COEFFS, rng);
        let cols = head.proj.d_out();
        for (i, w) in head.proj.weight.value.iter_mut().enumerate() {
            if (i % cols) % SH_BASIS != 0 {
                *w = T::zero();
            }
        }
        let dc = T::lit(0.5 / Y00);
        for px in 0..patch * patch {
            for ch in 0..3 {
                head.proj.bias.value[px * SH_COEFFS + ch * SH_BASIS] = dc;
            }
        }
        head
    }

    /// Decodes `views × (H/p) × (W/p)` tokens into a `views × H × W × C`
    /// field.
    pub fn forward(&self, tokens: &Mat<T>, views: usize, height: usize, width: usize) -> Result<(Vec<T>, DecodeCache<T>)> {
        let p = self.patch;
        if height % p != 0 || width % p != 0 || tokens.rows != views * (height / p) * (width / p) {
            return Err(Error::Shape(format!(
                "{} tokens do not form a {views}x{}x{} grid",
                tokens.rows,
                height / p.max(1),
                width / p.max(1)
            )));
        }
        if tokens.cols != self.proj.d_in() {
            return Err(Error::Shape(format!("token width {} != head width {}", tokens.cols, self.proj.d_in())));
        }
        let (normed, ln) = self.ln.forward(tokens);
        let out = self.proj.forward(&normed);
        let field = unpatchify(&out, views, height, width, self.channels, p)?;
        Ok((field, DecodeCache { ln, normed, grid: (views, height, width) }))
    }

    /// Accumulates parameter gradients and returns the token gradient.
    pub fn backward(&mut self, cache: &DecodeCache<T>, dfield: &[T]) -> Result<Mat<T>> {
        let (views, height, width) = cache.grid;
        let dout = patchify(dfield, views, height, width, self.channels, self.patch)?;
        let dnormed = self.proj.backward(&cache.normed, &dout, true).expect("dx requested");
        Ok(self.ln.backward(&cache.ln, &dnormed))
    }
}

impl<T: Real> Module<T> for DecodeHead<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.ln.visit(f);
        self.proj.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.ln.visit_mut(f);
        self.proj.visit_mut(f);
    }
}

/// Geometry tokens to the raw `views × H × W × 9` field.
pub fn decode_geometry_raw<T: Real>(head: &DecodeHead<T>, tokens: &Mat<T>, views: usize, height: usize, width: usize) -> Result<Vec<T>> {
    Ok(head.forward(tokens, views, height, width)?.0)
}

/// Appearance tokens to `M × 75` SH coefficients, channel-major per pixel
/// (`ch * 25 + k`).
pub fn decode_sh<T: Real>(head: &DecodeHead<T>, tokens: &Mat<T>, views: usize, height: usize, width: usize) -> Result<Vec<T>> {
    Ok(head.forward(tokens, views, height, width)?.0)
}
