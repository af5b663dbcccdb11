//! Pre-LN transformer block and block stacks.

use crate::backbone::attention::{Attention, AttentionCache};
use crate::backbone::layers::{gelu_backward, gelu_mat, LayerNorm, LayerNormCache, Linear, Module, Param};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Mat;

/// `x ← x + Attn(LN(x)); x ← x + MLP(LN(x))`, MLP = Linear → GeLU → Linear.
#[derive(Clone, Debug)]
pub struct TransformerBlock<T> {
    pub ln1: LayerNorm<T>,
    pub attn: Attention<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    h2: Mat<T>,
    ln2: LayerNormCache<T>,
    pre_act: Mat<T>,
    act: Mat<T>,
}

impl<T: Real> BlockCache<T> {
    pub fn attention(&self) -> &AttentionCache<T> {
        &self.attn
    }
}

impl<T: Real> TransformerBlock<T> {
    pub fn new(name: &str, d: usize, mlp_dim: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            ln1: LayerNorm::new(&format!("{name}.ln1"), d),
            attn: Attention::new(&format!("{name}.attn"), d, heads, rng),
            ln2: LayerNorm::new(&format!("{name}.ln2"), d),
            fc1: Linear::new(&format!("{name}.mlp.fc1"), d, mlp_dim, 0.02, rng),
            fc2: Linear::zeroed(&format!("{name}.mlp.fc2"), mlp_dim, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.fc2.d_out()
    }

    pub fn forward(&self, x: &Mat<T>) -> Result<(Mat<T>, BlockCache<T>)> {
        if x.cols != self.dim() {
            return Err(Error::Shape(format!(
                "token width {} does not match hidden dim {}",
                x.cols,
                self.dim()
            )));
        }
        let (h1, ln1) = self.ln1.forward(x);
        let (a, attn) = self.attn.forward(&h1);
        let mut x1 = x.clone();
        x1.add_assign(&a);
        let (h2, ln2) = self.ln2.forward(&x1);
        let pre_act = self.fc1.forward(&h2);
        let act = gelu_mat(&pre_act);
        let m = self.fc2.forward(&act);
        x1.add_assign(&m);
        Ok((
            x1,
            BlockCache {
                ln1,
                attn,
                h2,
                ln2,
                pre_act,
                act,
            },
        ))
    }

    pub fn backward(&mut self, cache: &BlockCache<T>, dy: &Mat<T>) -> Mat<T> {
        let dact = self.fc2.backward(&cache.act, dy, true).expect("dx");
        let dpre = gelu_backward(&cache.pre_act, &dact);
        let dh2 = self.fc1.backward(&cache.h2, &dpre, true).expect("dx");
        let mut dx1 = self.ln2.backward(&cache.ln2, &dh2);
        dx1.add_assign(dy);
        let dh1 = self.attn.backward(&cache.attn, &dx1);
        let mut dx = self.ln1.backward(&cache.ln1, &dh1);
        dx.add_assign(&dx1);
        dx
    }
}

impl<T: Real> Module<T> for TransformerBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.ln1.visit(f);
        self.attn.visit(f);
        self.ln2.visit(f);
        self.fc1.visit(f);
        self.fc2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.ln1.visit_mut(f);
        self.attn.visit_mut(f);
        self.ln2.visit_mut(f);
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

/// A sequence of blocks applied in order.
#[derive(Clone, Debug)]
pub struct Stack<T> {
    pub blocks: Vec<TransformerBlock<T>>,
}

impl<T: Real> Stack<T> {
    pub fn new(name: &str, layers: usize, d: usize, mlp_dim: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            blocks: (0..layers)
                .map(|l| TransformerBlock::new(&format!("{name}.{l}"), d, mlp_dim, heads, rng))
                .collect(),
        }
    }

    pub fn forward(&self, x: &Mat<T>) -> Result<(Mat<T>, Vec<BlockCache<T>>)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for b in &self.blocks {
            let (next, cache) = b.forward(&h)?;
            caches.push(cache);
            h = next;
        }
        Ok((h, caches))
    }

    pub fn backward(&mut self, caches: &[BlockCache<T>], dy: &Mat<T>) -> Mat<T> {
        let mut g = dy.clone();
        for (b, c) in self.blocks.iter_mut().zip(caches).rev() {
            g = b.backward(c, &g);
        }
        g
    }
}

impl<T: Real> Module<T> for Stack<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.blocks.iter().for_each(|b| b.visit(f));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.blocks.iter_mut().for_each(|b| b.visit_mut(f));
    }
}
