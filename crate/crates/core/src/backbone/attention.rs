//! Multi-head scaled dot-product self-attention (no mask).

use crate::backbone::layers::{Linear, Module, Param};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::{gemm, Mat, ViewMut};

#[derive(Clone, Debug)]
pub struct Attention<T> {
    pub heads: usize,
    pub qkv: Linear<T>,
    pub out: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct AttentionCache<T> {
    input: Mat<T>,
    qkv: Mat<T>,
    /// Softmax probabilities, one `N×N` block per head.
    probs: Vec<Mat<T>>,
    context: Mat<T>,
}

impl<T: Real> AttentionCache<T> {
    pub fn probs(&self) -> &[Mat<T>] {
        &self.probs
    }
}

impl<T: Real> Attention<T> {
    pub fn new(name: &str, d: usize, heads: usize, rng: &mut Rng) -> Self {
        assert!(heads > 0 && d % heads == 0, "hidden dim {d} not divisible by {heads} heads");
        Self {
            heads,
            qkv: Linear::new(&format!("{name}.qkv"), d, 3 * d, 0.02, rng),
            // residual branch output starts at zero
            out: Linear::zeroed(&format!("{name}.out"), d, d),
        }
    }

    fn dim(&self) -> usize {
        self.out.d_out()
    }

    pub fn forward(&self, x: &Mat<T>) -> (Mat<T>, AttentionCache<T>) {
        let n = x.rows;
        let d = self.dim();
        let dh = d / self.heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let qkv = self.qkv.forward(x);
        let mut context = Mat::zeros(n, d);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = qkv.cols_view(h * dh, dh);
            let k = qkv.cols_view(d + h * dh, dh);
            let v = qkv.cols_view(2 * d + h * dh, dh);
            let mut s = Mat::zeros(n, n);
            gemm(scale, q, k.t(), T::zero(), ViewMut::of(&mut s));
            softmax_rows(&mut s);
            gemm(T::one(), s.view(), v, T::zero(), ViewMut::cols_of(&mut context, h * dh, dh));
            probs.push(s);
        }
        let y = self.out.forward(&context);
        (
            y,
            AttentionCache {
                input: x.clone(),
                qkv,
                probs,
                context,
            },
        )
    }

    pub fn backward(&mut self, cache: &AttentionCache<T>, dy: &Mat<T>) -> Mat<T> {
        let n = dy.rows;
        let d = self.dim();
        let dh = d / self.heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let dctx = self
            .out
            .backward(&cache.context, dy, true)
            .expect("dx requested");
        let mut dqkv = Mat::zeros(n, 3 * d);
        let mut dp = Mat::zeros(n, n);
        for h in 0..self.heads {
            let p = &cache.probs[h];
            let q = cache.qkv.cols_view(h * dh, dh);
            let k = cache.qkv.cols_view(d + h * dh, dh);
            let v = cache.qkv.cols_view(2 * d + h * dh, dh);
            let d_o = dctx.cols_view(h * dh, dh);
            // dV = Pᵀ dO
            gemm(T::one(), p.view().t(), d_o, T::zero(), ViewMut::cols_of(&mut dqkv, 2 * d + h * dh, dh));
            // dP = dO Vᵀ, then softmax backward in place
            gemm(T::one(), d_o, v.t(), T::zero(), ViewMut::of(&mut dp));
            for r in 0..n {
                let pr = p.row(r);
                let dpr = dp.row_mut(r);
                let dot: T = pr.iter().zip(dpr.iter()).map(|(&a, &b)| a * b).sum();
                for (g, &pv) in dpr.iter_mut().zip(pr) {
                    *g = pv * (*g - dot);
                }
            }
            // dQ = dS K * scale, dK = dSᵀ Q * scale
            gemm(scale, dp.view(), k, T::zero(), ViewMut::cols_of(&mut dqkv, h * dh, dh));
            gemm(scale, dp.view().t(), q, T::zero(), ViewMut::cols_of(&mut dqkv, d + h * dh, dh));
        }
        self.qkv
            .backward(&cache.input, &dqkv, true)
            .expect("dx requested")
    }
}

fn softmax_rows<T: Real>(s: &mut Mat<T>) {
    for r in 0..s.rows {
        let row = s.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

impl<T: Real> Module<T> for Attention<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.qkv.visit(f);
        self.out.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.qkv.visit_mut(f);
        self.out.visit_mut(f);
    }
}
