//! Pre-LN transformer backbone: the geometry stack (`L1` blocks) and the
//! appearance stack (`L2` blocks) share the same block type.

pub mod attention;
pub mod block;
pub mod checkpoint;
pub mod layers;

pub use attention::Attention;
pub use block::{BlockCache, Stack, TransformerBlock};
pub use layers::{LayerNorm, Linear, Module, Param};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Hidden (token) dimension.
    pub d: usize,
    pub mlp_dim: usize,
    pub heads: usize,
    /// Geometry stack depth.
    pub l1: usize,
    /// Appearance stack depth.
    pub l2: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            d: 128,
            mlp_dim: 512,
            heads: 4,
            l1: 4,
            l2: 2,
        }
    }
}

impl BackboneConfig {
    /// Configuration with `heads = d / 32` (at least one head).
    pub fn with_dim(d: usize, l1: usize, l2: usize) -> Self {
        Self {
            d,
            mlp_dim: 4 * d,
            heads: (d / 32).max(1),
            l1,
            l2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden dim {} must be a positive multiple of heads {}",
                self.d, self.heads
            )));
        }
        if self.l1 == 0 || self.l2 == 0 {
            return Err(Error::Config("both stacks need at least one layer".into()));
        }
        if self.mlp_dim == 0 {
            return Err(Error::Config("mlp_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn geometry_stack<T: Real>(&self, rng: &mut Rng) -> Stack<T> {
        Stack::new("geometry", self.l1, self.d, self.mlp_dim, self.heads, rng)
    }

    pub fn appearance_stack<T: Real>(&self, rng: &mut Rng) -> Stack<T> {
        Stack::new("appearance", self.l2, self.d, self.mlp_dim, self.heads, rng)
    }
}

/// Adds Gaussian noise of scale `std` to every parameter. Used to move away
/// from the zero-initialised residual branches in tests and ablations.
pub fn jitter_params<T: Real, M: Module<T> + ?Sized>(module: &mut M, std: f64, rng: &mut Rng) {
    module.visit_mut(&mut |p| {
        for v in &mut p.value {
            *v += T::lit(std * rng::normal(rng));
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;

    fn random_tokens(n: usize, d: usize, seed: u64) -> Mat<f64> {
        let mut r = rng::stream(seed, 9);
        Mat::from_vec(n, d, rng::normals(&mut r, n * d)).unwrap()
    }

    #[test]
    fn zero_initialised_block_is_identity() {
        let mut r = rng::stream(0, 0);
        let block = TransformerBlock::<f64>::new("b", 16, 64, 2, &mut r);
        let x = random_tokens(5, 16, 1);
        let (y, _) = block.forward(&x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut r = rng::stream(0, 0);
        let mut block = TransformerBlock::<f64>::new("b", 16, 64, 4, &mut r);
        jitter_params(&mut block, 0.3, &mut r);
        let (_, cache) = block.forward(&random_tokens(7, 16, 2)).unwrap();
        for p in cache.attention().probs() {
            for row in 0..p.rows {
                let s: f64 = p.row(row).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut r = rng::stream(3, 0);
        let mut stack = Stack::<f64>::new("s", 2, 16, 32, 2, &mut r);
        jitter_params(&mut stack, 0.2, &mut r);
        let x = random_tokens(6, 16, 4);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut xp = Mat::zeros(6, 16);
        for (i, &p) in perm.iter().enumerate() {
            xp.row_mut(i).copy_from_slice(x.row(p));
        }
        let (y, _) = stack.forward(&x).unwrap();
        let (yp, _) = stack.forward(&xp).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for (a, b) in yp.row(i).iter().zip(y.row(p)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_width_mismatch() {
        let mut r = rng::stream(0, 0);
        let block = TransformerBlock::<f64>::new("b", 16, 64, 2, &mut r);
        assert!(block.forward(&Mat::zeros(3, 8)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(BackboneConfig::default().validate().is_ok());
        let bad = BackboneConfig { heads: 3, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = BackboneConfig { l2: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert_eq!(BackboneConfig::with_dim(1024, 24, 8).heads, 32);
    }

    /// Weighted-sum loss over the stack output, gradients checked by central
    /// differences on inputs and a sample of weights.
    #[test]
    fn stack_gradients_match_finite_differences() {
        let mut r = rng::stream(5, 0);
        let mut stack = Stack::<f64>::new("s", 2, 16, 32, 2, &mut r);
        jitter_params(&mut stack, 0.3, &mut r);
        let x = random_tokens(4, 16, 6);
        let w = random_tokens(4, 16, 7);
        let loss = |s: &Stack<f64>, x: &Mat<f64>| -> f64 {
            let (y, _) = s.forward(x).unwrap();
            y.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
        };
        let (_, caches) = stack.forward(&x).unwrap();
        let dx = stack.backward(&caches, &w);
        let h = 1e-6;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for i in (0..x.data.len()).step_by(5) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data[i] += h;
            xm.data[i] -= h;
            let num = (loss(&stack, &xp) - loss(&stack, &xm)) / (2.0 * h);
            assert!(rel(dx.data[i], num) < 1e-5, "input {i}");
            assert!(dx.data[i] != 0.0);
        }
        let mut grads = Vec::new();
        stack.visit(&mut |p| grads.push(p.grad.clone()));
        let mut pi = 0;
        let snapshot = stack.clone();
        snapshot.visit(&mut |p| {
            for j in (0..p.len()).step_by(97) {
                let mut sp = snapshot.clone();
                let mut sm = snapshot.clone();
                let mut k = 0;
                sp.visit_mut(&mut |q| {
                    if k == pi {
                        q.value[j] += h;
                    }
                    k += 1;
                });
                k = 0;
                sm.visit_mut(&mut |q| {
                    if k == pi {
                        q.value[j] -= h;
                    }
                    k += 1;
                });
                let num = (loss(&sp, &x) - loss(&sm, &x)) / (2.0 * h);
                assert!(rel(grads[pi][j], num) < 1e-5, "{}[{j}]", p.name);
            }
            pi += 1;
        });
    }
}
