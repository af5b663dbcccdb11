//! Parameters and the elementary layers: linear, layer norm, GeLU.

use crate::real::Real;
use crate::rng::{self, Rng};
use crate::tensor::{gemm, Mat, View, ViewMut};

/// A named trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
        }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: f64) -> Self {
        let mut p = Self::zeros(name, shape);
        p.value.fill(T::lit(v));
        p
    }

    pub fn trunc_normal(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(name, shape);
        for v in &mut p.value {
            *v = T::lit(rng::trunc_normal(rng, std));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Anything owning parameters. Visiting order is stable and defines the
/// checkpoint and optimizer layout.
pub trait Module<T: Real> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }
}

/// `y = x W + b` with `W` stored `in × out`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, d_in: usize, d_out: usize, std: f64, rng: &mut Rng) -> Self {
        Self {
            weight: Param::trunc_normal(format!("{name}.weight"), &[d_in, d_out], std, rng),
            bias: Param::zeros(format!("{name}.bias"), &[d_out]),
        }
    }

    pub fn zeroed(name: &str, d_in: usize, d_out: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), &[d_in, d_out]),
            bias: Param::zeros(format!("{name}.bias"), &[d_out]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape[1]
    }

    fn weight_mat(&self) -> View<'_, T> {
        View::from_slice(&self.weight.value, self.d_in(), self.d_out())
    }

    pub fn forward(&self, x: &Mat<T>) -> Mat<T> {
        assert_eq!(x.cols, self.d_in(), "{}: input width", self.weight.name);
        let mut y = Mat::zeros(x.rows, self.d_out());
        for r in 0..y.rows {
            y.row_mut(r).copy_from_slice(&self.bias.value);
        }
        gemm(T::one(), x.view(), self.weight_mat(), T::one(), ViewMut::of(&mut y));
        y
    }

    /// Accumulates parameter gradients; returns `dL/dx` when requested.
    pub fn backward(&mut self, x: &Mat<T>, dy: &Mat<T>, need_dx: bool) -> Option<Mat<T>> {
        let (d_in, d_out) = (self.d_in(), self.d_out());
        {
            let mut gw = Mat {
                rows: d_in,
                cols: d_out,
                data: std::mem::take(&mut self.weight.grad),
            };
            gemm(T::one(), x.view().t(), dy.view(), T::one(), ViewMut::of(&mut gw));
            self.weight.grad = gw.data;
        }
        for r in 0..dy.rows {
            for (g, &d) in self.bias.grad.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        need_dx.then(|| {
            let mut dx = Mat::zeros(dy.rows, d_in);
            gemm(T::one(), dy.view(), self.weight_mat().t(), T::zero(), ViewMut::of(&mut dx));
            dx
        })
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNorm<T> {
    pub gain: Param<T>,
    pub bias: Param<T>,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    xhat: Mat<T>,
    rstd: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(name: &str, d: usize) -> Self {
        Self {
            gain: Param::filled(format!("{name}.gain"), &[d], 1.0),
            bias: Param::zeros(format!("{name}.bias"), &[d]),
        }
    }

    pub fn forward(&self, x: &Mat<T>) -> (Mat<T>, LayerNormCache<T>) {
        let d = x.cols;
        let inv_d = T::lit(1.0 / d as f64);
        let eps = T::lit(LN_EPS);
        let mut xhat = Mat::zeros(x.rows, d);
        let mut y = Mat::zeros(x.rows, d);
        let mut rstd = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            let xh = xhat.row_mut(r);
            for (o, &v) in xh.iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
            let yr = &mut y.data[r * d..(r + 1) * d];
            for i in 0..d {
                yr[i] = xhat.data[r * d + i] * self.gain.value[i] + self.bias.value[i];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&mut self, cache: &LayerNormCache<T>, dy: &Mat<T>) -> Mat<T> {
        let d = dy.cols;
        let inv_d = T::lit(1.0 / d as f64);
        let mut dx = Mat::zeros(dy.rows, d);
        let mut dxhat = vec![T::zero(); d];
        for r in 0..dy.rows {
            let dyr = dy.row(r);
            let xh = cache.xhat.row(r);
            let mut mean_dxhat = T::zero();
            let mut mean_dxhat_xhat = T::zero();
            for i in 0..d {
                self.gain.grad[i] += dyr[i] * xh[i];
                self.bias.grad[i] += dyr[i];
                dxhat[i] = dyr[i] * self.gain.value[i];
                mean_dxhat += dxhat[i];
                mean_dxhat_xhat += dxhat[i] * xh[i];
            }
            mean_dxhat *= inv_d;
            mean_dxhat_xhat *= inv_d;
            let rs = cache.rstd[r];
            let out = dx.row_mut(r);
            for i in 0..d {
                out[i] = rs * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
            }
        }
        dx
    }
}

impl<T: Real> Module<T> for LayerNorm<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gain);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gain);
        f(&mut self.bias);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GeLU, tanh approximation.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let th = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::lit(3.0) * a * x * x)
}

pub fn gelu_mat<T: Real>(x: &Mat<T>) -> Mat<T> {
    Mat {
        rows: x.rows,
        cols: x.cols,
        data: x.data.iter().map(|&v| gelu(v)).collect(),
    }
}

/// `dL/dx` given the pre-activation input and `dL/dy`.
pub fn gelu_backward<T: Real>(x: &Mat<T>, dy: &Mat<T>) -> Mat<T> {
    Mat {
        rows: x.rows,
        cols: x.cols,
        data: x.data.iter().zip(&dy.data).map(|(&v, &g)| g * gelu_grad(v)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], grad: &[f64]) {
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let num = (f(&xp) - f(&xm)) / (2.0 * h);
            let err = (num - grad[i]).abs() / num.abs().max(grad[i].abs()).max(1e-6);
            assert!(err < 1e-5, "index {i}: analytic {} numeric {num}", grad[i]);
        }
    }

    #[test]
    fn gelu_derivative_matches_fd() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8);
        }
        assert_eq!(gelu(0.0f64), 0.0);
    }

    #[test]
    fn linear_backward_matches_fd() {
        let mut rng = crate::rng::stream(1, 0);
        let mut lin = Linear::<f64>::new("l", 3, 2, 0.5, &mut rng);
        let x = Mat::from_vec(2, 3, vec![0.1, -0.4, 0.3, 0.9, 0.2, -0.6]).unwrap();
        let up = Mat::from_vec(2, 2, vec![0.3, -1.0, 0.5, 0.7]).unwrap();
        let loss = |lin: &Linear<f64>, x: &Mat<f64>| -> f64 {
            lin.forward(x).data.iter().zip(&up.data).map(|(a, b)| a * b).sum()
        };
        let dx = lin.backward(&x, &up, true).unwrap();
        let w0 = lin.weight.value.clone();
        let base = lin.clone();
        fd_check(
            |xs| loss(&base, &Mat::from_vec(2, 3, xs.to_vec()).unwrap()),
            &x.data,
            &dx.data,
        );
        fd_check(
            |ws| {
                let mut l = base.clone();
                l.weight.value = ws.to_vec();
                loss(&l, &x)
            },
            &w0,
            &lin.weight.grad,
        );
    }

    #[test]
    fn layer_norm_backward_matches_fd() {
        let mut ln = LayerNorm::<f64>::new("ln", 4);
        ln.gain.value = vec![1.0, 0.5, -0.3, 2.0];
        ln.bias.value = vec![0.1, 0.0, 0.2, -0.1];
        let x = Mat::from_vec(2, 4, vec![0.3, -1.2, 0.8, 0.05, 2.0, 1.0, -0.5, 0.0]).unwrap();
        let up = vec![0.2, -0.4, 1.0, 0.3, -0.7, 0.1, 0.5, 0.9];
        let (_, cache) = ln.forward(&x);
        let dx = ln.backward(&cache, &Mat::from_vec(2, 4, up.clone()).unwrap());
        let base = ln.clone();
        fd_check(
            |xs| {
                let (y, _) = base.forward(&Mat::from_vec(2, 4, xs.to_vec()).unwrap());
                y.data.iter().zip(&up).map(|(a, b)| a * b).sum()
            },
            &x.data,
            &dx.data,
        );
        fd_check(
            |gs| {
                let mut l = base.clone();
                l.gain.value = gs.to_vec();
                let (y, _) = l.forward(&x);
                y.data.iter().zip(&up).map(|(a, b)| a * b).sum()
            },
            &base.gain.value,
            &ln.gain.grad,
        );
    }
}
