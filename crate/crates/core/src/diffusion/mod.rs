//! DDPM noise schedule, forward noising, DDIM stepping and guidance.

pub mod sampler;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

pub use sampler::{sample_relit, SampleOutput, SamplerConfig};

pub const BETA_START: f64 = 0.00085;
pub const BETA_END: f64 = 0.0120;
pub const NUM_TIMESTEPS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// β linear in t.
    #[default]
    Linear,
    /// √β linear in t.
    SqrtLinear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub betas: Vec<f64>,
    pub alpha_cumprod: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidArgument(format!("schedule needs at least 2 steps, got {steps}")));
        }
        let last = (steps - 1) as f64;
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                let f = i as f64 / last;
                match kind {
                    ScheduleKind::Linear => BETA_START * (1.0 - f) + BETA_END * f,
                    ScheduleKind::SqrtLinear => {
                        if i == 0 {
                            BETA_START
                        } else if i == steps - 1 {
                            BETA_END
                        } else {
                            (BETA_START.sqrt() * (1.0 - f) + BETA_END.sqrt() * f).powi(2)
                        }
                    }
                }
            })
            .collect();
        let alpha_cumprod = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { kind, betas, alpha_cumprod })
    }

    pub fn linear() -> Self {
        Self::new(ScheduleKind::Linear, NUM_TIMESTEPS).expect("default schedule is valid")
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_cumprod
            .get(t)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("timestep {t} outside [0, {})", self.len())))
    }

    /// `x_t = √ᾱ_t x0 + √(1-ᾱ_t) ε`.
    pub fn q_sample<T: Real>(&self, x0: &[T], t: usize, noise: &[T]) -> Result<Vec<T>> {
        if x0.len() != noise.len() {
            return Err(Error::Shape(format!("x0 has {} values, noise {}", x0.len(), noise.len())));
        }
        let ab = self.alpha_bar(t)?;
        let (a, b) = (T::lit(ab.sqrt()), T::lit((1.0 - ab).sqrt()));
        Ok(x0.iter().zip(noise).map(|(&x, &e)| a * x + b * e).collect())
    }

    /// Deterministic DDIM update from `t` to `t_prev`; `None` is the clean
    /// endpoint (ᾱ = 1) and returns `x0_hat`.
    pub fn ddim_step<T: Real>(&self, x_t: &[T], x0_hat: &[T], t: usize, t_prev: Option<usize>) -> Result<Vec<T>> {
        if x_t.len() != x0_hat.len() {
            return Err(Error::Shape(format!("x_t has {} values, x0_hat {}", x_t.len(), x0_hat.len())));
        }
        let ab = self.alpha_bar(t)?;
        let Some(tp) = t_prev else {
            return Ok(x0_hat.to_vec());
        };
        if tp > t {
            return Err(Error::InvalidArgument(format!("DDIM step must descend, got {t} -> {tp}")));
        }
        if tp == t {
            return Ok(x_t.to_vec());
        }
        let abp = self.alpha_bar(tp)?;
        let noise_scale = (1.0 - ab).sqrt().max(1e-12);
        let (sa, inv_n) = (T::lit(ab.sqrt()), T::lit(1.0 / noise_scale));
        let (sap, np) = (T::lit(abp.sqrt()), T::lit((1.0 - abp).sqrt()));
        Ok(x_t
            .iter()
            .zip(x0_hat)
            .map(|(&x, &x0)| {
                let eps = (x - sa * x0) * inv_n;
                sap * x0 + np * eps
            })
            .collect())
    }

    /// Noise implied by `x_t` and a clean estimate.
    pub fn implied_noise<T: Real>(&self, x_t: &[T], x0_hat: &[T], t: usize) -> Result<Vec<T>> {
        let ab = self.alpha_bar(t)?;
        let (sa, inv_n) = (T::lit(ab.sqrt()), T::lit(1.0 / (1.0 - ab).sqrt().max(1e-12)));
        Ok(x_t.iter().zip(x0_hat).map(|(&x, &x0)| (x - sa * x0) * inv_n).collect())
    }
}

/// Descending timesteps `t_k = (T-1)(S-k)/S`, `k = 0..S-1`.
pub fn timestep_ladder(num_timesteps: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > num_timesteps {
        return Err(Error::InvalidArgument(format!("sampling steps must be in [1, {num_timesteps}], got {steps}")));
    }
    Ok((0..steps).map(|k| (num_timesteps - 1) * (steps - k) / steps).collect())
}

/// `sh_u + w (sh_c - sh_u)`. The endpoints `w = 1` and `w = 0` return
/// the conditional and unconditional inputs bit for bit.
pub fn cfg_combine<T: Real>(sh_cond: &[T], sh_uncond: &[T], w: f64) -> Result<Vec<T>> {
    if sh_cond.len() != sh_uncond.len() {
        return Err(Error::Shape(format!("{} conditional vs {} unconditional values", sh_cond.len(), sh_uncond.len())));
    }
    if w == 1.0 {
        return Ok(sh_cond.to_vec());
    }
    if w == 0.0 {
        return Ok(sh_uncond.to_vec());
    }
    let w = T::lit(w);
    Ok(sh_cond.iter().zip(sh_uncond).map(|(&c, &u)| u + w * (c - u)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn schedule_endpoints_and_monotonicity() {
        let s = NoiseSchedule::linear();
        assert_eq!(s.betas[0], 0.00085);
        assert_eq!(s.betas[999], 0.0120);
        assert!(s.betas.windows(2).all(|w| w[1] > w[0]));
        assert!(s.alpha_cumprod.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(s.alpha_cumprod[0], 1.0 - 0.00085);
        for t in [0, 1, 10, 500, 999] {
            let direct: f64 = s.betas[..=t].iter().map(|b| 1.0 - b).product();
            assert!((direct - s.alpha_cumprod[t]).abs() < 1e-12);
        }
        let q = NoiseSchedule::new(ScheduleKind::SqrtLinear, 1000).unwrap();
        assert_eq!(q.betas[0], 0.00085);
        assert_eq!(q.betas[999], 0.0120);
        assert!(q.betas.windows(2).all(|w| w[1] > w[0]));
        assert!(q.betas[500] < s.betas[500]);
    }

    #[test]
    fn q_sample_examples() {
        let s = NoiseSchedule::linear();
        let x0 = [0.2f64, 0.9, 0.5];
        let e = [1.0f64, -0.5, 0.3];
        let x = s.q_sample(&x0, 0, &e).unwrap();
        for i in 0..3 {
            assert!((x[i] - (0.99915f64.sqrt() * x0[i] + 0.00085f64.sqrt() * e[i])).abs() < 1e-15);
        }
        let x = s.q_sample(&x0, 700, &[0.0; 3]).unwrap();
        let a = s.alpha_cumprod[700].sqrt();
        assert_eq!(x, x0.map(|v| a * v).to_vec());
        assert!(s.q_sample(&x0, 1000, &e).is_err());
        assert!(s.q_sample(&x0, 3, &e[..2]).is_err());
    }

    #[test]
    fn ddim_examples() {
        let s = NoiseSchedule::linear();
        let mut r = rng::stream(1, 0);
        let x0 = rng::normals(&mut r, 16);
        let eps = rng::normals(&mut r, 16);
        let xt = s.q_sample(&x0, 600, &eps).unwrap();
        let rec = s.implied_noise(&xt, &x0, 600).unwrap();
        for (a, b) in rec.iter().zip(&eps) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s.ddim_step(&xt, &x0, 600, None).unwrap(), x0);
        assert_eq!(s.ddim_step(&xt, &x0, 600, Some(600)).unwrap(), xt);
        assert!(s.ddim_step(&xt, &x0, 600, Some(700)).is_err());
        // with the true x0 the step lands on the same noise trajectory
        let prev = s.ddim_step(&xt, &x0, 600, Some(200)).unwrap();
        let expect = s.q_sample(&x0, 200, &eps).unwrap();
        for (a, b) in prev.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ladder_examples() {
        assert_eq!(timestep_ladder(1000, 5).unwrap(), vec![999, 799, 599, 399, 199]);
        assert_eq!(timestep_ladder(1000, 1).unwrap(), vec![999]);
        assert!(timestep_ladder(1000, 0).is_err());
        assert!(timestep_ladder(10, 11).is_err());
    }

    #[test]
    fn cfg_examples() {
        let c = [0.3f32, -1.0, 2.5];
        let u = [0.1f32, 0.4, -0.7];
        assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c.to_vec());
        assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), u.to_vec());
        let g = cfg_combine(&c, &u, 3.0).unwrap();
        assert!((g[0] - 0.7).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn ladder_is_strictly_descending(steps in 1usize..200) {
            let l = timestep_ladder(1000, steps).unwrap();
            prop_assert_eq!(l.len(), steps);
            prop_assert_eq!(l[0], 999);
            prop_assert!(l.windows(2).all(|w| w[1] < w[0]));
        }

        #[test]
        fn cfg_is_affine(w in -5.0f64..5.0, c in -10.0f64..10.0, u in -10.0f64..10.0) {
            let g = cfg_combine(&[c], &[u], w).unwrap()[0];
            prop_assert!((g - (u + w * (c - u))).abs() < 1e-9);
        }
    }
}
