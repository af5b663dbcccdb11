//! Learnable tokenizers: patch projection, light MLP and timestep MLP.

use crate::backbone::layers::{gelu_backward, gelu_mat, Linear, Module, Param};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Mat;
use crate::tokenization::envmap::{light_features, EnvMap};
use crate::tokenization::{patch_origins, patchify, sinusoidal_embedding, PatchOrigin, TokenRole, TokenSequence, FEATURE_CHANNELS};

/// Patchify followed by a linear map to the hidden dimension.
#[derive(Clone, Debug)]
pub struct PatchTokenizer<T> {
    pub patch: usize,
    pub channels: usize,
    pub role: TokenRole,
    pub proj: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct PatchCache<T> {
    patches: Mat<T>,
}

impl<T: Real> PatchTokenizer<T> {
    pub fn new(name: &str, role: TokenRole, patch: usize, channels: usize, d: usize, rng: &mut Rng) -> Self {
        Self {
            patch,
            channels,
            role,
            proj: Linear::new(name, channels * patch * patch, d, 0.02, rng),
        }
    }

    pub fn forward(&self, field: &[T], views: usize, height: usize, width: usize) -> Result<(TokenSequence<T>, PatchCache<T>)> {
        let patches = patchify(field, views, height, width, self.channels, self.patch)?;
        let tokens = self.proj.forward(&patches);
        Ok((
            TokenSequence {
                tokens,
                role: self.role,
                origins: patch_origins(views, height, width, self.patch),
            },
            PatchCache { patches },
        ))
    }

    pub fn backward(&mut self, cache: &PatchCache<T>, dtokens: &Mat<T>) {
        self.proj.backward(&cache.patches, dtokens, false);
    }
}

impl<T: Real> Module<T> for PatchTokenizer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.proj.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.proj.visit_mut(f);
    }
}

/// Environment map to light tokens: patchify → linear → GeLU → linear.
#[derive(Clone, Debug)]
pub struct LightTokenizer<T> {
    pub patch: usize,
    pub proj: Linear<T>,
    pub mlp: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct LightCache<T> {
    patches: Mat<T>,
    pre_act: Mat<T>,
    act: Mat<T>,
}

impl<T: Real> LightTokenizer<T> {
    pub fn new(name: &str, patch: usize, d: usize, rng: &mut Rng) -> Self {
        Self {
            patch,
            proj: Linear::new(&format!("{name}.proj"), FEATURE_CHANNELS * patch * patch, d, 0.02, rng),
            mlp: Linear::new(&format!("{name}.mlp"), d, d, 0.02, rng),
        }
    }

    pub fn forward(&self, env: &EnvMap) -> Result<(TokenSequence<T>, LightCache<T>)> {
        let feats: Vec<T> = light_features(env)?.into_iter().map(T::lit).collect();
        let patches = patchify(&feats, 1, env.height, env.width, FEATURE_CHANNELS, self.patch)?;
        let pre_act = self.proj.forward(&patches);
        let act = gelu_mat(&pre_act);
        let tokens = self.mlp.forward(&act);
        Ok((
            TokenSequence {
                tokens,
                role: TokenRole::Light,
                origins: patch_origins(1, env.height, env.width, self.patch),
            },
            LightCache { patches, pre_act, act },
        ))
    }

    pub fn backward(&mut self, cache: &LightCache<T>, dtokens: &Mat<T>) {
        let dact = self.mlp.backward(&cache.act, dtokens, true).expect("dx");
        let dpre = gelu_backward(&cache.pre_act, &dact);
        self.proj.backward(&cache.patches, &dpre, false);
    }
}

impl<T: Real> Module<T> for LightTokenizer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.proj.visit(f);
        self.mlp.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.proj.visit_mut(f);
        self.mlp.visit_mut(f);
    }
}

/// Sinusoidal timestep features through a two-layer MLP.
#[derive(Clone, Debug)]
pub struct TimestepEmbedder<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct TimestepCache<T> {
    features: Mat<T>,
    pre_act: Mat<T>,
    act: Mat<T>,
}

impl<T: Real> TimestepEmbedder<T> {
    pub fn new(name: &str, d: usize, rng: &mut Rng) -> Self {
        Self {
            fc1: Linear::new(&format!("{name}.fc1"), d, d, 0.02, rng),
            fc2: Linear::new(&format!("{name}.fc2"), d, d, 0.02, rng),
        }
    }

    pub fn forward(&self, t: usize, num_steps: usize) -> Result<(TokenSequence<T>, TimestepCache<T>)> {
        if t >= num_steps {
            return Err(Error::InvalidArgument(format!("timestep {t} outside [0, {num_steps})")));
        }
        let d = self.fc1.d_in();
        let features = Mat::from_vec(1, d, sinusoidal_embedding(t, d).into_iter().map(T::lit).collect())?;
        let pre_act = self.fc1.forward(&features);
        let act = gelu_mat(&pre_act);
        let tokens = self.fc2.forward(&act);
        Ok((
            TokenSequence {
                tokens,
                role: TokenRole::Timestep,
                origins: vec![PatchOrigin { view: 0, row: 0, col: 0 }],
            },
            TimestepCache { features, pre_act, act },
        ))
    }

    pub fn backward(&mut self, cache: &TimestepCache<T>, dtoken: &Mat<T>) {
        let dact = self.fc2.backward(&cache.act, dtoken, true).expect("dx");
        let dpre = gelu_backward(&cache.pre_act, &dact);
        self.fc1.backward(&cache.features, &dpre, false);
    }
}

impl<T: Real> Module<T> for TimestepEmbedder<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.fc1.visit(f);
        self.fc2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_inputs_with_zero_bias_give_zero_tokens() {
        let mut r = rng::stream(0, 0);
        let tok = PatchTokenizer::<f64>::new("t", TokenRole::InputView, 8, 9, 16, &mut r);
        let field = vec![0.0; 2 * 16 * 16 * 9];
        let (seq, _) = tok.forward(&field, 2, 16, 16).unwrap();
        assert_eq!(seq.len(), 8);
        assert!(seq.tokens.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn light_token_count() {
        let mut r = rng::stream(0, 0);
        let tok = LightTokenizer::<f64>::new("l", 8, 16, &mut r);
        let (seq, _) = tok.forward(&EnvMap::constant(64, 32, 1.0)).unwrap();
        assert_eq!(seq.len(), 32);
        assert_eq!(seq.role, TokenRole::Light);
        // masking zeroes token vectors after tokenization
        assert!(seq.zeroed().tokens.data.iter().all(|&v| v == 0.0));
        assert!(seq.tokens.data.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn timestep_range_checked() {
        let mut r = rng::stream(0, 0);
        let emb = TimestepEmbedder::<f64>::new("ts", 16, &mut r);
        assert!(emb.forward(999, 1000).is_ok());
        assert!(emb.forward(1000, 1000).is_err());
        let (a, _) = emb.forward(3, 1000).unwrap();
        let (b, _) = emb.forward(700, 1000).unwrap();
        assert_eq!(a.len(), 1);
        assert_ne!(a.tokens.data, b.tokens.data);
    }
}
