//! Building blocks: linear maps, layer norm, mixing MLPs, bilinear input
//! normalization, sinusoidal positions and single-head self-attention.

use lobtrend_autograd::{Bound, Graph, ParamId, ParamStore, Scalar, Tensor, Var, NORM_EPS};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Registers freshly initialized parameters under a name prefix.
pub struct Init<'a, S> {
    pub store: &'a mut ParamStore<S>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<S: Scalar> Init<'_, S> {
    /// Glorot uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| S::of(self.rng.random_range(-a..a))).collect();
        self.store.add(name, Tensor::from_vec(shape.to_vec(), data).expect("shape"))
    }

    pub fn full(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, S::of(value)))
    }
}

/// `x W + b` over the last axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<S: Scalar>(init: &mut Init<'_, S>, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let w = init.glorot(&format!("{name}.w"), &[fan_in, fan_out], fan_in, fan_out);
        let b = bias.then(|| init.full(&format!("{name}.b"), &[fan_out], 0.0));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.get(self.w))?;
        Ok(match self.b {
            Some(b) => g.add(y, p.get(b))?,
            None => y,
        })
    }
}

/// Standardization over the last axis with a learned gain and bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<S: Scalar>(init: &mut Init<'_, S>, name: &str, dim: usize) -> Self {
        Self {
            gain: init.full(&format!("{name}.gain"), &[dim], 1.0),
            bias: init.full(&format!("{name}.bias"), &[dim], 0.0),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        Ok(g.layer_norm(x, p.get(self.gain), p.get(self.bias), NORM_EPS)?)
    }
}

/// `gelu(LayerNorm(gelu(x W1 + b1) W2 + b2 + x))` applied to every vector
/// along the last axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixMlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub norm: LayerNorm,
}

impl MixMlp {
    pub fn new<S: Scalar>(init: &mut Init<'_, S>, name: &str, dim: usize, expansion: usize) -> Self {
        Self {
            fc1: Linear::new(init, &format!("{name}.fc1"), dim, expansion * dim, true),
            fc2: Linear::new(init, &format!("{name}.fc2"), expansion * dim, dim, true),
            norm: LayerNorm::new(init, &format!("{name}.norm"), dim),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, p, x)?;
        let h = g.gelu(h);
        let h = self.fc2.forward(g, p, h)?;
        let r = g.add(h, x)?;
        let n = self.norm.forward(g, p, r)?;
        Ok(g.gelu(n))
    }
}

/// Mixing across features of each time step (rows of a `[.., T, N]` input).
pub fn feature_mix<S: Scalar>(g: &mut Graph<S>, p: &Bound, mlp: &MixMlp, x: Var) -> Result<Var> {
    mlp.forward(g, p, x)
}

/// Mixing across time for each feature (columns of a `[.., T, N]` input).
pub fn temporal_mix<S: Scalar>(g: &mut Graph<S>, p: &Bound, mlp: &MixMlp, x: Var) -> Result<Var> {
    let xt = g.transpose_last_two(x)?;
    let y = mlp.forward(g, p, xt)?;
    Ok(g.transpose_last_two(y)?)
}

/// Feature mixing followed by temporal mixing on a `[.., T, N]` input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpLobBlock {
    pub feature: MixMlp,
    pub temporal: MixMlp,
}

impl MlpLobBlock {
    pub fn new<S: Scalar>(init: &mut Init<'_, S>, name: &str, window: usize, hidden: usize, expansion: usize) -> Self {
        Self {
            feature: MixMlp::new(init, &format!("{name}.feature"), hidden, expansion),
            temporal: MixMlp::new(init, &format!("{name}.temporal"), window, expansion),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        let u = feature_mix(g, p, &self.feature, x)?;
        temporal_mix(g, p, &self.temporal, u)
    }
}

/// Bilinear input normalization of a `[.., T, F]` window.
///
/// The time branch standardizes each feature over the window and applies a
/// per-feature affine map; the feature branch standardizes each time step
/// over the features and applies a per-time-step affine map. The output is
/// `l1 * time + l2 * feature`. An axis of length 1 is not standardized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub time_gain: ParamId,
    pub time_bias: ParamId,
    pub feature_gain: ParamId,
    pub feature_bias: ParamId,
    pub l1: ParamId,
    pub l2: ParamId,
    pub window: usize,
    pub features: usize,
}

impl Bin {
    pub fn new<S: Scalar>(init: &mut Init<'_, S>, name: &str, window: usize, features: usize) -> Self {
        Self {
            time_gain: init.full(&format!("{name}.time_gain"), &[features], 1.0),
            time_bias: init.full(&format!("{name}.time_bias"), &[features], 0.0),
            feature_gain: init.full(&format!("{name}.feature_gain"), &[window, 1], 1.0),
            feature_bias: init.full(&format!("{name}.feature_bias"), &[window, 1], 0.0),
            l1: init.full(&format!("{name}.l1"), &[1], 0.5),
            l2: init.full(&format!("{name}.l2"), &[1], 0.5),
            window,
            features,
        }
    }

    /// Standardized time branch before its affine map.
    pub fn time_branch<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        if self.window < 2 {
            return Ok(x);
        }
        let xt = g.transpose_last_two(x)?;
        let z = g.standardize_last(xt, NORM_EPS);
        Ok(g.transpose_last_two(z)?)
    }

    /// Standardized feature branch before its affine map.
    pub fn feature_branch<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Var {
        if self.features < 2 {
            return x;
        }
        g.standardize_last(x, NORM_EPS)
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        let zt = self.time_branch(g, x)?;
        let zt = g.mul(zt, p.get(self.time_gain))?;
        let zt = g.add(zt, p.get(self.time_bias))?;
        let zf = self.feature_branch(g, x);
        let zf = g.mul(zf, p.get(self.feature_gain))?;
        let zf = g.add(zf, p.get(self.feature_bias))?;
        let a = g.mul(zt, p.get(self.l1))?;
        let b = g.mul(zf, p.get(self.l2))?;
        Ok(g.add(a, b)?)
    }
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(...)`.
pub fn positional_encoding<S: Scalar>(len: usize, dim: usize) -> Tensor<S> {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for j in 0..dim {
            let i2 = (j - j % 2) as f64;
            let angle = pos as f64 / 10000f64.powf(i2 / dim as f64);
            data.push(S::of(if j % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::from_vec(vec![len, dim], data).expect("shape")
}

/// Single-head scaled dot-product self-attention over the second-to-last
/// axis of a `[.., S, d]` input, with bias-free `d x d` projections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub dim: usize,
}

impl SelfAttention {
    pub fn new<S: Scalar>(init: &mut Init<'_, S>, name: &str, dim: usize) -> Self {
        let mut proj = |suffix: &str| init.glorot(&format!("{name}.{suffix}"), &[dim, dim], dim, dim);
        Self {
            wq: proj("wq"),
            wk: proj("wk"),
            wv: proj("wv"),
            wo: proj("wo"),
            dim,
        }
    }

    /// Attention weights `softmax(Q K^T / sqrt(d))` and values `V`.
    pub fn weights<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<(Var, Var)> {
        let q = g.matmul(x, p.get(self.wq))?;
        let k = g.matmul(x, p.get(self.wk))?;
        let v = g.matmul(x, p.get(self.wv))?;
        let kt = g.transpose_last_two(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, S::of(1.0 / (self.dim as f64).sqrt()));
        Ok((g.softmax_last(scores), v))
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        let (a, v) = self.weights(g, p, x)?;
        let ctx = g.matmul(a, v)?;
        Ok(g.matmul(ctx, p.get(self.wo))?)
    }
}

/// Attention across the feature axis of a `[.., T, N]` input: transpose,
/// attend with model dimension `T`, transpose back.
pub fn spatial_attention<S: Scalar>(g: &mut Graph<S>, p: &Bound, attn: &SelfAttention, x: Var) -> Result<Var> {
    let xt = g.transpose_last_two(x)?;
    let y = attn.forward(g, p, xt)?;
    Ok(g.transpose_last_two(y)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn fresh<S: Scalar>(seed: u64) -> (ParamStore<S>, ChaCha8Rng) {
        (ParamStore::new(), ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn linear_parameter_count() {
        let (mut store, mut rng) = fresh::<f64>(0);
        let mut init = Init { store: &mut store, rng: &mut rng };
        Linear::new(&mut init, "l", 40, 64, true);
        assert_eq!(store.num_scalars(), 40 * 64 + 64);
        assert_eq!(ParamStore::<f64>::new().num_scalars(), 0);
    }

    #[test]
    fn glorot_bounds() {
        let (mut store, mut rng) = fresh::<f64>(1);
        let mut init = Init { store: &mut store, rng: &mut rng };
        let id = init.glorot("w", &[10, 20], 10, 20);
        let a = (6.0f64 / 30.0).sqrt();
        assert!(store.get(id).data().iter().all(|v| v.abs() < a));
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding::<f64>(3, 4);
        assert_eq!(pe.data()[..4], [0.0, 1.0, 0.0, 1.0]);
        assert!((pe.at(&[1, 0]) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.at(&[1, 0]) - 0.841471).abs() < 1e-6);
        assert!((pe.at(&[1, 3]) - (1.0f64 / 100.0).cos()).abs() < 1e-15);
        assert!(positional_encoding::<f64>(50, 16).data().iter().all(|v| v.abs() <= 1.0));
    }
}
