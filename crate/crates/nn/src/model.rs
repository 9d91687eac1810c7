//! MLPLOB, TLOB and the two attention ablations.

use lobtrend_autograd::{Bound, Graph, ParamStore, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::layers::{positional_encoding, Bin, Init, LayerNorm, Linear, MlpLobBlock, SelfAttention};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Mlplob,
    Tlob,
    /// TLOB with every spatial attention layer replaced by a temporal one.
    TlobNoSa,
    /// TLOB with every temporal attention layer replaced by a spatial one.
    TlobNoTa,
}

impl Architecture {
    pub const ALL: [Self; 4] = [Self::Mlplob, Self::Tlob, Self::TlobNoSa, Self::TlobNoTa];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mlplob => "mlplob",
            Self::Tlob => "tlob",
            Self::TlobNoSa => "tlob-no-sa",
            Self::TlobNoTa => "tlob-no-ta",
        }
    }

    /// Attention layer kinds inside one block.
    fn block_attention(self) -> &'static [AttentionAxis] {
        match self {
            Self::Mlplob => &[],
            Self::Tlob => &[AttentionAxis::Temporal, AttentionAxis::Spatial],
            Self::TlobNoSa => &[AttentionAxis::Temporal, AttentionAxis::Temporal],
            Self::TlobNoTa => &[AttentionAxis::Spatial, AttentionAxis::Spatial],
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionAxis {
    /// Across time steps, model dimension `N`.
    Temporal,
    /// Across features, model dimension `T`.
    Spatial,
}

fn default_heads() -> usize {
    1
}

fn default_expansion() -> usize {
    4
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Window length `T`.
    pub window: usize,
    /// Raw feature count `F`.
    pub features: usize,
    /// Hidden width `N`.
    pub hidden: usize,
    pub blocks: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_expansion")]
    pub expansion: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub positional_encoding: bool,
}

impl ModelConfig {
    /// Defaults: `N = 128`, TLOB variants with 4 blocks and `T = 128`,
    /// MLPLOB with 3 blocks and `T = 384`.
    pub fn new(architecture: Architecture, features: usize) -> Self {
        let (window, blocks) = match architecture {
            Architecture::Mlplob => (384, 3),
            _ => (128, 4),
        };
        Self {
            architecture,
            window,
            features,
            hidden: 128,
            blocks,
            heads: 1,
            expansion: 4,
            dropout: 0.0,
            seed: 0,
            positional_encoding: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.window == 0 || self.features == 0 || self.hidden == 0 {
            return bad(format!(
                "window, features and hidden must be positive (got {}, {}, {})",
                self.window, self.features, self.hidden
            ));
        }
        if self.blocks == 0 {
            return bad("blocks must be at least 1".into());
        }
        if self.heads != 1 {
            return bad(format!("only single-head attention is supported, got heads = {}", self.heads));
        }
        if self.expansion == 0 {
            return bad("expansion must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// `(temporal, spatial)` attention layer counts.
    pub fn attention_counts(&self) -> (usize, usize) {
        let per = self.architecture.block_attention();
        let t = per.iter().filter(|a| **a == AttentionAxis::Temporal).count();
        (t * self.blocks, (per.len() - t) * self.blocks)
    }

    /// Widths of the fully connected head after flattening.
    pub fn head_widths(&self) -> Vec<usize> {
        let mut widths = vec![self.window * reduced_width(self.hidden)];
        while *widths.last().unwrap() > 64 {
            let next = widths.last().unwrap() / 2;
            widths.push(next);
        }
        widths
    }
}

fn reduced_width(hidden: usize) -> usize {
    (hidden / 4).max(1)
}

/// Same structure with `variant`'s attention layout.
pub fn build_ablation(variant: Architecture, base: &ModelConfig) -> ModelConfig {
    ModelConfig {
        architecture: variant,
        ..base.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct AttentionLayer {
    axis: AttentionAxis,
    attn: SelfAttention,
    norm: LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    attention: Vec<AttentionLayer>,
    mix: MlpLobBlock,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    bin: Bin,
    input: Linear,
    blocks: Vec<Block>,
    reduce: Linear,
    head: Vec<Linear>,
}

/// A model's configuration, parameter values and parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
    layout: Layout,
    pe: Option<Tensor<S>>,
}

impl<S: Scalar> Model<S> {
    /// Initializes parameters deterministically from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (t, f, n) = (config.window, config.features, config.hidden);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init = Init { store: &mut store, rng: &mut rng };
        let bin = Bin::new(&mut init, "bin", t, f);
        let input = Linear::new(&mut init, "input", f, n, true);
        let mut blocks = Vec::with_capacity(config.blocks);
        for b in 0..config.blocks {
            let attention = config
                .architecture
                .block_attention()
                .iter()
                .enumerate()
                .map(|(i, &axis)| {
                    let name = format!("block{b}.attn{i}");
                    let dim = match axis {
                        AttentionAxis::Temporal => n,
                        AttentionAxis::Spatial => t,
                    };
                    AttentionLayer {
                        axis,
                        attn: SelfAttention::new(&mut init, &name, dim),
                        norm: LayerNorm::new(&mut init, &format!("{name}.norm"), dim),
                    }
                })
                .collect();
            let mix = MlpLobBlock::new(&mut init, &format!("block{b}.mix"), t, n, config.expansion);
            blocks.push(Block { attention, mix });
        }
        let reduce = Linear::new(&mut init, "head.reduce", n, reduced_width(n), true);
        let widths = config.head_widths();
        let mut head = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            head.push(Linear::new(&mut init, &format!("head.fc{i}"), w[0], w[1], true));
        }
        head.push(Linear::new(&mut init, "head.out", *widths.last().unwrap(), 3, true));
        let uses_pe = config.positional_encoding && config.architecture != Architecture::Mlplob;
        Ok(Self {
            pe: uses_pe.then(|| positional_encoding(t, n)),
            config,
            params: store,
            layout: Layout {
                bin,
                input,
                blocks,
                reduce,
                head,
            },
        })
    }

    /// Same layout with parameters from `params`, which must match by name and shape.
    pub fn with_params(config: ModelConfig, params: ParamStore<S>) -> Result<Self> {
        let mut m = Self::new(config)?;
        if m.params.len() != params.len() {
            return Err(NnError::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                params.len(),
                m.params.len()
            )));
        }
        for ((name, want), (got_name, got)) in m.params.iter().zip(params.iter()) {
            if name != got_name || want.shape() != got.shape() {
                return Err(NnError::Config(format!(
                    "checkpoint tensor {got_name} {:?} does not match {name} {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        m.params = params;
        Ok(m)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.num_scalars()
    }

    /// Logits `[B, 3]` for windows `x: [B, T, F]`. Dropout is active only
    /// when `rng` is given.
    pub fn forward(&self, g: &mut Graph<S>, p: &Bound, x: Var, mut rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let c = &self.config;
        let sh = g.shape(x).to_vec();
        if sh.len() != 3 || sh[1] != c.window || sh[2] != c.features {
            return Err(NnError::Config(format!(
                "input shape {sh:?} does not match [B, {}, {}]",
                c.window, c.features
            )));
        }
        let batch = sh[0];
        let l = &self.layout;
        let mut h = l.bin.forward(g, p, x)?;
        h = l.input.forward(g, p, h)?;
        if let Some(pe) = &self.pe {
            let pe = g.constant(pe.clone());
            h = g.add(h, pe)?;
        }
        for block in &l.blocks {
            for layer in &block.attention {
                h = match layer.axis {
                    AttentionAxis::Temporal => {
                        let a = layer.attn.forward(g, p, h)?;
                        let r = g.add(h, a)?;
                        layer.norm.forward(g, p, r)?
                    }
                    AttentionAxis::Spatial => {
                        let ht = g.transpose_last_two(h)?;
                        let a = layer.attn.forward(g, p, ht)?;
                        let r = g.add(ht, a)?;
                        let nrm = layer.norm.forward(g, p, r)?;
                        g.transpose_last_two(nrm)?
                    }
                };
            }
            h = block.mix.forward(g, p, h)?;
        }
        h = l.reduce.forward(g, p, h)?;
        h = g.gelu(h);
        h = g.reshape(h, &[batch, c.window * reduced_width(c.hidden)])?;
        let (last, hidden) = l.head.split_last().expect("output layer");
        for fc in hidden {
            h = fc.forward(g, p, h)?;
            h = g.gelu(h);
            if let Some(r) = rng.as_deref_mut() {
                h = g.dropout(h, c.dropout, r);
            }
        }
        last.forward(g, p, h)
    }

    /// Runs the model on a batch without tracking gradients; returns the
    /// logits row-major.
    pub fn logits(&self, x: Tensor<S>) -> Result<Vec<S>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x);
        let out = self.forward(&mut g, &p, xv, None)?;
        Ok(g.value(out).data().to_vec())
    }
}
