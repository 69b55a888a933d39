//! Permutation-invariant set encoder.
//!
//! Each observation becomes one token; a learned summary token is appended
//! and its final representation is the dataset embedding. There are no
//! positional embeddings, so the output does not depend on token order, and
//! invalid tokens are removed from attention through the key mask.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::layers::{Dense, LayerNorm};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub num_heads: usize,
    pub use_positional_embeddings: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            model_dim: 256,
            ff_dim: 1024,
            num_heads: 4,
            use_positional_embeddings: false,
        }
    }
}

impl EncoderConfig {
    /// A reduced encoder for CPU-scale experiments.
    pub fn small() -> Self {
        Self {
            num_layers: 2,
            model_dim: 64,
            ff_dim: 128,
            num_heads: 4,
            use_positional_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} must be divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.use_positional_embeddings {
            return Err(Error::InvalidConfig(
                "positional embeddings would break permutation invariance".into(),
            ));
        }
        if self.num_layers == 0 || self.ff_dim == 0 {
            return Err(Error::InvalidConfig(
                "encoder needs at least one layer and ff_dim > 0".into(),
            ));
        }
        Ok(())
    }
}

const SET_SIZE_FEATURES: usize = 16;

/// `[sin(ω_j ℓ), cos(ω_j ℓ)]` of `ℓ = ln(1 + n)` with `ω_j` log-spaced on
/// `[0.25, 16]`, so set sizes an order of magnitude apart and sizes a few
/// percent apart both map to distinct features.
pub fn set_size_features(n: usize) -> Vec<f64> {
    let l = (1.0 + n as f64).ln();
    let half = SET_SIZE_FEATURES / 2;
    let (lo, hi) = (0.25f64.ln(), 16f64.ln());
    (0..half)
        .flat_map(|j| {
            let w = (lo + (hi - lo) * j as f64 / (half - 1) as f64).exp();
            [(w * l).sin(), (w * l).cos()]
        })
        .collect()
}

/// Embedded tokens of one dataset: data tokens first, the summary token last.
#[derive(Clone, Debug)]
pub struct TokenSequence {
    pub tokens: Var,
    pub mask: Vec<bool>,
    pub summary_index: usize,
}

#[derive(Clone, Debug)]
struct Block {
    ln_attn: LayerNorm,
    query: Dense,
    key: Dense,
    value: Dense,
    out: Dense,
    ln_ff: LayerNorm,
    ff_in: Dense,
    ff_out: Dense,
}

#[derive(Clone, Debug)]
pub struct SetEncoder {
    pub config: EncoderConfig,
    pub token_dim: usize,
    embed: Dense,
    summary: ParamId,
    set_size: Dense,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
}

impl SetEncoder {
    pub fn new(
        store: &mut ParamStore,
        config: EncoderConfig,
        token_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let embed = Dense::new(store, "enc.embed", token_dim, d, rng);
        let summary = store.add_uniform("enc.summary", 1, d, 1, rng);
        let set_size = Dense::new(store, "enc.set_size", SET_SIZE_FEATURES, d, rng);
        let blocks = (0..config.num_layers)
            .map(|l| {
                let p = format!("enc.{l}");
                Block {
                    ln_attn: LayerNorm::new(store, &format!("{p}.ln1"), d),
                    query: Dense::new(store, &format!("{p}.q"), d, d, rng),
                    key: Dense::new(store, &format!("{p}.k"), d, d, rng),
                    value: Dense::new(store, &format!("{p}.v"), d, d, rng),
                    out: Dense::new(store, &format!("{p}.o"), d, d, rng),
                    ln_ff: LayerNorm::new(store, &format!("{p}.ln2"), d),
                    ff_in: Dense::new(store, &format!("{p}.ff1"), d, config.ff_dim, rng),
                    ff_out: Dense::new(store, &format!("{p}.ff2"), config.ff_dim, d, rng),
                }
            })
            .collect();
        let ln_final = LayerNorm::new(store, "enc.ln_final", d);
        Ok(Self {
            config,
            token_dim,
            embed,
            summary,
            set_size,
            blocks,
            ln_final,
        })
    }

    pub fn model_dim(&self) -> usize {
        self.config.model_dim
    }

    /// Projects raw token features (`k × token_dim`) and appends the summary
    /// token, which carries an embedding of the number of valid rows.
    /// `mask[i] == false` marks row `i` as padding.
    pub fn embed(&self, g: &mut Graph, features: &Tensor, mask: &[bool]) -> Result<TokenSequence> {
        if features.cols() != self.token_dim {
            return Err(Error::DimensionMismatch(format!(
                "token features have {} columns, encoder expects {}",
                features.cols(),
                self.token_dim
            )));
        }
        if mask.len() != features.rows() {
            return Err(Error::DimensionMismatch(
                "mask length differs from token count".into(),
            ));
        }
        let x = g.input(features.clone());
        let projected = self.embed.forward(g, x);
        let valid = mask.iter().filter(|&&m| m).count();
        let summary = g.param(self.summary);
        let feats = g.input(Tensor::row(set_size_features(valid)));
        let size = self.set_size.forward(g, feats);
        let summary = g.add(summary, size);
        let tokens = g.concat_rows(&[projected, summary]);
        let mut full_mask = mask.to_vec();
        full_mask.push(true);
        Ok(TokenSequence {
            tokens,
            mask: full_mask,
            summary_index: features.rows(),
        })
    }

    /// Runs the encoder and returns the `1 × model_dim` summary output. The
    /// last block only computes the summary row, which is all the output
    /// depends on.
    pub fn forward(&self, g: &mut Graph, seq: &TokenSequence) -> Var {
        let mut x = seq.tokens;
        let last = self.blocks.len() - 1;
        for (l, block) in self.blocks.iter().enumerate() {
            let query_row = (l == last).then_some(seq.summary_index);
            x = self.block_forward(g, block, x, &seq.mask, query_row);
        }
        self.ln_final.forward(g, x)
    }

    /// Convenience: embed then encode.
    pub fn encode(&self, g: &mut Graph, features: &Tensor, mask: &[bool]) -> Result<Var> {
        let seq = self.embed(g, features, mask)?;
        Ok(self.forward(g, &seq))
    }

    fn block_forward(
        &self,
        g: &mut Graph,
        b: &Block,
        x: Var,
        mask: &[bool],
        query_row: Option<usize>,
    ) -> Var {
        let heads = self.config.num_heads;
        let dh = self.config.model_dim / heads;
        let h = b.ln_attn.forward(g, x);
        let (residual, hq) = match query_row {
            Some(r) => (g.slice_rows(x, r, 1), g.slice_rows(h, r, 1)),
            None => (x, h),
        };
        let q = b.query.forward(g, hq);
        let k = b.key.forward(g, h);
        let v = b.value.forward(g, h);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for head in 0..heads {
            let qh = g.slice_cols(q, head * dh, dh);
            let kh = g.slice_cols(k, head * dh, dh);
            let vh = g.slice_cols(v, head * dh, dh);
            let scores = g.matmul_bt(qh, kh);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores, Some(mask));
            outs.push(g.matmul(attn, vh));
        }
        let cat = if heads == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)
        };
        let attn_out = b.out.forward(g, cat);
        let x = g.add(residual, attn_out);

        let h2 = b.ln_ff.forward(g, x);
        let f = b.ff_in.forward(g, h2);
        let f = g.relu(f);
        let f = b.ff_out.forward(g, f);
        g.add(x, f)
    }
}
