//! Triplane attention: plane-wise self-attention, attention against the fused
//! token sequence of all three planes, and attention to word features.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tpa3d_autodiff::{Array, Param, Tensor};

use crate::error::{Error, Result};
use crate::nn::fan_in_normal;
use crate::triplane::Triplane;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// self, fuse, cross-plane, cross-word
    #[default]
    Full,
    NoCrossWord,
    NoCrossPlane,
    /// Blocks pass their input through; the upsample-and-sum baseline.
    Identity,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoCrossWord, Ablation::NoCrossPlane, Ablation::Identity];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoCrossWord => "no_cross_word",
            Ablation::NoCrossPlane => "no_cross_plane",
            Ablation::Identity => "identity",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}` (full|no_cross_word|no_cross_plane|identity)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TpaConfig {
    pub heads: usize,
    /// Adds the fixed 2-D sinusoidal code to plane tokens.
    pub positional: bool,
    pub ln_eps: f64,
}

impl Default for TpaConfig {
    fn default() -> Self {
        Self { heads: 4, positional: true, ln_eps: 1e-5 }
    }
}

/// Fixed 2-D sinusoidal code, `[H*W x d]` in row-major token order.
///
/// A quarter of the channels each carries sin/cos of the column and row
/// coordinate (normalized to `[0, 1]`) at octave frequencies; leftover
/// channels are zero.
pub fn positional_encoding(h: usize, w: usize, d: usize) -> Array {
    let bands = d / 4;
    let norm = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    let mut out = Array::zeros([h * w, d]);
    let data = out.data_mut();
    for r in 0..h {
        for c in 0..w {
            let row = &mut data[(r * w + c) * d..(r * w + c + 1) * d];
            for k in 0..bands {
                let freq = std::f64::consts::PI * (1u64 << k) as f64;
                let (u, v) = (norm(c, w) * freq, norm(r, h) * freq);
                row[4 * k] = u.sin();
                row[4 * k + 1] = u.cos();
                row[4 * k + 2] = v.sin();
                row[4 * k + 3] = v.cos();
            }
        }
    }
    out
}

/// `[d x H x W]` plane to `[H*W x d]` tokens.
pub fn plane_tokens(plane: &Tensor) -> Result<Tensor> {
    let s = plane.shape();
    Ok(plane.reshape(&[s[0], s[1] * s[2]])?.transpose()?)
}

/// Inverse of [`plane_tokens`].
pub fn tokens_to_plane(tokens: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let d = tokens.shape()[1];
    Ok(tokens.transpose()?.reshape(&[d, h, w])?)
}

/// Initial scale of output projections relative to fan-in normal, so each
/// residual stage starts close to the identity.
pub const OUT_INIT_GAIN: f64 = 0.1;

/// Multi-head scaled dot-product attention with an output projection.
#[derive(Debug)]
pub struct Attention {
    pub query: Param,
    pub key: Param,
    pub value: Param,
    pub out: Param,
    heads: usize,
}

impl Attention {
    pub fn new(
        name: &str,
        query_dim: usize,
        key_dim: usize,
        model_dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || model_dim % heads != 0 {
            return Err(Error::Config(format!("channel count {model_dim} is not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Param::new(format!("{name}.query"), fan_in_normal([query_dim, model_dim], query_dim, rng)),
            key: Param::new(format!("{name}.key"), fan_in_normal([key_dim, model_dim], key_dim, rng)),
            value: Param::new(format!("{name}.value"), fan_in_normal([key_dim, model_dim], key_dim, rng)),
            out: Param::new(format!("{name}.out"), fan_in_normal([model_dim, model_dim], model_dim, rng).map(|x| x * OUT_INIT_GAIN)),
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.query, &self.key, &self.value, &self.out]
    }

    fn project(&self, queries: &Tensor, keys: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        Ok((
            queries.matmul(&self.query.tensor())?,
            keys.matmul(&self.key.tensor())?,
            keys.matmul(&self.value.tensor())?,
        ))
    }

    fn head_probabilities(&self, q: &Tensor, k: &Tensor, head: usize, mask: Option<&[bool]>) -> Result<Tensor> {
        let dh = q.shape()[1] / self.heads;
        let qh = q.narrow(1, head * dh, dh)?;
        let kh = k.narrow(1, head * dh, dh)?;
        let scores = qh.matmul(&kh.transpose()?)?.scale(1.0 / (dh as f64).sqrt());
        Ok(scores.masked_softmax_rows(mask)?)
    }

    /// Attention probabilities `[n x m]`, one per head.
    pub fn probabilities(&self, queries: &Tensor, keys: &Tensor, mask: Option<&[bool]>) -> Result<Vec<Tensor>> {
        let (q, k, _) = self.project(queries, keys)?;
        (0..self.heads).map(|h| self.head_probabilities(&q, &k, h, mask)).collect()
    }

    /// Concatenated per-head attention-weighted values, before the output projection.
    pub fn readout(&self, queries: &Tensor, keys: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
        if let Some(m) = mask {
            if m.len() != keys.shape()[0] {
                return Err(Error::Usage(format!("key mask has {} entries for {} keys", m.len(), keys.shape()[0])));
            }
        }
        let (q, k, v) = self.project(queries, keys)?;
        let (dq, dv) = (q.shape()[1] / self.heads, v.shape()[1] / self.heads);
        let scale = 1.0 / (dq as f64).sqrt();
        let parts = (0..self.heads)
            .map(|h| {
                let (qh, kh) = (q.narrow(1, h * dq, dq)?, k.narrow(1, h * dq, dq)?);
                Ok(Tensor::attention(&qh, &kh, &v.narrow(1, h * dv, dv)?, scale, mask)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::concat(&parts, 1)?)
    }

    /// `residual + readout * W_out`.
    pub fn forward(&self, residual: &Tensor, queries: &Tensor, keys: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
        let r = self.readout(queries, keys, mask)?;
        Ok(residual.add(&r.matmul(&self.out.tensor())?)?)
    }
}

fn with_position(tokens: &Tensor, h: usize, w: usize, config: &TpaConfig) -> Result<Tensor> {
    if !config.positional {
        return Ok(tokens.clone());
    }
    let pe = Tensor::constant(positional_encoding(h, w, tokens.shape()[1]));
    Ok(tokens.add(&pe)?)
}

/// Layer-normalized, position-coded query tokens of one plane.
pub fn plane_queries(plane: &Tensor, config: &TpaConfig) -> Result<Tensor> {
    let s = plane.shape();
    Ok(with_position(&plane_tokens(plane)?, s[1], s[2], config)?.layer_norm_rows(config.ln_eps)?)
}

/// `f_prev` upsampled ×2 plus the layer's sentence-level triplane; the first
/// layer has no predecessor.
pub fn compose_geo_input(f_prev: Option<&Triplane>, c: &Triplane) -> Result<Triplane> {
    match f_prev {
        None => Ok(c.clone()),
        Some(prev) => {
            if c.resolution() != 2 * prev.resolution() || c.channels() != prev.channels() {
                return Err(Error::Config(format!(
                    "layer triplane at {} must be twice the previous {}",
                    c.resolution(),
                    prev.resolution()
                )));
            }
            prev.upsample(2)?.add(c)
        }
    }
}

/// Texture input: upsampled previous texture triplane, the layer's texture
/// triplane, and `alpha` times the refined geometry triplane of this layer.
pub fn compose_tex_input(f_prev: Option<&Triplane>, c: &Triplane, f_geo: &Triplane, alpha: f64) -> Result<Triplane> {
    let base = compose_geo_input(f_prev, c)?;
    if alpha == 0.0 {
        return Ok(base);
    }
    base.add(&f_geo.scale(alpha)?)
}

/// Self-attention over the tokens of one plane, with a residual connection.
pub fn plane_self_attention(plane: &Tensor, attn: &Attention, config: &TpaConfig) -> Result<Tensor> {
    let s = plane.shape();
    let x = plane_tokens(plane)?;
    let u = plane_queries(plane, config)?;
    tokens_to_plane(&attn.forward(&x, &u, &u, None)?, s[1], s[2])
}

/// Plane-id embedding rows `[3*H*W x d]`.
fn plane_id_rows(embed: &Tensor, tokens_per_plane: usize) -> Result<Tensor> {
    let ones = Tensor::constant(Array::ones([tokens_per_plane, 1]));
    let blocks = (0..3)
        .map(|p| Ok(ones.matmul(&embed.narrow(0, p, 1)?)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::concat(&blocks, 0)?)
}

/// Concatenates the three planes along the token axis (xy, yz, xz), adds the
/// plane-id embedding and position code, and applies residual self-attention.
/// Returns `[3*H*W x d]`.
pub fn fuse_planes(tp: &Triplane, attn: &Attention, plane_embed: &Tensor, config: &TpaConfig) -> Result<Tensor> {
    let res = tp.resolution();
    let n = res * res;
    let tokens = tp
        .planes()
        .iter()
        .map(|p| with_position(&plane_tokens(p)?, res, res, config))
        .collect::<Result<Vec<_>>>()?;
    let t = Tensor::concat(&tokens, 0)?.add(&plane_id_rows(plane_embed, n)?)?;
    let u = t.layer_norm_rows(config.ln_eps)?;
    attn.forward(&t, &u, &u, None)
}

/// Each plane's tokens query the fused sequence; one projection set serves
/// all planes. `key_masks` optionally restricts the keys seen by each plane.
pub fn cross_plane_attention(
    content: &Triplane,
    fused: &Tensor,
    attn: &Attention,
    config: &TpaConfig,
    key_masks: Option<&[Vec<bool>; 3]>,
) -> Result<Triplane> {
    let res = content.resolution();
    if fused.shape()[0] != 3 * res * res {
        return Err(Error::Usage(format!(
            "fused sequence has {} tokens, expected {}",
            fused.shape()[0],
            3 * res * res
        )));
    }
    let mut out = Vec::with_capacity(3);
    for (i, plane) in content.planes().into_iter().enumerate() {
        let mask = key_masks.map(|m| m[i].as_slice());
        let x = plane_tokens(plane)?;
        let q = plane_queries(plane, config)?;
        out.push(tokens_to_plane(&attn.forward(&x, &q, fused, mask)?, res, res)?);
    }
    let mut it = out.into_iter();
    Triplane::new(it.next().unwrap(), it.next().unwrap(), it.next().unwrap())
}

/// Triplane tokens query the valid word rows; padded rows are masked out.
pub fn cross_word_attention(
    f_q: &Triplane,
    words: &Tensor,
    mask: &[bool],
    attn: &Attention,
    config: &TpaConfig,
) -> Result<Triplane> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::Usage("cross-word attention needs at least one valid word".into()));
    }
    let res = f_q.resolution();
    f_q.map(|plane| {
        let x = plane_tokens(plane)?;
        let q = plane_queries(plane, config)?;
        tokens_to_plane(&attn.forward(&x, &q, words, Some(mask))?, res, res)
    })
}

/// Fused sequence and cross-plane output of a block, for inspection.
#[derive(Clone, Debug)]
pub struct TpaIntermediate {
    pub fused: Option<Tensor>,
    pub self_refined: Triplane,
}

/// One triplane attention block.
#[derive(Debug)]
pub struct TpaBlock {
    pub self_attn: Attention,
    pub fuse: Attention,
    pub plane_embed: Param,
    pub cross_plane: Attention,
    pub cross_word: Attention,
    config: TpaConfig,
}

impl TpaBlock {
    pub fn new(name: &str, channels: usize, word_dim: usize, config: TpaConfig, rng: &mut impl Rng) -> Result<Self> {
        let h = config.heads;
        Ok(Self {
            self_attn: Attention::new(&format!("{name}.self"), channels, channels, channels, h, rng)?,
            fuse: Attention::new(&format!("{name}.fuse"), channels, channels, channels, h, rng)?,
            plane_embed: Param::new(format!("{name}.plane_embed"), Array::randn([3, channels], 0.1, rng)),
            cross_plane: Attention::new(&format!("{name}.cross_plane"), channels, channels, channels, h, rng)?,
            cross_word: Attention::new(&format!("{name}.cross_word"), channels, word_dim, channels, h, rng)?,
            config,
        })
    }

    pub fn config(&self) -> &TpaConfig {
        &self.config
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.self_attn.params();
        v.extend(self.fuse.params());
        v.push(&self.plane_embed);
        v.extend(self.cross_plane.params());
        v.extend(self.cross_word.params());
        v
    }

    pub fn forward(&self, input: &Triplane, words: &Tensor, mask: &[bool], ablation: Ablation) -> Result<Triplane> {
        Ok(self.forward_with_intermediate(input, words, mask, ablation)?.0)
    }

    pub fn forward_with_intermediate(
        &self,
        input: &Triplane,
        words: &Tensor,
        mask: &[bool],
        ablation: Ablation,
    ) -> Result<(Triplane, TpaIntermediate)> {
        if ablation == Ablation::Identity {
            let mid = TpaIntermediate { fused: None, self_refined: input.clone() };
            return Ok((input.clone(), mid));
        }
        let cfg = &self.config;
        let content = input.map(|p| plane_self_attention(p, &self.self_attn, cfg))?;
        let (f_q, fused) = if ablation == Ablation::NoCrossPlane {
            (content, None)
        } else {
            let fused = fuse_planes(&content, &self.fuse, &self.plane_embed.tensor(), cfg)?;
            (cross_plane_attention(&content, &fused, &self.cross_plane, cfg, None)?, Some(fused))
        };
        let out = if ablation == Ablation::NoCrossWord {
            f_q.clone()
        } else {
            cross_word_attention(&f_q, words, mask, &self.cross_word, cfg)?
        };
        Ok((out, TpaIntermediate { fused, self_refined: f_q }))
    }
}
