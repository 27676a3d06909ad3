//! 3-D vision transformer global feature extractor.

use crate::error::{Error, Result};
use crate::models::layers::{Attention, Builder, Conv, Ctx, LayerNorm, Linear};
use crate::models::profile::ScaleProfile;
use crate::ndcore::{ConvGeom, ParamId, Var};

pub struct EncoderBlock {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl EncoderBlock {
    fn new(b: &mut Builder, name: &str, d: usize, heads: usize, hidden: usize) -> Result<Self> {
        Ok(EncoderBlock {
            ln1: b.layer_norm(&format!("{name}.norm1"), d)?,
            attn: b.attention(&format!("{name}.attn"), d, heads)?,
            ln2: b.layer_norm(&format!("{name}.norm2"), d)?,
            fc1: b.linear(&format!("{name}.mlp.fc1"), d, hidden)?,
            fc2: b.linear(&format!("{name}.mlp.fc2"), hidden, d)?,
        })
    }

    /// Pre-norm block: `x + MHSA(LN(x))`, then `x + MLP(LN(x))`.
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.ln1.forward(cx, x)?;
        let h = self.attn.forward(cx, h)?;
        let x = cx.tape.add(x, h)?;
        let h = self.ln2.forward(cx, x)?;
        let h = self.fc1.forward(cx, h)?;
        let h = cx.tape.gelu(h);
        let h = self.fc2.forward(cx, h)?;
        cx.tape.add(x, h)
    }
}

pub struct Vit3d {
    patch: Conv,
    pos: ParamId,
    blocks: Vec<EncoderBlock>,
    final_ln: LayerNorm,
    patch_size: usize,
    tokens: usize,
    dim: usize,
}

impl Vit3d {
    pub fn new(b: &mut Builder, name: &str, p: &ScaleProfile) -> Result<Self> {
        let d = p.embed_dim;
        let n = p.vit_tokens();
        let patch = b.conv(&format!("{name}.patch_embed"), 1, d, ConvGeom::cubic(3, p.patch_size, p.patch_size, 0), true)?;
        let pos = b.normal(&format!("{name}.pos_embed"), vec![n, d], 0.02)?;
        let blocks = (0..p.encoder_blocks)
            .map(|i| EncoderBlock::new(b, &format!("{name}.blocks.{i}"), d, p.heads, p.vit_mlp_hidden))
            .collect::<Result<_>>()?;
        let final_ln = b.layer_norm(&format!("{name}.norm"), d)?;
        Ok(Vit3d { patch, pos, blocks, final_ln, patch_size: p.patch_size, tokens: n, dim: d })
    }

    pub fn pos_embed(&self) -> ParamId {
        self.pos
    }

    /// Non-overlapping patch projection: `[B, 1, H, W, D]` to `[B, N, d]`
    /// tokens in row-major patch order (no positional term yet).
    pub fn patch_tokens(&self, cx: &mut Ctx, volume: Var) -> Result<Var> {
        let shape = cx.tape.shape(volume).to_vec();
        if shape.len() != 5 || shape[2..].iter().any(|&e| e % self.patch_size != 0) {
            return Err(Error::invalid(
                "vit3d",
                format!("volume {shape:?} not divisible into {}^3 patches", self.patch_size),
            ));
        }
        let b = shape[0];
        let e = self.patch.forward(cx, volume)?;
        let n: usize = cx.tape.shape(e)[2..].iter().product();
        if n != self.tokens {
            return Err(Error::invalid("vit3d", format!("{n} patches, model expects {}", self.tokens)));
        }
        let e = cx.tape.reshape(e, &[b, self.dim, n])?;
        cx.tape.permute(e, &[0, 2, 1])
    }

    /// Encoder stack on position-embedded tokens, final LN, then the mean
    /// over tokens (no class token).
    pub fn encode(&self, cx: &mut Ctx, tokens: Var) -> Result<Var> {
        let mut h = tokens;
        for block in &self.blocks {
            h = block.forward(cx, h)?;
        }
        let h = self.final_ln.forward(cx, h)?;
        cx.tape.mean_axis(h, 1)
    }

    /// `[B, 1, H, W, D]` volume to `[B, d]` global features.
    pub fn forward(&self, cx: &mut Ctx, volume: Var) -> Result<Var> {
        let t = self.patch_tokens(cx, volume)?;
        cx.tap("mri.vit.tokens", t);
        let pos = cx.tape.param(self.pos);
        let t = cx.tape.add_broadcast(t, pos)?;
        self.encode(cx, t)
    }
}
