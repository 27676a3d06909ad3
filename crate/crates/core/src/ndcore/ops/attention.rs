use crate::error::{Error, Result};
use crate::ndcore::tape::{Tape, Var};
use crate::ndcore::tensor::Element;

/// Projection weights of one multi-head self-attention layer.
/// Weights are `[d, d]` in `[out, in]` layout, biases `[d]`.
#[derive(Debug, Clone, Copy)]
pub struct MhsaVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

impl<T: Element> Tape<'_, T> {
    /// Multi-head self-attention over `[B, N, d]` tokens.
    ///
    /// Each head attends with `softmax(Q K^T / sqrt(d / heads)) V`; head
    /// outputs are re-concatenated and passed through the output projection.
    pub fn mhsa(&mut self, tokens: Var, heads: usize, p: &MhsaVars) -> Result<Var> {
        let shape = self.shape(tokens).to_vec();
        if shape.len() != 3 {
            return Err(Error::invalid("mhsa", format!("tokens must be [B, N, d], got {shape:?}")));
        }
        let (b, n, d) = (shape[0], shape[1], shape[2]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::invalid("mhsa", format!("embed dim {d} not divisible by {heads} heads")));
        }
        let dh = d / heads;
        let split_heads = |tape: &mut Self, v: Var| -> Result<Var> {
            let v = tape.reshape(v, &[b, n, heads, dh])?;
            let v = tape.permute(v, &[0, 2, 1, 3])?;
            tape.reshape(v, &[b * heads, n, dh])
        };
        let q = self.linear(tokens, p.wq, Some(p.bq))?;
        let k = self.linear(tokens, p.wk, Some(p.bk))?;
        let v = self.linear(tokens, p.wv, Some(p.bv))?;
        let (q, k, v) = (split_heads(self, q)?, split_heads(self, k)?, split_heads(self, v)?);
        let scores = self.bmm(q, k, true)?;
        let scores = self.scale(scores, T::one() / T::from_f64(dh as f64).sqrt());
        let attn = self.softmax(scores);
        let ctx = self.bmm(attn, v, false)?;
        let ctx = self.reshape(ctx, &[b, heads, n, dh])?;
        let ctx = self.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = self.reshape(ctx, &[b, n, d])?;
        self.linear(ctx, p.wo, Some(p.bo))
    }
}
