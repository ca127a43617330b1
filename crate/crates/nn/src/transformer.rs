//! Pre-norm causal self-attention block.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::nnkit::{Activation, Tape, Tensor, Var};

/// Parameter order inside a block.
pub const BLOCK_PARAM_NAMES: [&str; 16] = [
    "ln1.gamma",
    "ln1.beta",
    "attn.wq",
    "attn.bq",
    "attn.wk",
    "attn.bk",
    "attn.wv",
    "attn.bv",
    "attn.wo",
    "attn.bo",
    "ln2.gamma",
    "ln2.beta",
    "ffn.w1",
    "ffn.b1",
    "ffn.w2",
    "ffn.b2",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub dim: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub activation: Activation,
}

impl BlockShape {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 || self.ffn_mult == 0 {
            return Err(NnError::Parameter(format!(
                "dim {} must be a positive multiple of heads {} and ffn_mult positive",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let (d, f) = (self.dim, self.dim * self.ffn_mult);
        vec![
            vec![d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![d, f],
            vec![f],
            vec![f, d],
            vec![d],
        ]
    }
}

/// Weight matrices are normal with std `1/sqrt(fan_in)`, biases zero, layer
/// norm gains one.
pub fn init_block<R: Rng + ?Sized>(shape: &BlockShape, rng: &mut R) -> Vec<Tensor> {
    shape
        .param_shapes()
        .into_iter()
        .zip(BLOCK_PARAM_NAMES)
        .map(|(s, name)| match s.len() {
            2 => {
                let std = 1.0 / (s[0] as f64).sqrt();
                Tensor::randn(s, std, rng)
            }
            _ if name.ends_with("gamma") => Tensor::filled(s, 1.0),
            _ => Tensor::zeros(s),
        })
        .collect()
}

/// `x: [batch*seq, dim]` through attention and feed-forward sublayers, each
/// with a residual connection around a pre-normalised input.
pub fn block_forward(tape: &mut Tape, x: Var, p: &[Var], shape: &BlockShape, batch: usize, seq: usize) -> Result<Var> {
    if p.len() != BLOCK_PARAM_NAMES.len() {
        return Err(NnError::Parameter(format!(
            "block needs {} parameters, got {}",
            BLOCK_PARAM_NAMES.len(),
            p.len()
        )));
    }
    let heads = shape.heads;
    let dh = shape.dim / heads;
    let h = tape.layer_norm(x, p[0], p[1])?;
    let q = tape.linear(h, p[2], p[3])?;
    let k = tape.linear(h, p[4], p[5])?;
    let v = tape.linear(h, p[6], p[7])?;
    let q = tape.split_heads(q, batch, seq, heads)?;
    let k = tape.split_heads(k, batch, seq, heads)?;
    let v = tape.split_heads(v, batch, seq, heads)?;
    let scores = tape.bmm_scaled(q, k, true, 1.0 / (dh as f64).sqrt())?;
    let att = tape.causal_softmax(scores)?;
    let ctx = tape.bmm(att, v, false)?;
    let ctx = tape.merge_heads(ctx, batch, seq, heads)?;
    let o = tape.linear(ctx, p[8], p[9])?;
    let x = tape.add(x, o)?;
    let h = tape.layer_norm(x, p[10], p[11])?;
    let f = tape.linear(h, p[12], p[13])?;
    let f = tape.activation(f, shape.activation)?;
    let f = tape.linear(f, p[14], p[15])?;
    tape.add(x, f)
}
