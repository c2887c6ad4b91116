use crate::tensor::{multi_head_self_attention, AttentionVars, BoundParams, Tape, Var};

use super::Result;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// One post-norm transformer block, bound to a tape.
#[derive(Debug, Clone, Copy)]
pub struct EncoderBlockVars {
    pub attn: AttentionVars,
    pub norm1_g: Var,
    pub norm1_b: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
    pub norm2_g: Var,
    pub norm2_b: Var,
}

pub fn block_vars(bound: &BoundParams, prefix: &str) -> EncoderBlockVars {
    let v = |suffix: &str| bound.var(&format!("{prefix}.{suffix}"));
    EncoderBlockVars {
        attn: AttentionVars {
            wq: v("attn.wq"),
            bq: v("attn.bq"),
            wk: v("attn.wk"),
            wv: v("attn.wv"),
            bv: v("attn.bv"),
            wo: v("attn.wo"),
            bo: v("attn.bo"),
        },
        norm1_g: v("norm1.g"),
        norm1_b: v("norm1.b"),
        ffn_w1: v("ffn.w1"),
        ffn_b1: v("ffn.b1"),
        ffn_w2: v("ffn.w2"),
        ffn_b2: v("ffn.b2"),
        norm2_g: v("norm2.g"),
        norm2_b: v("norm2.b"),
    }
}

/// Post-norm order, as the residual equations are usually written:
/// `LayerNorm(SelfAttention(x) + x)` then `LayerNorm(FeedForward(h) + h)`
/// with a ReLU feed-forward.
pub fn encoder_block(
    tape: &mut Tape,
    x: Var,
    vars: &EncoderBlockVars,
    n_heads: usize,
) -> Result<Var> {
    let attended = multi_head_self_attention(tape, x, &vars.attn, n_heads)?;
    let residual = tape.add(attended, x)?;
    let h = tape.layer_norm(residual, vars.norm1_g, vars.norm1_b, LAYER_NORM_EPS)?;

    let inner = tape.linear(h, vars.ffn_w1, vars.ffn_b1)?;
    let activated = tape.relu(inner)?;
    let ffn = tape.linear(activated, vars.ffn_w2, vars.ffn_b2)?;
    let residual2 = tape.add(ffn, h)?;
    let out = tape.layer_norm(residual2, vars.norm2_g, vars.norm2_b, LAYER_NORM_EPS)?;
    Ok(out)
}

/// `n_layers` blocks with parameters `prefix.{layer}.*`.
pub fn encoder_stack(
    tape: &mut Tape,
    x: Var,
    bound: &BoundParams,
    prefix: &str,
    n_layers: usize,
    n_heads: usize,
) -> Result<Var> {
    let mut h = x;
    for layer in 0..n_layers {
        let vars = block_vars(bound, &format!("{prefix}.{layer}"));
        h = encoder_block(tape, h, &vars, n_heads)?;
    }
    Ok(h)
}
