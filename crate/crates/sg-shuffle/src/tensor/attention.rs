use super::{Result, Tape, TensorError, Var};

/// Projection weights for one self-attention sublayer, already bound to a
/// tape. All four projections are square `d×d`; the key projection carries
/// no bias because a constant added to every key row cancels inside the
/// row softmax.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Multi-head scaled dot-product self-attention over `x: n×d`.
///
/// Heads are contiguous feature slices of the Q/K/V projections; each head
/// attends with scale `1/sqrt(d/heads)`, the heads are concatenated back and
/// passed through the output projection. There is no positional term, so the
/// result is equivariant to row permutations of `x`.
pub fn multi_head_self_attention(
    tape: &mut Tape,
    x: Var,
    params: &AttentionVars,
    heads: usize,
) -> Result<Var> {
    let (_, d) = tape.value(x).dims2();
    if heads == 0 || d % heads != 0 {
        return Err(TensorError::NotDivisible { axis: d, parts: heads });
    }
    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let q = tape.linear(x, params.wq, params.bq)?;
    let k = tape.matmul(x, params.wk)?;
    let v = tape.linear(x, params.wv, params.bv)?;

    let q_heads = tape.partition(q, heads, 1)?;
    let k_heads = tape.partition(k, heads, 1)?;
    let v_heads = tape.partition(v, heads, 1)?;

    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let scores = tape.matmul_nt(q_heads[h], k_heads[h])?;
        let scaled = tape.scale(scores, scale)?;
        let attn = tape.softmax(scaled, 1)?;
        outputs.push(tape.matmul(attn, v_heads[h])?);
    }
    let merged = tape.concat(&outputs, 1)?;
    tape.linear(merged, params.wo, params.bo)
}
