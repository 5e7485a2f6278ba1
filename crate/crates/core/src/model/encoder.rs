use super::{BoundModel, ForwardCtx, ModelConfig};
use crate::error::{shape_err, ApanError, Result};
use crate::events::NodeId;
use crate::model::decoder::mlp;
use crate::tensor::{Tape, Tensor, Var};

/// `mailbox + pos`, row `i` of the table added to the `i`-th oldest mail.
pub fn positional_encode(tape: &mut Tape, mailbox: Var, pos: Var) -> Result<Var> {
    let a = tape.value(mailbox).dims2();
    let b = tape.value(pos).dims2();
    if a != b {
        return Err(shape_err(
            "positional_encode",
            format!("mailbox {a:?} vs positional table {b:?}"),
        ));
    }
    tape.add(mailbox, pos)
}

/// One scaled dot-product attention head.
///
/// Returns the `1 x d_h` head output and the `1 x m` attention weights
/// (before dropout).
#[allow(clippy::too_many_arguments)]
pub fn attend_head(
    tape: &mut Tape,
    z: Var,
    keys: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    divisor: f64,
    ctx: &mut ForwardCtx<'_>,
) -> Result<(Var, Var)> {
    let q = tape.matmul(z, wq)?;
    let k = tape.matmul(keys, wk)?;
    let v = tape.matmul(keys, wv)?;
    let kt = tape.transpose(k);
    let logits = tape.matmul(q, kt)?;
    let logits = tape.scale(logits, 1.0 / divisor);
    let weights = tape.softmax_rows(logits);
    let dropped = tape.dropout(weights, ctx.dropout, ctx.training, ctx.rng)?;
    let out = tape.matmul(dropped, v)?;
    Ok((out, weights))
}

/// Concatenated heads projected by `W_O`. Returns the `1 x d` output and the
/// per-head attention weights.
pub fn multi_head(
    tape: &mut Tape,
    z: Var,
    keys: Var,
    bound: &BoundModel,
    config: &ModelConfig,
    ctx: &mut ForwardCtx<'_>,
) -> Result<(Var, Vec<Var>)> {
    let divisor = config.attention_divisor();
    let mut outs = Vec::with_capacity(bound.heads.len());
    let mut weights = Vec::with_capacity(bound.heads.len());
    for h in &bound.heads {
        let (o, w) = attend_head(tape, z, keys, h.wq, h.wk, h.wv, divisor, ctx)?;
        outs.push(o);
        weights.push(w);
    }
    let cat = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    Ok((tape.matmul(cat, bound.wo)?, weights))
}

/// `g * (a - mean) / sqrt(var + eps) + b` with `a = attn + z_prev`.
pub fn layer_norm_residual(
    tape: &mut Tape,
    attn: Var,
    z_prev: Var,
    g: Var,
    b: Var,
    eps: f64,
) -> Result<Var> {
    let a = tape.add(attn, z_prev)?;
    let mu = tape.mean_last(a);
    let centered = tape.sub(a, mu)?;
    let var = tape.var_last(a);
    let var = tape.add_scalar(var, eps);
    let sd = tape.sqrt(var);
    let normed = tape.div(centered, sd)?;
    let scaled = tape.mul(normed, g)?;
    tape.add(scaled, b)
}

/// Attention weights kept from the latest encoding of a node.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub node: NodeId,
    pub t: f64,
    /// One probability vector over mailbox rows per head.
    pub per_head: Vec<Vec<f64>>,
    /// Timestamps of the mailbox rows, oldest first.
    pub mail_timestamps: Vec<f64>,
}

impl AttentionTrace {
    /// Head-averaged weight per mail, largest first.
    pub fn ranked(&self) -> Vec<(f64, f64)> {
        let heads = self.per_head.len() as f64;
        let mut out: Vec<(f64, f64)> = self
            .mail_timestamps
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let w = self.per_head.iter().map(|h| h[i]).sum::<f64>() / heads;
                (t, w)
            })
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }
}

/// Result of one node encoding on a tape.
pub struct Encoded {
    pub z: Var,
    pub weights: Vec<Var>,
}

/// Full encoder for one node: positional encoding, multi-head attention with
/// the previous embedding as query, residual layer norm and the MLP.
pub fn encode_node(
    tape: &mut Tape,
    bound: &BoundModel,
    config: &ModelConfig,
    z_prev: &[f64],
    mailbox: Tensor,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Encoded> {
    if z_prev.len() != config.d {
        return Err(ApanError::Dimension {
            expected: config.d,
            actual: z_prev.len(),
        });
    }
    let z = tape.leaf(Tensor::row_vector(z_prev.to_vec()));
    let mb = tape.leaf(mailbox);
    let keys = positional_encode(tape, mb, bound.pos)?;
    let (attn, weights) = multi_head(tape, z, keys, bound, config, ctx)?;
    let normed = layer_norm_residual(tape, attn, z, bound.ln_g, bound.ln_b, config.ln_eps)?;
    let out = mlp(tape, normed, &bound.encoder_mlp, ctx)?;
    Ok(Encoded { z: out, weights })
}
