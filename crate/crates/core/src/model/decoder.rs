use super::{BoundMlp, ForwardCtx, ModelConfig};
use crate::error::{shape_err, Result};
use crate::tensor::{Tape, Var};

/// `relu(x W1 + b1) W2 + b2`, dropout on the hidden activations.
pub fn mlp(tape: &mut Tape, x: Var, p: &BoundMlp, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
    let h = tape.matmul(x, p.w1)?;
    let h = tape.add(h, p.b1)?;
    let h = tape.relu(h);
    let h = tape.dropout(h, ctx.dropout, ctx.training, ctx.rng)?;
    let o = tape.matmul(h, p.w2)?;
    tape.add(o, p.b2)
}

/// Link logits for row-aligned `(z_i || z_j)` pairs.
pub fn decode_link(tape: &mut Tape, z_i: Var, z_j: Var, head: &BoundMlp, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
    let x = tape.concat_cols(&[z_i, z_j])?;
    mlp(tape, x, head, ctx)
}

/// Edge logits for `(z_i || e_ij || z_j)`; the input width must be `2d + d_e`.
pub fn decode_edge(
    tape: &mut Tape,
    z_i: Var,
    e_ij: Var,
    z_j: Var,
    head: &BoundMlp,
    config: &ModelConfig,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var> {
    let x = tape.concat_cols(&[z_i, e_ij, z_j])?;
    let width = tape.value(x).cols();
    let expected = 2 * config.d + config.d_e;
    if width != expected {
        return Err(shape_err(
            "decode_edge",
            format!("input width {width}, expected {expected}"),
        ));
    }
    mlp(tape, x, head, ctx)
}

pub fn decode_node(tape: &mut Tape, z_i: Var, head: &BoundMlp, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
    mlp(tape, z_i, head, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EngineRng, Model};
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn model() -> Model {
        let mut rng = EngineRng::seed_from_u64(9);
        Model::new(ModelConfig::for_edge_dim(4), &mut rng).unwrap()
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut m = model();
        for id in m.head_ids(crate::model::Head::Link).into_iter().chain(m.head_ids(crate::model::Head::Node)) {
            let t = m.params.value(id).zeros_like();
            *m.params.value_mut(id) = t;
        }
        *m.params.value_mut(m.ids.link.b2) = Tensor::scalar(0.3);
        let mut rng = EngineRng::seed_from_u64(0);
        let mut ctx = ForwardCtx { training: false, dropout: 0.1, rng: &mut rng };
        let mut tape = Tape::new();
        let b = m.bind(&mut tape);
        let zi = tape.leaf(Tensor::row_vector(vec![1.0, 2.0, 3.0, 4.0]));
        let zj = tape.leaf(Tensor::row_vector(vec![-1.0, 0.5, 0.0, 2.0]));
        let l = decode_link(&mut tape, zi, zj, &b.link, &mut ctx).unwrap();
        assert_eq!(tape.value(l).data(), &[0.3]);
        let n = decode_node(&mut tape, zi, &b.node, &mut ctx).unwrap();
        assert_eq!(tape.value(n).data(), &[0.0]);
    }

    #[test]
    fn concatenation_is_ordered() {
        let m = model();
        let mut rng = EngineRng::seed_from_u64(0);
        let mut ctx = ForwardCtx { training: false, dropout: 0.1, rng: &mut rng };
        let mut tape = Tape::new();
        let b = m.bind(&mut tape);
        let zi = tape.leaf(Tensor::row_vector(vec![1.0, 2.0, 3.0, 4.0]));
        let zj = tape.leaf(Tensor::row_vector(vec![-1.0, 0.5, 0.0, 2.0]));
        let ij = decode_link(&mut tape, zi, zj, &b.link, &mut ctx).unwrap();
        let ji = decode_link(&mut tape, zj, zi, &b.link, &mut ctx).unwrap();
        assert_ne!(tape.value(ij), tape.value(ji));
    }

    #[test]
    fn edge_head_checks_width() {
        let m = model();
        let mut rng = EngineRng::seed_from_u64(0);
        let mut ctx = ForwardCtx { training: false, dropout: 0.1, rng: &mut rng };
        let mut tape = Tape::new();
        let b = m.bind(&mut tape);
        let z = tape.leaf(Tensor::zeros(2, 4));
        let e = tape.leaf(Tensor::zeros(2, 4));
        assert!(decode_edge(&mut tape, z, e, z, &b.edge, &m.config, &mut ctx).is_ok());
        let short = tape.leaf(Tensor::zeros(2, 3));
        assert!(decode_edge(&mut tape, z, short, z, &b.edge, &m.config, &mut ctx).is_err());
    }
}
