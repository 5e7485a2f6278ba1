//! Attention encoder over node mailboxes and MLP decoder heads.

mod checkpoint;
mod decoder;
mod encoder;
mod state;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use decoder::{decode_edge, decode_link, decode_node, mlp};
pub use encoder::{
    attend_head, encode_node, layer_norm_residual, multi_head, positional_encode, AttentionTrace,
    Encoded,
};
pub use state::NodeStateStore;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ApanError, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub type EngineRng = ChaCha8Rng;

/// Divisor applied to attention logits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AttentionScale {
    /// `sqrt(d / heads)`, the per-head key width.
    #[default]
    PerHead,
    /// `sqrt(d)` regardless of the head count.
    Full,
}

impl std::str::FromStr for AttentionScale {
    type Err = ApanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" | "per-head" => Ok(Self::PerHead),
            "full" => Ok(Self::Full),
            other => Err(ApanError::InvalidArgument(format!(
                "unknown attention scale `{other}` (expected head|full)"
            ))),
        }
    }
}

impl std::fmt::Display for AttentionScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PerHead => "head",
            Self::Full => "full",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Embedding and mail width.
    pub d: usize,
    /// Edge feature width.
    pub d_e: usize,
    /// Mailbox slots.
    pub slots: usize,
    pub heads: usize,
    /// Hidden width of every two-layer MLP.
    pub hidden: usize,
    pub dropout: f64,
    pub attention_scale: AttentionScale,
    pub ln_eps: f64,
}

impl ModelConfig {
    /// Defaults with the embedding width tied to the edge feature width.
    pub fn for_edge_dim(d_e: usize) -> Self {
        Self {
            d: d_e,
            d_e,
            slots: 10,
            heads: 2,
            hidden: 80,
            dropout: 0.1,
            attention_scale: AttentionScale::PerHead,
            ln_eps: 1e-6,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn attention_divisor(&self) -> f64 {
        match self.attention_scale {
            AttentionScale::PerHead => (self.head_dim() as f64).sqrt(),
            AttentionScale::Full => (self.d as f64).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ApanError::InvalidArgument(m));
        if self.d == 0 || self.slots == 0 || self.heads == 0 || self.hidden == 0 {
            return bad(format!("model dimensions must be positive: {self:?}"));
        }
        if !self.d.is_multiple_of(self.heads) {
            return bad(format!("{} heads do not divide d = {}", self.heads, self.d));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Whether edge features pass through a projection before entering mails.
    pub fn projects_edges(&self) -> bool {
        self.d != self.d_e
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MlpIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Clone, Debug)]
pub struct ModelIds {
    pub pos: ParamId,
    pub heads: Vec<HeadIds>,
    pub wo: ParamId,
    pub ln_g: ParamId,
    pub ln_b: ParamId,
    pub encoder_mlp: MlpIds,
    pub link: MlpIds,
    pub edge: MlpIds,
    pub node: MlpIds,
    /// Fixed `d_e x d` map into mail space; only present when `d != d_e`.
    pub edge_proj: Option<ParamId>,
}

/// Which decoder head a loss trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Link,
    Edge,
    Node,
}

/// Configuration plus every learnable tensor.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub ids: ModelIds,
}

fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_rows(rows, cols, data).expect("init shape")
}

fn mlp_params<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, input: usize, hidden: usize, output: usize) -> MlpIds {
    MlpIds {
        w1: store.add(format!("{prefix}.w1"), uniform(rng, input, hidden, input)),
        b1: store.add(format!("{prefix}.b1"), uniform(rng, 1, hidden, input)),
        w2: store.add(format!("{prefix}.w2"), uniform(rng, hidden, output, hidden)),
        b2: store.add(format!("{prefix}.b2"), uniform(rng, 1, output, hidden)),
    }
}

impl Model {
    /// Linear layers draw from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; the
    /// positional table starts at zero and layer norm at `g = 1, b = 0`.
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let ModelConfig {
            d,
            d_e,
            slots,
            heads,
            hidden,
            ..
        } = config;
        let dh = config.head_dim();
        let mut store = ParamStore::new();
        let pos = store.add("pos", Tensor::zeros(slots, d));
        let heads = (0..heads)
            .map(|h| HeadIds {
                wq: store.add(format!("head{h}.wq"), uniform(rng, d, dh, d)),
                wk: store.add(format!("head{h}.wk"), uniform(rng, d, dh, d)),
                wv: store.add(format!("head{h}.wv"), uniform(rng, d, dh, d)),
            })
            .collect();
        let wo = store.add("wo", uniform(rng, d, d, d));
        let ln_g = store.add("ln.g", Tensor::filled(1, d, 1.0));
        let ln_b = store.add("ln.b", Tensor::zeros(1, d));
        let encoder_mlp = mlp_params(&mut store, rng, "enc", d, hidden, d);
        let link = mlp_params(&mut store, rng, "link", 2 * d, hidden, 1);
        let edge = mlp_params(&mut store, rng, "edge", 2 * d + d_e, hidden, 1);
        let node = mlp_params(&mut store, rng, "node", d, hidden, 1);
        let edge_proj = config
            .projects_edges()
            .then(|| store.add("edge_proj", uniform(rng, d_e, d, d_e)));
        Ok(Self {
            config,
            params: store,
            ids: ModelIds {
                pos,
                heads,
                wo,
                ln_g,
                ln_b,
                encoder_mlp,
                link,
                edge,
                node,
                edge_proj,
            },
        })
    }

    /// Rebuilds id handles from parameter names; used when loading.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let find = |name: &str| {
            params
                .find(name)
                .ok_or_else(|| ApanError::Format(format!("missing tensor `{name}`")))
        };
        let mlp = |prefix: &str| -> Result<MlpIds> {
            Ok(MlpIds {
                w1: find(&format!("{prefix}.w1"))?,
                b1: find(&format!("{prefix}.b1"))?,
                w2: find(&format!("{prefix}.w2"))?,
                b2: find(&format!("{prefix}.b2"))?,
            })
        };
        let heads = (0..config.heads)
            .map(|h| {
                Ok(HeadIds {
                    wq: find(&format!("head{h}.wq"))?,
                    wk: find(&format!("head{h}.wk"))?,
                    wv: find(&format!("head{h}.wv"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ids = ModelIds {
            pos: find("pos")?,
            heads,
            wo: find("wo")?,
            ln_g: find("ln.g")?,
            ln_b: find("ln.b")?,
            encoder_mlp: mlp("enc")?,
            link: mlp("link")?,
            edge: mlp("edge")?,
            node: mlp("node")?,
            edge_proj: if config.projects_edges() {
                Some(find("edge_proj")?)
            } else {
                None
            },
        };
        let model = Self {
            config,
            params,
            ids,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let expect = |id: ParamId, rows: usize, cols: usize| -> Result<()> {
            let t = self.params.value(id);
            if t.dims2() != (rows, cols) {
                return Err(ApanError::Format(format!(
                    "tensor `{}` has shape {:?}, expected [{rows}, {cols}]",
                    self.params.get(id).name,
                    t.shape()
                )));
            }
            Ok(())
        };
        let mlp = |ids: &MlpIds, input: usize, out: usize| -> Result<()> {
            expect(ids.w1, input, c.hidden)?;
            expect(ids.b1, 1, c.hidden)?;
            expect(ids.w2, c.hidden, out)?;
            expect(ids.b2, 1, out)
        };
        expect(self.ids.pos, c.slots, c.d)?;
        for h in &self.ids.heads {
            for id in [h.wq, h.wk, h.wv] {
                expect(id, c.d, c.head_dim())?;
            }
        }
        expect(self.ids.wo, c.d, c.d)?;
        expect(self.ids.ln_g, 1, c.d)?;
        expect(self.ids.ln_b, 1, c.d)?;
        mlp(&self.ids.encoder_mlp, c.d, c.d)?;
        mlp(&self.ids.link, 2 * c.d, 1)?;
        mlp(&self.ids.edge, 2 * c.d + c.d_e, 1)?;
        mlp(&self.ids.node, c.d, 1)?;
        if let Some(p) = self.ids.edge_proj {
            expect(p, c.d_e, c.d)?;
        }
        Ok(())
    }

    /// Parameters updated when training the encoder together with `head`.
    pub fn trainable(&self, head: Option<Head>) -> Vec<ParamId> {
        let mut ids = self.encoder_ids();
        if let Some(h) = head {
            ids.extend(self.head_ids(h));
        }
        ids
    }

    pub fn encoder_ids(&self) -> Vec<ParamId> {
        let i = &self.ids;
        let mut ids = vec![i.pos];
        for h in &i.heads {
            ids.extend([h.wq, h.wk, h.wv]);
        }
        ids.extend([i.wo, i.ln_g, i.ln_b]);
        ids.extend(mlp_list(&i.encoder_mlp));
        ids
    }

    pub fn head_ids(&self, head: Head) -> Vec<ParamId> {
        mlp_list(match head {
            Head::Link => &self.ids.link,
            Head::Edge => &self.ids.edge,
            Head::Node => &self.ids.node,
        })
        .to_vec()
    }

    /// Copies every parameter onto `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let p = &self.params;
        let i = &self.ids;
        let mlp = |tape: &mut Tape, ids: &MlpIds| BoundMlp {
            w1: tape.param(p, ids.w1),
            b1: tape.param(p, ids.b1),
            w2: tape.param(p, ids.w2),
            b2: tape.param(p, ids.b2),
        };
        BoundModel {
            pos: tape.param(p, i.pos),
            heads: i
                .heads
                .iter()
                .map(|h| BoundHead {
                    wq: tape.param(p, h.wq),
                    wk: tape.param(p, h.wk),
                    wv: tape.param(p, h.wv),
                })
                .collect(),
            wo: tape.param(p, i.wo),
            ln_g: tape.param(p, i.ln_g),
            ln_b: tape.param(p, i.ln_b),
            encoder_mlp: mlp(tape, &i.encoder_mlp),
            link: mlp(tape, &i.link),
            edge: mlp(tape, &i.edge),
            node: mlp(tape, &i.node),
        }
    }

    /// Edge feature mapped into mail space.
    pub fn mail_edge(&self, edge_feat: &[f64]) -> Vec<f64> {
        match self.ids.edge_proj {
            None => edge_feat.to_vec(),
            Some(id) => {
                let w = self.params.value(id);
                let d = self.config.d;
                let mut out = vec![0.0; d];
                for (k, &e) in edge_feat.iter().enumerate() {
                    for (o, wv) in out.iter_mut().zip(w.row(k)) {
                        *o += e * wv;
                    }
                }
                out
            }
        }
    }
}

fn mlp_list(m: &MlpIds) -> [ParamId; 4] {
    [m.w1, m.b1, m.w2, m.b2]
}

#[derive(Clone, Copy, Debug)]
pub struct BoundMlp {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundHead {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

/// Tape handles for every model parameter.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub pos: Var,
    pub heads: Vec<BoundHead>,
    pub wo: Var,
    pub ln_g: Var,
    pub ln_b: Var,
    pub encoder_mlp: BoundMlp,
    pub link: BoundMlp,
    pub edge: BoundMlp,
    pub node: BoundMlp,
}

/// Dropout switch and randomness for one forward pass.
pub struct ForwardCtx<'a> {
    pub training: bool,
    pub dropout: f64,
    pub rng: &'a mut EngineRng,
}
