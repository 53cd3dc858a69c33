//! Behavior-aware graph encoder.
//!
//! For each behavior the shared layer-0 node table is propagated over that
//! behavior's subgraph: every layer averages neighbour embeddings, gates
//! them elementwise with the current behavior embedding, applies the
//! layer transform and a LeakyReLU. Behavior embeddings evolve through
//! their own per-layer transform. Layers are mean-pooled, and the pooled
//! per-behavior embeddings of each node are then mixed by a per-behavior
//! self-attention over the `K` behaviors.
//!
//! Nodes use a stacked layout: rows `0..|U|` are users, rows `|U|..` items.

mod checkpoint;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use params::{ModelConfig, ModelParameters};

use std::sync::Arc;

use rand::Rng as _;

use crate::error::Result;
use crate::graph::{AugmentedView, MultiBehaviorGraph};
use crate::rng;
use crate::tensor::{Axis, Groups, NodeId, Tape, Tensor};

/// Precomputed neighbourhoods of every behavior subgraph.
#[derive(Clone, Debug)]
pub struct GraphContext {
    pub num_users: usize,
    pub num_items: usize,
    pub groups: Vec<Arc<Groups>>,
}

impl GraphContext {
    pub fn new(graph: &MultiBehaviorGraph) -> Self {
        Self {
            num_users: graph.num_users(),
            num_items: graph.num_items(),
            groups: (0..graph.num_behaviors())
                .map(|k| Arc::new(graph.propagation_groups(k)))
                .collect(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_behaviors(&self) -> usize {
        self.groups.len()
    }
}

/// Tape handles produced by one encoder pass.
#[derive(Clone, Debug)]
pub struct EncodedNodes {
    /// Final (attention-enhanced) node embeddings per behavior, `N × d`.
    pub nodes: Vec<NodeId>,
    /// Layer-pooled node embeddings per behavior, before attention.
    pub pooled: Vec<NodeId>,
    /// Layer-pooled behavior embeddings, `K × d`.
    pub behaviors: NodeId,
    /// Attention coefficients per behavior, `N × K`. Empty without CDM.
    pub attention: Vec<NodeId>,
}

/// Target-behavior embeddings of the two edge-dropout views.
#[derive(Clone, Copy, Debug)]
pub struct ViewNodes {
    pub first: NodeId,
    pub second: NodeId,
}

#[derive(Clone, Debug)]
pub struct Encoding {
    pub main: EncodedNodes,
    pub views: Option<ViewNodes>,
}

/// One message-passing layer for one behavior:
/// `LeakyReLU(W · mean_{j∈N(v)}(x_j ⊙ e_k))` for every node `v`, written in
/// row form as `LeakyReLU((mean(x) ⊙ e_k) Wᵀ)`. Isolated nodes aggregate to
/// zero.
pub fn propagate_layer(
    tape: &mut Tape,
    x: NodeId,
    behavior_row: NodeId,
    groups: &Arc<Groups>,
    weight: NodeId,
    slope: f64,
    dropout: Option<Arc<Vec<f64>>>,
) -> Result<NodeId> {
    let n = groups.len();
    let agg = tape.row_mean(x, Arc::clone(groups))?;
    let gate = tape.gather_rows(behavior_row, Arc::new(vec![0; n]))?;
    let mut msg = tape.hadamard(agg, gate)?;
    if let Some(mask) = dropout {
        msg = tape.dropout(msg, mask)?;
    }
    let wt = tape.transpose(weight)?;
    let z = tape.matmul(msg, wt)?;
    tape.leaky_relu(z, slope)
}

/// `e^{(l+1)} = W_b e^{(l)}` applied to every row of `behaviors`.
pub fn update_behavior_embedding(tape: &mut Tape, behaviors: NodeId, transform: NodeId) -> Result<NodeId> {
    let wt = tape.transpose(transform)?;
    tape.matmul(behaviors, wt)
}

/// Attention of every node over the `K` behaviors, from the point of view
/// of one behavior: `softmax_j( W₂ᵀ tanh(W₁ᵀ p_j) )` where `p_j` are the
/// node's pooled embeddings. Returns `N × K`; each row is a probability
/// vector.
pub fn attention_coefficients(tape: &mut Tape, pooled: &[NodeId], w1: NodeId, w2: NodeId) -> Result<NodeId> {
    let mut logits = Vec::with_capacity(pooled.len());
    for &p in pooled {
        let h = tape.matmul(p, w1)?;
        let h = tape.tanh(h)?;
        logits.push(tape.matmul(h, w2)?);
    }
    let stacked = tape.col_concat(logits)?;
    tape.softmax(stacked, Axis::Cols)
}

/// Per-node weighted sum of the `K` pooled behavior embeddings.
pub fn enhance(tape: &mut Tape, attention: NodeId, pooled: &[NodeId]) -> Result<NodeId> {
    let dim = tape.value(pooled[0]).cols();
    let ones = tape.constant(Tensor::filled(&[1, dim], 1.0));
    let mut acc = None;
    for (j, &p) in pooled.iter().enumerate() {
        let col = tape.slice_cols(attention, j, 1)?;
        let spread = tape.matmul(col, ones)?;
        let term = tape.hadamard(spread, p)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("at least one behavior"))
}

/// Mean over layers.
pub fn pool_layers(tape: &mut Tape, layers: Vec<NodeId>) -> Result<NodeId> {
    tape.mean_of(layers)
}

struct Leaves {
    x0: NodeId,
    layer_w: Vec<NodeId>,
    /// Behavior embeddings `E^{(0..=L)}`, each `K × d`.
    behaviors: Vec<NodeId>,
}

/// Source of embedding-dropout masks for one pass; `None` disables dropout.
struct Dropout {
    seed: u64,
    ratio: f64,
    next: u64,
}

impl Dropout {
    fn mask(&mut self, len: usize) -> Arc<Vec<f64>> {
        let mut r = rng::from_seed(rng::derive_indexed(self.seed, "embedding-dropout", self.next));
        self.next += 1;
        let keep = 1.0 - self.ratio;
        let scale = 1.0 / keep;
        Arc::new(
            (0..len)
                .map(|_| if r.gen::<f64>() < keep { scale } else { 0.0 })
                .collect(),
        )
    }
}

fn propagate_behavior(
    tape: &mut Tape,
    model: &ModelParameters,
    leaves: &Leaves,
    groups: &Arc<Groups>,
    behavior: usize,
    dropout: &mut Option<Dropout>,
) -> Result<NodeId> {
    let cfg = model.config();
    let n = groups.len();
    let mut layers = vec![leaves.x0];
    let mut x = leaves.x0;
    for l in 0..cfg.layers {
        let row = tape.gather_rows(leaves.behaviors[l], Arc::new(vec![behavior]))?;
        let mask = dropout.as_mut().map(|d| d.mask(n * cfg.dim));
        x = propagate_layer(tape, x, row, groups, leaves.layer_w[l], cfg.leaky_slope, mask)?;
        layers.push(x);
    }
    pool_layers(tape, layers)
}

/// Runs the encoder on `tape`.
///
/// With `views`, the target behavior is additionally propagated over each
/// view's kept edges (auxiliary behaviors and all parameters are shared)
/// and the view embeddings are enhanced with the target behavior's
/// attention. `dropout_seed` enables embedding dropout for training.
pub fn encode(
    tape: &mut Tape,
    model: &ModelParameters,
    ctx: &GraphContext,
    views: Option<(&Arc<Groups>, &Arc<Groups>)>,
    dropout_seed: Option<u64>,
) -> Result<Encoding> {
    let cfg = model.config().clone();
    let k_count = ctx.num_behaviors();
    let store = model.store();

    let users = tape.param(store, model.user_embedding());
    let items = tape.param(store, model.item_embedding());
    let x0 = tape.row_concat(vec![users, items])?;
    let mut behaviors = vec![tape.param(store, model.behavior_embedding())];
    let mut layer_w = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        layer_w.push(tape.param(store, model.layer_weight(l)));
        let wb = tape.param(store, model.behavior_transform(l));
        let next = update_behavior_embedding(tape, behaviors[l], wb)?;
        behaviors.push(next);
    }
    let pooled_behaviors = pool_layers(tape, behaviors.clone())?;
    let leaves = Leaves { x0, layer_w, behaviors };

    let mut dropout = dropout_seed
        .filter(|_| cfg.embedding_dropout > 0.0)
        .map(|seed| Dropout {
            seed,
            ratio: cfg.embedding_dropout,
            next: 0,
        });

    let mut pooled = Vec::with_capacity(k_count);
    for (k, groups) in ctx.groups.iter().enumerate() {
        pooled.push(propagate_behavior(tape, model, &leaves, groups, k, &mut dropout)?);
    }

    let mut nodes = Vec::with_capacity(k_count);
    let mut attention = Vec::new();
    if cfg.cdm {
        for k in 0..k_count {
            let (w1, w2) = model.attention(k).expect("attention parameters exist with CDM");
            let (w1, w2) = (tape.param(store, w1), tape.param(store, w2));
            let a = attention_coefficients(tape, &pooled, w1, w2)?;
            nodes.push(enhance(tape, a, &pooled)?);
            attention.push(a);
        }
    } else {
        nodes = pooled.clone();
    }

    let views = match views {
        None => None,
        Some((g1, g2)) => {
            let target = k_count - 1;
            let mut out = [leaves.x0; 2];
            for (slot, groups) in out.iter_mut().zip([g1, g2]) {
                let p = propagate_behavior(tape, model, &leaves, groups, target, &mut dropout)?;
                *slot = if cfg.cdm {
                    let mut mixed = pooled.clone();
                    mixed[target] = p;
                    let (w1, w2) = model.attention(target).expect("attention parameters exist with CDM");
                    let (w1, w2) = (tape.param(store, w1), tape.param(store, w2));
                    let a = attention_coefficients(tape, &mixed, w1, w2)?;
                    enhance(tape, a, &mixed)?
                } else {
                    p
                };
            }
            Some(ViewNodes {
                first: out[0],
                second: out[1],
            })
        }
    };

    Ok(Encoding {
        main: EncodedNodes {
            nodes,
            pooled,
            behaviors: pooled_behaviors,
            attention,
        },
        views,
    })
}

/// Convenience wrapper building view neighbourhoods from [`AugmentedView`]s.
pub fn encode_with_views(
    tape: &mut Tape,
    model: &ModelParameters,
    graph: &MultiBehaviorGraph,
    ctx: &GraphContext,
    views: Option<(&AugmentedView, &AugmentedView)>,
    dropout_seed: Option<u64>,
) -> Result<Encoding> {
    let groups = views.map(|(a, b)| {
        (
            Arc::new(a.propagation_groups(graph)),
            Arc::new(b.propagation_groups(graph)),
        )
    });
    encode(tape, model, ctx, groups.as_ref().map(|(a, b)| (a, b)), dropout_seed)
}

/// Plain values of an encoder pass, detached from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedState {
    pub num_users: usize,
    /// Final per-behavior node embeddings in stacked layout.
    pub nodes: Vec<Tensor>,
    /// Pooled behavior embeddings, `K × d`.
    pub behaviors: Tensor,
    /// Attention coefficients per behavior (`N × K`), empty without CDM.
    pub attention: Vec<Tensor>,
}

impl EncodedState {
    pub fn from_tape(tape: &Tape, enc: &EncodedNodes, num_users: usize) -> Self {
        Self {
            num_users,
            nodes: enc.nodes.iter().map(|&n| tape.value(n).clone()).collect(),
            behaviors: tape.value(enc.behaviors).clone(),
            attention: enc.attention.iter().map(|&n| tape.value(n).clone()).collect(),
        }
    }

    /// Deterministic evaluation-mode pass (no dropout, no views).
    pub fn compute(model: &ModelParameters, ctx: &GraphContext) -> Result<Self> {
        let mut tape = Tape::new();
        let enc = encode(&mut tape, model, ctx, None, None)?;
        Ok(Self::from_tape(&tape, &enc.main, ctx.num_users))
    }

    pub fn num_behaviors(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_items(&self) -> usize {
        self.nodes[0].rows() - self.num_users
    }

    pub fn user(&self, behavior: usize, user: usize) -> &[f64] {
        self.nodes[behavior].row(user)
    }

    pub fn item(&self, behavior: usize, item: usize) -> &[f64] {
        self.nodes[behavior].row(self.num_users + item)
    }

    pub fn behavior(&self, behavior: usize) -> &[f64] {
        self.behaviors.row(behavior)
    }
}
