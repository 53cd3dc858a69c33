use std::collections::HashMap;
use std::sync::Arc;

use super::{Side, SimilarityIndex};
use crate::encoder::{EncodedNodes, ViewNodes};
use crate::error::{invalid, Result};
use crate::graph::MultiBehaviorGraph;
use crate::tensor::{NodeId, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastConfig {
    pub temperature: f64,
    /// `μ_k` for each auxiliary behavior, used only with fixed weights.
    pub inter_weights: Vec<f64>,
    /// `γ`, used only with fixed weights.
    pub intra_weight: f64,
}

impl ContrastConfig {
    pub fn new(temperature: f64, num_behaviors: usize) -> Result<Self> {
        let cfg = Self {
            temperature,
            inter_weights: vec![1.0; num_behaviors.saturating_sub(1)],
            intra_weight: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// The users of one training step and the items they interacted with
/// under the target behavior. Both lists are ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
}

impl Batch {
    pub fn new(graph: &MultiBehaviorGraph, mut users: Vec<usize>) -> Self {
        users.sort_unstable();
        users.dedup();
        let mut seen = vec![false; graph.num_items()];
        for &u in &users {
            for &i in graph.user_neighbors(graph.target(), u) {
                seen[i] = true;
            }
        }
        let items = (0..graph.num_items()).filter(|&i| seen[i]).collect();
        Self { users, items }
    }

    pub fn full(graph: &MultiBehaviorGraph) -> Self {
        Self {
            users: (0..graph.num_users()).collect(),
            items: (0..graph.num_items()).collect(),
        }
    }
}

/// Per-row InfoNCE terms
/// `log Σ_c m_rc exp(⟨a_r, b_c⟩/τ) − ⟨a_r, b_r⟩/τ` for `b × d` anchors and
/// candidates, where row `r` of `candidates` is the positive of anchor `r`.
/// `mask` (row-major `b × b`, 0 or 1) removes candidates from the
/// denominator; the diagonal must stay unmasked. Returns `b × 1`.
pub fn info_nce(
    tape: &mut Tape,
    anchors: NodeId,
    candidates: NodeId,
    mask: Option<Arc<Vec<f64>>>,
    temperature: f64,
) -> Result<NodeId> {
    let inv = 1.0 / temperature;
    let ct = tape.transpose(candidates)?;
    let logits = tape.matmul(anchors, ct)?;
    let logits = tape.scale(logits, inv)?;
    let lse = tape.log_sum_exp_rows(logits, mask)?;
    let pos = tape.row_dot(anchors, candidates)?;
    let pos = tape.scale(pos, inv)?;
    tape.sub(lse, pos)
}

fn fn_mask(index: &SimilarityIndex, side: Side, members: &[usize]) -> Option<Arc<Vec<f64>>> {
    let pos: HashMap<usize, usize> = members.iter().enumerate().map(|(p, &m)| (m, p)).collect();
    let b = members.len();
    let mut mask = vec![1.0; b * b];
    let mut any = false;
    for (r, &a) in members.iter().enumerate() {
        for v in index.false_negatives(side, a) {
            if let Some(&c) = pos.get(v) {
                mask[r * b + c] = 0.0;
                any = true;
            }
        }
    }
    any.then(|| Arc::new(mask))
}

fn gather(tape: &mut Tape, nodes: NodeId, rows: &[usize], offset: usize) -> Result<NodeId> {
    tape.gather_rows(nodes, Arc::new(rows.iter().map(|r| r + offset).collect()))
}

/// One side of one contrast: summed InfoNCE terms.
fn side_loss(
    tape: &mut Tape,
    anchor_nodes: NodeId,
    candidate_nodes: NodeId,
    members: &[usize],
    offset: usize,
    mask: Option<Arc<Vec<f64>>>,
    temperature: f64,
) -> Result<Option<NodeId>> {
    if members.is_empty() {
        return Ok(None);
    }
    let a = gather(tape, anchor_nodes, members, offset)?;
    let c = gather(tape, candidate_nodes, members, offset)?;
    let terms = info_nce(tape, a, c, mask, temperature)?;
    Ok(Some(tape.reduce_sum(terms)?))
}

fn sum_sides(tape: &mut Tape, user: Option<NodeId>, item: Option<NodeId>) -> Result<NodeId> {
    match (user, item) {
        (Some(u), Some(i)) => tape.add(u, i),
        (Some(x), None) | (None, Some(x)) => Ok(x),
        (None, None) => Err(invalid("contrastive loss needs a non-empty batch")),
    }
}

/// Inter-behavior contrast: per auxiliary behavior `k`, the target-behavior
/// embedding of each batch member is pulled towards its own behavior-`k`
/// embedding and pushed from the other members' behavior-`k` embeddings,
/// except its false negatives. Returns one scalar per auxiliary behavior
/// (user side plus item side).
pub fn inter_behavior_loss(
    tape: &mut Tape,
    encoded: &EncodedNodes,
    index: &SimilarityIndex,
    cfg: &ContrastConfig,
    batch: &Batch,
    num_users: usize,
) -> Result<Vec<NodeId>> {
    cfg.validate()?;
    let target = encoded.nodes.len() - 1;
    let user_mask = fn_mask(index, Side::User, &batch.users);
    let item_mask = fn_mask(index, Side::Item, &batch.items);
    let t = cfg.temperature;
    let mut out = Vec::with_capacity(target);
    for k in 0..target {
        let (tar, aux) = (encoded.nodes[target], encoded.nodes[k]);
        let u = side_loss(tape, tar, aux, &batch.users, 0, user_mask.clone(), t)?;
        let i = side_loss(tape, tar, aux, &batch.items, num_users, item_mask.clone(), t)?;
        out.push(sum_sides(tape, u, i)?);
    }
    Ok(out)
}

/// Intra-behavior contrast between the two edge-dropout views of the
/// target behavior, with every other batch member as a negative.
pub fn intra_behavior_loss(
    tape: &mut Tape,
    views: ViewNodes,
    cfg: &ContrastConfig,
    batch: &Batch,
    num_users: usize,
) -> Result<NodeId> {
    cfg.validate()?;
    let t = cfg.temperature;
    let u = side_loss(tape, views.first, views.second, &batch.users, 0, None, t)?;
    let i = side_loss(tape, views.first, views.second, &batch.items, num_users, None, t)?;
    sum_sides(tape, u, i)
}
