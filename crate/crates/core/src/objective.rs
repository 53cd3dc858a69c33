//! Non-sampling recommendation loss and assembly of the training objective
//! into a target task plus named auxiliary tasks.

use std::sync::Arc;

use crate::encoder::{EncodedNodes, EncodedState};
use crate::error::{invalid, Result};
use crate::graph::MultiBehaviorGraph;
use crate::tensor::{NodeId, Tape};

/// `x̂ = Σ_m e_k[m] · e_u[m] · e_i[m]`.
pub fn predict_score(state: &EncodedState, user: usize, item: usize, behavior: usize) -> f64 {
    let ek = state.behavior(behavior);
    let eu = state.user(behavior, user);
    let ei = state.item(behavior, item);
    ek.iter().zip(eu).zip(ei).map(|((k, u), i)| k * u * i).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// `λ_k`, one per behavior.
    pub lambda: Vec<f64>,
    /// `c⁺` per behavior.
    pub positive: Vec<f64>,
    /// `c⁻` per behavior.
    pub negative: Vec<f64>,
}

impl LossWeights {
    /// Uniform `λ = 1/K` and the same confidences for every behavior.
    pub fn uniform(num_behaviors: usize, positive: f64, negative: f64) -> Result<Self> {
        let w = Self {
            lambda: vec![1.0 / num_behaviors as f64; num_behaviors],
            positive: vec![positive; num_behaviors],
            negative: vec![negative; num_behaviors],
        };
        w.validate(num_behaviors)?;
        Ok(w)
    }

    pub fn validate(&self, num_behaviors: usize) -> Result<()> {
        if self.lambda.len() != num_behaviors
            || self.positive.len() != num_behaviors
            || self.negative.len() != num_behaviors
        {
            return Err(invalid(format!("loss weights must list {num_behaviors} behaviors")));
        }
        if self.lambda.iter().any(|&l| !(l >= 0.0)) {
            return Err(invalid("behavior coefficients λ must be nonnegative"));
        }
        for (k, (&p, &n)) in self.positive.iter().zip(&self.negative).enumerate() {
            if !(n > 0.0 && n < p) {
                return Err(invalid(format!(
                    "behavior {k}: need 0 < c⁻ < c⁺, got c⁺ = {p}, c⁻ = {n}"
                )));
            }
        }
        Ok(())
    }
}

/// Whole-data weighted squared error for behavior `k` over the batch users,
/// up to the parameter-free constant `Σ_{positives} c⁺`:
///
/// `Σ_{u∈B} Σ_{i∈I⁺_u} ((c⁺ − c⁻) x̂² − 2c⁺ x̂)
///   + c⁻ Σ_{m,n} (e_k e_kᵀ)_{mn} (Σ_{u∈B} e_u e_uᵀ)_{mn} (Σ_{i∈I} e_i e_iᵀ)_{mn}`.
///
/// The second term never enumerates user-item pairs.
pub fn non_sampling_loss(
    tape: &mut Tape,
    encoded: &EncodedNodes,
    graph: &MultiBehaviorGraph,
    users: &[usize],
    behavior: usize,
    weights: &LossWeights,
) -> Result<NodeId> {
    if users.is_empty() {
        return Err(invalid("non-sampling loss needs a non-empty batch"));
    }
    let (cp, cn) = (weights.positive[behavior], weights.negative[behavior]);
    let nu = graph.num_users();
    let nodes = encoded.nodes[behavior];
    let ek = tape.gather_rows(encoded.behaviors, Arc::new(vec![behavior]))?;

    let batch_users = tape.gather_rows(nodes, Arc::new(users.to_vec()))?;
    let all_items = tape.gather_rows(nodes, Arc::new((nu..nu + graph.num_items()).collect()))?;
    let ekt = tape.transpose(ek)?;
    let gram_k = tape.matmul(ekt, ek)?;
    let ut = tape.transpose(batch_users)?;
    let gram_u = tape.matmul(ut, batch_users)?;
    let it = tape.transpose(all_items)?;
    let gram_i = tape.matmul(it, all_items)?;
    let prod = tape.hadamard(gram_u, gram_i)?;
    let prod = tape.hadamard(gram_k, prod)?;
    let all_item = tape.reduce_sum(prod)?;
    let all_item = tape.scale(all_item, cn)?;

    let (mut pu, mut pi) = (Vec::new(), Vec::new());
    for &u in users {
        for &i in graph.user_neighbors(behavior, u) {
            pu.push(u);
            pi.push(nu + i);
        }
    }
    if pu.is_empty() {
        return Ok(all_item);
    }
    let n = pu.len();
    let rows_u = tape.gather_rows(nodes, Arc::new(pu))?;
    let rows_i = tape.gather_rows(nodes, Arc::new(pi))?;
    let gate = tape.gather_rows(ek, Arc::new(vec![0; n]))?;
    let gated = tape.hadamard(rows_u, gate)?;
    let scores = tape.row_dot(gated, rows_i)?;
    let sq = tape.square(scores)?;
    let sq = tape.reduce_sum(sq)?;
    let sq = tape.scale(sq, cp - cn)?;
    let lin = tape.reduce_sum(scores)?;
    let lin = tape.scale(lin, 2.0 * cp)?;
    let positive = tape.sub(sq, lin)?;
    tape.add(positive, all_item)
}

/// `Σ_k λ_k L_k`.
pub fn recommendation_loss(tape: &mut Tape, losses: &[NodeId], lambda: &[f64]) -> Result<NodeId> {
    if losses.is_empty() || losses.len() != lambda.len() {
        return Err(invalid(format!(
            "{} behavior losses but {} coefficients",
            losses.len(),
            lambda.len()
        )));
    }
    let mut acc = None;
    for (&l, &w) in losses.iter().zip(lambda) {
        let term = tape.scale(l, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("non-empty"))
}

/// How auxiliary losses enter the update.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightMode {
    /// Gradient manipulation decides; every weight is 1.
    Hmg,
    /// Static `μ_k` per inter-behavior pair and `γ` for the intra loss.
    Fixed { inter: Vec<f64>, intra: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuxiliaryLoss {
    pub name: String,
    pub node: NodeId,
    pub weight: f64,
}

/// Target loss and named auxiliary losses living on one tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveBundle {
    pub target: NodeId,
    pub auxiliaries: Vec<AuxiliaryLoss>,
}

pub fn inter_name(k: usize) -> String {
    format!("ssl_inter.{k}")
}

pub const INTRA_NAME: &str = "ssl_intra";

/// Bundles the recommendation loss with the SSL components. `inter[k]` is
/// the contrast between auxiliary behavior `k` and the target.
pub fn assemble_objective(
    tape: &Tape,
    rec: NodeId,
    inter: &[NodeId],
    intra: Option<NodeId>,
    mode: &WeightMode,
) -> Result<ObjectiveBundle> {
    let all = std::iter::once(rec).chain(inter.iter().copied()).chain(intra);
    for n in all {
        if !tape.owns(n) {
            return Err(invalid("objective terms must all live on the same tape"));
        }
        if !tape.value(n).is_scalar() {
            return Err(invalid("objective terms must be scalars"));
        }
    }
    let (mu, gamma) = match mode {
        WeightMode::Hmg => (vec![1.0; inter.len()], 1.0),
        WeightMode::Fixed { inter: mu, intra } => {
            if mu.len() != inter.len() {
                return Err(invalid(format!(
                    "{} inter-behavior weights for {} inter-behavior losses",
                    mu.len(),
                    inter.len()
                )));
            }
            (mu.clone(), *intra)
        }
    };
    let mut auxiliaries: Vec<AuxiliaryLoss> = inter
        .iter()
        .zip(mu)
        .enumerate()
        .map(|(k, (&node, weight))| AuxiliaryLoss {
            name: inter_name(k),
            node,
            weight,
        })
        .collect();
    if let Some(node) = intra {
        auxiliaries.push(AuxiliaryLoss {
            name: INTRA_NAME.to_string(),
            node,
            weight: gamma,
        });
    }
    Ok(ObjectiveBundle {
        target: rec,
        auxiliaries,
    })
}

impl ObjectiveBundle {
    /// `L_rec + Σ w_i L_aux,i` as one scalar node.
    pub fn combined(&self, tape: &mut Tape) -> Result<NodeId> {
        let mut acc = self.target;
        for aux in &self.auxiliaries {
            let term = tape.scale(aux.node, aux.weight)?;
            acc = tape.add(acc, term)?;
        }
        Ok(acc)
    }
}
