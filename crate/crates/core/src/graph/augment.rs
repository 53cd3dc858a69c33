use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::MultiBehaviorGraph;
use crate::error::{invalid, Result};
use crate::rng;
use crate::tensor::Groups;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewMask {
    First,
    Second,
}

/// The target-behavior subgraph with a random subset of its edges kept.
/// Nodes are never removed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedView {
    pub behavior: usize,
    pub kept: Vec<(usize, usize)>,
    pub mask: ViewMask,
    pub seed: u64,
}

impl AugmentedView {
    /// Stacked-layout neighbourhoods of the kept edges.
    pub fn propagation_groups(&self, graph: &MultiBehaviorGraph) -> Groups {
        super::propagation_groups(graph.num_users(), graph.num_items(), &self.kept)
    }
}

/// Keeps each target edge independently with probability `1 - ratio`.
pub fn edge_dropout(graph: &MultiBehaviorGraph, ratio: f64, seed: u64) -> Result<AugmentedView> {
    dropout_with_mask(graph, ratio, seed, ViewMask::First)
}

/// The two independently masked views used for intra-behavior contrast.
pub fn edge_dropout_pair(
    graph: &MultiBehaviorGraph,
    ratio: f64,
    seeds: (u64, u64),
) -> Result<(AugmentedView, AugmentedView)> {
    Ok((
        dropout_with_mask(graph, ratio, seeds.0, ViewMask::First)?,
        dropout_with_mask(graph, ratio, seeds.1, ViewMask::Second)?,
    ))
}

fn dropout_with_mask(graph: &MultiBehaviorGraph, ratio: f64, seed: u64, mask: ViewMask) -> Result<AugmentedView> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(invalid(format!("edge dropout ratio must lie in [0, 1), got {ratio}")));
    }
    let behavior = graph.target();
    let mut rng = rng::from_seed(seed);
    let keep = 1.0 - ratio;
    let kept = graph
        .edges(behavior)
        .iter()
        .copied()
        .filter(|_| rng.gen::<f64>() < keep)
        .collect();
    Ok(AugmentedView {
        behavior,
        kept,
        mask,
        seed,
    })
}

/// Adds `⌊ratio·|E_k|⌋` uniformly sampled new pairs to every auxiliary
/// behavior. The target behavior is left untouched.
pub fn inject_noise(graph: &MultiBehaviorGraph, ratio: f64, seed: u64) -> Result<MultiBehaviorGraph> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(invalid(format!("noise ratio must lie in [0, 1], got {ratio}")));
    }
    let (nu, ni) = (graph.num_users(), graph.num_items());
    let capacity = nu * ni;
    let mut all = Vec::with_capacity(graph.num_behaviors());
    for k in 0..graph.num_behaviors() {
        let existing = graph.edges(k);
        if k == graph.target() {
            all.push(existing.to_vec());
            continue;
        }
        let count = (ratio * existing.len() as f64).floor() as usize;
        let free = capacity - existing.len();
        if count > free {
            return Err(invalid(format!(
                "behavior {k}: cannot add {count} noisy edges, only {free} free user-item pairs"
            )));
        }
        let mut rng = rng::from_seed(rng::derive_indexed(seed, "noise", k as u64));
        let mut edges = existing.to_vec();
        if 2 * (existing.len() + count) <= capacity {
            let mut taken: HashSet<(usize, usize)> = existing.iter().copied().collect();
            let mut added = 0;
            while added < count {
                let pair = (rng.gen_range(0..nu), rng.gen_range(0..ni));
                if taken.insert(pair) {
                    edges.push(pair);
                    added += 1;
                }
            }
        } else {
            let mut complement: Vec<(usize, usize)> = (0..nu)
                .flat_map(|u| (0..ni).map(move |i| (u, i)))
                .filter(|&(u, i)| !graph.has_edge(k, u, i))
                .collect();
            let (chosen, _) = complement.partial_shuffle(&mut rng, count);
            edges.extend_from_slice(chosen);
        }
        all.push(edges);
    }
    MultiBehaviorGraph::from_edges(nu, ni, all)
}
