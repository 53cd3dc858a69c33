use rand::Rng as _;

use super::MultiBehaviorGraph;
use crate::error::{invalid, Result};
use crate::rng;

/// Training graph plus one held-out target interaction per eligible user.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: MultiBehaviorGraph,
    /// `(user, held-out item)`, ascending by user.
    pub test: Vec<(usize, usize)>,
}

impl SplitDataset {
    pub fn test_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.test.iter().map(|&(u, _)| u)
    }
}

/// Moves one uniformly chosen target edge per user into the test set.
/// Auxiliary behaviors are left untouched.
pub fn leave_one_out_split(graph: &MultiBehaviorGraph, seed: u64) -> Result<SplitDataset> {
    let target = graph.target();
    if graph.num_edges(target) == 0 {
        return Err(invalid("target behavior has no interactions to hold out"));
    }
    let mut rng = rng::from_seed(seed);
    let mut test = Vec::new();
    let mut kept = Vec::with_capacity(graph.num_edges(target));
    for u in 0..graph.num_users() {
        let items = graph.user_neighbors(target, u);
        if items.is_empty() {
            continue;
        }
        let pick = rng.gen_range(0..items.len());
        test.push((u, items[pick]));
        kept.extend(
            items
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != pick)
                .map(|(_, &i)| (u, i)),
        );
    }
    Ok(SplitDataset {
        train: graph.with_behavior_edges(target, kept)?,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn random_graph(seed: u64) -> MultiBehaviorGraph {
        let mut r = rng::from_seed(seed);
        let mut view = Vec::new();
        let mut buy = Vec::new();
        for u in 0..100 {
            for i in 0..40 {
                if r.gen_bool(0.1) {
                    view.push((u, i));
                    if r.gen_bool(0.3) {
                        buy.push((u, i));
                    }
                }
            }
        }
        MultiBehaviorGraph::from_edges(100, 40, vec![view, buy]).unwrap()
    }

    #[test]
    fn single_purchase_is_held_out() {
        let g = MultiBehaviorGraph::from_edges(1, 3, vec![vec![(0, 0), (0, 1)], vec![(0, 2)]]).unwrap();
        let s = leave_one_out_split(&g, 1).unwrap();
        assert_eq!(s.test, vec![(0, 2)]);
        assert_eq!(s.train.num_edges(1), 0);
        assert_eq!(s.train.edges(0), g.edges(0));
    }

    #[test]
    fn deterministic_per_seed() {
        let g = random_graph(3);
        assert_eq!(leave_one_out_split(&g, 9).unwrap(), leave_one_out_split(&g, 9).unwrap());
    }

    #[test]
    fn test_count_and_soundness() {
        let g = random_graph(5);
        let s = leave_one_out_split(&g, 11).unwrap();
        let eligible = (0..g.num_users())
            .filter(|&u| !g.user_neighbors(1, u).is_empty())
            .count();
        assert_eq!(s.test.len(), eligible);

        let original: BTreeSet<_> = g.edges(1).iter().copied().collect();
        let train: BTreeSet<_> = s.train.edges(1).iter().copied().collect();
        let test: BTreeSet<_> = s.test.iter().copied().collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(&train | &test, original);
        assert_eq!(s.train.edges(0), g.edges(0));
    }

    #[test]
    fn empty_target_rejected() {
        let g = MultiBehaviorGraph::from_edges(1, 1, vec![vec![(0, 0)], vec![]]).unwrap();
        assert!(leave_one_out_split(&g, 0).is_err());
    }
}
