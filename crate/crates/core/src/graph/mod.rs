//! Multi-behavior interaction data: the per-behavior bipartite subgraphs,
//! ingestion, leave-one-out splitting and the structural perturbations used
//! for augmentation and robustness studies.

mod augment;
mod io;
mod split;

pub use augment::{edge_dropout, edge_dropout_pair, inject_noise, AugmentedView, ViewMask};
pub use io::{load_interactions, parse_interactions, read_mapping, write_interactions, write_mapping, Interactions};
pub use split::{leave_one_out_split, SplitDataset};

use crate::error::{invalid, Result};
use crate::tensor::Groups;

/// `K` bipartite behavior subgraphs over shared user and item sets.
/// Behavior `K - 1` (zero-based) is the target behavior.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiBehaviorGraph {
    num_users: usize,
    num_items: usize,
    /// Sorted, deduplicated `(user, item)` pairs per behavior.
    edges: Vec<Vec<(usize, usize)>>,
    user_neighbors: Vec<Vec<Vec<usize>>>,
    item_neighbors: Vec<Vec<Vec<usize>>>,
}

impl MultiBehaviorGraph {
    /// Builds a graph from per-behavior edge lists. Duplicates are removed;
    /// out-of-range indices are rejected.
    pub fn from_edges(num_users: usize, num_items: usize, edges: Vec<Vec<(usize, usize)>>) -> Result<Self> {
        if edges.is_empty() {
            return Err(invalid("a graph needs at least one behavior"));
        }
        let mut user_neighbors = Vec::with_capacity(edges.len());
        let mut item_neighbors = Vec::with_capacity(edges.len());
        let mut clean = Vec::with_capacity(edges.len());
        for (k, mut list) in edges.into_iter().enumerate() {
            if let Some(&(u, i)) = list.iter().find(|&&(u, i)| u >= num_users || i >= num_items) {
                return Err(invalid(format!(
                    "behavior {k}: edge ({u}, {i}) out of range for {num_users} users and {num_items} items"
                )));
            }
            list.sort_unstable();
            list.dedup();
            let mut un = vec![Vec::new(); num_users];
            let mut inb = vec![Vec::new(); num_items];
            for &(u, i) in &list {
                un[u].push(i);
                inb[i].push(u);
            }
            // `list` is sorted by (user, item), so user lists are sorted;
            // item lists receive users in ascending order as well.
            user_neighbors.push(un);
            item_neighbors.push(inb);
            clean.push(list);
        }
        Ok(Self {
            num_users,
            num_items,
            edges: clean,
            user_neighbors,
            item_neighbors,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// `|U| + |I|`: nodes in the stacked user-then-item layout.
    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_behaviors(&self) -> usize {
        self.edges.len()
    }

    /// Zero-based index of the target behavior.
    pub fn target(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self, behavior: usize) -> &[(usize, usize)] {
        &self.edges[behavior]
    }

    pub fn num_edges(&self, behavior: usize) -> usize {
        self.edges[behavior].len()
    }

    pub fn user_neighbors(&self, behavior: usize, user: usize) -> &[usize] {
        &self.user_neighbors[behavior][user]
    }

    pub fn item_neighbors(&self, behavior: usize, item: usize) -> &[usize] {
        &self.item_neighbors[behavior][item]
    }

    pub fn has_edge(&self, behavior: usize, user: usize, item: usize) -> bool {
        self.user_neighbors[behavior][user].binary_search(&item).is_ok()
    }

    /// Copy of the graph with one behavior's edges replaced.
    pub fn with_behavior_edges(&self, behavior: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut all = self.edges.clone();
        all[behavior] = edges;
        Self::from_edges(self.num_users, self.num_items, all)
    }

    /// Neighbourhoods of behavior `k` in the stacked node layout: rows
    /// `0..|U|` are users (neighbours are items, offset by `|U|`), rows
    /// `|U|..` are items (neighbours are users).
    pub fn propagation_groups(&self, behavior: usize) -> Groups {
        propagation_groups(self.num_users, self.num_items, &self.edges[behavior])
    }
}

/// Stacked-layout neighbourhoods for an arbitrary edge list.
pub fn propagation_groups(num_users: usize, num_items: usize, edges: &[(usize, usize)]) -> Groups {
    let mut lists = vec![Vec::new(); num_users + num_items];
    for &(u, i) in edges {
        lists[u].push(num_users + i);
        lists[num_users + i].push(u);
    }
    Groups::from_lists(&lists)
}
