use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{invalid, Result};
use crate::graph::MultiBehaviorGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    User,
    Item,
}

fn neighbors(graph: &MultiBehaviorGraph, side: Side, k: usize, a: usize) -> &[usize] {
    match side {
        Side::User => graph.user_neighbors(k, a),
        Side::Item => graph.item_neighbors(k, a),
    }
}

fn other(side: Side) -> Side {
    match side {
        Side::User => Side::Item,
        Side::Item => Side::User,
    }
}

/// Sorted-list intersection.
fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut x, mut y) = (0, 0);
    let mut out = Vec::new();
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[x]);
                x += 1;
                y += 1;
            }
        }
    }
    out
}

fn intersect_len(a: &[usize], b: &[usize]) -> usize {
    let (mut x, mut y, mut n) = (0, 0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                x += 1;
                y += 1;
            }
        }
    }
    n
}

fn swing_unchecked(graph: &MultiBehaviorGraph, k: usize, side: Side, a: usize, b: usize, alpha: f64) -> f64 {
    let common = intersect(neighbors(graph, side, k, a), neighbors(graph, side, k, b));
    let mut s = 0.0;
    for &i in &common {
        let ni = neighbors(graph, other(side), k, i);
        for &j in &common {
            let nj = neighbors(graph, other(side), k, j);
            s += 1.0 / (alpha + intersect_len(ni, nj) as f64);
        }
    }
    s
}

/// Swing score of two users (or two items) in behavior `k`:
/// `Σ_{i∈C} Σ_{j∈C} 1 / (α + |N_i ∩ N_j|)` over their common neighbours
/// `C`, including `i = j`. On the item side the roles of users and items
/// swap.
pub fn swing_similarity(
    graph: &MultiBehaviorGraph,
    k: usize,
    side: Side,
    a: usize,
    b: usize,
    alpha: f64,
) -> Result<f64> {
    if a == b {
        return Err(invalid(format!("swing similarity of entity {a} with itself")));
    }
    if !(alpha > 0.0) {
        return Err(invalid(format!("swing smoothing must be positive, got {alpha}")));
    }
    let count = match side {
        Side::User => graph.num_users(),
        Side::Item => graph.num_items(),
    };
    if a >= count || b >= count || k >= graph.num_behaviors() {
        return Err(invalid("swing similarity index out of range"));
    }
    Ok(swing_unchecked(graph, k, side, a, b, alpha))
}

/// Behavior-averaged swing scores and the false-negative sets derived from
/// them.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityIndex {
    pub alpha: f64,
    pub top_users: usize,
    pub top_items: usize,
    /// Per entity, `(neighbour, score)` ascending by neighbour; only pairs
    /// with a common neighbour in some behavior appear.
    user_scores: Vec<Vec<(usize, f64)>>,
    item_scores: Vec<Vec<(usize, f64)>>,
    user_fn: Vec<Vec<usize>>,
    item_fn: Vec<Vec<usize>>,
}

fn side_scores(graph: &MultiBehaviorGraph, side: Side, alpha: f64) -> Vec<Vec<(usize, f64)>> {
    let count = match side {
        Side::User => graph.num_users(),
        Side::Item => graph.num_items(),
    };
    let k_count = graph.num_behaviors();
    let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for k in 0..k_count {
        let mut seen = vec![usize::MAX; count];
        for a in 0..count {
            for &mid in neighbors(graph, side, k, a) {
                for &b in neighbors(graph, other(side), k, mid) {
                    if b <= a || seen[b] == a {
                        continue;
                    }
                    seen[b] = a;
                    *pairs.entry((a, b)).or_insert(0.0) += swing_unchecked(graph, k, side, a, b, alpha);
                }
            }
        }
    }
    let mut out = vec![Vec::new(); count];
    for ((a, b), sum) in pairs {
        let s = sum / k_count as f64;
        out[a].push((b, s));
        out[b].push((a, s));
    }
    for row in &mut out {
        row.sort_unstable_by_key(|&(b, _)| b);
    }
    out
}

fn top_n(scores: &[(usize, f64)], n: usize) -> Vec<usize> {
    let mut ranked = scores.to_vec();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    ranked.into_iter().take(n).map(|(b, _)| b).collect()
}

/// Builds the similarity index by joining through common neighbours only.
/// Scores are averaged over all `K` behaviors; the false-negative set of
/// each entity is its top `N` by score, ties to the smaller index.
pub fn build_similarity_index(
    graph: &MultiBehaviorGraph,
    alpha: f64,
    top_users: usize,
    top_items: usize,
) -> Result<SimilarityIndex> {
    if !(alpha > 0.0) {
        return Err(invalid(format!("swing smoothing must be positive, got {alpha}")));
    }
    let user_scores = side_scores(graph, Side::User, alpha);
    let item_scores = side_scores(graph, Side::Item, alpha);
    let user_fn = user_scores.iter().map(|s| top_n(s, top_users)).collect();
    let item_fn = item_scores.iter().map(|s| top_n(s, top_items)).collect();
    Ok(SimilarityIndex {
        alpha,
        top_users,
        top_items,
        user_scores,
        item_scores,
        user_fn,
        item_fn,
    })
}

impl SimilarityIndex {
    fn scores_of(&self, side: Side) -> &[Vec<(usize, f64)>] {
        match side {
            Side::User => &self.user_scores,
            Side::Item => &self.item_scores,
        }
    }

    /// Averaged score, 0 for pairs without any common neighbour.
    pub fn score(&self, side: Side, a: usize, b: usize) -> f64 {
        let row = &self.scores_of(side)[a];
        row.binary_search_by_key(&b, |&(n, _)| n)
            .map(|p| row[p].1)
            .unwrap_or(0.0)
    }

    pub fn neighbors(&self, side: Side, a: usize) -> &[(usize, f64)] {
        &self.scores_of(side)[a]
    }

    pub fn false_negatives(&self, side: Side, a: usize) -> &[usize] {
        match side {
            Side::User => &self.user_fn[a],
            Side::Item => &self.item_fn[a],
        }
    }

    /// Writes `entity<TAB>neighbor<TAB>score` lines sorted by entity then
    /// neighbour.
    pub fn dump(&self, side: Side, mut out: impl Write) -> Result<()> {
        for (a, row) in self.scores_of(side).iter().enumerate() {
            for &(b, s) in row {
                writeln!(out, "{a}\t{b}\t{s}")?;
            }
        }
        Ok(())
    }
}
