//! All-item leave-one-out ranking, sparsity buckets and the auxiliary-noise
//! robustness protocol.

use std::io::Write;

use crate::encoder::EncodedState;
use crate::error::{invalid, Result};
use crate::graph::{inject_noise, MultiBehaviorGraph, SplitDataset};
use crate::rng;

/// Target-behavior scores of every item for one user.
pub fn score_items(state: &EncodedState, user: usize) -> Vec<f64> {
    let k = state.num_behaviors() - 1;
    let ek = state.behavior(k);
    let eu = state.user(k, user);
    let w: Vec<f64> = ek.iter().zip(eu).map(|(a, b)| a * b).collect();
    (0..state.num_items())
        .map(|i| w.iter().zip(state.item(k, i)).map(|(a, b)| a * b).sum())
        .collect()
}

/// 1-based rank of `held_out` among all items except `excluded` (sorted),
/// scores descending and ties to the smaller index.
pub fn rank_among(scores: &[f64], held_out: usize, excluded: &[usize]) -> usize {
    let s = scores[held_out];
    let mut rank = 1;
    for (j, &v) in scores.iter().enumerate() {
        if j == held_out || excluded.binary_search(&j).is_ok() {
            continue;
        }
        if v > s || (v == s && j < held_out) {
            rank += 1;
        }
    }
    rank
}

/// Rank of the user's held-out item against every item that is not a
/// training target positive.
pub fn rank_heldout(state: &EncodedState, split: &SplitDataset, user: usize) -> Result<usize> {
    let pos = split
        .test
        .binary_search_by_key(&user, |&(u, _)| u)
        .map_err(|_| invalid(format!("user {user} has no held-out item")))?;
    let item = split.test[pos].1;
    let train = split.train.user_neighbors(split.train.target(), user);
    if train.binary_search(&item).is_ok() {
        return Err(invalid(format!(
            "held-out item {item} of user {user} is a training positive"
        )));
    }
    Ok(rank_among(&score_items(state, user), item, train))
}

pub fn ndcg_at(rank: usize, cutoff: usize) -> f64 {
    if rank <= cutoff {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Mean `(Recall@k, NDCG@k)` over single-held-out ranks.
pub fn metrics(ranks: &[usize], cutoff: usize) -> Result<(f64, f64)> {
    if cutoff == 0 {
        return Err(invalid("metric cutoff must be positive"));
    }
    if ranks.is_empty() {
        return Ok((0.0, 0.0));
    }
    let n = ranks.len() as f64;
    let recall = ranks.iter().filter(|&&r| r <= cutoff).count() as f64 / n;
    let ndcg = ranks.iter().map(|&r| ndcg_at(r, cutoff)).sum::<f64>() / n;
    Ok((recall, ndcg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub cutoffs: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    /// `(user, rank)`, ascending by user.
    pub ranks: Vec<(usize, usize)>,
}

impl EvalReport {
    pub fn at(&self, cutoff: usize) -> Option<(f64, f64)> {
        let p = self.cutoffs.iter().position(|&c| c == cutoff)?;
        Some((self.recall[p], self.ndcg[p]))
    }

    /// `cutoff,recall,ndcg`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "cutoff,recall,ndcg")?;
        for ((c, r), n) in self.cutoffs.iter().zip(&self.recall).zip(&self.ndcg) {
            writeln!(out, "{c},{r},{n}")?;
        }
        Ok(())
    }
}

pub fn evaluate(state: &EncodedState, split: &SplitDataset, cutoffs: &[usize]) -> Result<EvalReport> {
    let ranks: Vec<(usize, usize)> = split
        .test_users()
        .map(|u| Ok((u, rank_heldout(state, split, u)?)))
        .collect::<Result<_>>()?;
    let plain: Vec<usize> = ranks.iter().map(|&(_, r)| r).collect();
    let (mut recall, mut ndcg) = (Vec::new(), Vec::new());
    for &c in cutoffs {
        let (r, n) = metrics(&plain, c)?;
        recall.push(r);
        ndcg.push(n);
    }
    Ok(EvalReport {
        cutoffs: cutoffs.to_vec(),
        recall,
        ndcg,
        ranks,
    })
}

/// Users whose training-target count lies in `[lo, hi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bucket {
    pub lo: usize,
    /// `None` for the open last bucket.
    pub hi: Option<usize>,
    pub count: usize,
    pub mean_ndcg: f64,
}

pub const BUCKET_CUTOFF: usize = 50;

/// Groups test users by their number of training target interactions and
/// averages NDCG@50 per group. `boundaries` (strictly increasing) split the
/// counts into `boundaries.len() + 1` half-open ranges.
pub fn sparsity_buckets(split: &SplitDataset, report: &EvalReport, boundaries: &[usize]) -> Result<Vec<Bucket>> {
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("bucket boundaries must be strictly increasing"));
    }
    let mut edges = vec![0];
    edges.extend(boundaries.iter().copied().filter(|&b| b > 0));
    let mut sums = vec![(0usize, 0.0); edges.len()];
    let target = split.train.target();
    for &(u, rank) in &report.ranks {
        let n = split.train.user_neighbors(target, u).len();
        let b = edges.partition_point(|&e| e <= n) - 1;
        sums[b].0 += 1;
        sums[b].1 += ndcg_at(rank, BUCKET_CUTOFF);
    }
    Ok(edges
        .iter()
        .enumerate()
        .map(|(b, &lo)| Bucket {
            lo,
            hi: edges.get(b + 1).copied(),
            count: sums[b].0,
            mean_ndcg: if sums[b].0 > 0 {
                sums[b].1 / sums[b].0 as f64
            } else {
                0.0
            },
        })
        .collect())
}

/// Boundaries at the 20/40/60/80% quantiles of the test users' training
/// target counts, deduplicated.
pub fn quintile_boundaries(split: &SplitDataset) -> Vec<usize> {
    let target = split.train.target();
    let mut counts: Vec<usize> = split
        .test_users()
        .map(|u| split.train.user_neighbors(target, u).len())
        .collect();
    if counts.is_empty() {
        return Vec::new();
    }
    counts.sort_unstable();
    let mut out: Vec<usize> = (1..5)
        .map(|q| counts[q * counts.len() / 5])
        .filter(|&b| b > 0)
        .collect();
    out.dedup();
    out
}

/// `bucket_lo,bucket_hi,count,mean_ndcg`; an open upper end is empty.
pub fn write_buckets_csv(buckets: &[Bucket], mut out: impl Write) -> Result<()> {
    writeln!(out, "bucket_lo,bucket_hi,count,mean_ndcg")?;
    for b in buckets {
        let hi = b.hi.map(|h| h.to_string()).unwrap_or_default();
        writeln!(out, "{},{hi},{},{}", b.lo, b.count, b.mean_ndcg)?;
    }
    Ok(())
}

/// `(clean − noisy) / clean × 100`, 0 when the clean metric is 0.
pub fn decline_percentage(clean: f64, noisy: f64) -> f64 {
    if clean == 0.0 {
        0.0
    } else {
        (clean - noisy) / clean * 100.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRow {
    pub ratio: f64,
    /// Per seed, in input order.
    pub declines: Vec<f64>,
    pub mean_decline: f64,
}

/// For every seed trains once on `base` and once per ratio on a noisy copy,
/// via `run(graph, seed) -> metric`. Noise is seeded per (seed, ratio).
pub fn noise_robustness_run<F>(
    base: &MultiBehaviorGraph,
    ratios: &[f64],
    seeds: &[u64],
    mut run: F,
) -> Result<Vec<NoiseRow>>
where
    F: FnMut(&MultiBehaviorGraph, u64) -> Result<f64>,
{
    if ratios.is_empty() {
        return Ok(Vec::new());
    }
    if seeds.is_empty() {
        return Err(invalid("noise study needs at least one seed"));
    }
    let clean: Vec<f64> = seeds.iter().map(|&s| run(base, s)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(ratios.len());
    for (r, &ratio) in ratios.iter().enumerate() {
        let mut declines = Vec::with_capacity(seeds.len());
        for (&seed, &c) in seeds.iter().zip(&clean) {
            let noisy_graph = inject_noise(base, ratio, rng::derive_indexed(seed, "noise-study", r as u64))?;
            declines.push(decline_percentage(c, run(&noisy_graph, seed)?));
        }
        let mean_decline = declines.iter().sum::<f64>() / declines.len() as f64;
        rows.push(NoiseRow {
            ratio,
            declines,
            mean_decline,
        });
    }
    Ok(rows)
}

/// `noise_ratio,decline_pct` using the mean over seeds.
pub fn write_noise_csv(rows: &[NoiseRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "noise_ratio,decline_pct")?;
    for r in rows {
        writeln!(out, "{},{}", r.ratio, r.mean_decline)?;
    }
    Ok(())
}
