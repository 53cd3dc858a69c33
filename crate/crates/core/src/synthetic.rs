//! Cascading multi-behavior interaction data from latent factors, e.g.
//! view ⊇ cart ⊇ purchase.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::graph::{inject_noise, MultiBehaviorGraph};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub num_behaviors: usize,
    pub latent_dim: usize,
    /// Fraction of items each user touches in the first behavior.
    pub density: f64,
    /// Per later behavior, the probability that an edge of the previous
    /// behavior survives into it (`num_behaviors − 1` entries).
    pub cascade: Vec<f64>,
    /// Scales the latent affinity logits; larger is more deterministic.
    pub sharpness: f64,
    /// Standard deviation of the per-item popularity logit.
    pub popularity: f64,
    /// Uniform noise added to auxiliary behaviors, as a fraction of their
    /// edges.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_users: 300,
            num_items: 500,
            num_behaviors: 3,
            latent_dim: 8,
            density: 0.05,
            cascade: vec![0.5, 0.5],
            sharpness: 2.0,
            popularity: 0.5,
            noise: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_items == 0 || self.num_behaviors == 0 || self.latent_dim == 0 {
            return Err(invalid("synthetic counts must be positive"));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(invalid(format!("density must lie in (0, 1], got {}", self.density)));
        }
        if self.cascade.len() + 1 != self.num_behaviors {
            return Err(invalid(format!(
                "{} behaviors need {} cascade probabilities, got {}",
                self.num_behaviors,
                self.num_behaviors - 1,
                self.cascade.len()
            )));
        }
        if self.cascade.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
            return Err(invalid("cascade probabilities must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(invalid(format!(
                "noise fraction must lie in [0, 1], got {}",
                self.noise
            )));
        }
        if !(self.sharpness >= 0.0) || !(self.popularity >= 0.0) {
            return Err(invalid("sharpness and popularity must be nonnegative"));
        }
        Ok(())
    }
}

fn normals(r: &mut rng::Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.sample::<f64, _>(StandardNormal) * scale).collect()
}

/// Samples the first behavior by affinity-proportional sampling without
/// replacement, then each later behavior as a uniform subsample of the
/// previous one, then adds auxiliary noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MultiBehaviorGraph> {
    spec.validate()?;
    let (nu, ni, dim) = (spec.num_users, spec.num_items, spec.latent_dim);
    let mut r = rng::stream(spec.seed, "synthetic-factors");
    let factor_scale = (dim as f64).powf(-0.25);
    let users = normals(&mut r, nu * dim, factor_scale);
    let items = normals(&mut r, ni * dim, factor_scale);
    let bias = normals(&mut r, ni, spec.popularity);

    let per_user = (spec.density * ni as f64).round() as usize;
    if per_user == 0 {
        return Err(invalid(format!(
            "density {} leaves every user without interactions",
            spec.density
        )));
    }
    let mut r = rng::stream(spec.seed, "synthetic-edges");
    let candidates: Vec<usize> = (0..ni).collect();
    let mut first = Vec::with_capacity(nu * per_user);
    for u in 0..nu {
        let pu = &users[u * dim..(u + 1) * dim];
        let weights: Vec<f64> = (0..ni)
            .map(|i| {
                let dot: f64 = pu.iter().zip(&items[i * dim..(i + 1) * dim]).map(|(a, b)| a * b).sum();
                (spec.sharpness * dot + bias[i]).exp()
            })
            .collect();
        let chosen = candidates
            .choose_multiple_weighted(&mut r, per_user, |&i| weights[i])
            .map_err(|e| invalid(format!("weighted sampling failed: {e}")))?;
        first.extend(chosen.map(|&i| (u, i)));
    }
    first.sort_unstable();

    let mut behaviors = vec![first];
    for (k, &p) in spec.cascade.iter().enumerate() {
        let mut r = rng::from_seed(rng::derive_indexed(spec.seed, "synthetic-cascade", k as u64));
        let prev = behaviors.last().expect("first behavior");
        let next: Vec<_> = prev.iter().copied().filter(|_| r.gen::<f64>() < p).collect();
        behaviors.push(next);
    }
    if let Some(k) = behaviors.iter().position(Vec::is_empty) {
        return Err(invalid(format!(
            "synthetic behavior {} ended up with no interactions",
            k + 1
        )));
    }
    let graph = MultiBehaviorGraph::from_edges(nu, ni, behaviors)?;
    if spec.noise > 0.0 {
        inject_noise(&graph, spec.noise, rng::derive_seed(spec.seed, "synthetic-noise"))
    } else {
        Ok(graph)
    }
}
