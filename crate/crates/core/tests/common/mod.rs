#![allow(dead_code)]

use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;

use mbssl_core::encoder::{encode_with_views, EncodedNodes, GraphContext, ModelParameters};
use mbssl_core::graph::{edge_dropout_pair, MultiBehaviorGraph};
use mbssl_core::objective::{
    assemble_objective, non_sampling_loss, recommendation_loss, LossWeights, ObjectiveBundle, WeightMode,
};
use mbssl_core::rng;
use mbssl_core::ssl::{build_similarity_index, inter_behavior_loss, intra_behavior_loss, Batch, ContrastConfig, Side};
use mbssl_core::tensor::{Axis, Groups, NodeId, ParamStore, Tape, Tensor};

pub fn random_graph(seed: u64, users: usize, items: usize, behaviors: usize, p: f64) -> MultiBehaviorGraph {
    let mut r = rng::from_seed(seed);
    let edges = (0..behaviors)
        .map(|_| {
            let mut e = Vec::new();
            for u in 0..users {
                for i in 0..items {
                    if r.gen_bool(p) {
                        e.push((u, i));
                    }
                }
            }
            e
        })
        .collect();
    MultiBehaviorGraph::from_edges(users, items, edges).unwrap()
}

/// Direct evaluation of the swing score from neighbour sets, averaged over
/// behaviors in behavior order.
pub fn swing_direct(graph: &MultiBehaviorGraph, side: Side, a: usize, b: usize, alpha: f64) -> f64 {
    let k_count = graph.num_behaviors();
    let mut total = 0.0;
    for k in 0..k_count {
        let nb = |x: usize, s: Side| -> HashSet<usize> {
            match s {
                Side::User => graph.user_neighbors(k, x).iter().copied().collect(),
                Side::Item => graph.item_neighbors(k, x).iter().copied().collect(),
            }
        };
        let flip = match side {
            Side::User => Side::Item,
            Side::Item => Side::User,
        };
        let na = nb(a, side);
        let nbb = nb(b, side);
        let mut common: Vec<usize> = na.intersection(&nbb).copied().collect();
        common.sort_unstable();
        let mut s = 0.0;
        for &i in &common {
            let ni = nb(i, flip);
            for &j in &common {
                let nj = nb(j, flip);
                s += 1.0 / (alpha + ni.intersection(&nj).count() as f64);
            }
        }
        total += s;
    }
    total / k_count as f64
}

/// Explicit weighted squared error over every (batch user, item) pair:
/// `Σ_u Σ_i c_ui (x_ui − x̂_ui)²` with `c = c⁺` on positives, `c⁻` elsewhere.
pub fn brute_force_nonsampling(
    tape: &mut Tape,
    enc: &EncodedNodes,
    graph: &MultiBehaviorGraph,
    users: &[usize],
    behavior: usize,
    (cp, cn): (f64, f64),
) -> NodeId {
    let nu = graph.num_users();
    let ni = graph.num_items();
    let nodes = enc.nodes[behavior];
    let ub = tape.gather_rows(nodes, Arc::new(users.to_vec())).unwrap();
    let ek = tape
        .gather_rows(enc.behaviors, Arc::new(vec![behavior; users.len()]))
        .unwrap();
    let gated = tape.hadamard(ub, ek).unwrap();
    let items = tape.gather_rows(nodes, Arc::new((nu..nu + ni).collect())).unwrap();
    let it = tape.transpose(items).unwrap();
    let scores = tape.matmul(gated, it).unwrap();
    let mut x = vec![0.0; users.len() * ni];
    let mut c = vec![cn; users.len() * ni];
    for (r, &u) in users.iter().enumerate() {
        for &i in graph.user_neighbors(behavior, u) {
            x[r * ni + i] = 1.0;
            c[r * ni + i] = cp;
        }
    }
    let x = tape.constant(Tensor::matrix(users.len(), ni, x).unwrap());
    let c = tape.constant(Tensor::matrix(users.len(), ni, c).unwrap());
    let resid = tape.sub(x, scores).unwrap();
    let sq = tape.square(resid).unwrap();
    let weighted = tape.hadamard(c, sq).unwrap();
    tape.reduce_sum(weighted).unwrap()
}

/// The complete training objective over all users on one tape: the
/// recommendation loss plus every inter-behavior term and the intra term,
/// each with weight 1.
pub fn full_objective(
    g: &MultiBehaviorGraph,
    model: &ModelParameters,
    seed: u64,
    dropout: Option<u64>,
) -> (Tape, ObjectiveBundle) {
    let k_count = g.num_behaviors();
    let ctx = GraphContext::new(g);
    let (v1, v2) = edge_dropout_pair(g, 0.5, (rng::derive_seed(seed, "a"), rng::derive_seed(seed, "b"))).unwrap();
    let mut tape = Tape::new();
    let enc = encode_with_views(&mut tape, model, g, &ctx, Some((&v1, &v2)), dropout).unwrap();
    let w = LossWeights::uniform(k_count, 1.0, 0.1).unwrap();
    let batch = Batch::full(g);
    let losses: Vec<_> = (0..k_count)
        .map(|k| non_sampling_loss(&mut tape, &enc.main, g, &batch.users, k, &w).unwrap())
        .collect();
    let rec = recommendation_loss(&mut tape, &losses, &w.lambda).unwrap();
    let index = build_similarity_index(g, 0.5, 1, 1).unwrap();
    let cc = ContrastConfig::new(0.2, k_count).unwrap();
    let d = model.config().dim;
    let inter = inter_behavior_loss(&mut tape, &enc.main, &index, &cc, &batch, d).unwrap();
    let intra = intra_behavior_loss(&mut tape, enc.views.unwrap(), &cc, &batch, d).unwrap();
    let mode = WeightMode::Fixed {
        inter: vec![1.0; inter.len()],
        intra: 1.0,
    };
    let bundle = assemble_objective(&tape, rec, &inter, Some(intra), &mode).unwrap();
    (tape, bundle)
}

pub fn uniform(r: &mut rng::Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

/// Values with magnitude in `[0.2, 1)` and random sign, away from kinks.
pub fn away_from_zero(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = r.gen_range(0.2..1.0);
            if r.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

struct Case {
    tape: Tape,
    store: ParamStore,
    r: rng::Rng,
}

impl Case {
    fn new(seed: u64) -> Self {
        Self {
            tape: Tape::new(),
            store: ParamStore::new(),
            r: rng::from_seed(seed),
        }
    }

    fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> NodeId {
        let name = format!("p{}", self.store.len());
        let id = self.store.add(name, Tensor::matrix(rows, cols, data).unwrap()).unwrap();
        self.tape.param(&self.store, id)
    }

    fn rand(&mut self, rows: usize, cols: usize) -> NodeId {
        let d = uniform(&mut self.r, rows * cols, -1.0, 1.0);
        self.leaf(rows, cols, d)
    }

    /// Contracts `x` with fixed random weights so every output entry gets
    /// a distinct cotangent.
    fn finish(mut self, x: NodeId) -> (Tape, NodeId) {
        let v = self.tape.value(x).clone();
        if v.is_scalar() {
            return (self.tape, x);
        }
        let w = uniform(&mut self.r, v.len(), -1.0, 1.0);
        let w = self.tape.constant(Tensor::new(v.shape().to_vec(), w).unwrap());
        let loss = self.tape.inner_product(x, w).unwrap();
        (self.tape, loss)
    }
}

/// One small scalar-valued tape per operation.
pub fn op_cases(seed: u64) -> Vec<(&'static str, Tape, NodeId)> {
    type Build = fn(&mut Case) -> NodeId;
    let builders: Vec<(&'static str, Build)> = vec![
        ("matmul", |c| {
            let (a, b) = (c.rand(3, 4), c.rand(4, 2));
            c.tape.matmul(a, b).unwrap()
        }),
        ("add", |c| {
            let (a, b) = (c.rand(3, 4), c.rand(3, 4));
            c.tape.add(a, b).unwrap()
        }),
        ("subtract", |c| {
            let (a, b) = (c.rand(3, 4), c.rand(3, 4));
            c.tape.sub(a, b).unwrap()
        }),
        ("hadamard", |c| {
            let (a, b) = (c.rand(3, 4), c.rand(3, 4));
            c.tape.hadamard(a, b).unwrap()
        }),
        ("scalar-scale", |c| {
            let a = c.rand(3, 4);
            c.tape.scale(a, -1.7).unwrap()
        }),
        ("row-mean", |c| {
            let a = c.rand(5, 3);
            let g = Groups::from_lists(&[vec![0, 2], vec![1], vec![], vec![3, 4, 0]]);
            c.tape.row_mean(a, Arc::new(g)).unwrap()
        }),
        ("row-concat", |c| {
            let (a, b) = (c.rand(2, 3), c.rand(3, 3));
            c.tape.row_concat(vec![a, b]).unwrap()
        }),
        ("col-concat", |c| {
            let (a, b) = (c.rand(3, 2), c.rand(3, 4));
            c.tape.col_concat(vec![a, b]).unwrap()
        }),
        ("slice-cols", |c| {
            let a = c.rand(3, 5);
            c.tape.slice_cols(a, 1, 3).unwrap()
        }),
        ("gather-rows", |c| {
            let a = c.rand(4, 3);
            c.tape.gather_rows(a, Arc::new(vec![2, 0, 2, 3])).unwrap()
        }),
        ("mean-of", |c| {
            let xs = vec![c.rand(3, 3), c.rand(3, 3), c.rand(3, 3)];
            c.tape.mean_of(xs).unwrap()
        }),
        ("leaky-relu", |c| {
            let d = away_from_zero(&mut c.r, 12);
            let a = c.leaf(3, 4, d);
            c.tape.leaky_relu(a, 0.01).unwrap()
        }),
        ("tanh", |c| {
            let a = c.rand(3, 4);
            c.tape.tanh(a).unwrap()
        }),
        ("softmax-rows", |c| {
            let a = c.rand(3, 4);
            c.tape.softmax(a, Axis::Rows).unwrap()
        }),
        ("softmax-cols", |c| {
            let a = c.rand(3, 4);
            c.tape.softmax(a, Axis::Cols).unwrap()
        }),
        ("exp", |c| {
            let a = c.rand(3, 4);
            c.tape.exp(a).unwrap()
        }),
        ("log", |c| {
            let d = uniform(&mut c.r, 12, 0.5, 2.0);
            let a = c.leaf(3, 4, d);
            c.tape.log(a).unwrap()
        }),
        ("inner-product", |c| {
            let (a, b) = (c.rand(3, 4), c.rand(3, 4));
            c.tape.inner_product(a, b).unwrap()
        }),
        ("row-dot", |c| {
            let (a, b) = (c.rand(3, 4), c.rand(3, 4));
            c.tape.row_dot(a, b).unwrap()
        }),
        ("l2-norm", |c| {
            let a = c.rand(3, 4);
            c.tape.l2_norm(a).unwrap()
        }),
        ("square", |c| {
            let a = c.rand(3, 4);
            c.tape.square(a).unwrap()
        }),
        ("reduce-sum", |c| {
            let a = c.rand(3, 4);
            let s = c.tape.square(a).unwrap();
            c.tape.reduce_sum(s).unwrap()
        }),
        ("dropout", |c| {
            let a = c.rand(3, 4);
            let mask: Vec<f64> = (0..12).map(|j| if j % 3 == 0 { 0.0 } else { 1.0 / 0.7 }).collect();
            c.tape.dropout(a, Arc::new(mask)).unwrap()
        }),
        ("transpose", |c| {
            let a = c.rand(3, 4);
            c.tape.transpose(a).unwrap()
        }),
        ("log-sum-exp", |c| {
            let a = c.rand(3, 4);
            let mask = vec![1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
            c.tape.log_sum_exp_rows(a, Some(Arc::new(mask))).unwrap()
        }),
    ];
    builders
        .into_iter()
        .enumerate()
        .map(|(n, (name, build))| {
            let mut c = Case::new(rng::derive_indexed(seed, "op-case", n as u64));
            let out = build(&mut c);
            let (tape, loss) = c.finish(out);
            (name, tape, loss)
        })
        .collect()
}
