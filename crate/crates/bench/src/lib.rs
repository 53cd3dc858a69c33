//! Benchmark fixtures.

use rand::Rng;

use mbssl_core::encoder::EncodedNodes;
use mbssl_core::rng;
use mbssl_core::synthetic::generate_synthetic;
use mbssl_core::{ModelConfig, ModelParameters, MultiBehaviorGraph, ParamId, ParamStore, SyntheticSpec, Tape, Tensor};

/// One behavior with `edges` uniformly drawn (deduplicated) pairs.
pub fn uniform_graph(users: usize, items: usize, edges: usize, seed: u64) -> MultiBehaviorGraph {
    let mut r = rng::from_seed(seed);
    let mut list: Vec<(usize, usize)> = (0..edges)
        .map(|_| (r.gen_range(0..users), r.gen_range(0..items)))
        .collect();
    list.sort_unstable();
    list.dedup();
    MultiBehaviorGraph::from_edges(users, items, vec![list]).expect("valid edges")
}

/// The default desk-scale synthetic dataset.
pub fn synthetic() -> MultiBehaviorGraph {
    generate_synthetic(&SyntheticSpec::default()).expect("default spec is valid")
}

/// Free node and behavior tables standing in for an encoder pass.
pub struct FreeEmbeddings {
    pub store: ParamStore,
    nodes: ParamId,
    behaviors: ParamId,
}

impl FreeEmbeddings {
    pub fn new(num_nodes: usize, num_behaviors: usize, dim: usize, seed: u64) -> Self {
        let mut r = rng::from_seed(seed);
        let mut store = ParamStore::new();
        let table = (0..num_nodes * dim).map(|_| r.gen_range(-0.1..0.1)).collect();
        let nodes = store
            .add("nodes", Tensor::matrix(num_nodes, dim, table).expect("shape"))
            .expect("fresh name");
        let behaviors = store
            .add(
                "behaviors",
                Tensor::matrix(num_behaviors, dim, vec![1.0; num_behaviors * dim]).expect("shape"),
            )
            .expect("fresh name");
        Self {
            store,
            nodes,
            behaviors,
        }
    }

    pub fn record(&self, tape: &mut Tape, num_behaviors: usize) -> EncodedNodes {
        let n = tape.param(&self.store, self.nodes);
        let b = tape.param(&self.store, self.behaviors);
        EncodedNodes {
            nodes: vec![n; num_behaviors],
            pooled: vec![n; num_behaviors],
            behaviors: b,
            attention: Vec::new(),
        }
    }
}

pub fn model(graph: &MultiBehaviorGraph, dim: usize, layers: usize) -> ModelParameters {
    let cfg = ModelConfig {
        dim,
        attention_dim: dim,
        layers,
        ..Default::default()
    };
    ModelParameters::init(cfg, graph.num_users(), graph.num_items(), graph.num_behaviors(), 0).expect("valid model")
}
