pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod ssl;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use config::RunConfig;
pub use encoder::{EncodedState, GraphContext, ModelConfig, ModelParameters};
pub use error::{Error, Result};
pub use graph::MultiBehaviorGraph;
pub use synthetic::SyntheticSpec;
pub use tensor::{NodeId, ParamId, ParamStore, Tape, Tensor};
