//! Self-supervised objectives: swing similarity for false-negative
//! mining and the inter-/intra-behavior InfoNCE losses.

mod contrast;
mod swing;

pub use contrast::{info_nce, inter_behavior_loss, intra_behavior_loss, Batch, ContrastConfig};
pub use swing::{build_similarity_index, swing_similarity, Side, SimilarityIndex};
