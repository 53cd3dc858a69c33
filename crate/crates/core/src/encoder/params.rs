use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Encoder hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Embedding size `d`.
    pub dim: usize,
    /// Attention projection size `d'`.
    pub attention_dim: usize,
    /// Number of propagation layers `L`.
    pub layers: usize,
    pub leaky_slope: f64,
    /// Embedding dropout applied to aggregated messages during training.
    pub embedding_dropout: f64,
    /// Cross-behavior attention; disabling it is the "w/o CDM" ablation.
    pub cdm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            attention_dim: 64,
            layers: 4,
            leaky_slope: 0.01,
            embedding_dropout: 0.3,
            cdm: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.attention_dim == 0 {
            return Err(invalid("embedding and attention sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.embedding_dropout) {
            return Err(invalid(format!(
                "embedding dropout must lie in [0, 1), got {}",
                self.embedding_dropout
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Ids {
    user: ParamId,
    item: ParamId,
    behavior: ParamId,
    layer: Vec<ParamId>,
    behavior_transform: Vec<ParamId>,
    attention: Vec<(ParamId, ParamId)>,
}

/// Every trainable tensor of the encoder, registered by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    config: ModelConfig,
    num_users: usize,
    num_items: usize,
    num_behaviors: usize,
    store: ParamStore,
    ids: Ids,
}

pub(crate) fn layer_name(l: usize) -> String {
    format!("propagation.{l}.weight")
}

pub(crate) fn transform_name(l: usize) -> String {
    format!("behavior_transform.{l}.weight")
}

pub(crate) fn attention_names(k: usize) -> (String, String) {
    (format!("attention.{k}.w1"), format!("attention.{k}.w2"))
}

/// Registered names and shapes for a model of the given size.
pub(crate) fn layout(
    cfg: &ModelConfig,
    num_users: usize,
    num_items: usize,
    num_behaviors: usize,
) -> Vec<(String, Vec<usize>)> {
    let d = cfg.dim;
    let mut out = vec![
        ("embedding.user".to_string(), vec![num_users, d]),
        ("embedding.item".to_string(), vec![num_items, d]),
        ("embedding.behavior".to_string(), vec![num_behaviors, d]),
    ];
    for l in 0..cfg.layers {
        out.push((layer_name(l), vec![d, d]));
        out.push((transform_name(l), vec![d, d]));
    }
    if cfg.cdm {
        for k in 0..num_behaviors {
            let (w1, w2) = attention_names(k);
            out.push((w1, vec![d, cfg.attention_dim]));
            out.push((w2, vec![cfg.attention_dim, 1]));
        }
    }
    out
}

impl ModelParameters {
    /// Scaled-uniform initialisation in `±√(6 / (fan_in + fan_out))`.
    pub fn init(
        config: ModelConfig,
        num_users: usize,
        num_items: usize,
        num_behaviors: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, "init");
        let mut store = ParamStore::new();
        for (name, shape) in layout(&config, num_users, num_items, num_behaviors) {
            let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            let len = shape[0] * shape[1];
            let data = (0..len).map(|_| r.gen_range(-bound..bound)).collect();
            store.add(name, Tensor::new(shape, data)?)?;
        }
        Self::from_store(config, num_users, num_items, num_behaviors, store)
    }

    /// Wraps an existing registry, checking that it holds exactly the
    /// expected names and shapes.
    pub fn from_store(
        config: ModelConfig,
        num_users: usize,
        num_items: usize,
        num_behaviors: usize,
        store: ParamStore,
    ) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config, num_users, num_items, num_behaviors);
        if expected.len() != store.len() {
            return Err(invalid(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                store.len()
            )));
        }
        for (name, shape) in &expected {
            let t = store.by_name(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "model parameters",
                    lhs: shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let ids = Ids {
            user: store.id("embedding.user")?,
            item: store.id("embedding.item")?,
            behavior: store.id("embedding.behavior")?,
            layer: (0..config.layers)
                .map(|l| store.id(&layer_name(l)))
                .collect::<Result<_>>()?,
            behavior_transform: (0..config.layers)
                .map(|l| store.id(&transform_name(l)))
                .collect::<Result<_>>()?,
            attention: if config.cdm {
                (0..num_behaviors)
                    .map(|k| {
                        let (a, b) = attention_names(k);
                        Ok((store.id(&a)?, store.id(&b)?))
                    })
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            },
        };
        Ok(Self {
            config,
            num_users,
            num_items,
            num_behaviors,
            store,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_behaviors(&self) -> usize {
        self.num_behaviors
    }

    pub fn user_embedding(&self) -> ParamId {
        self.ids.user
    }

    pub fn item_embedding(&self) -> ParamId {
        self.ids.item
    }

    pub fn behavior_embedding(&self) -> ParamId {
        self.ids.behavior
    }

    pub fn layer_weight(&self, l: usize) -> ParamId {
        self.ids.layer[l]
    }

    pub fn behavior_transform(&self, l: usize) -> ParamId {
        self.ids.behavior_transform[l]
    }

    /// `(W₁, W₂)` of behavior `k`, absent when CDM is disabled.
    pub fn attention(&self, k: usize) -> Option<(ParamId, ParamId)> {
        self.ids.attention.get(k).copied()
    }

    /// Overwrites a named tensor (shape must match).
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.store.id(name)?;
        self.store.set(id, value)
    }
}
