//! Run configuration in `key = value` text form, one entry per line, `#`
//! starting a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::objective::{LossWeights, WeightMode};
use crate::optim::{Granularity, OptimizerConfig, Scope, Strategy};
use crate::ssl::ContrastConfig;
use crate::synthetic::SyntheticSpec;

/// Component switches for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub disable_cdm: bool,
    pub disable_ssl_inter: bool,
    pub disable_ssl_intra: bool,
    pub disable_hmg: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    File { path: PathBuf, num_behaviors: usize },
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub num_behaviors: Option<usize>,
    pub synthetic: SyntheticSpec,
    pub model: ModelConfig,
    pub temperature: f64,
    pub swing_alpha: f64,
    pub fn_users: usize,
    pub fn_items: usize,
    pub edge_dropout: f64,
    pub c_pos: f64,
    pub c_neg: f64,
    /// Per-behavior `λ`; uniform `1/K` when absent.
    pub lambda: Option<Vec<f64>>,
    /// Per-pair `μ` for fixed weights; all 1 when absent.
    pub mu: Option<Vec<f64>>,
    pub gamma: f64,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub cutoffs: Vec<usize>,
    pub output: PathBuf,
    /// Sparsity-bucket boundaries; quintiles when absent.
    pub sparsity_boundaries: Option<Vec<usize>>,
    pub noise_ratios: Vec<f64>,
    pub study_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            num_behaviors: None,
            synthetic: SyntheticSpec::default(),
            model: ModelConfig::default(),
            temperature: 0.2,
            swing_alpha: 0.5,
            fn_users: 10,
            fn_items: 5,
            edge_dropout: 0.5,
            c_pos: 1.0,
            c_neg: 0.1,
            lambda: None,
            mu: None,
            gamma: 1.0,
            optimizer: OptimizerConfig::default(),
            batch_size: 256,
            epochs: 30,
            seed: 0,
            ablation: Ablation::default(),
            cutoffs: vec![10, 50],
            output: PathBuf::from("out"),
            sparsity_boundaries: None,
            noise_ratios: vec![0.1, 0.2, 0.3],
            study_seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "dataset",
    "num_behaviors",
    "synthetic.users",
    "synthetic.items",
    "synthetic.behaviors",
    "synthetic.latent_dim",
    "synthetic.density",
    "synthetic.cascade",
    "synthetic.sharpness",
    "synthetic.popularity",
    "synthetic.noise",
    "synthetic.seed",
    "dim",
    "attention_dim",
    "layers",
    "leaky_slope",
    "embedding_dropout",
    "temperature",
    "swing_alpha",
    "fn_users",
    "fn_items",
    "edge_dropout",
    "c_pos",
    "c_neg",
    "lambda",
    "mu",
    "gamma",
    "strategy",
    "relax",
    "lr",
    "beta1",
    "beta2",
    "epsilon",
    "granularity",
    "hmg_scope",
    "batch_size",
    "epochs",
    "seed",
    "disable_cdm",
    "disable_ssl_inter",
    "disable_ssl_intra",
    "disable_hmg",
    "cutoffs",
    "output",
    "sparsity_boundaries",
    "noise_ratios",
    "study_seeds",
];

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(format!("{key}: cannot parse {value:?}")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| scalar(key, v.trim())).collect()
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(config_err(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one entry from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let s = &mut self.synthetic;
        let m = &mut self.model;
        let o = &mut self.optimizer;
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            "num_behaviors" => self.num_behaviors = Some(scalar(key, v)?),
            "synthetic.users" => s.num_users = scalar(key, v)?,
            "synthetic.items" => s.num_items = scalar(key, v)?,
            "synthetic.behaviors" => s.num_behaviors = scalar(key, v)?,
            "synthetic.latent_dim" => s.latent_dim = scalar(key, v)?,
            "synthetic.density" => s.density = scalar(key, v)?,
            "synthetic.cascade" => s.cascade = list(key, v)?,
            "synthetic.sharpness" => s.sharpness = scalar(key, v)?,
            "synthetic.popularity" => s.popularity = scalar(key, v)?,
            "synthetic.noise" => s.noise = scalar(key, v)?,
            "synthetic.seed" => s.seed = scalar(key, v)?,
            "dim" => m.dim = scalar(key, v)?,
            "attention_dim" => m.attention_dim = scalar(key, v)?,
            "layers" => m.layers = scalar(key, v)?,
            "leaky_slope" => m.leaky_slope = scalar(key, v)?,
            "embedding_dropout" => m.embedding_dropout = scalar(key, v)?,
            "temperature" => self.temperature = scalar(key, v)?,
            "swing_alpha" => self.swing_alpha = scalar(key, v)?,
            "fn_users" => self.fn_users = scalar(key, v)?,
            "fn_items" => self.fn_items = scalar(key, v)?,
            "edge_dropout" => self.edge_dropout = scalar(key, v)?,
            "c_pos" => self.c_pos = scalar(key, v)?,
            "c_neg" => self.c_neg = scalar(key, v)?,
            "lambda" => self.lambda = Some(list(key, v)?),
            "mu" => self.mu = Some(list(key, v)?),
            "gamma" => self.gamma = scalar(key, v)?,
            "strategy" => o.strategy = v.parse::<Strategy>()?,
            "relax" => o.relax = scalar(key, v)?,
            "lr" => o.lr = scalar(key, v)?,
            "beta1" => o.beta1 = scalar(key, v)?,
            "beta2" => o.beta2 = scalar(key, v)?,
            "epsilon" => o.epsilon = scalar(key, v)?,
            "granularity" => o.granularity = v.parse::<Granularity>()?,
            "hmg_scope" => o.scope = v.parse::<Scope>()?,
            "batch_size" => self.batch_size = scalar(key, v)?,
            "epochs" => self.epochs = scalar(key, v)?,
            "seed" => self.seed = scalar(key, v)?,
            "disable_cdm" => self.ablation.disable_cdm = boolean(key, v)?,
            "disable_ssl_inter" => self.ablation.disable_ssl_inter = boolean(key, v)?,
            "disable_ssl_intra" => self.ablation.disable_ssl_intra = boolean(key, v)?,
            "disable_hmg" => self.ablation.disable_hmg = boolean(key, v)?,
            "cutoffs" => self.cutoffs = list(key, v)?,
            "output" => self.output = PathBuf::from(v),
            "sparsity_boundaries" => self.sparsity_boundaries = Some(list(key, v)?),
            "noise_ratios" => self.noise_ratios = list(key, v)?,
            "study_seeds" => self.study_seeds = list(key, v)?,
            _ => {
                return Err(config_err(format!(
                    "unknown key {key:?}; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            self.set(key.trim(), value).map_err(|e| Error::Parse {
                line: n + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; `parse(to_text())` gives back the same config.
    pub fn to_text(&self) -> String {
        let s = &self.synthetic;
        let m = &self.model;
        let o = &self.optimizer;
        let a = &self.ablation;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(d) = &self.dataset {
            put("dataset", d.display().to_string());
        }
        if let Some(k) = self.num_behaviors {
            put("num_behaviors", k.to_string());
        }
        put("synthetic.users", s.num_users.to_string());
        put("synthetic.items", s.num_items.to_string());
        put("synthetic.behaviors", s.num_behaviors.to_string());
        put("synthetic.latent_dim", s.latent_dim.to_string());
        put("synthetic.density", s.density.to_string());
        put("synthetic.cascade", join(&s.cascade));
        put("synthetic.sharpness", s.sharpness.to_string());
        put("synthetic.popularity", s.popularity.to_string());
        put("synthetic.noise", s.noise.to_string());
        put("synthetic.seed", s.seed.to_string());
        put("dim", m.dim.to_string());
        put("attention_dim", m.attention_dim.to_string());
        put("layers", m.layers.to_string());
        put("leaky_slope", m.leaky_slope.to_string());
        put("embedding_dropout", m.embedding_dropout.to_string());
        put("temperature", self.temperature.to_string());
        put("swing_alpha", self.swing_alpha.to_string());
        put("fn_users", self.fn_users.to_string());
        put("fn_items", self.fn_items.to_string());
        put("edge_dropout", self.edge_dropout.to_string());
        put("c_pos", self.c_pos.to_string());
        put("c_neg", self.c_neg.to_string());
        if let Some(l) = &self.lambda {
            put("lambda", join(l));
        }
        if let Some(mu) = &self.mu {
            put("mu", join(mu));
        }
        put("gamma", self.gamma.to_string());
        put("strategy", o.strategy.to_string());
        put("relax", o.relax.to_string());
        put("lr", o.lr.to_string());
        put("beta1", o.beta1.to_string());
        put("beta2", o.beta2.to_string());
        put("epsilon", o.epsilon.to_string());
        put("granularity", o.granularity.to_string());
        put("hmg_scope", o.scope.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("seed", self.seed.to_string());
        put("disable_cdm", a.disable_cdm.to_string());
        put("disable_ssl_inter", a.disable_ssl_inter.to_string());
        put("disable_ssl_intra", a.disable_ssl_intra.to_string());
        put("disable_hmg", a.disable_hmg.to_string());
        put("cutoffs", join(&self.cutoffs));
        put("output", self.output.display().to_string());
        if let Some(b) = &self.sparsity_boundaries {
            put("sparsity_boundaries", join(b));
        }
        put("noise_ratios", join(&self.noise_ratios));
        put("study_seeds", join(&self.study_seeds));
        out
    }

    pub fn data_source(&self) -> Result<DataSource> {
        match (&self.dataset, self.num_behaviors) {
            (Some(path), Some(num_behaviors)) => Ok(DataSource::File {
                path: path.clone(),
                num_behaviors,
            }),
            (Some(_), None) => Err(config_err("missing required key `num_behaviors` for `dataset`")),
            (None, _) => Ok(DataSource::Synthetic(self.synthetic.clone())),
        }
    }

    pub fn behaviors(&self) -> Result<usize> {
        Ok(match self.data_source()? {
            DataSource::File { num_behaviors, .. } => num_behaviors,
            DataSource::Synthetic(s) => s.num_behaviors,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.behaviors()?;
        if k == 0 {
            return Err(config_err("need at least one behavior"));
        }
        if self.dataset.is_none() {
            self.synthetic.validate()?;
        }
        self.model_config().validate()?;
        self.contrast_config(k)?;
        self.loss_weights(k)?;
        self.optimizer.validate()?;
        if !(0.0..1.0).contains(&self.edge_dropout) {
            return Err(config_err(format!(
                "edge_dropout must lie in [0, 1), got {}",
                self.edge_dropout
            )));
        }
        if !(self.swing_alpha > 0.0) {
            return Err(config_err("swing_alpha must be positive"));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be positive"));
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(config_err("cutoffs must be a non-empty list of positive integers"));
        }
        if let Some(b) = &self.sparsity_boundaries {
            if b.windows(2).any(|w| w[0] >= w[1]) {
                return Err(config_err("sparsity_boundaries must be strictly increasing"));
            }
        }
        if self.noise_ratios.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(config_err("noise_ratios must lie in (0, 1]"));
        }
        if let Some(mu) = &self.mu {
            if mu.len() + 1 != k {
                return Err(config_err(format!("mu needs {} entries, got {}", k - 1, mu.len())));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            cdm: !self.ablation.disable_cdm,
            ..self.model.clone()
        }
    }

    pub fn contrast_config(&self, num_behaviors: usize) -> Result<ContrastConfig> {
        let mut c = ContrastConfig::new(self.temperature, num_behaviors)?;
        if let Some(mu) = &self.mu {
            c.inter_weights = mu.clone();
        }
        c.intra_weight = self.gamma;
        Ok(c)
    }

    pub fn loss_weights(&self, num_behaviors: usize) -> Result<LossWeights> {
        let mut w = LossWeights::uniform(num_behaviors, self.c_pos, self.c_neg)?;
        if let Some(l) = &self.lambda {
            w.lambda = l.clone();
        }
        w.validate(num_behaviors)?;
        Ok(w)
    }

    /// Turning HMG off means summing the task gradients with unit weights.
    pub fn optimizer_config(&self) -> OptimizerConfig {
        let mut o = self.optimizer.clone();
        if self.ablation.disable_hmg {
            o.strategy = Strategy::FixedWeights;
        }
        o
    }

    pub fn weight_mode(&self, num_behaviors: usize) -> WeightMode {
        if self.ablation.disable_hmg {
            return WeightMode::Fixed {
                inter: vec![1.0; num_behaviors - 1],
                intra: 1.0,
            };
        }
        match self.optimizer.strategy {
            Strategy::FixedWeights => WeightMode::Fixed {
                inter: self.mu.clone().unwrap_or_else(|| vec![1.0; num_behaviors - 1]),
                intra: self.gamma,
            },
            _ => WeightMode::Hmg,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_settings() {
        let c = RunConfig::default();
        assert_eq!((c.model.dim, c.model.layers, c.optimizer.lr), (64, 4, 0.001));
        assert_eq!(
            (c.model.embedding_dropout, c.edge_dropout, c.swing_alpha),
            (0.3, 0.5, 0.5)
        );
        assert_eq!((c.c_neg, c.temperature), (0.1, 0.2));
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text(
            "lambda = 0.2, 0.3, 0.5\nmu = 2,0.5\nstrategy = strategy-b\ndisable_cdm = true\nsparsity_boundaries = 2,5",
        )
        .unwrap();
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(
            RunConfig::parse(&RunConfig::default().to_text()).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# header\n\nepochs = 3 # short run\n  seed=7\n").unwrap();
        assert_eq!((c.epochs, c.seed), (3, 7));
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = RunConfig::parse("epochz = 3").unwrap_err().to_string();
        assert!(
            err.contains("epochz") && err.contains("batch_size") && err.contains("line 1"),
            "{err}"
        );
    }

    #[test]
    fn dataset_requires_behavior_count() {
        let err = RunConfig::parse("dataset = x.tsv").unwrap_err().to_string();
        assert!(err.contains("num_behaviors"), "{err}");
        let c = RunConfig::parse("dataset = x.tsv\nnum_behaviors = 2").unwrap();
        assert_eq!(c.behaviors().unwrap(), 2);
    }

    #[test]
    fn ranges_checked() {
        assert!(RunConfig::parse("relax = 1.5").is_err());
        assert!(RunConfig::parse("temperature = 0").is_err());
        assert!(RunConfig::parse("c_neg = 2").is_err());
        assert!(RunConfig::parse("edge_dropout = 1").is_err());
        assert!(RunConfig::parse("mu = 1").is_err());
        assert!(RunConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn disabling_hmg_means_unit_fixed_weights() {
        let c = RunConfig::parse("disable_hmg = true\nmu = 3,4").unwrap();
        assert_eq!(c.optimizer_config().strategy, Strategy::FixedWeights);
        assert_eq!(
            c.weight_mode(3),
            WeightMode::Fixed {
                inter: vec![1.0, 1.0],
                intra: 1.0
            }
        );
        assert_eq!(RunConfig::default().weight_mode(3), WeightMode::Hmg);
    }
}
