//! Hybrid gradient manipulation over per-task gradients, its ablation
//! strategies, and the adaptive-moment base update.

mod adam;
mod diagnostics;
mod manipulate;

pub use adam::Adam;
pub use diagnostics::{DiagnosticsLog, DiagnosticsRow};
pub use manipulate::{balance_magnitude, project_if_conflicting, AuxStep, Manipulated, StepDiagnostics, TaskGradient};

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::tensor::{NamedGradients, ParamStore};
use manipulate::{apply, Rule};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Magnitude-gated projection and balancing.
    Hmg,
    /// Projection of every conflicting auxiliary, no balancing.
    StrategyA,
    /// Balancing of every auxiliary, no projection.
    StrategyB,
    /// Projection then balancing on every auxiliary.
    StrategyC,
    /// Plain sum of the (already weighted) task gradients.
    FixedWeights,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    PerTensor,
    Global,
}

/// Parameters subject to manipulation; the rest are summed unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    All,
    /// Only the `embedding.*` tables.
    Embeddings,
}

macro_rules! keyword_enum {
    ($ty:ident, $what:literal, $($variant:ident => $kw:literal),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($kw => Ok(Self::$variant),)+
                    _ => Err(invalid(format!(
                        concat!("unknown ", $what, " {:?}; expected one of: {}"),
                        s,
                        [$($kw),+].join(", ")
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $(Self::$variant => $kw,)+
                })
            }
        }
    };
}

keyword_enum!(Strategy, "strategy",
    Hmg => "hmg",
    StrategyA => "strategy-a",
    StrategyB => "strategy-b",
    StrategyC => "strategy-c",
    FixedWeights => "fixed-weights",
);
keyword_enum!(Granularity, "granularity", PerTensor => "per-tensor", Global => "global");
keyword_enum!(Scope, "scope", All => "all", Embeddings => "embeddings");

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub strategy: Strategy,
    /// Relax factor `r`.
    pub relax: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub granularity: Granularity,
    pub scope: Scope,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Hmg,
            relax: 0.5,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            granularity: Granularity::PerTensor,
            scope: Scope::All,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.relax) {
            return Err(invalid(format!("relax factor must lie in [0, 1], got {}", self.relax)));
        }
        Adam::new(self.lr, self.beta1, self.beta2, self.epsilon).map(|_| ())
    }
}

/// Magnitude-gated manipulation: an auxiliary unit is touched only when
/// its norm exceeds the target's; it is then projected if it conflicts and
/// rescaled with the relax factor.
pub fn hmg_step(target: &NamedGradients, auxiliaries: &[TaskGradient], cfg: &OptimizerConfig) -> Manipulated {
    apply(Rule::Hybrid, target, auxiliaries, cfg.relax, cfg.granularity, cfg.scope)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    A,
    B,
    C,
}

/// The ungated comparison strategies.
pub fn strategy_step(
    variant: Variant,
    target: &NamedGradients,
    auxiliaries: &[TaskGradient],
    cfg: &OptimizerConfig,
) -> Manipulated {
    let rule = match variant {
        Variant::A => Rule::ProjectOnly,
        Variant::B => Rule::BalanceOnly,
        Variant::C => Rule::ProjectThenBalance,
    };
    apply(rule, target, auxiliaries, cfg.relax, cfg.granularity, cfg.scope)
}

/// Dispatches on the configured strategy.
pub fn combine(target: &NamedGradients, auxiliaries: &[TaskGradient], cfg: &OptimizerConfig) -> Manipulated {
    match cfg.strategy {
        Strategy::Hmg => hmg_step(target, auxiliaries, cfg),
        Strategy::StrategyA => strategy_step(Variant::A, target, auxiliaries, cfg),
        Strategy::StrategyB => strategy_step(Variant::B, target, auxiliaries, cfg),
        Strategy::StrategyC => strategy_step(Variant::C, target, auxiliaries, cfg),
        Strategy::FixedWeights => apply(
            Rule::Identity,
            target,
            auxiliaries,
            cfg.relax,
            cfg.granularity,
            cfg.scope,
        ),
    }
}

/// Strategy plus Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    adam: Adam,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon)?;
        Ok(Self { cfg, adam })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn step(
        &mut self,
        store: &mut ParamStore,
        target: &NamedGradients,
        auxiliaries: &[TaskGradient],
    ) -> Result<StepDiagnostics> {
        let m = combine(target, auxiliaries, &self.cfg);
        self.adam.update(store, &m.combined)?;
        Ok(m.diagnostics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn g(v: &[f64]) -> NamedGradients {
        let mut n = NamedGradients::new();
        n.insert("w", Tensor::row_vector(v.to_vec()));
        n
    }

    fn aux(v: &[f64]) -> TaskGradient {
        TaskGradient {
            name: "a".into(),
            grads: g(v),
        }
    }

    fn cfg(relax: f64) -> OptimizerConfig {
        OptimizerConfig {
            relax,
            ..Default::default()
        }
    }

    #[test]
    fn strategy_a_is_identity_without_conflicts() {
        let a = [aux(&[3.0, 1.0]), aux(&[0.1, 0.2])];
        let m = strategy_step(Variant::A, &g(&[1.0, 1.0]), &a, &cfg(0.5));
        assert_eq!(m.auxiliaries, vec![a[0].grads.clone(), a[1].grads.clone()]);
    }

    #[test]
    fn strategy_a_projects_regardless_of_magnitude() {
        let m = strategy_step(Variant::A, &g(&[0.0, 10.0]), &[aux(&[1.0, -1.0])], &cfg(0.5));
        assert_eq!(m.auxiliaries[0], g(&[1.0, 0.0]));
    }

    #[test]
    fn strategy_b_at_full_relax_equalises_norms() {
        let a = [aux(&[3.0, 4.0]), aux(&[0.1, 0.0]), aux(&[-2.0, 0.5])];
        let tar = g(&[1.0, 2.0]);
        let m = strategy_step(Variant::B, &tar, &a, &cfg(1.0));
        for out in &m.auxiliaries {
            assert!((out.norm() - tar.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn strategy_c_is_projection_then_balance() {
        let tar = g(&[0.0, 1.0]);
        let a = [aux(&[0.5, -0.25])];
        let m = strategy_step(Variant::C, &tar, &a, &cfg(0.5));
        let (p, _) = project_if_conflicting(&a[0].grads, &tar, Granularity::PerTensor);
        let expected = balance_magnitude(&p, &tar, 0.5, Granularity::PerTensor);
        assert_eq!(m.auxiliaries[0], expected);
        // HMG would leave this small auxiliary alone
        assert_eq!(hmg_step(&tar, &a, &cfg(0.5)).auxiliaries[0], a[0].grads);
    }

    #[test]
    fn fixed_weights_sum() {
        let c = OptimizerConfig {
            strategy: Strategy::FixedWeights,
            ..Default::default()
        };
        let m = combine(&g(&[0.0, 1.0]), &[aux(&[5.0, -7.0])], &c);
        assert_eq!(m.combined, g(&[5.0, -6.0]));
    }

    #[test]
    fn keywords_round_trip() {
        for s in ["hmg", "strategy-a", "strategy-b", "strategy-c", "fixed-weights"] {
            assert_eq!(s.parse::<Strategy>().unwrap().to_string(), s);
        }
        let err = "pcgrad".parse::<Strategy>().unwrap_err().to_string();
        assert!(err.contains("strategy-c"), "{err}");
        assert_eq!("global".parse::<Granularity>().unwrap(), Granularity::Global);
        assert_eq!("embeddings".parse::<Scope>().unwrap(), Scope::Embeddings);
    }

    #[test]
    fn relax_out_of_range_rejected() {
        assert!(Optimizer::new(cfg(1.5)).is_err());
        assert!(Optimizer::new(cfg(-0.1)).is_err());
    }
}
