//! The training loop, run directories and the two studies built on it.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::config::{DataSource, RunConfig};
use crate::encoder::{encode_with_views, save_checkpoint, EncodedState, GraphContext, ModelParameters};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, noise_robustness_run, quintile_boundaries, sparsity_buckets, Bucket, EvalReport, NoiseRow,
};
use crate::graph::{
    edge_dropout_pair, leave_one_out_split, load_interactions, write_mapping, Interactions, MultiBehaviorGraph,
    SplitDataset,
};
use crate::objective::{assemble_objective, non_sampling_loss, recommendation_loss};
use crate::optim::{DiagnosticsLog, Optimizer, TaskGradient};
use crate::rng;
use crate::ssl::{build_similarity_index, inter_behavior_loss, intra_behavior_loss, Batch};
use crate::synthetic::generate_synthetic;
use crate::tensor::Tape;

/// Loads the configured dataset. Synthetic users and items are named
/// `u<n>` and `i<n>`.
pub fn load_data(cfg: &RunConfig) -> Result<Interactions> {
    match cfg.data_source()? {
        DataSource::File { path, num_behaviors } => load_interactions(path, num_behaviors),
        DataSource::Synthetic(spec) => {
            let graph = generate_synthetic(&spec)?;
            Ok(Interactions {
                user_tokens: (0..graph.num_users()).map(|u| format!("u{u}")).collect(),
                item_tokens: (0..graph.num_items()).map(|i| format!("i{i}")).collect(),
                graph,
            })
        }
    }
}

/// The held-out split a run with this seed trains and evaluates on.
pub fn split_for(graph: &MultiBehaviorGraph, seed: u64) -> Result<SplitDataset> {
    leave_one_out_split(graph, rng::derive_seed(seed, "split"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sum of the combined objective over the epoch's steps.
    pub loss: f64,
    pub report: EvalReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelParameters,
    pub split: SplitDataset,
    pub history: Vec<EpochRecord>,
    pub diagnostics: DiagnosticsLog,
}

impl TrainOutcome {
    /// Metrics of the last epoch, or of the untrained model without epochs.
    pub fn final_report(&self, cutoffs: &[usize]) -> Result<EvalReport> {
        match self.history.last() {
            Some(r) => Ok(r.report.clone()),
            None => {
                let ctx = GraphContext::new(&self.split.train);
                evaluate(&EncodedState::compute(&self.model, &ctx)?, &self.split, cutoffs)
            }
        }
    }
}

/// Trains on `graph` with `cfg`, calling `observer` after every epoch.
pub fn train_with(
    cfg: &RunConfig,
    graph: &MultiBehaviorGraph,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let k_count = graph.num_behaviors();
    if cfg.behaviors()? != k_count {
        return Err(Error::Config(format!(
            "config expects {} behaviors, data has {k_count}",
            cfg.behaviors()?
        )));
    }
    let seed = cfg.seed;
    let ab = cfg.ablation;
    let use_inter = !ab.disable_ssl_inter && k_count > 1;
    let use_intra = !ab.disable_ssl_intra;

    let split = split_for(graph, seed)?;
    let train = &split.train;
    let index = if use_inter {
        Some(build_similarity_index(
            train,
            cfg.swing_alpha,
            cfg.fn_users,
            cfg.fn_items,
        )?)
    } else {
        None
    };
    let ctx = GraphContext::new(train);
    let mut model = ModelParameters::init(
        cfg.model_config(),
        train.num_users(),
        train.num_items(),
        k_count,
        rng::derive_seed(seed, "model"),
    )?;
    let mut optimizer = Optimizer::new(cfg.optimizer_config())?;
    let weights = cfg.loss_weights(k_count)?;
    let contrast = cfg.contrast_config(k_count)?;
    let mode = cfg.weight_mode(k_count);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut diagnostics = DiagnosticsLog::default();
    let mut users: Vec<usize> = (0..train.num_users()).collect();
    let mut global_step = 0u64;
    let mut last_terms = String::new();
    for epoch in 1..=cfg.epochs {
        users.shuffle(&mut rng::from_seed(rng::derive_indexed(seed, "shuffle", epoch as u64)));
        let mut epoch_loss = 0.0;
        for (step, chunk) in users.chunks(cfg.batch_size).enumerate() {
            let s = global_step;
            global_step += 1;
            let views = if use_intra {
                let seeds = (
                    rng::derive_indexed(seed, "view-a", s),
                    rng::derive_indexed(seed, "view-b", s),
                );
                Some(edge_dropout_pair(train, cfg.edge_dropout, seeds)?)
            } else {
                None
            };
            let step_result = (|| -> Result<_> {
                let mut tape = Tape::new();
                let enc = encode_with_views(
                    &mut tape,
                    &model,
                    train,
                    &ctx,
                    views.as_ref().map(|(a, b)| (a, b)),
                    Some(rng::derive_indexed(seed, "dropout", s)),
                )?;

                let batch = Batch::new(train, chunk.to_vec());
                let per_behavior = (0..k_count)
                    .map(|k| non_sampling_loss(&mut tape, &enc.main, train, &batch.users, k, &weights))
                    .collect::<Result<Vec<_>>>()?;
                let rec = recommendation_loss(&mut tape, &per_behavior, &weights.lambda)?;
                let inter = match &index {
                    Some(index) => {
                        inter_behavior_loss(&mut tape, &enc.main, index, &contrast, &batch, train.num_users())?
                    }
                    None => Vec::new(),
                };
                let intra = match enc.views {
                    Some(v) => Some(intra_behavior_loss(&mut tape, v, &contrast, &batch, train.num_users())?),
                    None => None,
                };
                let bundle = assemble_objective(&tape, rec, &inter, intra, &mode)?;

                let mut terms = vec![("rec".to_string(), tape.value(bundle.target).item())];
                terms.extend(
                    bundle
                        .auxiliaries
                        .iter()
                        .map(|a| (a.name.clone(), tape.value(a.node).item())),
                );
                if let Some((name, v)) = terms.iter().find(|(_, v)| !v.is_finite()) {
                    return Err(Error::Diverged(format!("{name} = {v}")));
                }
                let total = bundle.combined(&mut tape)?;
                let total = tape.value(total).item();

                let target = tape.gradients(bundle.target)?;
                let auxiliaries = bundle
                    .auxiliaries
                    .iter()
                    .map(|aux| {
                        let mut grads = tape.gradients(aux.node)?;
                        grads.scale(aux.weight);
                        Ok(TaskGradient {
                            name: aux.name.clone(),
                            grads,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((total, terms, target, auxiliaries))
            })();
            let (total, terms, target, auxiliaries) = step_result.map_err(|e| match e {
                Error::NonFinite { .. } | Error::Diverged(_) => Error::Diverged(format!(
                    "{e} at epoch {epoch}, step {step}; previous step losses: {}",
                    if last_terms.is_empty() {
                        "none".to_string()
                    } else {
                        last_terms.clone()
                    }
                )),
                other => other,
            })?;
            epoch_loss += total;
            last_terms = terms
                .iter()
                .map(|(n, v)| format!("{n}={v}"))
                .collect::<Vec<_>>()
                .join(" ");
            let diag = optimizer.step(model.store_mut(), &target, &auxiliaries)?;
            diagnostics.record(epoch, step, &diag);
        }
        if let Some((_, name, _)) = model.store().iter().find(|(_, _, t)| !t.is_finite()) {
            return Err(Error::Diverged(format!(
                "parameter {name} became non-finite in epoch {epoch}"
            )));
        }
        let state = EncodedState::compute(&model, &ctx)?;
        let record = EpochRecord {
            epoch,
            loss: epoch_loss,
            report: evaluate(&state, &split, &cfg.cutoffs)?,
        };
        observer(&record);
        history.push(record);
    }
    Ok(TrainOutcome {
        model,
        split,
        history,
        diagnostics,
    })
}

pub fn train(cfg: &RunConfig, graph: &MultiBehaviorGraph) -> Result<TrainOutcome> {
    train_with(cfg, graph, |_| {})
}

/// `epoch,recall@c,ndcg@c,…` for the configured cutoffs.
pub fn metrics_header(cutoffs: &[usize]) -> String {
    let mut h = String::from("epoch");
    for c in cutoffs {
        h.push_str(&format!(",recall@{c},ndcg@{c}"));
    }
    h
}

pub fn metrics_row(epoch: usize, report: &EvalReport) -> String {
    let mut row = epoch.to_string();
    for (r, n) in report.recall.iter().zip(&report.ndcg) {
        row.push_str(&format!(",{r},{n}"));
    }
    row
}

pub fn write_metrics_csv(history: &[EpochRecord], cutoffs: &[usize], mut out: impl Write) -> Result<()> {
    writeln!(out, "{}", metrics_header(cutoffs))?;
    for r in history {
        writeln!(out, "{}", metrics_row(r.epoch, &r.report))?;
    }
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Run directory contents.
pub const CONFIG_FILE: &str = "config.cfg";
pub const METRICS_FILE: &str = "metrics.csv";
pub const STEP_DIAGNOSTICS_FILE: &str = "diagnostics_steps.csv";
pub const EPOCH_DIAGNOSTICS_FILE: &str = "diagnostics_epochs.csv";
pub const USERS_FILE: &str = "users.tsv";
pub const ITEMS_FILE: &str = "items.tsv";

/// Writes the checkpoint, the resolved config, metrics, diagnostics and
/// token mappings into `dir`.
pub fn save_run(dir: impl AsRef<Path>, cfg: &RunConfig, data: &Interactions, outcome: &TrainOutcome) -> Result<()> {
    let dir = dir.as_ref();
    save_checkpoint(dir, outcome.model.store())?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
    write_file(&dir.join(METRICS_FILE), |w| {
        write_metrics_csv(&outcome.history, &cfg.cutoffs, w)
    })?;
    write_file(&dir.join(STEP_DIAGNOSTICS_FILE), |w| {
        outcome.diagnostics.write_steps_csv(w)
    })?;
    write_file(&dir.join(EPOCH_DIAGNOSTICS_FILE), |w| {
        outcome.diagnostics.write_epochs_csv(w)
    })?;
    write_mapping(dir.join(USERS_FILE), &data.user_tokens)?;
    write_mapping(dir.join(ITEMS_FILE), &data.item_tokens)?;
    Ok(())
}

/// Per-ratio decline of the first-cutoff recall when the auxiliary
/// behaviors of `graph` are perturbed, over `cfg.study_seeds`.
pub fn noise_study(cfg: &RunConfig, graph: &MultiBehaviorGraph) -> Result<Vec<NoiseRow>> {
    let cutoff = cfg.cutoffs[0];
    noise_robustness_run(graph, &cfg.noise_ratios, &cfg.study_seeds, |g, seed| {
        let run_cfg = RunConfig { seed, ..cfg.clone() };
        let outcome = train(&run_cfg, g)?;
        Ok(outcome.final_report(&cfg.cutoffs)?.at(cutoff).map_or(0.0, |(r, _)| r))
    })
}

/// Trains once and buckets the final ranks by user sparsity.
pub fn sparsity_study(cfg: &RunConfig, graph: &MultiBehaviorGraph) -> Result<Vec<Bucket>> {
    let outcome = train(cfg, graph)?;
    let report = outcome.final_report(&cfg.cutoffs)?;
    let boundaries = match &cfg.sparsity_boundaries {
        Some(b) => b.clone(),
        None => quintile_boundaries(&outcome.split),
    };
    sparsity_buckets(&outcome.split, &report, &boundaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SyntheticSpec;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.synthetic = SyntheticSpec {
            num_users: 40,
            num_items: 60,
            density: 0.1,
            ..Default::default()
        };
        c.model.dim = 8;
        c.model.attention_dim = 8;
        c.model.layers = 2;
        c.batch_size = 16;
        c.epochs = 2;
        c.optimizer.lr = 0.01;
        c
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let cfg = RunConfig { epochs: 0, ..tiny() };
        let data = load_data(&cfg).unwrap();
        let out = train(&cfg, &data.graph).unwrap();
        assert!(out.history.is_empty() && out.diagnostics.rows.is_empty());
        let init = ModelParameters::init(cfg.model_config(), 40, 60, 3, rng::derive_seed(cfg.seed, "model")).unwrap();
        assert_eq!(out.model.store(), init.store());
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = tiny();
        let data = load_data(&cfg).unwrap();
        let a = train(&cfg, &data.graph).unwrap();
        let b = train(&cfg, &data.graph).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.store(), b.model.store());
        assert_eq!(a.diagnostics, b.diagnostics);
        assert_eq!(a.history.len(), 2);
        // 40 users in batches of 16 → 3 steps, 2 inter + 1 intra each
        assert_eq!(a.diagnostics.rows.len(), 2 * 3 * 3);
    }

    #[test]
    fn disabling_both_ssl_losses_leaves_no_auxiliaries() {
        let mut cfg = tiny();
        cfg.ablation.disable_ssl_inter = true;
        cfg.ablation.disable_ssl_intra = true;
        let data = load_data(&cfg).unwrap();
        let out = train(&cfg, &data.graph).unwrap();
        assert!(out.diagnostics.rows.is_empty());
    }

    #[test]
    fn behavior_count_mismatch_rejected() {
        let cfg = tiny();
        let data = load_data(&RunConfig {
            synthetic: SyntheticSpec {
                num_behaviors: 2,
                cascade: vec![0.5],
                ..cfg.synthetic.clone()
            },
            ..cfg.clone()
        })
        .unwrap();
        assert!(train(&cfg, &data.graph).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = tiny();
        cfg.optimizer.lr = 1e100;
        cfg.epochs = 3;
        let data = load_data(&cfg).unwrap();
        match train(&cfg, &data.graph) {
            Err(Error::Diverged(msg)) => assert!(!msg.is_empty()),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.history.len())),
        }
    }

    #[test]
    fn metrics_csv_layout() {
        assert_eq!(metrics_header(&[10, 50]), "epoch,recall@10,ndcg@10,recall@50,ndcg@50");
        let report = EvalReport {
            cutoffs: vec![10],
            recall: vec![0.5],
            ndcg: vec![0.25],
            ranks: vec![],
        };
        assert_eq!(metrics_row(3, &report), "3,0.5,0.25");
    }
}
