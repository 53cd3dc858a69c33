use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mbssl_core::encoder::load_checkpoint;
use mbssl_core::eval::{evaluate, write_buckets_csv, write_noise_csv};
use mbssl_core::graph::write_interactions;
use mbssl_core::ssl::{build_similarity_index, Side};
use mbssl_core::synthetic::generate_synthetic;
use mbssl_core::train::{
    load_data, metrics_header, metrics_row, noise_study, save_run, sparsity_study, split_for, train_with, CONFIG_FILE,
};
use mbssl_core::{EncodedState, GraphContext, ModelParameters, RunConfig};

#[derive(Parser)]
#[command(name = "mbssl", version, about = "Multi-behavior self-supervised recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// `key = value` config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one entry, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write a run directory (checkpoint, metrics, diagnostics).
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory; overrides `output`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-evaluate a run directory and print its metrics row.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the metrics CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the `cutoff,recall,ndcg` report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a synthetic dataset in the interaction TSV format.
    GenSynthetic {
        /// File with `synthetic.*` entries.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the similarity scores of the training split.
    BuildSwingIndex {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory receiving `user_swing.tsv` and `item_swing.tsv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recall decline under auxiliary-behavior noise, over `study_seeds`.
    NoiseStudy {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// NDCG@50 by user sparsity after one training run.
    SparsityStudy {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn apply_overrides(cfg: &mut RunConfig, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("override {o:?} is not KEY=VALUE"))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in {}", p.display()))?;
    }
    apply_overrides(&mut cfg, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { cfg, output } => {
            let mut cfg = load_config(cfg.config.as_deref(), &cfg.overrides)?;
            if let Some(o) = output {
                cfg.output = o;
            }
            let data = load_data(&cfg)?;
            let header = metrics_header(&cfg.cutoffs);
            let outcome = train_with(&cfg, &data.graph, |r| {
                eprintln!(
                    "epoch {:>3}  loss {:.6}  {}",
                    r.epoch,
                    r.loss,
                    metrics_row(r.epoch, &r.report)
                );
            })?;
            save_run(&cfg.output, &cfg, &data, &outcome)?;
            if let Some(last) = outcome.history.last() {
                println!("{header}\n{}", metrics_row(last.epoch, &last.report));
            }
            eprintln!("run written to {}", cfg.output.display());
        }
        Command::Evaluate {
            checkpoint,
            out,
            report,
        } => {
            let cfg = RunConfig::from_file(checkpoint.join(CONFIG_FILE))
                .with_context(|| format!("{} is not a run directory", checkpoint.display()))?;
            let data = load_data(&cfg)?;
            let split = split_for(&data.graph, cfg.seed)?;
            let g = &split.train;
            let store = load_checkpoint(&checkpoint)?;
            let model = ModelParameters::from_store(
                cfg.model_config(),
                g.num_users(),
                g.num_items(),
                g.num_behaviors(),
                store,
            )?;
            let state = EncodedState::compute(&model, &GraphContext::new(g))?;
            let eval = evaluate(&state, &split, &cfg.cutoffs)?;
            let csv = format!("{}\n{}\n", metrics_header(&cfg.cutoffs), metrics_row(cfg.epochs, &eval));
            print!("{csv}");
            if let Some(p) = out {
                create(&p)?.write_all(csv.as_bytes())?;
            }
            if let Some(p) = report {
                let mut w = create(&p)?;
                eval.write_csv(&mut w)?;
                w.flush()?;
            }
        }
        Command::GenSynthetic { spec, overrides, out } => {
            let cfg = load_config(spec.as_deref(), &overrides)?;
            if cfg.dataset.is_some() {
                bail!("gen-synthetic takes `synthetic.*` entries, not `dataset`");
            }
            let graph = generate_synthetic(&cfg.synthetic)?;
            let users: Vec<String> = (0..graph.num_users()).map(|u| format!("u{u}")).collect();
            let items: Vec<String> = (0..graph.num_items()).map(|i| format!("i{i}")).collect();
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_interactions(&out, &graph, &users, &items)?;
            let counts: Vec<String> = (0..graph.num_behaviors())
                .map(|k| graph.num_edges(k).to_string())
                .collect();
            eprintln!("wrote {} (edges per behavior: {})", out.display(), counts.join(", "));
        }
        Command::BuildSwingIndex { cfg, out } => {
            let cfg = load_config(cfg.config.as_deref(), &cfg.overrides)?;
            let data = load_data(&cfg)?;
            let split = split_for(&data.graph, cfg.seed)?;
            let index = build_similarity_index(&split.train, cfg.swing_alpha, cfg.fn_users, cfg.fn_items)?;
            fs::create_dir_all(&out)?;
            for (side, name) in [(Side::User, "user_swing.tsv"), (Side::Item, "item_swing.tsv")] {
                let mut w = create(&out.join(name))?;
                index.dump(side, &mut w)?;
                w.flush()?;
            }
        }
        Command::NoiseStudy { cfg, out } => {
            let cfg = load_config(cfg.config.as_deref(), &cfg.overrides)?;
            let data = load_data(&cfg)?;
            let rows = noise_study(&cfg, &data.graph)?;
            let path = out.unwrap_or_else(|| cfg.output.join("noise.csv"));
            let mut w = create(&path)?;
            write_noise_csv(&rows, &mut w)?;
            w.flush()?;
            write_noise_csv(&rows, std::io::stdout().lock())?;
        }
        Command::SparsityStudy { cfg, out } => {
            let cfg = load_config(cfg.config.as_deref(), &cfg.overrides)?;
            let data = load_data(&cfg)?;
            let buckets = sparsity_study(&cfg, &data.graph)?;
            let path = out.unwrap_or_else(|| cfg.output.join("sparsity.csv"));
            let mut w = create(&path)?;
            write_buckets_csv(&buckets, &mut w)?;
            w.flush()?;
            write_buckets_csv(&buckets, std::io::stdout().lock())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
