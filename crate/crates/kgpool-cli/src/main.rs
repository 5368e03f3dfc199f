//! Operator surface: train, eval, pool-inspect, stats, mcnemar, synth.
//!
//! Log verbosity is controlled by the `RUST_LOG` environment variable
//! (e.g. `RUST_LOG=debug`). Every command is deterministic given its
//! manifest inputs and never mutates its input files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use kgpool::config::Config;
use kgpool::data::{
    self, file_hash, load_attribute_store, load_dataset, load_relations, AttributeStore,
    RelationVocab,
};
use kgpool::encoder::{load_embeddings, Vocabulary};
use kgpool::eval::{
    mcnemar, micro_prf, pr_curve, precision_at_k_recall, write_pr_curve, ContingencyTable,
};
use kgpool::hig::SentenceInstance;
use kgpool::model::{pool_inspect, predict_dataset, ModelParams};
use kgpool::training::{train, write_metrics_csv, Checkpoint, InputHashes};

#[derive(Parser)]
#[command(
    name = "kgpool",
    version,
    about = "Sentential relation extraction with dynamic KG context pooling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, metrics CSV, and run manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint: micro P/R/F1, P@10/P@30, PR-curve CSV.
    Eval(EvalArgs),
    /// Per-instance pooling decisions: scores, thresholds, kept/dropped.
    PoolInspect(PoolInspectArgs),
    /// Entity-degree statistics before and after pooling.
    Stats(StatsArgs),
    /// McNemar significance test on a 2x2 contingency table.
    Mcnemar(McnemarArgs),
    /// Generate the synthetic desk-scale corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Key-value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    relations: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Context Coefficient override.
    #[arg(long)]
    alpha: Option<f64>,
    /// Train one model per alpha (comma-separated) and emit a comparison
    /// table.
    #[arg(long, value_name = "LIST")]
    alpha_sweep: Option<String>,
    /// Extra `key=value` config overrides; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    store: PathBuf,
    /// Relation vocabulary to cross-check against the checkpoint's hash.
    #[arg(long)]
    relations: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PoolInspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    store: PathBuf,
    /// Context Coefficient; defaults to the checkpoint's training value.
    #[arg(long)]
    alpha: Option<f64>,
    /// Write per-instance JSON records here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    store: PathBuf,
    /// Comma-separated Context Coefficients to report.
    #[arg(long, default_value = "1,2,3,4")]
    alpha: String,
}

#[derive(Args)]
struct McnemarArgs {
    /// Both models correct.
    a: u64,
    /// Only the first model correct.
    b: u64,
    /// Only the second model correct.
    c: u64,
    /// Both models wrong.
    d: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_train: usize,
    #[arg(long, default_value_t = 50)]
    n_test: usize,
    #[arg(long, default_value_t = 4)]
    n_relations: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Embedding dimension for the emitted word-vector file.
    #[arg(long, default_value_t = 50)]
    dim: usize,
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::PoolInspect(args) => cmd_pool_inspect(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Mcnemar(args) => cmd_mcnemar(args),
        Command::Synth(args) => cmd_synth(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Everything that determines a run, written before training starts.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: String,
    seed: u64,
    input_hashes: BTreeMap<String, String>,
    started_utc: String,
    outputs: Vec<String>,
}

fn resolve_config(file: Option<&Path>, alpha: Option<f64>, overrides: &[String]) -> Result<Config> {
    let mut cfg = match file {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    let mut errors = Vec::new();
    for pair in overrides {
        match pair.split_once('=') {
            Some((k, v)) => {
                if let Err(e) = cfg.set(k.trim(), v.trim()) {
                    errors.push(e);
                }
            }
            None => errors.push(format!("--set expects KEY=VALUE, got {pair:?}")),
        }
    }
    if let Some(a) = alpha {
        cfg.alpha = a;
    }
    errors.extend(cfg.validation_errors());
    if !errors.is_empty() {
        bail!(kgpool::Error::Config(errors));
    }
    Ok(cfg)
}

struct TrainInputs {
    train_set: Vec<SentenceInstance>,
    valid_set: Option<Vec<SentenceInstance>>,
    store: AttributeStore,
    relations: RelationVocab,
    vocab: Vocabulary,
    hashes: InputHashes,
}

fn load_train_inputs(args: &TrainArgs, cfg: &Config) -> Result<TrainInputs> {
    let (train_set, _) = load_dataset(&args.train)?;
    let valid_set = match &args.valid {
        Some(path) => Some(load_dataset(path)?.0),
        None => None,
    };
    let (store, _) = load_attribute_store(&args.store)?;
    let relations = load_relations(&args.relations)?;
    let vocab = load_embeddings(&args.embeddings, cfg.word_dim)?;
    let hashes = InputHashes {
        dataset: file_hash(&args.train)?,
        store: file_hash(&args.store)?,
        relations: file_hash(&args.relations)?,
        embeddings: file_hash(&args.embeddings)?,
    };
    Ok(TrainInputs {
        train_set,
        valid_set,
        store,
        relations,
        vocab,
        hashes,
    })
}

fn train_once(
    inputs: &TrainInputs,
    cfg: &Config,
    out_dir: &Path,
    suffix: &str,
) -> Result<(PathBuf, f64)> {
    let result = train(
        &inputs.train_set,
        inputs.valid_set.as_deref(),
        &inputs.store,
        &inputs.relations,
        &inputs.vocab,
        cfg,
    )?;
    let checkpoint_path = out_dir.join(format!("checkpoint{suffix}.json"));
    let metrics_path = out_dir.join(format!("metrics{suffix}.csv"));
    Checkpoint::build(
        &result.params,
        cfg,
        &inputs.relations,
        &inputs.vocab,
        inputs.hashes.clone(),
    )
    .save(&checkpoint_path)?;
    write_metrics_csv(&metrics_path, &result.metrics)?;
    let last_f1 = result
        .metrics
        .iter()
        .rev()
        .find(|m| {
            m.split
                == if inputs.valid_set.is_some() {
                    "valid"
                } else {
                    "train"
                }
        })
        .map(|m| m.f1)
        .unwrap_or(0.0);
    println!(
        "trained{}: best epoch {}, {} skipped, checkpoint {}",
        if suffix.is_empty() {
            String::new()
        } else {
            format!(" ({suffix})")
        },
        result.best_epoch,
        result.skipped,
        checkpoint_path.display()
    );
    Ok((checkpoint_path, last_f1))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = resolve_config(args.config.as_deref(), args.alpha, &args.overrides)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let inputs = load_train_inputs(&args, &cfg)?;

    let alphas: Vec<f64> = match &args.alpha_sweep {
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad alpha {s:?} in --alpha-sweep"))
            })
            .collect::<Result<_>>()?,
        None => vec![cfg.alpha],
    };

    let mut hashes = BTreeMap::new();
    hashes.insert("train".to_string(), inputs.hashes.dataset.clone());
    hashes.insert("store".to_string(), inputs.hashes.store.clone());
    hashes.insert("relations".to_string(), inputs.hashes.relations.clone());
    hashes.insert("embeddings".to_string(), inputs.hashes.embeddings.clone());
    if let Some(valid) = &args.valid {
        hashes.insert("valid".to_string(), file_hash(valid)?);
    }
    let manifest = RunManifest {
        command: std::env::args().collect::<Vec<_>>().join(" "),
        config: cfg.to_file_format(),
        seed: cfg.seed,
        input_hashes: hashes,
        started_utc: chrono::Utc::now().to_rfc3339(),
        outputs: alphas
            .iter()
            .map(|a| {
                if alphas.len() == 1 {
                    "checkpoint.json".to_string()
                } else {
                    format!("alpha_{a}/checkpoint.json")
                }
            })
            .collect(),
    };
    std::fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    if alphas.len() == 1 {
        let mut cfg = cfg;
        cfg.alpha = alphas[0];
        if cfg.runs <= 1 {
            train_once(&inputs, &cfg, &args.out, "")?;
        } else {
            // several runs: run 0 is the one downstream curves use
            for run in 0..cfg.runs {
                let mut run_cfg = cfg.clone();
                run_cfg.seed = cfg.seed + run as u64;
                let (path, _) = train_once(&inputs, &run_cfg, &args.out, &format!("_run{run}"))?;
                if run == 0 {
                    std::fs::copy(&path, args.out.join("checkpoint.json"))?;
                    std::fs::copy(
                        args.out.join("metrics_run0.csv"),
                        args.out.join("metrics.csv"),
                    )?;
                }
            }
        }
    } else {
        let mut table = vec!["alpha,f1".to_string()];
        for &alpha in &alphas {
            let mut sweep_cfg = cfg.clone();
            sweep_cfg.alpha = alpha;
            let sub = args.out.join(format!("alpha_{alpha}"));
            std::fs::create_dir_all(&sub)?;
            let (_, f1) = train_once(&inputs, &sweep_cfg, &sub, "")?;
            table.push(format!("{alpha},{f1}"));
        }
        let table = table.join("\n") + "\n";
        std::fs::write(args.out.join("alpha_sweep.csv"), &table)?;
        println!("{table}");
    }
    Ok(())
}

fn load_checkpoint_and_data(
    checkpoint: &Path,
    data: &Path,
    store: &Path,
) -> Result<(
    Checkpoint,
    ModelParams,
    Vocabulary,
    RelationVocab,
    Vec<SentenceInstance>,
    AttributeStore,
)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (params, vocab, relations) = ckpt.restore()?;
    let (instances, _) = load_dataset(data)?;
    let (store, _) = load_attribute_store(store)?;
    Ok((ckpt, params, vocab, relations, instances, store))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (ckpt, params, vocab, relations, instances, store) =
        load_checkpoint_and_data(&args.checkpoint, &args.data, &args.store)?;
    if let Some(relations_path) = &args.relations {
        let hash = file_hash(relations_path)?;
        if hash != ckpt.relations_hash {
            bail!(
                "relation vocabulary mismatch: {} hashes to {hash}, but the checkpoint was \
                 trained against {}; evaluating would mis-map relation ids",
                relations_path.display(),
                ckpt.relations_hash
            );
        }
    }
    let unknown: Vec<&str> = instances
        .iter()
        .map(|i| i.relation.as_str())
        .filter(|r| relations.index_of(r).is_none())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if !unknown.is_empty() {
        bail!(
            "test set contains relations unknown to the checkpoint: {}; \
             refusing to evaluate against an incompatible vocabulary",
            unknown.join(", ")
        );
    }

    let cfg = ckpt.config.clone();
    let (preds, loss) = predict_dataset(&params, &vocab, &relations, &cfg, &instances, &store)?;
    let prf = micro_prf(&preds);
    let p10 = precision_at_k_recall(&preds, 10.0)?;
    let p30 = precision_at_k_recall(&preds, 30.0)?;
    println!("instances: {}", preds.len());
    println!("micro precision: {:.4}", prf.precision);
    println!("micro recall:    {:.4}", prf.recall);
    println!("micro F1:        {:.4}", prf.f1);
    println!("mean loss:       {loss:.4}");
    println!(
        "P@10: {:.4}{}",
        p10.precision,
        if p10.recall_reached {
            ""
        } else {
            " (recall not reached)"
        }
    );
    println!(
        "P@30: {:.4}{}",
        p30.precision,
        if p30.recall_reached {
            ""
        } else {
            " (recall not reached)"
        }
    );

    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let curve = pr_curve(&preds);
        let curve_path = out.join("pr_curve.csv");
        write_pr_curve(&curve_path, &curve)?;
        let metrics_path = out.join("eval.json");
        #[derive(Serialize)]
        struct EvalReport<'a> {
            instances: usize,
            precision: f64,
            recall: f64,
            f1: f64,
            loss: f64,
            p_at_10: f64,
            p_at_30: f64,
            checkpoint: &'a str,
        }
        std::fs::write(
            &metrics_path,
            serde_json::to_string_pretty(&EvalReport {
                instances: preds.len(),
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                loss,
                p_at_10: p10.precision,
                p_at_30: p30.precision,
                checkpoint: &args.checkpoint.display().to_string(),
            })?,
        )?;
        println!(
            "wrote {} and {}",
            curve_path.display(),
            metrics_path.display()
        );
    }
    Ok(())
}

fn cmd_pool_inspect(args: PoolInspectArgs) -> Result<()> {
    let (_, params, vocab, _, instances, store) =
        load_checkpoint_and_data(&args.checkpoint, &args.data, &args.store)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut cfg = ckpt.config;
    if let Some(alpha) = args.alpha {
        if alpha < 0.0 {
            bail!("alpha must be non-negative");
        }
        cfg.alpha = alpha;
    }
    let inspections = pool_inspect(&params, &vocab, &cfg, &instances, &store)?;

    let mut writer: Box<dyn std::io::Write> = match &args.out {
        Some(path) => Box::new(std::io::BufWriter::new(std::fs::File::create(path)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut hig_sum = 0.0;
    let mut cg_sum = 0.0;
    for rec in &inspections {
        serde_json::to_writer(&mut writer, rec)?;
        writeln!(writer)?;
        hig_sum += rec.hig_entity_degree;
        cg_sum += rec.cg_entity_degree;
    }
    writer.flush()?;
    let n = inspections.len().max(1) as f64;
    println!(
        "alpha {}: DEG(HIG) {:.4}, DEG(CG) {:.4} over {} instances",
        cfg.alpha,
        hig_sum / n,
        cg_sum / n,
        inspections.len()
    );
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let (ckpt, params, vocab, _, instances, store) =
        load_checkpoint_and_data(&args.checkpoint, &args.data, &args.store)?;
    println!("alpha\tDEG(HIG)\tDEG(CG)");
    for alpha_str in args.alpha.split(',') {
        let alpha: f64 = alpha_str
            .trim()
            .parse()
            .with_context(|| format!("bad alpha {alpha_str:?}"))?;
        let mut cfg = ckpt.config.clone();
        cfg.alpha = alpha;
        let inspections = pool_inspect(&params, &vocab, &cfg, &instances, &store)?;
        let n = inspections.len().max(1) as f64;
        let hig: f64 = inspections.iter().map(|r| r.hig_entity_degree).sum::<f64>() / n;
        let cg: f64 = inspections.iter().map(|r| r.cg_entity_degree).sum::<f64>() / n;
        println!("{alpha}\t{hig:.4}\t{cg:.4}");
    }
    Ok(())
}

fn cmd_mcnemar(args: McnemarArgs) -> Result<()> {
    let table = ContingencyTable {
        a: args.a,
        b: args.b,
        c: args.c,
        d: args.d,
    };
    let test = mcnemar(&table)?;
    println!("statistic: {:.2}", test.statistic);
    println!("p-value: {:.3e} (log10 {:.4})", test.p_value, test.log10_p);
    println!(
        "{}",
        if test.significant {
            "significant at 0.05"
        } else {
            "not significant at 0.05"
        }
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let corpus = data::synth_corpus(args.n_train, args.n_test, args.n_relations, args.seed)?;
    data::save_dataset(&args.out.join("train.jsonl"), &corpus.train)?;
    data::save_dataset(&args.out.join("test.jsonl"), &corpus.test)?;
    data::save_attribute_store(&args.out.join("store.jsonl"), &corpus.store)?;
    data::save_relations(&args.out.join("relations.txt"), &corpus.relations)?;
    data::write_random_embeddings(
        &args.out.join("embeddings.txt"),
        &corpus.vocabulary,
        args.dim,
        args.seed,
    )?;
    println!(
        "wrote {} train / {} test instances, {} store entries, {} relations to {}",
        corpus.train.len(),
        corpus.test.len(),
        corpus.store.len(),
        corpus.relations.len(),
        args.out.display()
    );
    Ok(())
}
