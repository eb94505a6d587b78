//! Command-line front end: corpus preparation, training, evaluation,
//! prediction, gradient verification, SMILES decomposition and stub
//! embedding generation.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use hifdta::chem::junction::tree_decompose;
use hifdta::chem::parse::parse_smiles;
use hifdta::data::{load_dataset, read_fasta, write_desk_corpus, FeatureCache};
use hifdta::metrics::{self, EvalReport};
use hifdta::model::check::gradient_suite;
use hifdta::protein::store;
use hifdta::tensor::gradcheck::PASS_TOL;
use hifdta::train::{
    self, ensure_embeddings, featurize, parse_ablation, run_config_path, RunArtifacts, TrainConfig,
};
use hifdta::{Error, Result};

#[derive(Parser)]
#[command(name = "hifdta", version, about = "Hierarchical multi-scale drug-target affinity prediction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the bundled desk-scale corpus: a TSV of kinase-style pairs with
    /// raw K_d in nM plus deterministic stub embeddings for every protein.
    Prepare {
        /// Directory for dataset.tsv and embeddings/.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of drug-protein pairs to sample (at most 750).
        #[arg(long, default_value_t = 500)]
        pairs: usize,
    },
    /// Train with k-fold cross-validation and write run artifacts.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory of <id>.emb / <id>.cmap files.
        #[arg(long)]
        embeddings: PathBuf,
        /// Run directory for checkpoints, run.config and report.json.
        #[arg(long)]
        out: PathBuf,
        /// Flat key = value config file; defaults match the published setup.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fold count; 1 trains on everything and validates on it too.
        #[arg(long)]
        folds: Option<usize>,
        /// Architecture variant, e.g. "sub-only" or "fusion=concat".
        #[arg(long)]
        ablation: Option<String>,
        /// Generate missing embeddings instead of failing.
        #[arg(long)]
        stub_embeddings: bool,
        /// Extra config overrides as key=value, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Score a dataset with a trained checkpoint.
    Evaluate {
        /// A fold<k>.ckpt file; run.config is read from its directory
        /// unless --config overrides it.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        stub_embeddings: bool,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict affinities for a pairs file (affinity column ignored).
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        stub_embeddings: bool,
        /// Also write predictions as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare every op and composed block against central differences.
    Gradcheck {
        /// Coordinates sampled per tensor (0 checks all of them).
        #[arg(long, default_value_t = 4)]
        coords: usize,
    },
    /// Read SMILES lines on stdin, emit one decomposition JSON per line.
    Decompose,
    /// Generate stub embedding and contact files for a FASTA file.
    StubEmbed {
        #[arg(long)]
        fasta: PathBuf,
        /// Directory receiving <id>.emb / <id>.cmap.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_default_env().format_timestamp(None).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Prepare { out, seed, pairs } => {
            let (tsv, emb) = write_desk_corpus(&out, seed, pairs)?;
            println!("dataset:    {}", tsv.display());
            println!("embeddings: {}", emb.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Train { dataset, embeddings, out, config, seed, folds, ablation, stub_embeddings, set } => {
            let mut cfg = match &config {
                Some(path) => TrainConfig::from_file(path)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(f) = folds {
                cfg.folds = f;
            }
            if let Some(spec) = &ablation {
                cfg.model.ablation = parse_ablation(spec)?;
            }
            for kv in &set {
                let (key, value) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("--set {kv:?}: expected key=value")))?;
                cfg.set(key.trim(), value.trim())?;
            }
            cfg.validate()?;
            let run = train::train(&cfg, &dataset, &embeddings, &out, stub_embeddings)?;
            print_run(&run);
            println!("\nartifacts under {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Evaluate { checkpoint, dataset, embeddings, config, stub_embeddings, out } => {
            let (model, cfg) = load_checkpoint(&checkpoint, config.as_deref())?;
            let feats = featurize_dataset(&cfg, &dataset, &embeddings, &checkpoint, stub_embeddings)?;
            let report = train::score(&model, &feats, cfg.batch_size)?;
            print!("{}", metrics::table(&[("all".to_string(), report.clone())]));
            println!("{}", report.to_json());
            if let Some(path) = out {
                std::fs::write(&path, report.to_json())?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Predict { checkpoint, dataset, embeddings, config, stub_embeddings, out } => {
            let (model, cfg) = load_checkpoint(&checkpoint, config.as_deref())?;
            let feats = featurize_dataset(&cfg, &dataset, &embeddings, &checkpoint, stub_embeddings)?;
            let idx: Vec<usize> = (0..feats.records.len()).collect();
            let preds = train::predict_indices(&model, &feats, &idx, cfg.batch_size)?;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for (r, p) in feats.records.iter().zip(&preds) {
                writeln!(w, "{}\t{}\t{p:.6}", r.drug_id, r.protein_id)?;
            }
            if let Some(path) = out {
                let rows: Vec<_> = feats
                    .records
                    .iter()
                    .zip(&preds)
                    .map(|(r, p)| {
                        json!({"drug_id": r.drug_id, "protein_id": r.protein_id, "prediction": p})
                    })
                    .collect();
                std::fs::write(&path, serde_json::to_string_pretty(&rows).expect("json"))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Gradcheck { coords } => {
            let reports = gradient_suite(coords)?;
            let mut failed = 0;
            println!("{:<44} {:>7} {:>12}  status", "case", "coords", "max rel err");
            for r in &reports {
                let ok = r.max_rel_err < PASS_TOL;
                if !ok {
                    failed += 1;
                }
                println!(
                    "{:<44} {:>7} {:>12.3e}  {}",
                    r.name,
                    r.coords_checked,
                    r.max_rel_err,
                    if ok { "pass" } else { "FAIL" }
                );
            }
            println!("\n{} cases, {} failed, tolerance {PASS_TOL:.0e}", reports.len(), failed);
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Decompose => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            let mut failed = 0;
            for line in stdin.lock().lines() {
                let smiles = line?;
                let smiles = smiles.trim();
                if smiles.is_empty() {
                    continue;
                }
                let obj = match parse_smiles(smiles) {
                    Ok(mol) => {
                        let tree = tree_decompose(&mol);
                        json!({
                            "atoms": mol.atoms.len(),
                            "bonds": mol.bonds.iter().map(|b| [b.a, b.b]).collect::<Vec<_>>(),
                            "clusters": tree.clusters,
                            "tree_edges": tree.tree_edges,
                            "cluster_types": tree.types,
                        })
                    }
                    Err(e) => {
                        failed += 1;
                        json!({"error": e.to_string()})
                    }
                };
                writeln!(w, "{obj}")?;
            }
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::StubEmbed { fasta, out, seed } => {
            let records = read_fasta(&fasta)?;
            std::fs::create_dir_all(&out)?;
            for (id, seq) in &records {
                let emb = store::stub_embedding(seed, id, seq);
                store::write_embedding(&out, id, seq.len(), &emb)?;
                let cmap = store::stub_contacts(seed, id, seq.len());
                store::write_contacts(&out, id, seq.len(), &cmap)?;
            }
            println!("wrote {} embedding/contact pairs to {}", records.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Model plus the config it was trained under. The config comes from
/// run.config next to the checkpoint unless `config` overrides it; a
/// checkpoint trained under other dimensions is rejected by name.
fn load_checkpoint(ckpt: &Path, config: Option<&Path>) -> Result<(hifdta::model::Model, TrainConfig)> {
    let cfg_path = match config {
        Some(p) => p.to_path_buf(),
        None => run_config_path(ckpt),
    };
    let cfg = TrainConfig::from_file(&cfg_path)?;
    let model = train::load_model(&cfg, ckpt)?;
    Ok((model, cfg))
}

/// Load and featurize a TSV exactly as training would, caching next to the
/// checkpoint's run directory.
fn featurize_dataset(
    cfg: &TrainConfig,
    dataset: &Path,
    embeddings: &Path,
    ckpt: &Path,
    stub: bool,
) -> Result<train::Featurized> {
    let records = load_dataset(dataset, cfg.transform)?;
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no records", dataset.display())));
    }
    ensure_embeddings(&records, embeddings, stub, cfg.seed)?;
    let cache_root = ckpt.parent().unwrap_or(Path::new(".")).join("cache");
    let cache = FeatureCache::new(cache_root);
    featurize(records, &cache, embeddings, cfg.tau)
}

fn print_run(run: &RunArtifacts) {
    let rows: Vec<(String, EvalReport)> =
        run.folds.iter().map(|f| (format!("fold{}", f.fold), f.report.clone())).collect();
    print!("{}", metrics::table(&rows));
    let s = &run.summary;
    println!(
        "mean +/- std over {} folds: mse {:.4} +/- {:.4}  pcc {:.4} +/- {:.4}  ci {:.4} +/- {:.4}  rm2 {:.4} +/- {:.4}",
        run.folds.len(),
        s.mse.mean, s.mse.std,
        s.pcc.mean, s.pcc.std,
        s.ci.mean, s.ci.std,
        s.rm2.mean, s.rm2.std,
    );
    for f in &run.folds {
        println!(
            "fold{}: best epoch {} of {} (val {:.5}), checkpoint {}",
            f.fold,
            f.best_epoch,
            f.epochs_run,
            f.val_curve[f.best_epoch - 1],
            f.checkpoint
        );
    }
}
