//! Training orchestration: fold splitting, training-fold statistics, the
//! Adam loop with step decay and early stopping, and report assembly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::{kfold_split, load_dataset, AffinityRecord, FeatureCache};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::batch::{Batch, DrugFeat, PhyschemStats, ProtFeat};
use crate::model::{
    Ablation, FusionKind, Model, ModelConfig, DRUG_DEG_STATS, PHYSCHEM_MEAN, PHYSCHEM_STD,
    PROT_DEG_STATS,
};
use crate::protein::store;
use crate::tensor::adam::Adam;
use crate::tensor::checkpoint;
use crate::tensor::rng::{stream, StreamRng};
use crate::tensor::{Tape, Value};

/// Everything a run needs beyond the dataset path. Model architecture knobs
/// live in `model`; the flat config file addresses both layers by key.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_initial: f64,
    pub lr_after_drop: f64,
    /// Epochs 1..=lr_drop_epoch run at lr_initial, later ones at lr_after_drop.
    pub lr_drop_epoch: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: usize,
    /// Weight on the pooling auxiliary terms added to the MSE objective.
    pub lambda_aux: f64,
    /// Contact probability threshold for the residue graph.
    pub tau: f64,
    pub seed: u64,
    /// 1 disables cross-validation: train and validate on the full set.
    pub folds: usize,
    /// Interpret the affinity column as K_d in nM and map it to pK_d.
    pub transform: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_initial: 1e-3,
            lr_after_drop: 5e-4,
            lr_drop_epoch: 100,
            batch_size: 64,
            max_epochs: 400,
            patience: 100,
            lambda_aux: 1.0,
            tau: 0.5,
            seed: 1,
            folds: 5,
            transform: true,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch <= self.lr_drop_epoch {
            self.lr_initial
        } else {
            self.lr_after_drop
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_initial > 0.0) || !(self.lr_after_drop > 0.0) {
            return Err(Error::Config("learning rates must be positive".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".to_string()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".to_string()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".to_string()));
        }
        if self.folds == 0 {
            return Err(Error::Config("folds must be at least 1".to_string()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !self.lambda_aux.is_finite() || self.lambda_aux < 0.0 {
            return Err(Error::Config(format!(
                "lambda_aux must be finite and non-negative, got {}",
                self.lambda_aux
            )));
        }
        self.model.validate()
    }

    /// Parse a flat `key = value` file. `#` starts a comment, blank lines are
    /// skipped, unknown keys and bad values fail with their line number.
    pub fn from_file(path: &Path) -> Result<TrainConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{lineno}: expected key = value", path.display()))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{}:{lineno}: {e}", path.display())))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one key. Shared by the file parser and CLI overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| Error::Config(format!("{key}: invalid value {value:?}: {e}")))
        }
        match key {
            "lr_initial" => self.lr_initial = num(key, value)?,
            "lr_after_drop" => self.lr_after_drop = num(key, value)?,
            "lr_drop_epoch" => self.lr_drop_epoch = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "lambda_aux" => self.lambda_aux = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "folds" => self.folds = num(key, value)?,
            "transform" => self.transform = num(key, value)?,
            "d" => self.model.d = num(key, value)?,
            "heads_drug" => self.model.heads_drug = num(key, value)?,
            "heads_fusion" => self.model.heads_fusion = num(key, value)?,
            "k_bilinear" => self.model.k_bilinear = num(key, value)?,
            "layers" => self.model.layers = num(key, value)?,
            "dropout" => self.model.dropout = num(key, value)?,
            "ssm_state" => self.model.ssm_state = num(key, value)?,
            "cluster_sizes" => {
                let sizes: Result<Vec<usize>> =
                    value.split(',').map(|t| num(key, t.trim())).collect();
                self.model.cluster_sizes = sizes?;
            }
            "ablation" => self.model.ablation = parse_ablation(value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Serialize every key in the file format `from_file` reads back.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lr_initial = {}", self.lr_initial);
        let _ = writeln!(s, "lr_after_drop = {}", self.lr_after_drop);
        let _ = writeln!(s, "lr_drop_epoch = {}", self.lr_drop_epoch);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "lambda_aux = {}", self.lambda_aux);
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "folds = {}", self.folds);
        let _ = writeln!(s, "transform = {}", self.transform);
        let _ = writeln!(s, "d = {}", self.model.d);
        let _ = writeln!(s, "heads_drug = {}", self.model.heads_drug);
        let _ = writeln!(s, "heads_fusion = {}", self.model.heads_fusion);
        let _ = writeln!(s, "k_bilinear = {}", self.model.k_bilinear);
        let _ = writeln!(s, "layers = {}", self.model.layers);
        let _ = writeln!(s, "dropout = {}", self.model.dropout);
        let _ = writeln!(s, "ssm_state = {}", self.model.ssm_state);
        let sizes: Vec<String> = self.model.cluster_sizes.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(s, "cluster_sizes = {}", sizes.join(","));
        let _ = writeln!(s, "ablation = {}", ablation_spec(&self.model.ablation));
        s
    }
}

/// Parse an ablation spec: comma-separated tokens out of `full`,
/// `drug-global-only`, `drug-local-only`, `prot-global-only`,
/// `prot-local-only`, `atom-only`, `sub-only`, `mol-only`,
/// `scales=atom+sub+mol` and `fusion=bilinear|concat|add`.
pub fn parse_ablation(spec: &str) -> Result<Ablation> {
    let mut ab = Ablation::default();
    let set_scales = |ab: &mut Ablation, list: &str| -> Result<()> {
        ab.use_atom = false;
        ab.use_sub = false;
        ab.use_mol = false;
        for scale in list.split('+').map(str::trim) {
            match scale {
                "atom" => ab.use_atom = true,
                "sub" => ab.use_sub = true,
                "mol" => ab.use_mol = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown scale {other:?} (expected atom, sub, mol)"
                    )))
                }
            }
        }
        Ok(())
    };
    for tok in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match tok {
            "full" | "none" => {}
            "drug-global-only" => ab.drug_global_only = true,
            "drug-local-only" => ab.drug_local_only = true,
            "prot-global-only" => ab.prot_global_only = true,
            "prot-local-only" => ab.prot_local_only = true,
            "atom-only" => set_scales(&mut ab, "atom")?,
            "sub-only" => set_scales(&mut ab, "sub")?,
            "mol-only" => set_scales(&mut ab, "mol")?,
            _ => {
                if let Some(list) = tok.strip_prefix("scales=") {
                    set_scales(&mut ab, list)?;
                } else if let Some(kind) = tok.strip_prefix("fusion=") {
                    ab.fusion = match kind {
                        "bilinear" => FusionKind::Gated,
                        "concat" => FusionKind::Concat,
                        "add" => FusionKind::Add,
                        other => {
                            return Err(Error::Config(format!(
                                "unknown fusion strategy {other:?} (expected bilinear, concat, add)"
                            )))
                        }
                    };
                } else {
                    return Err(Error::Config(format!("unknown ablation token {tok:?}")));
                }
            }
        }
    }
    Ok(ab)
}

/// Inverse of `parse_ablation` up to token order.
pub fn ablation_spec(ab: &Ablation) -> String {
    let mut toks = Vec::new();
    if ab.drug_global_only {
        toks.push("drug-global-only".to_string());
    }
    if ab.drug_local_only {
        toks.push("drug-local-only".to_string());
    }
    if ab.prot_global_only {
        toks.push("prot-global-only".to_string());
    }
    if ab.prot_local_only {
        toks.push("prot-local-only".to_string());
    }
    if !(ab.use_atom && ab.use_sub && ab.use_mol) {
        let mut scales = Vec::new();
        if ab.use_atom {
            scales.push("atom");
        }
        if ab.use_sub {
            scales.push("sub");
        }
        if ab.use_mol {
            scales.push("mol");
        }
        toks.push(format!("scales={}", scales.join("+")));
    }
    match ab.fusion {
        FusionKind::Gated => {}
        FusionKind::Concat => toks.push("fusion=concat".to_string()),
        FusionKind::Add => toks.push("fusion=add".to_string()),
    }
    if toks.is_empty() {
        "full".to_string()
    } else {
        toks.join(",")
    }
}

/// Dataset records with their featurized drugs and proteins, deduplicated.
pub struct Featurized {
    pub records: Vec<AffinityRecord>,
    pub drugs: Vec<DrugFeat>,
    pub drug_of: Vec<usize>,
    pub prots: Vec<ProtFeat>,
    pub prot_of: Vec<usize>,
}

impl Featurized {
    pub fn pair(&self, i: usize) -> (&DrugFeat, &ProtFeat, f64) {
        (&self.drugs[self.drug_of[i]], &self.prots[self.prot_of[i]], self.records[i].affinity)
    }
}

/// Make sure every protein in `records` has both store files under `emb_dir`.
/// With `stub` set, missing pairs are generated deterministically from `seed`;
/// otherwise the error lists every affected protein id.
pub fn ensure_embeddings(
    records: &[AffinityRecord],
    emb_dir: &Path,
    stub: bool,
    seed: u64,
) -> Result<()> {
    let mut seen = HashMap::new();
    let mut missing = Vec::new();
    for r in records {
        if seen.insert(r.protein_id.as_str(), &r.sequence).is_some() {
            continue;
        }
        if !store::emb_path(emb_dir, &r.protein_id).exists()
            || !store::cmap_path(emb_dir, &r.protein_id).exists()
        {
            missing.push((r.protein_id.as_str(), r.sequence.as_str()));
        }
    }
    if missing.is_empty() {
        return Ok(());
    }
    if !stub {
        let ids: Vec<&str> = missing.iter().map(|m| m.0).collect();
        return Err(Error::Data(format!(
            "missing embeddings for {} proteins under {}: {}",
            ids.len(),
            emb_dir.display(),
            ids.join(", ")
        )));
    }
    fs::create_dir_all(emb_dir)?;
    for (id, seq) in missing {
        let emb = store::stub_embedding(seed, id, seq);
        store::write_embedding(emb_dir, id, seq.len(), &emb)?;
        let cmap = store::stub_contacts(seed, id, seq.len());
        store::write_contacts(emb_dir, id, seq.len(), &cmap)?;
    }
    Ok(())
}

/// Featurize every record through the cache, sharing work across duplicate
/// drugs and proteins. Rejects a protein id that maps to two sequences.
pub fn featurize(
    records: Vec<AffinityRecord>,
    cache: &FeatureCache,
    emb_dir: &Path,
    tau: f64,
) -> Result<Featurized> {
    let mut drug_ix: HashMap<String, usize> = HashMap::new();
    let mut prot_ix: HashMap<String, usize> = HashMap::new();
    let mut drugs = Vec::new();
    let mut prots = Vec::new();
    let mut drug_of = Vec::with_capacity(records.len());
    let mut prot_of = Vec::with_capacity(records.len());
    for r in &records {
        let di = match drug_ix.get(&r.smiles) {
            Some(&i) => i,
            None => {
                drugs.push(cache.drug(&r.smiles)?);
                drug_ix.insert(r.smiles.clone(), drugs.len() - 1);
                drugs.len() - 1
            }
        };
        let pi = match prot_ix.get(&r.protein_id) {
            Some(&i) => {
                let prev: &ProtFeat = &prots[i];
                if prev.len != r.sequence.len() {
                    return Err(Error::Data(format!(
                        "protein {} appears with two different sequences",
                        r.protein_id
                    )));
                }
                i
            }
            None => {
                prots.push(cache.protein(&r.protein_id, &r.sequence, emb_dir, tau)?);
                prot_ix.insert(r.protein_id.clone(), prots.len() - 1);
                prots.len() - 1
            }
        };
        drug_of.push(di);
        prot_of.push(pi);
    }
    Ok(Featurized { records, drugs, drug_of, prots, prot_of })
}

/// Degree statistics and physicochemical moments over the training fold only,
/// so the held-out fold never leaks into normalization.
fn fold_buffer_stats(feats: &Featurized, train_idx: &[usize]) -> (Vec<f64>, Vec<f64>, PhyschemStats) {
    let mut drug_seen = vec![false; feats.drugs.len()];
    let mut prot_seen = vec![false; feats.prots.len()];
    for &i in train_idx {
        drug_seen[feats.drug_of[i]] = true;
        prot_seen[feats.prot_of[i]] = true;
    }

    let deg_stats = |degrees: &mut dyn Iterator<Item = usize>| -> Vec<f64> {
        let (mut amp, mut lin, mut n) = (0.0, 0.0, 0usize);
        for d in degrees {
            amp += ((d + 1) as f64).ln();
            lin += d as f64;
            n += 1;
        }
        if n == 0 {
            vec![1.0, 1.0]
        } else {
            vec![amp / n as f64, lin / n as f64]
        }
    };

    let mut drug_degrees = Vec::new();
    for (di, d) in feats.drugs.iter().enumerate() {
        if !drug_seen[di] {
            continue;
        }
        let mut deg = vec![0usize; d.n_atoms];
        for &(a, b, _) in &d.bonds {
            deg[a] += 1;
            deg[b] += 1;
        }
        drug_degrees.extend(deg);
    }
    let drug_stats = deg_stats(&mut drug_degrees.iter().copied());

    let prot_stats = deg_stats(
        &mut feats
            .prots
            .iter()
            .enumerate()
            .filter(|(pi, _)| prot_seen[*pi])
            .flat_map(|(_, p)| p.degree.iter().copied()),
    );

    let rows: usize = feats
        .prots
        .iter()
        .enumerate()
        .filter(|(pi, _)| prot_seen[*pi])
        .map(|(_, p)| p.len)
        .sum();
    let phys = PhyschemStats::from_rows(
        feats
            .prots
            .iter()
            .enumerate()
            .filter(|(pi, _)| prot_seen[*pi])
            .flat_map(|(_, p)| p.physchem.iter().copied()),
        rows,
    );
    (drug_stats, prot_stats, phys)
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Mean training objective per epoch, in epoch order.
    pub train_curve: Vec<f64>,
    /// Validation objective per epoch on the held-out fold, dropout off.
    pub val_curve: Vec<f64>,
    /// Metrics of the best checkpoint on the held-out fold.
    pub report: EvalReport,
    /// Checkpoint file name relative to the run directory.
    pub checkpoint: String,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
}

fn metric_stats(vals: impl Iterator<Item = f64> + Clone) -> MetricStats {
    let n = vals.clone().count() as f64;
    let mean = vals.clone().sum::<f64>() / n;
    let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MetricStats { mean, std: var.sqrt() }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub mse: MetricStats,
    pub pcc: MetricStats,
    pub ci: MetricStats,
    pub rm2: MetricStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunArtifacts {
    pub folds: Vec<FoldOutcome>,
    pub summary: Summary,
}

impl RunArtifacts {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

pub const RUN_CONFIG_FILE: &str = "run.config";
pub const RUN_REPORT_FILE: &str = "report.json";

/// Train one model per fold and write `run.config`, `report.json` and
/// `fold<k>.ckpt` under `out_dir`. With `cfg.folds == 1` there is no held-out
/// data: the full set is both training and validation (overfit mode).
pub fn train(cfg: &TrainConfig, dataset: &Path, emb_dir: &Path, out_dir: &Path, stub: bool) -> Result<RunArtifacts> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let records = load_dataset(dataset, cfg.transform)?;
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no records", dataset.display())));
    }
    ensure_embeddings(&records, emb_dir, stub, cfg.seed)?;
    let cache = FeatureCache::new(out_dir.join("cache"));
    let feats = featurize(records, &cache, emb_dir, cfg.tau)?;

    let splits: Vec<(Vec<usize>, Vec<usize>)> = if cfg.folds == 1 {
        let all: Vec<usize> = (0..feats.records.len()).collect();
        vec![(all.clone(), all)]
    } else {
        let split = kfold_split(feats.records.len(), cfg.folds, cfg.seed)?;
        (0..cfg.folds).map(|f| (split.train_indices(f), split.folds[f].clone())).collect()
    };

    let mut folds = Vec::new();
    for (f, (train_idx, val_idx)) in splits.iter().enumerate() {
        folds.push(train_fold(cfg, &feats, train_idx, val_idx, f, out_dir)?);
    }

    let summary = Summary {
        mse: metric_stats(folds.iter().map(|f| f.report.mse)),
        pcc: metric_stats(folds.iter().map(|f| f.report.pcc)),
        ci: metric_stats(folds.iter().map(|f| f.report.ci)),
        rm2: metric_stats(folds.iter().map(|f| f.report.rm2)),
    };
    let artifacts = RunArtifacts { folds, summary };
    fs::write(out_dir.join(RUN_CONFIG_FILE), cfg.to_kv())?;
    fs::write(out_dir.join(RUN_REPORT_FILE), artifacts.to_json())?;
    Ok(artifacts)
}

fn train_fold(
    cfg: &TrainConfig,
    feats: &Featurized,
    train_idx: &[usize],
    val_idx: &[usize],
    fold: usize,
    out_dir: &Path,
) -> Result<FoldOutcome> {
    let (drug_stats, prot_stats, phys) = fold_buffer_stats(feats, train_idx);
    let fold_rng = StreamRng::new(cfg.seed).child(1 + fold as u64);
    let mut model = Model::new(cfg.model.clone(), fold_rng.child(stream("model-init")).seed())?;
    model.set_buffer(DRUG_DEG_STATS, drug_stats)?;
    model.set_buffer(PROT_DEG_STATS, prot_stats)?;
    model.set_buffer(PHYSCHEM_MEAN, phys.mean.clone())?;
    model.set_buffer(PHYSCHEM_STD, phys.std.clone())?;
    let stats = model.physchem_stats();

    let mut adam = Adam::new(cfg.lr_initial);
    let tape_seed = fold_rng.child(stream("tape")).seed();
    let ckpt_name = format!("fold{fold}.ckpt");
    let mut best = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Vec<(String, Value)> = Vec::new();
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut order = train_idx.to_vec();
    let mut epochs_run = 0usize;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        adam.lr = cfg.lr_at(epoch);
        fold_rng.shuffle(stream(&format!("shuffle-epoch-{epoch}")), &mut order);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let pairs: Vec<_> = chunk.iter().map(|&i| feats.pair(i)).collect();
            let batch = Batch::build(&pairs, &stats)?;
            // Distinct dropout masks per (epoch, batch); epochs cap at 400 so
            // the batch index cannot collide across epochs.
            let salt = (epoch as u64) << 32 | bi as u64;
            let mut tape = Tape::new(tape_seed, salt, true);
            let (loss, fwd) = model.loss(&mut tape, &batch, cfg.lambda_aux)?;
            loss_sum += tape.val(loss).item() * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            model.store.absorb_grads(&grads, &fwd.binds);
            adam.step(&mut model.store)?;
        }
        train_curve.push(loss_sum / train_idx.len() as f64);

        let val_loss = objective(&model, feats, val_idx, &stats, cfg)?;
        val_curve.push(val_loss);
        if val_loss < best {
            best = val_loss;
            best_epoch = epoch;
            best_params = model
                .store
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect();
        }
        log::info!(
            "fold {fold} epoch {epoch}: lr {} train {:.6} val {val_loss:.6} best {best:.6} @ {best_epoch}",
            adam.lr,
            train_curve.last().unwrap(),
        );
        if epoch - best_epoch >= cfg.patience {
            log::info!("fold {fold}: stopping early at epoch {epoch}");
            break;
        }
    }

    for (name, value) in &best_params {
        model.store.get_mut(name)?.value = value.clone();
    }
    checkpoint::save(&model.store, &out_dir.join(&ckpt_name))?;

    let preds = predict_indices(&model, feats, val_idx, cfg.batch_size)?;
    let y: Vec<f64> = val_idx.iter().map(|&i| feats.records[i].affinity).collect();
    let report = EvalReport::compute(&y, &preds)?;
    Ok(FoldOutcome {
        fold,
        n_train: train_idx.len(),
        n_val: val_idx.len(),
        best_epoch,
        epochs_run,
        train_curve,
        val_curve,
        report,
        checkpoint: ckpt_name,
    })
}

/// Mean training objective over `idx` with dropout off.
fn objective(
    model: &Model,
    feats: &Featurized,
    idx: &[usize],
    stats: &PhyschemStats,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in idx.chunks(cfg.batch_size) {
        let pairs: Vec<_> = chunk.iter().map(|&i| feats.pair(i)).collect();
        let batch = Batch::build(&pairs, stats)?;
        let mut tape = Tape::new(0, 0, false);
        let (loss, _) = model.loss(&mut tape, &batch, cfg.lambda_aux)?;
        sum += tape.val(loss).item() * chunk.len() as f64;
    }
    Ok(sum / idx.len() as f64)
}

/// Predictions for `idx` in order, dropout off. Physicochemical scaling comes
/// from the model's stored buffers, as at inference from a checkpoint.
pub fn predict_indices(
    model: &Model,
    feats: &Featurized,
    idx: &[usize],
    batch_size: usize,
) -> Result<Vec<f64>> {
    let stats = model.physchem_stats();
    let mut preds = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch_size) {
        let pairs: Vec<_> = chunk.iter().map(|&i| feats.pair(i)).collect();
        let batch = Batch::build(&pairs, &stats)?;
        let mut tape = Tape::new(0, 0, false);
        let fwd = model.forward(&mut tape, &batch)?;
        preds.extend_from_slice(tape.val(fwd.pred).data());
    }
    Ok(preds)
}

/// Score records under a trained model: metrics of predictions against the
/// affinity column.
pub fn score(model: &Model, feats: &Featurized, batch_size: usize) -> Result<EvalReport> {
    let idx: Vec<usize> = (0..feats.records.len()).collect();
    let preds = predict_indices(model, feats, &idx, batch_size)?;
    let y: Vec<f64> = feats.records.iter().map(|r| r.affinity).collect();
    EvalReport::compute(&y, &preds)
}

/// Rebuild the architecture from `cfg` and load `ckpt` into it. A checkpoint
/// trained under different dimensions fails with the mismatching parameter.
pub fn load_model(cfg: &TrainConfig, ckpt: &Path) -> Result<Model> {
    let mut model = Model::new(cfg.model.clone(), 0)?;
    checkpoint::load_into(&mut model.store, ckpt)?;
    Ok(model)
}

/// The config a checkpoint was trained with: `run.config` next to the file.
pub fn run_config_path(ckpt: &Path) -> PathBuf {
    ckpt.parent().unwrap_or(Path::new(".")).join(RUN_CONFIG_FILE)
}
