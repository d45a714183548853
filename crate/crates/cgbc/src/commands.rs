//! Subcommand implementations, callable as a library (the CLI in `main`
//! is a thin dispatcher; tests drive these directly).

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use cgbc_core::augment::{augment_contract, AugmentOptions, Placement, SnippetGrammar};
use cgbc_core::ball::{cluster, Sample};
use cgbc_core::corpus::{
    dedup, inject_label_noise, ContractRecord, ManifestRole, NoiseSpec, VulnKind,
};
use cgbc_core::learn::{
    classifier_step, encode_batch, evaluate, extract_features, finetune_step, pretrain_step,
    project2, top2_principal_components, KindMetrics, ModelParams, SceConfig,
};
use cgbc_core::lexer::tokenize;
use cgbc_core::rng::{fnv1a, seeded_rng, sub_seed};
use cgbc_core::structure::ContractModel;

use crate::config::{Arm, ExperimentConfig};
use crate::run::RunLogger;
use crate::store::{self, ManifestEntry, ResultRow};
use crate::{checkpoint, report, AppError, AppResult};

// ---------------------------------------------------------------------------
// tokens
// ---------------------------------------------------------------------------

/// Lexes one file and emits its tokens as JSON lines.
pub fn cmd_tokens(file: &Path, out: Option<&Path>) -> AppResult<()> {
    let source = std::fs::read_to_string(file)
        .map_err(|e| AppError::Data(format!("{}: {e}", file.display())))?;
    let stream = tokenize(&source);
    match out {
        Some(path) => {
            let f = std::fs::File::create(path)?;
            store::write_token_dump(std::io::BufWriter::new(f), &stream.tokens)?;
        }
        None => {
            let stdout = std::io::stdout();
            store::write_token_dump(stdout.lock(), &stream.tokens)?;
        }
    }
    if !stream.flags.clean() {
        eprintln!("note: unterminated string or comment tolerated in {}", file.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

/// Reads a `.sol` directory, normalizes and hashes every file, and writes
/// the role manifest (plus a validated labels copy when labels are given).
pub fn cmd_ingest(
    in_dir: &Path,
    labels: Option<&Path>,
    role: ManifestRole,
    out_dir: &Path,
) -> AppResult<()> {
    store::ensure_dir(out_dir)?;
    let mut logger = RunLogger::start(out_dir, "ingest", "-");
    let corpus = store::read_corpus(in_dir)?;
    if corpus.is_empty() {
        return Err(AppError::Data(format!("no .sol files under {}", in_dir.display())));
    }

    let entries: Vec<ManifestEntry> = corpus
        .iter()
        .map(|(id, source)| {
            let record = ContractRecord::new(id.clone(), source.clone());
            ManifestEntry { id: record.id, hash: record.normalized_hash, role }
        })
        .collect();
    let manifest_path = out_dir.join(format!("{role}.manifest.jsonl"));
    store::write_manifest(&manifest_path, &entries)?;
    logger.artifact(&manifest_path);

    if let Some(labels_path) = labels {
        let known: std::collections::BTreeSet<&str> =
            corpus.iter().map(|(id, _)| id.as_str()).collect();
        let mut rows = store::read_labels(labels_path)?;
        for (id, _, _) in &rows {
            if !known.contains(id.as_str()) {
                return Err(AppError::Data(format!(
                    "label references `{id}` which is not in {}",
                    in_dir.display()
                )));
            }
        }
        rows.sort();
        let out_labels = out_dir.join(format!("{role}.labels.csv"));
        store::write_labels(&out_labels, &rows)?;
        logger.artifact(&out_labels);
    }

    logger.metrics(serde_json::json!({ "records": entries.len() }));
    logger.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// dedup
// ---------------------------------------------------------------------------

/// Deduplicates one or more manifests by normalized hash and writes the
/// pruned manifests plus the group report.
pub fn cmd_dedup(manifests: &[PathBuf], out_dir: &Path) -> AppResult<()> {
    if manifests.is_empty() {
        return Err(AppError::Config("at least one --manifest is required".into()));
    }
    store::ensure_dir(out_dir)?;
    let mut logger = RunLogger::start(out_dir, "dedup", "-");

    let mut datasets = Vec::new();
    let mut hashes = BTreeMap::new();
    for path in manifests {
        let entries = store::read_manifest(path)?;
        let (m, h) = store::to_dataset_manifest(path, &entries)?;
        datasets.push(m);
        hashes.extend(h);
    }

    let (pruned, dedup_report) = dedup(&datasets, &hashes)?;

    for m in &pruned {
        let entries: Vec<ManifestEntry> = m
            .records
            .iter()
            .map(|id| ManifestEntry { id: id.clone(), hash: hashes[id].clone(), role: m.role })
            .collect();
        let path = out_dir.join(format!("{}.manifest.jsonl", m.role));
        store::write_manifest(&path, &entries)?;
        logger.artifact(&path);
    }
    let report_path = out_dir.join("dedup_report.csv");
    store::write_dedup_report(&report_path, &dedup_report)?;
    logger.artifact(&report_path);
    logger.metrics(serde_json::json!({ "duplicate_groups": dedup_report.groups.len() }));
    logger.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

pub struct AugmentStats {
    pub augmented: usize,
    pub skipped: Vec<String>,
}

/// Generates `variants` augmented copies of every parseable contract under
/// `in_dir`, writing sources plus a `plans.jsonl`. Files that do not parse
/// or have no function body are listed in `skipped.txt` and left out.
pub fn cmd_augment(
    in_dir: &Path,
    out_dir: &Path,
    variants: usize,
    rho: f64,
    seed: u64,
    contract_level: bool,
) -> AppResult<AugmentStats> {
    store::ensure_dir(out_dir)?;
    let mut logger = RunLogger::start(out_dir, "augment", "-");
    let corpus = store::read_corpus(in_dir)?;
    if corpus.is_empty() {
        return Err(AppError::Data(format!("no .sol files under {}", in_dir.display())));
    }

    let plans_path = out_dir.join("plans.jsonl");
    let mut plans = std::fs::File::create(&plans_path)?;
    let mut skipped = Vec::new();
    let mut augmented = 0usize;

    for (id, source) in &corpus {
        let model = match ContractModel::from_source(source) {
            Ok(m) if !m.functions.is_empty() => m,
            Ok(_) => {
                skipped.push(format!("{id}: no function with a body"));
                continue;
            }
            Err(e) => {
                skipped.push(format!("{id}: {e}"));
                continue;
            }
        };
        let opts = AugmentOptions {
            grammar: SnippetGrammar::default(),
            rho,
            count: variants,
            seed: sub_seed(seed, "augment", fnv1a(id.as_bytes(), 0)),
            placement: if contract_level {
                Placement::ContractLevel
            } else {
                Placement::FunctionLocal
            },
        };
        let outputs = augment_contract(&model, id, &opts)?;
        let stem = id.strip_suffix(".sol").unwrap_or(id);
        for (v, variant) in outputs.iter().enumerate() {
            let rel = format!("{stem}.aug{}.sol", v + 1);
            let path = store::prepared_path(out_dir, &rel)?;
            std::fs::write(path, &variant.source)?;
            serde_json::to_writer(&mut plans, &variant.plan)?;
            plans.write_all(b"\n")?;
        }
        augmented += 1;
    }

    if !skipped.is_empty() {
        std::fs::write(out_dir.join("skipped.txt"), skipped.join("\n") + "\n")?;
    }
    logger.artifact(&plans_path);
    logger.metrics(serde_json::json!({
        "contracts": augmented,
        "variants_per_contract": variants,
        "skipped": skipped.len(),
    }));
    logger.finish()?;
    Ok(AugmentStats { augmented, skipped })
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Debug, serde::Serialize)]
pub struct VerifySummary {
    pub pairs: usize,
    pub equivalent_fraction: f64,
    pub per_tau: BTreeMap<String, f64>,
}

/// Checks semantic-digest equivalence of original/augmented pairs and
/// scores k-gram diversity. Writes `equivalence.csv`, `similarity.csv`,
/// and `verify_summary.json` under `out_dir`.
pub fn cmd_verify(
    orig_dir: &Path,
    aug_dir: &Path,
    k: usize,
    taus: &[f64],
    out_dir: &Path,
) -> AppResult<VerifySummary> {
    store::ensure_dir(out_dir)?;
    let mut logger = RunLogger::start(out_dir, "verify", "-");
    let originals = store::read_corpus(orig_dir)?;
    let augmented = store::read_corpus(aug_dir)?;
    if originals.is_empty() {
        return Err(AppError::Data(format!("no .sol files under {}", orig_dir.display())));
    }

    // Group augmented files by their original stem.
    let mut variants: BTreeMap<String, Vec<(usize, &String)>> = BTreeMap::new();
    for (id, source) in &augmented {
        if let Some((stem, n)) = parse_variant_id(id) {
            variants.entry(format!("{stem}.sol")).or_default().push((n, source));
        }
    }
    for list in variants.values_mut() {
        list.sort_by_key(|(n, _)| *n);
    }

    let mut eq_writer = csv::Writer::from_path(out_dir.join("equivalence.csv"))?;
    eq_writer.write_record(["id", "variant", "equivalent"])?;
    let mut sim_writer = csv::Writer::from_path(out_dir.join("similarity.csv"))?;
    sim_writer.write_record(["id", "a", "b", "jaccard"])?;

    let mut pairs = 0usize;
    let mut equivalent = 0usize;
    let mut all_sims: Vec<f64> = Vec::new();

    for (id, source) in &originals {
        let Some(vars) = variants.get(id) else { continue };
        let orig_model = ContractModel::from_source(source)?;
        let mut streams = vec![tokenize(source).tokens];
        let mut names = vec!["orig".to_string()];
        for (n, var_source) in vars {
            let var_model = ContractModel::from_source(var_source)?;
            let eq = cgbc_core::semantics::contract_equivalent(&orig_model, &var_model)?;
            pairs += 1;
            equivalent += usize::from(eq);
            eq_writer.write_record([id.as_str(), &format!("aug{n}"), &eq.to_string()])?;
            streams.push(tokenize(var_source).tokens);
            names.push(format!("aug{n}"));
        }
        if streams.len() >= 2 {
            let rep = cgbc_core::semantics::diversity_report(&streams, k, taus)?;
            for (a, b, sim) in &rep.pair_similarities {
                sim_writer.write_record([
                    id.as_str(),
                    names[*a].as_str(),
                    names[*b].as_str(),
                    &store::format_float(*sim),
                ])?;
                all_sims.push(*sim);
            }
        }
    }
    eq_writer.flush()?;
    sim_writer.flush()?;

    if pairs == 0 {
        return Err(AppError::Data(format!(
            "no `<stem>.aug<N>.sol` files under {} match originals",
            aug_dir.display()
        )));
    }

    let mut per_tau = BTreeMap::new();
    let mut taus_sorted = taus.to_vec();
    taus_sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite taus"));
    for tau in taus_sorted {
        let diverse = all_sims.iter().filter(|s| **s < tau).count();
        per_tau.insert(
            format!("{tau:.2}"),
            if all_sims.is_empty() { 0.0 } else { diverse as f64 / all_sims.len() as f64 },
        );
    }

    let summary = VerifySummary {
        pairs,
        equivalent_fraction: equivalent as f64 / pairs as f64,
        per_tau,
    };
    std::fs::write(
        out_dir.join("verify_summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    logger.metrics(serde_json::to_value(&summary)?);
    logger.finish()?;
    Ok(summary)
}

fn parse_variant_id(id: &str) -> Option<(&str, usize)> {
    let stem = id.strip_suffix(".sol")?;
    let dot = stem.rfind(".aug")?;
    let n: usize = stem[dot + 4..].parse().ok()?;
    Some((&stem[..dot], n))
}

// ---------------------------------------------------------------------------
// feature loading shared by the training commands
// ---------------------------------------------------------------------------

/// Features for every manifest record, in manifest order. Hashes are
/// re-checked against the sources on disk.
fn manifest_features(
    in_dir: &Path,
    manifest: &[ManifestEntry],
    feature_dim: usize,
) -> AppResult<BTreeMap<String, Vec<f64>>> {
    let corpus = store::read_corpus(in_dir)?;
    let by_id: BTreeMap<&str, &str> = corpus
        .iter()
        .map(|(id, source)| (id.as_str(), source.as_str()))
        .collect();
    let mut out = BTreeMap::new();
    for entry in manifest {
        let source = by_id.get(entry.id.as_str()).ok_or_else(|| {
            AppError::Data(format!("manifest record `{}` not found under {}", entry.id, in_dir.display()))
        })?;
        let record = ContractRecord::new(entry.id.clone(), source.to_string());
        if record.normalized_hash != entry.hash {
            return Err(AppError::Data(format!(
                "hash mismatch for `{}`: manifest {}, disk {}",
                entry.id, entry.hash, record.normalized_hash
            )));
        }
        out.insert(entry.id.clone(), extract_features(&tokenize(source).tokens, feature_dim));
    }
    Ok(out)
}

/// (features, labels) for the manifest records that carry a label of
/// `kind`, in manifest order.
fn labeled_features(
    manifest: &[ManifestEntry],
    features: &BTreeMap<String, Vec<f64>>,
    labels: &BTreeMap<String, u8>,
) -> (Vec<String>, Vec<Vec<f64>>, Vec<u8>) {
    let mut ids = Vec::new();
    let mut feats = Vec::new();
    let mut ls = Vec::new();
    for e in manifest {
        if let Some(l) = labels.get(&e.id) {
            ids.push(e.id.clone());
            feats.push(features[&e.id].clone());
            ls.push(*l);
        }
    }
    (ids, feats, ls)
}

/// Deterministic batch order for one epoch.
fn epoch_order(n: usize, seed: u64, label: &str, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(sub_seed(seed, label, epoch as u64));
    idx.shuffle(&mut rng);
    idx
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

/// Contrastive pretraining from (original, augmented) source pairs on
/// disk. Writes `pretrained.bin/.json` and a loss log.
pub fn cmd_pretrain(
    orig_dir: &Path,
    aug_dir: &Path,
    out_dir: &Path,
    cfg: &ExperimentConfig,
    seed: u64,
) -> AppResult<()> {
    store::ensure_dir(out_dir)?;
    let mut logger = RunLogger::start(out_dir, "pretrain", &cfg.hash());
    let originals = store::read_corpus(orig_dir)?;
    let augmented = store::read_corpus(aug_dir)?;

    let mut variants: BTreeMap<String, Vec<(usize, &String)>> = BTreeMap::new();
    for (id, source) in &augmented {
        if let Some((stem, n)) = parse_variant_id(id) {
            variants.entry(format!("{stem}.sol")).or_default().push((n, source));
        }
    }

    let dim = cfg.model.feature_dim;
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for (id, source) in &originals {
        let Some(vars) = variants.get(id) else { continue };
        let base = extract_features(&tokenize(source).tokens, dim);
        for (_, var_source) in vars {
            pairs.push((base.clone(), extract_features(&tokenize(var_source).tokens, dim)));
        }
    }
    if pairs.is_empty() {
        return Err(AppError::Data("no (original, augmented) pairs found".into()));
    }

    let mut params = ModelParams::init(cfg.dims(), sub_seed(seed, "model-init", 0));
    let mut loss_log = csv::Writer::from_path(out_dir.join("pretrain_loss.csv"))?;
    loss_log.write_record(["epoch", "step", "loss"])?;
    let mut step = 0u64;
    for epoch in 0..cfg.train.pretrain_epochs {
        let order = epoch_order(pairs.len(), seed, "pretrain-order", epoch);
        for chunk in order.chunks(cfg.train.batch_size) {
            let batch: Vec<(Vec<f64>, Vec<f64>)> =
                chunk.iter().map(|&i| pairs[i].clone()).collect();
            let loss = pretrain_step(&mut params, &batch, cfg.train.pretrain_lr)?;
            loss_log.write_record([
                epoch.to_string(),
                step.to_string(),
                store::format_float(loss),
            ])?;
            step += 1;
        }
    }
    loss_log.flush()?;

    let ckpt = out_dir.join("pretrained.bin");
    checkpoint::save(&ckpt, &params, seed, step, &cfg.hash())?;
    logger.artifact(&ckpt);
    logger.metrics(serde_json::json!({ "pairs": pairs.len(), "steps": step }));
    logger.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_finetune(
    in_dir: &Path,
    manifest_path: &Path,
    labels_path: &Path,
    kind: VulnKind,
    init: Option<&Path>,
    noise: f64,
    out_dir: &Path,
    cfg: &ExperimentConfig,
    seed: u64,
) -> AppResult<()> {
    store::ensure_dir(out_dir)?;
    let mut logger = RunLogger::start(out_dir, "finetune", &cfg.hash());
    let manifest = store::read_manifest(manifest_path)?;
    let (dataset, _) = store::to_dataset_manifest(manifest_path, &manifest)?;
    if dataset.role == ManifestRole::Test {
        return Err(AppError::Data(
            "refusing to fine-tune on a test manifest".into(),
        ));
    }

    let features = manifest_features(in_dir, &manifest, cfg.model.feature_dim)?;
    let label_rows = store::read_labels(labels_path)?;
    let by_kind = store::labels_by_kind(&label_rows);
    let kind_labels = by_kind
        .get(&kind)
        .ok_or_else(|| AppError::Data(format!("no labels of kind {kind}")))?;
    let (ids, feats, mut labels) = labeled_features(&manifest, &features, kind_labels);
    if feats.len() < 2 {
        return Err(AppError::Data(format!(
            "need at least 2 labeled records for {kind}, found {}",
            feats.len()
        )));
    }

    if noise > 0.0 {
        let records: Vec<(String, u8)> = ids.iter().cloned().zip(labels.iter().copied()).collect();
        let spec = NoiseSpec {
            rate: noise,
            seed: sub_seed(seed, "noise", (noise * 1000.0).round() as u64),
            kind,
        };
        let (noisy, flipped) = inject_label_noise(&records, &spec)?;
        labels = noisy.into_iter().map(|(_, l)| l).collect();
        std::fs::write(out_dir.join("flipped_ids.txt"), flipped.join("\n") + "\n")?;
    }

    let mut params = match init {
        Some(path) => {
            let (p, meta) = checkpoint::load(path)?;
            if p.dims != cfg.dims() {
                return Err(AppError::Config(format!(
                    "checkpoint dims {:?} disagree with config dims {:?}",
                    (meta.feature_dim, meta.hidden_dim, meta.embed_dim),
                    cfg.dims()
                )));
            }
            p
        }
        None => ModelParams::init(cfg.dims(), sub_seed(seed, "model-init", 0)),
    };

    let use_gb = cfg.ablation.use_gb;
    let opts = cfg.finetune_options();
    let plain_sce = SceConfig { beta: 0.0, ..cfg.sce() };
    let mut log = csv::Writer::from_path(out_dir.join("finetune_loss.csv"))?;
    log.write_record(["epoch", "step", "intra", "inter", "sce", "total"])?;
    let mut step = 0u64;
    for epoch in 0..cfg.train.epochs {
        let order = epoch_order(feats.len(), seed, "finetune-order", epoch);
        for chunk in order.chunks(cfg.train.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let bf: Vec<Vec<f64>> = chunk.iter().map(|&i| feats[i].clone()).collect();
            let bl: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let (intra, inter, sce, total) = if use_gb {
                let (lb, _) = finetune_step(&mut params, &bf, &bl, &opts)?;
                (lb.intra, lb.inter, lb.sce, lb.total)
            } else {
                let loss = classifier_step(&mut params, &bf, &bl, &plain_sce, cfg.train.lr)?;
                (0.0, 0.0, loss, loss)
            };
            log.write_record([
                epoch.to_string(),
                step.to_string(),
                store::format_float(intra),
                store::format_float(inter),
                store::format_float(sce),
                store::format_float(total),
            ])?;
            step += 1;
        }
    }
    log.flush()?;

    let ckpt = out_dir.join("finetuned.bin");
    checkpoint::save(&ckpt, &params, seed, step, &cfg.hash())?;
    logger.artifact(&ckpt);
    logger.metrics(serde_json::json!({
        "kind": kind.as_str(),
        "noise": noise,
        "records": feats.len(),
        "steps": step,
        "use_gb": use_gb,
    }));
    logger.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_evaluate(
    in_dir: &Path,
    manifest_path: &Path,
    labels_path: &Path,
    kind: VulnKind,
    checkpoint_path: &Path,
    out_dir: &Path,
    noise_tag: f64,
    seed_tag: u64,
) -> AppResult<KindMetrics> {
    store::ensure_dir(out_dir)?;
    let mut logger = RunLogger::start(out_dir, "evaluate", "-");
    let manifest = store::read_manifest(manifest_path)?;
    let (params, _) = checkpoint::load(checkpoint_path)?;
    let features = manifest_features(in_dir, &manifest, params.dims.feature)?;
    let label_rows = store::read_labels(labels_path)?;
    let by_kind = store::labels_by_kind(&label_rows);
    let kind_labels = by_kind
        .get(&kind)
        .ok_or_else(|| AppError::Data(format!("no labels of kind {kind}")))?;
    let (_, feats, labels) = labeled_features(&manifest, &features, kind_labels);
    if feats.is_empty() {
        return Err(AppError::Data(format!("empty test set for {kind}")));
    }

    let metrics = evaluate(&params, &feats, &labels)?;
    let path = out_dir.join("metrics.csv");
    store::write_metrics(
        &path,
        &[(
            kind.as_str().to_string(),
            noise_tag,
            seed_tag,
            metrics.precision,
            metrics.recall,
            metrics.f1,
        )],
    )?;
    logger.artifact(&path);
    logger.metrics(serde_json::json!({
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
    }));
    logger.finish()?;
    Ok(metrics)
}

// ---------------------------------------------------------------------------
// noise sweep
// ---------------------------------------------------------------------------

struct CellSpec {
    kind: VulnKind,
    noise: f64,
    seed: u64,
    arm: Arm,
}

/// The full grid: per (kind, noise, seed, arm), inject fresh label noise
/// into a copy of the fine-tuning labels, train that arm, evaluate on the
/// untouched test set, and emit one row. Rows are sorted by a fixed key so
/// reruns and parallel runs are byte-identical.
#[allow(clippy::too_many_arguments)]
pub fn cmd_noise_sweep(
    in_dir: &Path,
    labels_path: &Path,
    finetune_manifest: &Path,
    test_manifest: &Path,
    out_dir: &Path,
    cfg: &ExperimentConfig,
    jobs: usize,
) -> AppResult<Vec<ResultRow>> {
    store::ensure_dir(out_dir)?;
    let mut logger = RunLogger::start(out_dir, "noise-sweep", &cfg.hash());
    let labels_bytes_before = std::fs::read(labels_path)?;

    let ft_entries = store::read_manifest(finetune_manifest)?;
    let test_entries = store::read_manifest(test_manifest)?;
    let (ft_ds, ft_hashes) = store::to_dataset_manifest(finetune_manifest, &ft_entries)?;
    let (test_ds, test_hashes) = store::to_dataset_manifest(test_manifest, &test_entries)?;
    if ft_ds.role == test_ds.role {
        return Err(AppError::Data("manifests must have distinct roles".into()));
    }
    let ft_hashset: std::collections::BTreeSet<&String> = ft_hashes.values().collect();
    if test_hashes.values().any(|h| ft_hashset.contains(h)) {
        return Err(AppError::Data(
            "fine-tuning and test manifests overlap; run dedup first".into(),
        ));
    }

    let ft_features = manifest_features(in_dir, &ft_entries, cfg.model.feature_dim)?;
    let test_features = manifest_features(in_dir, &test_entries, cfg.model.feature_dim)?;
    let label_rows = store::read_labels(labels_path)?;
    let by_kind = store::labels_by_kind(&label_rows);

    // Pretraining pairs come from augmenting the fine-tuning contracts in
    // memory with the configured grammar.
    let needs_pretrain = cfg.experiment.arms.iter().any(Arm::uses_pretrain);
    let corpus = store::read_corpus(in_dir)?;
    let corpus_by_id: BTreeMap<&str, &str> = corpus
        .iter()
        .map(|(id, source)| (id.as_str(), source.as_str()))
        .collect();

    let mut pretrained: BTreeMap<u64, ModelParams> = BTreeMap::new();
    if needs_pretrain {
        for &seed in &cfg.experiment.seeds {
            pretrained.insert(seed, pretrain_in_memory(cfg, seed, &ft_entries, &corpus_by_id)?);
        }
    }

    // Build the cell grid.
    let mut cells = Vec::new();
    for kind in cfg.kinds() {
        for &noise in &cfg.experiment.noise_levels {
            for &seed in &cfg.experiment.seeds {
                for &arm in &cfg.experiment.arms {
                    cells.push(CellSpec { kind, noise, seed, arm });
                }
            }
        }
    }

    let run_cell = |cell: &CellSpec| -> AppResult<ResultRow> {
        let kind_labels = by_kind.get(&cell.kind).ok_or_else(|| {
            AppError::Data(format!("no labels of kind {}", cell.kind))
        })?;
        let (ids, feats, mut labels) = labeled_features(&ft_entries, &ft_features, kind_labels);
        let (_, test_feats, test_labels) =
            labeled_features(&test_entries, &test_features, kind_labels);
        if feats.len() < 2 || test_feats.is_empty() {
            return Err(AppError::Data(format!(
                "kind {} lacks labeled records (train {}, test {})",
                cell.kind,
                feats.len(),
                test_feats.len()
            )));
        }

        if cell.noise > 0.0 {
            let records: Vec<(String, u8)> =
                ids.iter().cloned().zip(labels.iter().copied()).collect();
            let spec = NoiseSpec {
                rate: cell.noise,
                seed: sub_seed(
                    cell.seed,
                    &format!("noise-{}", cell.kind),
                    (cell.noise * 1000.0).round() as u64,
                ),
                kind: cell.kind,
            };
            let (noisy, _) = inject_label_noise(&records, &spec)?;
            labels = noisy.into_iter().map(|(_, l)| l).collect();
        }

        let mut params = if cell.arm.uses_pretrain() {
            pretrained[&cell.seed].clone()
        } else {
            ModelParams::init(cfg.dims(), sub_seed(cell.seed, "model-init", 0))
        };

        let opts = cfg.finetune_options();
        let plain_sce = SceConfig { beta: 0.0, ..cfg.sce() };
        for epoch in 0..cfg.train.epochs {
            let order = epoch_order(feats.len(), cell.seed, "finetune-order", epoch);
            for chunk in order.chunks(cfg.train.batch_size) {
                if chunk.len() < 2 {
                    continue;
                }
                let bf: Vec<Vec<f64>> = chunk.iter().map(|&i| feats[i].clone()).collect();
                let bl: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
                if cell.arm.uses_gb() {
                    finetune_step(&mut params, &bf, &bl, &opts)?;
                } else {
                    classifier_step(&mut params, &bf, &bl, &plain_sce, cfg.train.lr)?;
                }
            }
        }

        let m = evaluate(&params, &test_feats, &test_labels)?;
        Ok(ResultRow {
            kind: cell.kind.as_str().to_string(),
            noise: cell.noise,
            seed: cell.seed,
            arm: cell.arm.as_str().to_string(),
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        })
    };

    let jobs = jobs.max(1);
    let mut rows: Vec<ResultRow> = if jobs == 1 {
        cells.iter().map(&run_cell).collect::<AppResult<_>>()?
    } else {
        let chunk_size = cells.len().div_ceil(jobs);
        let results: Vec<AppResult<Vec<ResultRow>>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in cells.chunks(chunk_size.max(1)) {
                let run_cell = &run_cell;
                handles.push(scope.spawn(move || chunk.iter().map(run_cell).collect()));
            }
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut all = Vec::new();
        for r in results {
            all.extend(r?);
        }
        all
    };

    // Deterministic merge order regardless of worker scheduling.
    rows.sort_by(|a, b| {
        (a.kind.as_str(), (a.noise * 1000.0) as u64, a.seed, a.arm.as_str()).cmp(&(
            b.kind.as_str(),
            (b.noise * 1000.0) as u64,
            b.seed,
            b.arm.as_str(),
        ))
    });

    let results_path = out_dir.join("results.csv");
    store::write_results(&results_path, &rows)?;
    logger.artifact(&results_path);

    let labels_bytes_after = std::fs::read(labels_path)?;
    if labels_bytes_before != labels_bytes_after {
        return Err(AppError::Internal(
            "labels file changed during the sweep".into(),
        ));
    }

    logger.metrics(serde_json::json!({ "rows": rows.len() }));
    logger.finish()?;
    Ok(rows)
}

/// Pretrains one encoder per sweep seed from in-memory augmentations of
/// the fine-tuning contracts.
fn pretrain_in_memory(
    cfg: &ExperimentConfig,
    seed: u64,
    entries: &[ManifestEntry],
    corpus_by_id: &BTreeMap<&str, &str>,
) -> AppResult<ModelParams> {
    let dim = cfg.model.feature_dim;
    let mut pairs = Vec::new();
    for e in entries {
        let Some(source) = corpus_by_id.get(e.id.as_str()) else { continue };
        let Ok(model) = ContractModel::from_source(source) else { continue };
        if model.functions.is_empty() {
            continue;
        }
        let opts = AugmentOptions {
            grammar: SnippetGrammar::default(),
            rho: cfg.augment.rho,
            count: cfg.augment.variants,
            seed: sub_seed(seed, "pretrain-augment", fnv1a(e.id.as_bytes(), 0)),
            placement: if cfg.augment.contract_level {
                Placement::ContractLevel
            } else {
                Placement::FunctionLocal
            },
        };
        let base = extract_features(&tokenize(source).tokens, dim);
        for variant in augment_contract(&model, &e.id, &opts)? {
            pairs.push((base.clone(), extract_features(&tokenize(&variant.source).tokens, dim)));
        }
    }
    if pairs.is_empty() {
        return Err(AppError::Data("no pretraining pairs could be built".into()));
    }

    let mut params = ModelParams::init(cfg.dims(), sub_seed(seed, "model-init", 0));
    for epoch in 0..cfg.train.pretrain_epochs {
        let order = epoch_order(pairs.len(), seed, "pretrain-order", epoch);
        for chunk in order.chunks(cfg.train.batch_size) {
            let batch: Vec<(Vec<f64>, Vec<f64>)> =
                chunk.iter().map(|&i| pairs[i].clone()).collect();
            pretrain_step(&mut params, &batch, cfg.train.pretrain_lr)?;
        }
    }
    Ok(params)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn cmd_report(results: &Path, out_dir: &Path) -> AppResult<()> {
    store::ensure_dir(out_dir)?;
    let mut logger = RunLogger::start(out_dir, "report", "-");
    let rows = store::read_results(results)?;
    let aggs = report::aggregate(&rows)?;
    let series = out_dir.join("series.csv");
    report::write_series_csv(&series, &aggs)?;
    let summary = out_dir.join("summary.md");
    std::fs::write(&summary, report::markdown_summary(&aggs))?;
    logger.artifact(&series);
    logger.artifact(&summary);
    logger.metrics(serde_json::json!({ "groups": aggs.len() }));
    logger.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// dump-balls
// ---------------------------------------------------------------------------

/// Clusters the embeddings of one labeled batch and dumps the balls as
/// JSON lines plus a 2-D principal-component projection CSV.
#[allow(clippy::too_many_arguments)]
pub fn cmd_dump_balls(
    in_dir: &Path,
    manifest_path: &Path,
    labels_path: &Path,
    kind: VulnKind,
    checkpoint_path: &Path,
    out_dir: &Path,
    pur: f64,
    limit: Option<usize>,
) -> AppResult<()> {
    store::ensure_dir(out_dir)?;
    let mut logger = RunLogger::start(out_dir, "dump-balls", "-");
    let manifest = store::read_manifest(manifest_path)?;
    let (params, _) = checkpoint::load(checkpoint_path)?;
    let features = manifest_features(in_dir, &manifest, params.dims.feature)?;
    let label_rows = store::read_labels(labels_path)?;
    let by_kind = store::labels_by_kind(&label_rows);
    let kind_labels = by_kind
        .get(&kind)
        .ok_or_else(|| AppError::Data(format!("no labels of kind {kind}")))?;
    let (_, mut feats, mut labels) = labeled_features(&manifest, &features, kind_labels);
    if let Some(limit) = limit {
        feats.truncate(limit);
        labels.truncate(limit);
    }
    if feats.is_empty() {
        return Err(AppError::Data(format!("no labeled records for {kind}")));
    }

    let embeddings = encode_batch(&params, &feats);
    let samples: Vec<Sample> = embeddings
        .iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (e, &l))| Sample { id: i, embedding: e.clone(), label: l })
        .collect();
    let set = cluster(&samples, pur)?;

    let balls_path = out_dir.join("balls.jsonl");
    store::write_ball_dump(&balls_path, &set)?;

    let proj = top2_principal_components(&embeddings, 1e-9, 1000);
    let mut w = csv::Writer::from_path(out_dir.join("pca.csv"))?;
    w.write_record(["sample_id", "ball_id", "label", "pc1", "pc2"])?;
    for (i, e) in embeddings.iter().enumerate() {
        let (pc1, pc2) = project2(&proj, e);
        let ball = set.ball_of(i)?;
        w.write_record([
            i.to_string(),
            ball.to_string(),
            labels[i].to_string(),
            store::format_float(pc1),
            store::format_float(pc2),
        ])?;
    }
    w.flush()?;

    logger.artifact(&balls_path);
    logger.metrics(serde_json::json!({ "balls": set.balls.len(), "samples": feats.len() }));
    logger.finish()?;
    Ok(())
}
