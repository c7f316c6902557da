use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use damf_core::autodiff::{Mat, ParamStore};
use damf_core::baselines::{
    aflite_filter, build_centroids, ddr_predict, ddr_predictions, AfliteDataset, AFLiteConfig, Lexicon, WordVectors,
};
use damf_core::checkpoint::{Checkpoint, SavedModel};
use damf_core::corpus::{
    document_record, load_corpus, write_corpus, Corpus, CorpusFormat, Document, DomainId, CLASS_NAMES,
};
use damf_core::encoder::{EncoderConfig, TokenSequence, TransformerEncoder};
use damf_core::evaluation::{
    aggregate_seeds, export_tsne, write_label_distribution, write_predictions, write_tsne_csv, EvalReport,
    TsneOptions,
};
use damf_core::training::{
    build_encoder, preset_names, preset_text, train_baseline, train_damf, ExperimentConfig, JsonlSink, ModelKind,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapters;
use crate::manifest::{sidecar, RunManifest};
use crate::{AfliteArgs, ConvertArgs, DdrArgs, EvaluateArgs, LabelDistArgs, ReportArgs, TrainArgs, TsneArgs};

/// Refuses to overwrite existing outputs unless `force` is set.
fn guard(paths: &[&Path], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            bail!("{} already exists (pass --force to overwrite)", p.display());
        }
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn corpus_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "corpus".to_string(), |s| s.to_string_lossy().into_owned())
}

fn read_corpus(path: &Path, index: usize) -> Result<Corpus> {
    let format = if path.extension().is_some_and(|e| e == "csv") {
        CorpusFormat::Csv
    } else {
        CorpusFormat::Jsonl
    };
    let (corpus, _) = load_corpus(path, DomainId::new(index, corpus_name(path)), format)
        .with_context(|| format!("loading {}", path.display()))?;
    Ok(corpus)
}

pub fn convert(a: ConvertArgs) -> Result<()> {
    let (sets, report) = adapters::convert(&a.adapter, &a.input)?;
    let outputs: Vec<PathBuf> = if sets.len() == 1 {
        vec![a.out.clone()]
    } else {
        sets.iter().map(|(name, _)| a.out.join(format!("{name}.jsonl"))).collect()
    };
    let manifest_path = if sets.len() == 1 {
        sidecar(&a.out)
    } else {
        a.out.join("manifest.json")
    };
    let mut all: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    all.push(&manifest_path);
    guard(&all, a.force)?;
    let mut manifest = RunManifest::start("convert");
    manifest.dataset(&a.adapter, &a.input)?;
    for ((_, records), path) in sets.iter().zip(&outputs) {
        ensure_parent(path)?;
        write_corpus(path, records)?;
        manifest.outputs.push(path.clone());
    }
    println!("records {}  kept {}  discarded {}", report.records, report.kept, report.discarded);
    manifest.details = serde_json::json!({
        "adapter": a.adapter,
        "records": report.records,
        "kept": report.kept,
        "discarded": report.discarded,
    });
    ensure_parent(&manifest_path)?;
    manifest.finish(&manifest_path)
}

/// Config text from a file or preset with the command-line overrides
/// appended, so later lines win.
fn config_text(a: &TrainArgs) -> Result<String> {
    let mut text = match (&a.config, &a.preset) {
        (Some(path), _) => fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        (None, Some(name)) => preset_text(name)
            .with_context(|| format!("unknown preset `{name}` (see `damf presets`)"))?
            .to_string(),
        (None, None) => String::new(),
    };
    if let Some(model) = &a.model {
        // Defaults follow the model key, so it must precede everything else.
        let body: String = text
            .lines()
            .filter(|l| !l.trim_start().starts_with("model"))
            .filter(|l| model != "baseline" || !l.trim_start().starts_with("target"))
            .map(|l| format!("{l}\n"))
            .collect();
        text = format!("model = {model}\n{body}");
    }
    for o in &a.overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{o}`"))?;
        text.push_str(&format!("\n{} = {}\n", k.trim(), v.trim()));
    }
    Ok(text)
}

/// Explicit path from the config, else `<data_dir>/<name>.jsonl` (or `.csv`).
fn resolve(name: &str, cfg: &ExperimentConfig, data_dir: &Path) -> Result<PathBuf> {
    if let Some(p) = cfg.corpus_paths.get(name) {
        return Ok(p.clone());
    }
    let as_path = PathBuf::from(name);
    if as_path.extension().is_some() && as_path.exists() {
        return Ok(as_path);
    }
    for ext in ["jsonl", "csv"] {
        let p = data_dir.join(format!("{name}.{ext}"));
        if p.exists() {
            return Ok(p);
        }
    }
    bail!(
        "corpus `{name}` not found: set `corpus.{name} = <path>` or place {name}.jsonl in {}",
        data_dir.display()
    )
}

fn named_corpus(name: &str, path: &Path, index: usize) -> Result<Corpus> {
    let c = read_corpus(path, index)?;
    Ok(Corpus::new(name, DomainId::new(index, name), c.documents)?)
}

struct RunResult {
    metrics: BTreeMap<String, f64>,
}

#[allow(clippy::too_many_arguments)]
fn train_one(
    cfg: &ExperimentConfig,
    sources: &[Corpus],
    target: Option<&Corpus>,
    tests: &[Corpus],
    seed: u64,
    dir: &Path,
    datasets: &[(String, PathBuf)],
) -> Result<RunResult> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let log_path = dir.join("train_log.jsonl");
    let ckpt_path = dir.join("checkpoint.json");
    let cfg_path = dir.join("config.conf");
    let mut manifest = RunManifest::start("train");
    manifest.config_hash = Some(cfg.hash());
    manifest.seeds = vec![seed];
    for (name, path) in datasets {
        manifest.dataset(name, path)?;
    }
    fs::write(&cfg_path, cfg.to_text()).with_context(|| format!("writing {}", cfg_path.display()))?;
    let mut sink = JsonlSink::create(&log_path)?;
    let mut observer = |row: &damf_core::training::EpochRecord| {
        log::info!(
            "seed {seed} epoch {:>3} {:<11} loss {:.4} val_f1 {:.4}",
            row.epoch,
            row.phase,
            row.loss_total,
            row.val_weighted_f1
        );
        sink.write(row)
    };
    let (model, best_epoch, best_val) = match cfg.model {
        ModelKind::Damf => {
            let target = target.context("DAMF needs a target corpus")?;
            let out = train_damf(cfg, sources, target, seed, &mut observer)
                .with_context(|| format!("training failed; partial log in {}", log_path.display()))?;
            (SavedModel::Damf(out.model), out.best_epoch, out.best_val_f1)
        }
        ModelKind::Baseline => {
            let out = train_baseline(cfg, sources, seed, &mut observer)
                .with_context(|| format!("training failed; partial log in {}", log_path.display()))?;
            (SavedModel::Baseline(out.model), out.best_epoch, out.best_val_f1)
        }
    };
    let ckpt = Checkpoint::new(cfg.hash(), model);
    ckpt.save(&ckpt_path)?;
    manifest.outputs.extend([ckpt_path, log_path, cfg_path]);

    let mut metrics = BTreeMap::from([("val_weighted_f1".to_string(), best_val)]);
    let train_names = cfg.train_corpora.clone();
    for test in tests {
        let preds = ckpt.predict(test)?;
        let report = EvalReport::new(ckpt.kind(), &train_names, &test.name, Some(seed), &preds)?;
        let path = dir.join(format!("report-{}.json", test.name));
        fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
        manifest.outputs.push(path);
        for (k, v) in report.metric_map() {
            metrics.insert(format!("test.{}.{k}", test.name), v);
        }
    }
    manifest.details = serde_json::json!({ "best_epoch": best_epoch, "best_val_weighted_f1": best_val });
    println!("seed {seed}: best epoch {best_epoch}, validation weighted F1 {best_val:.4}");
    manifest.finish(&dir.join("manifest.json"))?;
    Ok(RunResult { metrics })
}

pub fn train(a: TrainArgs, data_dir: &Path) -> Result<()> {
    let cfg = ExperimentConfig::parse(&config_text(&a)?)?;
    let seeds = match (a.seed, a.seeds.is_empty()) {
        (Some(s), _) => vec![s],
        (None, false) => a.seeds.clone(),
        (None, true) => cfg.seeds.clone(),
    };
    let sweep = seeds.len() > 1;
    let dirs: Vec<PathBuf> = if sweep {
        seeds.iter().map(|s| a.out.join(format!("seed-{s}"))).collect()
    } else {
        vec![a.out.clone()]
    };
    let mut watched: Vec<PathBuf> = dirs.iter().map(|d| d.join("manifest.json")).collect();
    if sweep {
        watched.push(a.out.join("aggregate.json"));
    }
    guard(&watched.iter().map(PathBuf::as_path).collect::<Vec<_>>(), a.force)?;

    let mut datasets = Vec::new();
    let mut sources = Vec::new();
    for (i, name) in cfg.train_corpora.iter().enumerate() {
        let path = resolve(name, &cfg, data_dir)?;
        sources.push(named_corpus(name, &path, i)?);
        datasets.push((name.clone(), path));
    }
    let target = match (&cfg.target_corpus, cfg.model) {
        (Some(name), ModelKind::Damf) => {
            let path = resolve(name, &cfg, data_dir)?;
            let c = named_corpus(name, &path, sources.len())?;
            datasets.push((name.clone(), path));
            Some(c)
        }
        _ => None,
    };
    let mut tests = Vec::new();
    for name in &a.test {
        let path = resolve(name, &cfg, data_dir)?;
        tests.push(named_corpus(&corpus_name(&path), &path, 0)?);
        datasets.push((corpus_name(&path), path));
    }

    let mut runs = Vec::new();
    for (seed, dir) in seeds.iter().zip(&dirs) {
        runs.push(train_one(&cfg, &sources, target.as_ref(), &tests, *seed, dir, &datasets)?.metrics);
    }
    if sweep {
        let agg = aggregate_seeds(&runs)?;
        let path = a.out.join("aggregate.json");
        fs::write(&path, serde_json::to_string_pretty(&agg)? + "\n")?;
        for (k, m) in &agg.metrics {
            if k.ends_with("weighted_f1") {
                println!("{k}: {:.4} ± {:.4} over {} seeds", m.mean, m.std, agg.runs);
            }
        }
        let mut manifest = RunManifest::start("train-sweep");
        manifest.config_hash = Some(cfg.hash());
        manifest.seeds = seeds;
        manifest.outputs = dirs;
        manifest.outputs.push(path);
        manifest.finish(&a.out.join("manifest.json"))?;
    }
    Ok(())
}

fn write_report(out: &Path, report: &EvalReport, preds: &damf_core::evaluation::PredictionSet) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let rp = out.join("report.json");
    let pp = out.join("predictions.jsonl");
    fs::write(&rp, serde_json::to_string_pretty(report)? + "\n")?;
    write_predictions(&pp, preds)?;
    println!("weighted F1 {:.4} on {} documents", report.weighted_f1, report.num_documents);
    for name in CLASS_NAMES {
        let m = &report.per_class[name];
        println!("  {name:<12} P {:.3}  R {:.3}  F1 {:.3}  support {}", m.precision, m.recall, m.f1, m.support);
    }
    Ok(vec![rp, pp])
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    guard(&[&a.out.join("report.json"), &a.out.join("manifest.json")], a.force)?;
    let corpus = read_corpus(&a.corpus, 0)?;
    let mut manifest = RunManifest::start("evaluate");
    manifest.dataset(&corpus.name, &a.corpus)?;
    let (preds, model, train) = match (&a.checkpoint, &a.lexicon, &a.embeddings) {
        (Some(path), _, _) => {
            let ckpt = Checkpoint::load(path)?;
            manifest.config_hash = Some(ckpt.config_hash.clone());
            manifest.dataset("checkpoint", path)?;
            let train = ckpt.domains().map(|d| d.names().to_vec()).unwrap_or_default();
            (ckpt.predict(&corpus)?, ckpt.kind().to_string(), train)
        }
        (None, Some(lex), Some(emb)) => {
            manifest.dataset("lexicon", lex)?;
            manifest.dataset("embeddings", emb)?;
            let embeddings = WordVectors::load(emb)?;
            let centroids = build_centroids(&Lexicon::load(lex)?, &embeddings)?;
            (ddr_predictions(&corpus, &centroids, &embeddings)?, "ddr".to_string(), Vec::new())
        }
        _ => bail!("pass --checkpoint, or --lexicon with --embeddings"),
    };
    let report = EvalReport::new(&model, &train, &corpus.name, None, &preds)?;
    manifest.outputs = write_report(&a.out, &report, &preds)?;
    manifest.finish(&a.out.join("manifest.json"))
}

pub fn ddr(a: DdrArgs) -> Result<()> {
    let manifest_path = sidecar(&a.out);
    guard(&[&a.out, &manifest_path], a.force)?;
    let corpus = read_corpus(&a.corpus, 0)?;
    let embeddings = WordVectors::load(&a.embeddings)?;
    let centroids = build_centroids(&Lexicon::load(&a.lexicon)?, &embeddings)?;
    let mut out = String::new();
    let mut abstained = 0usize;
    for d in &corpus.documents {
        let p = ddr_predict(&d.processed_text, &centroids, &embeddings);
        abstained += usize::from(p.class.is_none());
        let scores: BTreeMap<&str, f64> = CLASS_NAMES.iter().copied().zip(p.scores).collect();
        let row = serde_json::json!({
            "id": d.id,
            "prediction": p.class.map(|c| CLASS_NAMES[c]),
            "scores": scores,
        });
        out.push_str(&row.to_string());
        out.push('\n');
    }
    ensure_parent(&a.out)?;
    fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("scored {} documents ({abstained} without in-vocabulary tokens)", corpus.len());
    let mut manifest = RunManifest::start("ddr");
    manifest.dataset(&corpus.name, &a.corpus)?;
    manifest.dataset("lexicon", &a.lexicon)?;
    manifest.dataset("embeddings", &a.embeddings)?;
    if corpus.num_labeled() > 0 {
        let report = EvalReport::new("ddr", &[], &corpus.name, None, &ddr_predictions(&corpus, &centroids, &embeddings)?)?;
        println!("weighted F1 {:.4}", report.weighted_f1);
        manifest.details = serde_json::json!({ "weighted_f1": report.weighted_f1 });
    }
    manifest.outputs.push(a.out.clone());
    manifest.finish(&manifest_path)
}

/// Frozen document encoder: a checkpoint's encoder, or a freshly
/// initialized tiny transformer over the given texts.
struct Featurizer {
    store: ParamStore,
    encoder: TransformerEncoder,
    model: Option<SavedModel>,
}

impl Featurizer {
    fn new<'a>(checkpoint: Option<&Path>, texts: impl IntoIterator<Item = &'a str>, seed: u64) -> Result<Self> {
        if let Some(path) = checkpoint {
            let ckpt = Checkpoint::load(path)?;
            let (store, encoder) = match &ckpt.model {
                SavedModel::Damf(m) => (m.store.clone(), m.encoder.clone()),
                SavedModel::Baseline(m) => (m.store.clone(), m.encoder.clone()),
            };
            return Ok(Self {
                store,
                encoder,
                model: Some(ckpt.model),
            });
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = build_encoder(&mut store, &EncoderConfig::tiny(), texts, &mut rng)?;
        Ok(Self {
            store,
            encoder,
            model: None,
        })
    }

    fn tokens(&self, texts: &[&str]) -> Vec<TokenSequence> {
        texts.iter().map(|t| self.encoder.tokenize(t)).collect()
    }

    /// Raw encoder output.
    fn encode(&self, texts: &[&str]) -> damf_core::Result<Mat> {
        self.encoder.encode_all(&self.store, &self.tokens(texts))
    }

    /// The representation the classifier sees: transformed embeddings for
    /// DAMF, raw encoder output otherwise.
    fn features(&self, texts: &[&str]) -> damf_core::Result<Mat> {
        match &self.model {
            Some(SavedModel::Damf(m)) => m.features(&self.tokens(texts)),
            _ => self.encode(texts),
        }
    }
}

pub fn filter_aflite(a: AfliteArgs) -> Result<()> {
    let manifest_path = sidecar(&a.out);
    guard(&[&a.out, &manifest_path], a.force)?;
    let corpus = read_corpus(&a.corpus, 0)?;
    let feat = Featurizer::new(
        a.checkpoint.as_deref(),
        corpus.documents.iter().map(|d| d.processed_text.as_str()),
        a.seed,
    )?;
    let data = AfliteDataset::from_corpus(&corpus, |texts| feat.encode(texts))?;
    let mut cfg = AFLiteConfig::default();
    if let Some(m) = a.partitions {
        cfg.num_partitions = m;
    }
    if let Some(t) = a.threshold {
        cfg.predictability_threshold = t;
    }
    let out = aflite_filter(&data, &cfg, a.seed)?;
    for r in &out.rounds {
        println!("round {}: {} -> {} ({} removed)", r.round, r.size_before, r.size_after, r.removed);
    }
    let labeled: Vec<&Document> = corpus.labeled().collect();
    let records: Vec<_> = out.kept.iter().map(|&i| document_record(labeled[i])).collect();
    ensure_parent(&a.out)?;
    write_corpus(&a.out, &records)?;
    println!("kept {} of {} labeled documents", records.len(), data.len());
    let mut manifest = RunManifest::start("filter-aflite");
    manifest.dataset(&corpus.name, &a.corpus)?;
    manifest.seeds = vec![a.seed];
    manifest.outputs.push(a.out.clone());
    manifest.details = serde_json::json!({ "config": cfg, "rounds": out.rounds, "sizes": out.sizes() });
    manifest.finish(&manifest_path)
}

pub fn tsne(a: TsneArgs) -> Result<()> {
    let manifest_path = sidecar(&a.out);
    guard(&[&a.out, &manifest_path], a.force)?;
    let corpora = a
        .corpora
        .iter()
        .enumerate()
        .map(|(i, p)| read_corpus(p, i))
        .collect::<Result<Vec<_>>>()?;
    let feat = Featurizer::new(
        a.checkpoint.as_deref(),
        corpora.iter().flat_map(|c| c.documents.iter().map(|d| d.processed_text.as_str())),
        a.seed,
    )?;
    let mut opts = TsneOptions::default();
    if let Some(n) = a.iterations {
        opts.iterations = n;
    }
    let points = export_tsne(
        &corpora,
        |docs| {
            let texts: Vec<&str> = docs.iter().map(|d| d.processed_text.as_str()).collect();
            feat.features(&texts)
        },
        a.sample,
        a.seed,
        &opts,
    )?;
    ensure_parent(&a.out)?;
    write_tsne_csv(&a.out, &points)?;
    println!("wrote {} points to {}", points.len(), a.out.display());
    let mut manifest = RunManifest::start("tsne");
    for (c, p) in corpora.iter().zip(&a.corpora) {
        manifest.dataset(&c.name, p)?;
    }
    manifest.seeds = vec![a.seed];
    manifest.outputs.push(a.out.clone());
    manifest.finish(&manifest_path)
}

pub fn label_dist(a: LabelDistArgs) -> Result<()> {
    let manifest_path = sidecar(&a.out);
    guard(&[&a.out, &manifest_path], a.force)?;
    let corpora = a
        .corpora
        .iter()
        .enumerate()
        .map(|(i, p)| read_corpus(p, i))
        .collect::<Result<Vec<_>>>()?;
    ensure_parent(&a.out)?;
    let rows = write_label_distribution(&a.out, &corpora)?;
    print!("{:<12}", "class");
    for (name, _) in &rows {
        print!(" {name:>10}");
    }
    println!();
    for (c, class) in CLASS_NAMES.iter().enumerate() {
        print!("{class:<12}");
        for (_, dist) in &rows {
            print!(" {:>10.3}", dist[c]);
        }
        println!();
    }
    let mut manifest = RunManifest::start("label-dist");
    for (c, p) in corpora.iter().zip(&a.corpora) {
        manifest.dataset(&c.name, p)?;
    }
    manifest.outputs.push(a.out.clone());
    manifest.finish(&manifest_path)
}

fn collect_reports(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            collect_reports(&e, out)?;
        }
    } else if path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with("report") && n.ends_with(".json"))
    {
        out.push(path.to_path_buf());
    }
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let manifest_path = sidecar(&a.out);
    guard(&[&a.out, &manifest_path], a.force)?;
    let mut files = Vec::new();
    for p in &a.inputs {
        if !p.exists() {
            bail!("{} does not exist", p.display());
        }
        collect_reports(p, &mut files)?;
    }
    if files.is_empty() {
        bail!("no report*.json files found");
    }
    let mut groups: BTreeMap<(String, String), Vec<EvalReport>> = BTreeMap::new();
    for f in &files {
        let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        let r: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))?;
        groups.entry((r.model.clone(), r.test.clone())).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((model, test), reports) in &groups {
        let maps: Vec<_> = reports.iter().map(EvalReport::metric_map).collect();
        let row = if maps.len() >= 2 {
            let agg = aggregate_seeds(&maps)?;
            let f1 = agg.metrics["weighted_f1"];
            println!("{model:<10} {test:<16} weighted F1 {:.4} ± {:.4} ({} runs)", f1.mean, f1.std, agg.runs);
            serde_json::json!({ "model": model, "test": test, "aggregate": agg })
        } else {
            println!("{model:<10} {test:<16} weighted F1 {:.4} (1 run)", reports[0].weighted_f1);
            serde_json::json!({ "model": model, "test": test, "single": maps[0] })
        };
        rows.push(row);
    }
    ensure_parent(&a.out)?;
    fs::write(&a.out, serde_json::to_string_pretty(&rows)? + "\n")?;
    let mut manifest = RunManifest::start("report");
    for f in &files {
        manifest.dataset("report", f)?;
    }
    manifest.outputs.push(a.out.clone());
    manifest.finish(&manifest_path)
}

pub fn presets() -> Result<()> {
    for name in preset_names() {
        println!("{name}");
    }
    Ok(())
}
