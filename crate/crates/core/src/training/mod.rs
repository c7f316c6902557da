//! Two-phase DAMF training and the plain fine-tuned baseline.

mod batches;
mod config;
mod presets;

use std::fs;
use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, ParamId, ParamStore, Tape};
use crate::corpus::{split_train_val, Corpus, Document, LabelCounts, MoralLabelVector, NUM_CLASSES};
use crate::encoder::{EncoderConfig, EncoderKind, TokenSequence, TransformerEncoder, Vocab};
use crate::error::{Error, Result};
use crate::evaluation::{per_class_prf, weighted_f1, PredictionSet};
use crate::net::{BaselineModel, DamfModel, DomainRegistry, Mode};
use crate::objective::{class_weights_from_counts, lambda_d, lr_at, total_loss, ClassWeights};
use crate::optim::Adam;

pub use batches::{batch_quotas, build_mixed_batches, shuffled_batches, Batch, BatchItem, BatchPlan};
pub use config::{ExperimentConfig, ModelKind, ReferencePolicy};
pub use presets::{load_preset, preset_names, preset_text, PRESETS};

/// One row per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    pub steps: usize,
    pub loss_total: f64,
    pub loss_mf: f64,
    pub loss_domain: f64,
    pub loss_rec: f64,
    pub loss_trans: f64,
    pub lambda_d: f64,
    pub lr: f64,
    pub val_weighted_f1: f64,
    /// Domain-head accuracy on held-out documents of every domain.
    pub domain_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("log rows serialize") + "\n")
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows = body
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { rows })
    }
}

/// Appends each epoch record to a JSONL file as soon as it is produced.
pub struct JsonlSink {
    file: fs::File,
    path: std::path::PathBuf,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, row: &EpochRecord) -> Result<()> {
        let line = serde_json::to_string(row)? + "\n";
        self.file.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Clone)]
pub struct DamfOutcome {
    /// Checkpoint with the best post-warm-up validation weighted F1.
    pub model: DamfModel,
    /// Model state at the end of warm-up, when there is one.
    pub warmup_model: Option<DamfModel>,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub model: BaselineModel,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

fn mix(seed: u64, stream: u64, epoch: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the encoder: a fresh tiny transformer with a vocabulary over
/// `texts`, or a pretrained one loaded from disk.
pub fn build_encoder<'a, I>(store: &mut ParamStore, config: &EncoderConfig, texts: I, rng: &mut ChaCha8Rng) -> Result<TransformerEncoder>
where
    I: IntoIterator<Item = &'a str>,
{
    match config.kind {
        EncoderKind::TinyTransformer => TransformerEncoder::init(store, config.clone(), Vocab::build(texts), rng),
        EncoderKind::PretrainedTransformer => TransformerEncoder::from_pretrained(store, config.clone()),
    }
}

struct Slice {
    seqs: Vec<TokenSequence>,
    labels: Vec<MoralLabelVector>,
}

impl Slice {
    fn new(encoder: &TransformerEncoder, docs: &[Document]) -> Self {
        Self {
            seqs: docs.iter().map(|d| encoder.tokenize(&d.processed_text)).collect(),
            labels: docs.iter().map(|d| d.labels.unwrap_or(MoralLabelVector::NON_MORAL)).collect(),
        }
    }
}

fn labeled_only(c: &Corpus) -> Result<Corpus> {
    let docs: Vec<Document> = c.labeled().cloned().collect();
    if docs.is_empty() {
        return Err(Error::NoLabeledDocuments(c.name.clone()));
    }
    Corpus::new(c.name.clone(), c.domain.clone(), docs)
}

fn label_matrix(labels: &[&MoralLabelVector]) -> Mat {
    Mat::from_shape_fn((labels.len(), NUM_CLASSES), |(i, c)| f64::from(u8::from(labels[i].get(c))))
}

fn merged_weights(train: &[Corpus], weighted: bool) -> ClassWeights {
    if !weighted {
        return ClassWeights::uniform();
    }
    let mut counts = LabelCounts::default();
    for c in train {
        let k = c.recompute_label_counts();
        for i in 0..NUM_CLASSES {
            counts.positives[i] += k.positives[i];
            counts.negatives[i] += k.negatives[i];
        }
    }
    class_weights_from_counts(&counts)
}

fn score(logits: Mat, gold: Vec<MoralLabelVector>) -> Result<f64> {
    let ids = (0..gold.len()).map(|i| i.to_string()).collect();
    let preds = PredictionSet::from_logits(ids, logits, gold)?;
    match weighted_f1(&per_class_prf(&preds)?) {
        Ok(f) => Ok(f),
        Err(Error::ZeroSupport) => Ok(0.0),
        Err(e) => Err(e),
    }
}

fn concat_rows(parts: Vec<Mat>) -> Mat {
    let views: Vec<_> = parts.iter().map(|m| m.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).expect("same width")
}

fn damf_val_f1(model: &DamfModel, val: &[Slice]) -> Result<f64> {
    let mut logits = Vec::new();
    let mut gold = Vec::new();
    for (d, s) in val.iter().enumerate() {
        logits.push(model.predict_logits(&s.seqs, d)?);
        gold.extend_from_slice(&s.labels);
    }
    score(concat_rows(logits), gold)
}

/// Fraction of monitor documents whose domain the domain head gets right.
pub fn domain_head_accuracy(model: &DamfModel, seqs_by_domain: &[Vec<TokenSequence>]) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for (d, seqs) in seqs_by_domain.iter().enumerate() {
        if seqs.is_empty() {
            continue;
        }
        let feats = model.features(seqs)?;
        let mut tape = Tape::new();
        let x = tape.constant(feats);
        let out = model.domain_forward_var(&mut tape, &model.store, x, 0.0, &mut Mode::Eval);
        for row in tape.value(out).outer_iter() {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            hits += usize::from(best == d);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

fn check_finite(epoch: usize, name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            detail: format!("{name} loss is {v}"),
        })
    }
}

/// Trains DAMF on `labeled` source corpora with `target` as unlabeled
/// domain. `observer` sees every epoch row as soon as it exists.
pub fn train_damf(
    config: &ExperimentConfig,
    labeled: &[Corpus],
    target: &Corpus,
    seed: u64,
    observer: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<DamfOutcome> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::invalid("no labeled training corpora"));
    }
    if target.is_empty() {
        return Err(Error::CorpusTooSmall {
            name: target.name.clone(),
            size: 0,
            needed: 1,
        });
    }
    let num_sources = labeled.len();
    let mut train = Vec::with_capacity(num_sources);
    let mut val = Vec::with_capacity(num_sources);
    for c in labeled {
        let (t, v) = split_train_val(&labeled_only(c)?, config.train_fraction, seed)?;
        train.push(t);
        val.push(v);
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let texts = labeled
        .iter()
        .chain(std::iter::once(target))
        .flat_map(|c| c.documents.iter().map(|d| d.processed_text.as_str()));
    let encoder = build_encoder(&mut store, &config.encoder, texts, &mut init_rng)?;
    let domains = DomainRegistry::new(labeled.iter().chain(std::iter::once(target)).map(|c| c.name.clone()));
    let mut model = DamfModel::init(store, encoder, domains, &config.damf_config(), &mut init_rng);

    let train_slices: Vec<Slice> = train.iter().map(|c| Slice::new(&model.encoder, &c.documents)).collect();
    let val_slices: Vec<Slice> = val.iter().map(|c| Slice::new(&model.encoder, &c.documents)).collect();
    let target_seqs: Vec<TokenSequence> = target
        .documents
        .iter()
        .map(|d| model.encoder.tokenize(&d.processed_text))
        .collect();
    let weights = merged_weights(&train, config.weighted_loss);
    debug!("class weights {:?}", weights.w);

    let mut monitor_rng = ChaCha8Rng::seed_from_u64(mix(seed, 3, 0));
    let mut monitor: Vec<Vec<TokenSequence>> = val_slices
        .iter()
        .map(|s| s.seqs.iter().take(config.monitor_docs).cloned().collect())
        .collect();
    let mut target_order: Vec<usize> = (0..target_seqs.len()).collect();
    target_order.shuffle(&mut monitor_rng);
    monitor.push(
        target_order
            .iter()
            .take(config.monitor_docs)
            .map(|&i| target_seqs[i].clone())
            .collect(),
    );

    let use_rec = config.hp.lambda_rec > 0.0;
    let reference_epoch = match config.reference {
        ReferencePolicy::Initial => 0,
        ReferencePolicy::WarmupEnd => config.warmup_epochs,
    };
    // Reference embeddings for every training and target document.
    let mut reference: Option<(Vec<Mat>, Mat)> = None;

    let schedule = config.schedule();
    let mut adam = Adam::default();
    let mut drop_rng = ChaCha8Rng::seed_from_u64(mix(seed, 1, 0));
    let domain_head_ids: Vec<ParamId> = model.domain_head.param_ids().to_vec();
    let train_sizes: Vec<usize> = train_slices.iter().map(|s| s.seqs.len()).collect();

    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64, DamfModel)> = None;
    let mut warmup_model = None;

    for epoch in 0..config.total_epochs {
        let state = schedule.at(epoch);
        let adversarial = !state.in_warmup();
        let lr = lr_at(&state);
        let lam = if config.adversary { lambda_d(&state, config.hp.gamma) } else { 0.0 };
        if use_rec && epoch == reference_epoch && reference.is_none() {
            let enc = &model.encoder;
            let per_domain = train_slices
                .iter()
                .map(|s| enc.encode_all(&model.store, &s.seqs))
                .collect::<Result<Vec<_>>>()?;
            reference = Some((per_domain, enc.encode_all(&model.store, &target_seqs)?));
        }
        let with_target = adversarial && (config.adversary || reference.is_some());
        let plan = build_mixed_batches(
            &train_sizes,
            with_target.then_some(target_seqs.len()),
            config.batch_size,
            mix(seed, 2, epoch as u64),
        )?;

        let mut sums = [0.0f64; 4];
        for batch in &plan.batches {
            let seqs: Vec<&TokenSequence> = batch
                .items
                .iter()
                .map(|it| {
                    if it.domain < num_sources {
                        &train_slices[it.domain].seqs[it.doc]
                    } else {
                        &target_seqs[it.doc]
                    }
                })
                .collect();
            let mut tape = Tape::new();
            let f = model.encode_var(&mut tape, &model.store, &seqs)?;

            let rows: Vec<usize> = (0..batch.items.len()).filter(|&i| batch.items[i].labeled).collect();
            let row_domains: Vec<usize> = rows.iter().map(|&i| batch.items[i].domain).collect();
            let gold: Vec<&MoralLabelVector> = rows
                .iter()
                .map(|&i| &train_slices[batch.items[i].domain].labels[batch.items[i].doc])
                .collect();
            let x_lab = tape.rows(f.x_trans, rows);
            let mf_logits = model.mf_forward_var(&mut tape, &model.store, x_lab, &row_domains, &mut Mode::Train(&mut drop_rng))?;
            let l_mf = tape.weighted_bce(mf_logits, label_matrix(&gold), &weights.w);
            let mut terms = vec![(l_mf, 1.0)];
            let mut values = [tape.scalar_value(l_mf), 0.0, 0.0, 0.0];

            if adversarial && config.adversary {
                let dom_logits = model.domain_forward_var(&mut tape, &model.store, f.x_trans, lam, &mut Mode::Train(&mut drop_rng));
                let labels = batch.items.iter().map(|it| it.domain).collect();
                let l_d = tape.softmax_ce(dom_logits, labels);
                values[1] = tape.scalar_value(l_d);
                terms.push((l_d, 1.0));
            }
            if let (Some(w), Some(t)) = (config.hp.lambda_trans, &model.transform) {
                let l_trans = t.regularizer_var(&mut tape, &model.store);
                values[3] = tape.scalar_value(l_trans);
                terms.push((l_trans, w));
            }
            if let Some((per_domain, tgt)) = &reference {
                let x_orig = Mat::from_shape_fn((batch.items.len(), model.hidden_size()), |(i, j)| {
                    let it = batch.items[i];
                    if it.domain < num_sources {
                        per_domain[it.domain][[it.doc, j]]
                    } else {
                        tgt[[it.doc, j]]
                    }
                });
                let l_rec = model.recon_head.loss_var(&mut tape, &model.store, f.x_trans, &x_orig);
                values[2] = tape.scalar_value(l_rec);
                terms.push((l_rec, config.hp.lambda_rec));
            }
            for (name, v) in ["mf", "domain", "reconstruction", "transformation"].iter().zip(values) {
                check_finite(epoch, name, v)?;
            }
            let root = tape.weighted_sum(&terms);
            tape.backward(root);
            let grads = tape.param_grads();
            let frozen: &[ParamId] = if adversarial { &[] } else { &domain_head_ids };
            adam.step(&mut model.store, &grads, lr, frozen);
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
        }
        if !model.store.all_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite parameter after update".to_string(),
            });
        }

        let steps = plan.batches.len().max(1) as f64;
        let [l_mf, l_d, l_rec, l_trans] = sums.map(|s| s / steps);
        let val_f1 = damf_val_f1(&model, &val_slices)?;
        let row = EpochRecord {
            epoch,
            phase: if adversarial { "adversarial" } else { "warmup" }.to_string(),
            steps: plan.batches.len(),
            loss_total: total_loss(l_rec, l_trans, l_mf, l_d, &config.hp, lam),
            loss_mf: l_mf,
            loss_domain: l_d,
            loss_rec: l_rec,
            loss_trans: l_trans,
            lambda_d: lam,
            lr,
            val_weighted_f1: val_f1,
            domain_accuracy: Some(domain_head_accuracy(&model, &monitor)?),
        };
        info!(
            "epoch {epoch} {} mf={l_mf:.4} d={l_d:.4} rec={l_rec:.4} lambda_d={lam:.4} lr={lr:.3e} val_f1={val_f1:.4}",
            row.phase
        );
        observer(&row)?;
        log.rows.push(row);

        if adversarial && best.as_ref().is_none_or(|(_, f, _)| val_f1 > *f) {
            best = Some((epoch, val_f1, model.clone()));
        }
        if epoch + 1 == config.warmup_epochs {
            warmup_model = Some(model.clone());
        }
    }

    let (best_epoch, best_val_f1, model) = best.expect("at least one post-warm-up epoch");
    Ok(DamfOutcome {
        model,
        warmup_model,
        log,
        best_epoch,
        best_val_f1,
    })
}

/// Fine-tunes the encoder with a single linear layer on the merged labeled
/// corpora; returns the epoch with the best validation weighted F1.
pub fn train_baseline(
    config: &ExperimentConfig,
    labeled: &[Corpus],
    seed: u64,
    observer: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<BaselineOutcome> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::invalid("no labeled training corpora"));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in labeled {
        let (t, v) = split_train_val(&labeled_only(c)?, config.train_fraction, seed)?;
        train.push(t);
        val.push(v);
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let texts = labeled
        .iter()
        .flat_map(|c| c.documents.iter().map(|d| d.processed_text.as_str()));
    let encoder = build_encoder(&mut store, &config.encoder, texts, &mut init_rng)?;
    let mut model = BaselineModel::init(store, encoder, config.dropout, &mut init_rng);

    let train_docs: Vec<Document> = train.iter().flat_map(|c| c.documents.iter().cloned()).collect();
    let val_docs: Vec<Document> = val.iter().flat_map(|c| c.documents.iter().cloned()).collect();
    let train_slice = Slice::new(&model.encoder, &train_docs);
    let val_slice = Slice::new(&model.encoder, &val_docs);
    let weights = merged_weights(&train, config.weighted_loss);

    let schedule = config.schedule();
    let mut adam = Adam::default();
    let mut drop_rng = ChaCha8Rng::seed_from_u64(mix(seed, 1, 0));
    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64, BaselineModel)> = None;

    for epoch in 0..config.total_epochs {
        let lr = lr_at(&schedule.at(epoch));
        let batches = shuffled_batches(train_slice.seqs.len(), config.batch_size, mix(seed, 2, epoch as u64));
        let mut sum = 0.0;
        for idx in &batches {
            let seqs: Vec<&TokenSequence> = idx.iter().map(|&i| &train_slice.seqs[i]).collect();
            let gold: Vec<&MoralLabelVector> = idx.iter().map(|&i| &train_slice.labels[i]).collect();
            let mut tape = Tape::new();
            let logits = model.forward_var(&mut tape, &model.store, &seqs, &mut Mode::Train(&mut drop_rng))?;
            let loss = tape.weighted_bce(logits, label_matrix(&gold), &weights.w);
            let v = tape.scalar_value(loss);
            check_finite(epoch, "mf", v)?;
            tape.backward(loss);
            let grads = tape.param_grads();
            adam.step(&mut model.store, &grads, lr, &[]);
            sum += v;
        }
        if !model.store.all_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite parameter after update".to_string(),
            });
        }
        let l_mf = sum / batches.len().max(1) as f64;
        let val_f1 = score(model.predict_logits(&val_slice.seqs)?, val_slice.labels.clone())?;
        let row = EpochRecord {
            epoch,
            phase: "baseline".to_string(),
            steps: batches.len(),
            loss_total: l_mf,
            loss_mf: l_mf,
            loss_domain: 0.0,
            loss_rec: 0.0,
            loss_trans: 0.0,
            lambda_d: 0.0,
            lr,
            val_weighted_f1: val_f1,
            domain_accuracy: None,
        };
        info!("epoch {epoch} baseline mf={l_mf:.4} lr={lr:.3e} val_f1={val_f1:.4}");
        observer(&row)?;
        log.rows.push(row);
        if best.as_ref().is_none_or(|(_, f, _)| val_f1 > *f) {
            best = Some((epoch, val_f1, model.clone()));
        }
    }
    let (best_epoch, best_val_f1, model) = best.expect("at least one epoch");
    Ok(BaselineOutcome {
        model,
        log,
        best_epoch,
        best_val_f1,
    })
}

/// Domain index used for a test corpus: its own slot when it took part in
/// training, otherwise the last (target) slot.
pub fn test_domain_index(model: &DamfModel, corpus_name: &str) -> usize {
    model
        .domains
        .index_of(corpus_name)
        .unwrap_or(model.num_domains().saturating_sub(1))
}

fn labeled_docs(corpus: &Corpus) -> Result<Vec<&Document>> {
    let docs: Vec<&Document> = corpus.labeled().collect();
    if docs.is_empty() {
        return Err(Error::NoLabeledDocuments(corpus.name.clone()));
    }
    Ok(docs)
}

pub fn predict_damf(model: &DamfModel, corpus: &Corpus, domain: usize) -> Result<PredictionSet> {
    let docs = labeled_docs(corpus)?;
    let seqs: Vec<TokenSequence> = docs.iter().map(|d| model.encoder.tokenize(&d.processed_text)).collect();
    let logits = model.predict_logits(&seqs, domain)?;
    PredictionSet::from_logits(
        docs.iter().map(|d| d.id.clone()).collect(),
        logits,
        docs.iter().map(|d| d.labels.expect("labeled")).collect(),
    )
}

pub fn predict_baseline(model: &BaselineModel, corpus: &Corpus) -> Result<PredictionSet> {
    let docs = labeled_docs(corpus)?;
    let seqs: Vec<TokenSequence> = docs.iter().map(|d| model.encoder.tokenize(&d.processed_text)).collect();
    let logits = model.predict_logits(&seqs)?;
    PredictionSet::from_logits(
        docs.iter().map(|d| d.id.clone()).collect(),
        logits,
        docs.iter().map(|d| d.labels.expect("labeled")).collect(),
    )
}
