//! Small-scale domain-adaptation experiment on synthetic corpora: two
//! labeled source domains, one shifted target domain, DAMF against the
//! plain fine-tuned baseline and against DAMF without class weights.

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::corpus::{generate_synthetic_corpus, Corpus, Document, SyntheticSpec, NUM_CLASSES};
use crate::encoder::{EncoderConfig, TokenSequence};
use crate::error::Result;
use crate::evaluation::{domain_probe_accuracy, per_class_prf, weighted_f1, ClassReport, ProbeSplit};
use crate::net::DamfModel;
use crate::objective::LossHyperParams;
use crate::training::{predict_baseline, predict_damf, test_domain_index, train_baseline, train_damf, ExperimentConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSetup {
    pub source_priors: Vec<[f64; NUM_CLASSES]>,
    pub target_prior: [f64; NUM_CLASSES],
    pub docs_per_source: usize,
    /// Unlabeled target documents seen during training.
    pub target_train_docs: usize,
    /// Held-out labeled documents per domain for testing and probing.
    pub test_docs: usize,
    pub marker_strength: f64,
    pub data_seed: u64,
    pub encoder: EncoderConfig,
    /// Hidden width of the classifier heads.
    pub head_hidden: Option<usize>,
    pub damf_epochs: usize,
    pub warmup_epochs: usize,
    pub baseline_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hp: LossHyperParams,
    /// Classes with a training positive rate below this are minority classes.
    pub minority_threshold: f64,
}

impl Default for ReplicationSetup {
    fn default() -> Self {
        //        care harm fair chea loya betr auth subv puri degr
        let a = [0.25, 0.20, 0.30, 0.15, 0.25, 0.10, 0.20, 0.10, 0.10, 0.08];
        let b = [0.20, 0.25, 0.20, 0.25, 0.10, 0.20, 0.25, 0.15, 0.08, 0.10];
        let t = [0.35, 0.25, 0.25, 0.20, 0.175, 0.15, 0.225, 0.125, 0.09, 0.09];
        Self {
            source_priors: vec![a, b],
            target_prior: t,
            docs_per_source: 500,
            target_train_docs: 500,
            test_docs: 300,
            marker_strength: 0.8,
            data_seed: 2024,
            encoder: EncoderConfig {
                hidden_size: 32,
                ffn_size: 64,
                num_layers: 1,
                num_heads: 2,
                max_len: 24,
                ..EncoderConfig::tiny()
            },
            head_hidden: Some(128),
            damf_epochs: 60,
            warmup_epochs: 15,
            baseline_epochs: 20,
            batch_size: 48,
            lr: 1e-2,
            hp: LossHyperParams {
                lambda_rec: 0.1,
                lambda_trans: Some(0.1),
                gamma: 10.0,
            },
            minority_threshold: 0.2,
        }
    }
}

/// Training corpora plus held-out test corpora (same domain order).
#[derive(Debug, Clone)]
pub struct ReplicationData {
    pub sources: Vec<Corpus>,
    pub target_unlabeled: Corpus,
    pub source_test: Vec<Corpus>,
    pub target_test: Corpus,
}

fn cut(c: &Corpus, n: usize) -> Result<(Corpus, Corpus)> {
    let (a, b) = c.documents.split_at(n);
    Ok((
        Corpus::new(c.name.clone(), c.domain.clone(), a.to_vec())?,
        Corpus::new(c.name.clone(), c.domain.clone(), b.to_vec())?,
    ))
}

impl ReplicationSetup {
    pub fn generate(&self) -> Result<ReplicationData> {
        let mut priors = self.source_priors.clone();
        priors.push(self.target_prior);
        let n = self.docs_per_source.max(self.target_train_docs) + self.test_docs;
        let mut spec = SyntheticSpec::new(priors, n, self.data_seed);
        spec.domain_marker_strength = self.marker_strength;
        spec.domain_names = (0..self.source_priors.len())
            .map(|i| format!("source{i}"))
            .chain(std::iter::once("target".to_string()))
            .collect();
        let mut corpora = generate_synthetic_corpus(&spec)?;
        let target = corpora.pop().expect("target corpus");
        let (t_train, target_test) = cut(&target, self.target_train_docs)?;
        let t_docs: Vec<Document> = t_train
            .documents
            .into_iter()
            .map(|mut d| {
                d.labels = None;
                d
            })
            .collect();
        let target_unlabeled = Corpus::new("target", target.domain.clone(), t_docs)?;
        let mut sources = Vec::new();
        let mut source_test = Vec::new();
        for c in &corpora {
            let (train, rest) = cut(c, self.docs_per_source)?;
            let (test, _) = cut(&rest, self.test_docs)?;
            sources.push(train);
            source_test.push(test);
        }
        let target_test = cut(&target_test, self.test_docs)?.0;
        Ok(ReplicationData {
            sources,
            target_unlabeled,
            source_test,
            target_test,
        })
    }

    pub fn damf_config(&self, weighted: bool) -> ExperimentConfig {
        let names: Vec<String> = (0..self.source_priors.len()).map(|i| format!("source{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        ExperimentConfig {
            hp: self.hp,
            total_epochs: self.damf_epochs,
            warmup_epochs: self.warmup_epochs,
            batch_size: self.batch_size,
            lr_init: self.lr,
            weighted_loss: weighted,
            encoder: self.encoder.clone(),
            head_hidden: self.head_hidden,
            ..ExperimentConfig::damf(&refs, "target")
        }
    }

    pub fn baseline_config(&self) -> ExperimentConfig {
        let names: Vec<String> = (0..self.source_priors.len()).map(|i| format!("source{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        ExperimentConfig {
            total_epochs: self.baseline_epochs,
            batch_size: self.batch_size,
            lr_init: self.lr,
            encoder: self.encoder.clone(),
            head_hidden: self.head_hidden,
            ..ExperimentConfig::baseline(&refs)
        }
    }

    /// Classes whose merged training positive rate is below the threshold
    /// and that occur in the target test set.
    pub fn minority_classes(&self, data: &ReplicationData) -> Vec<usize> {
        let total: usize = data.sources.iter().map(Corpus::num_labeled).sum();
        let test_counts = data.target_test.recompute_label_counts();
        (0..NUM_CLASSES)
            .filter(|&c| {
                let pos: usize = data.sources.iter().map(|s| s.recompute_label_counts().positives[c]).sum();
                (pos as f64 / total as f64) < self.minority_threshold && test_counts.positives[c] > 0
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub damf_f1: f64,
    pub baseline_f1: f64,
    pub unweighted_f1: f64,
    pub damf_minority_recall: f64,
    pub unweighted_minority_recall: f64,
    /// Source-vs-target probe accuracy on held-out features, warm-up end.
    pub probe_warmup: f64,
    /// Same probe on the final DAMF model.
    pub probe_final: f64,
    pub damf_val_f1: f64,
    pub baseline_val_f1: f64,
}

fn mean_recall(report: &ClassReport, classes: &[usize]) -> f64 {
    if classes.is_empty() {
        return 0.0;
    }
    classes.iter().map(|&c| report.recall(c)).sum::<f64>() / classes.len() as f64
}

/// Source-vs-target accuracy of a fresh linear probe on transformed
/// embeddings of held-out documents. Sources are pooled into one class and
/// both classes are balanced, so chance is 0.5.
pub fn target_probe(model: &DamfModel, data: &ReplicationData, seed: u64) -> Result<f64> {
    let tok = |docs: &[Document]| -> Vec<TokenSequence> { docs.iter().map(|d| model.encoder.tokenize(&d.processed_text)).collect() };
    let target = tok(&data.target_test.documents);
    let per_source = target.len() / data.source_test.len().max(1);
    let mut source = Vec::new();
    for c in &data.source_test {
        source.extend(tok(&c.documents[..per_source.min(c.len())]));
    }
    let feats: Mat = {
        let a = model.features(&source)?;
        let b = model.features(&target)?;
        ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).expect("same width")
    };
    let labels: Vec<usize> = std::iter::repeat_n(0, source.len())
        .chain(std::iter::repeat_n(1, target.len()))
        .collect();
    domain_probe_accuracy(&feats, &labels, ProbeSplit::default(), seed)
}

/// Trains the three systems for one seed and measures everything.
pub fn run_seed(setup: &ReplicationSetup, data: &ReplicationData, seed: u64) -> Result<SeedResult> {
    let minority = setup.minority_classes(data);
    let mut quiet = |_: &_| Ok(());

    let damf = train_damf(&setup.damf_config(true), &data.sources, &data.target_unlabeled, seed, &mut quiet)?;
    let domain = test_domain_index(&damf.model, &data.target_test.name);
    let damf_report = per_class_prf(&predict_damf(&damf.model, &data.target_test, domain)?)?;

    let unweighted = train_damf(&setup.damf_config(false), &data.sources, &data.target_unlabeled, seed, &mut quiet)?;
    let unweighted_report = per_class_prf(&predict_damf(&unweighted.model, &data.target_test, domain)?)?;

    let baseline = train_baseline(&setup.baseline_config(), &data.sources, seed, &mut quiet)?;
    let baseline_report = per_class_prf(&predict_baseline(&baseline.model, &data.target_test)?)?;

    let warm = damf.warmup_model.as_ref().expect("warm-up phase present");
    Ok(SeedResult {
        seed,
        damf_f1: weighted_f1(&damf_report)?,
        baseline_f1: weighted_f1(&baseline_report)?,
        unweighted_f1: weighted_f1(&unweighted_report)?,
        damf_minority_recall: mean_recall(&damf_report, &minority),
        unweighted_minority_recall: mean_recall(&unweighted_report, &minority),
        probe_warmup: target_probe(warm, data, seed)?,
        probe_final: target_probe(&damf.model, data, seed)?,
        damf_val_f1: damf.best_val_f1,
        baseline_val_f1: baseline.best_val_f1,
    })
}
