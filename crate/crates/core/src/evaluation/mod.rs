//! Metrics, seed aggregation and figure-data exports.

mod probe;
mod tsne;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::corpus::{compute_label_distribution, Corpus, MoralLabelVector, CLASS_NAMES, NUM_CLASSES};
use crate::error::{Error, Result};

pub use probe::{domain_probe_accuracy, ProbeSplit};
pub use tsne::{export_tsne, tsne, write_tsne_csv, TsneOptions, TsnePoint};

/// Flag is set when `logit >= 0`, i.e. `sigmoid(logit) >= 0.5`.
pub fn binarize(logits: &[f64]) -> MoralLabelVector {
    let mut out = MoralLabelVector::NON_MORAL;
    for (c, l) in logits.iter().take(NUM_CLASSES).enumerate() {
        out.set(c, *l >= 0.0);
    }
    out
}

/// Predictions with their gold labels. `logits` is absent for systems that
/// only emit label vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub ids: Vec<String>,
    pub logits: Option<Mat>,
    pub predicted: Vec<MoralLabelVector>,
    pub gold: Vec<MoralLabelVector>,
}

impl PredictionSet {
    pub fn from_logits(ids: Vec<String>, logits: Mat, gold: Vec<MoralLabelVector>) -> Result<Self> {
        if logits.ncols() != NUM_CLASSES {
            return Err(Error::DimensionMismatch {
                expected: NUM_CLASSES,
                actual: logits.ncols(),
            });
        }
        if logits.nrows() != gold.len() || ids.len() != gold.len() {
            return Err(Error::DimensionMismatch {
                expected: gold.len(),
                actual: logits.nrows(),
            });
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        let predicted = logits
            .outer_iter()
            .map(|r| binarize(r.as_slice().expect("standard layout")))
            .collect();
        Ok(Self {
            ids,
            logits: Some(logits),
            predicted,
            gold,
        })
    }

    pub fn from_labels(ids: Vec<String>, predicted: Vec<MoralLabelVector>, gold: Vec<MoralLabelVector>) -> Result<Self> {
        if predicted.len() != gold.len() || ids.len() != gold.len() {
            return Err(Error::DimensionMismatch {
                expected: gold.len(),
                actual: predicted.len(),
            });
        }
        Ok(Self {
            ids,
            logits: None,
            predicted,
            gold,
        })
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub classes: Vec<ClassMetrics>,
}

impl ClassReport {
    pub fn from_metrics(classes: Vec<ClassMetrics>) -> Self {
        Self { classes }
    }

    pub fn recall(&self, class: usize) -> f64 {
        self.classes[class].recall
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Binary precision, recall and F1 for each class; every 0/0 is 0.
pub fn per_class_prf(preds: &PredictionSet) -> Result<ClassReport> {
    if preds.is_empty() {
        return Err(Error::invalid("per_class_prf needs at least one document"));
    }
    let mut classes = vec![ClassMetrics::default(); NUM_CLASSES];
    for (p, g) in preds.predicted.iter().zip(&preds.gold) {
        for (c, m) in classes.iter_mut().enumerate() {
            match (p.get(c), g.get(c)) {
                (true, true) => m.tp += 1,
                (true, false) => m.fp += 1,
                (false, true) => m.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    for m in &mut classes {
        m.support = m.tp + m.fn_;
        m.precision = ratio(m.tp, m.tp + m.fp);
        m.recall = ratio(m.tp, m.support);
        m.f1 = if m.precision + m.recall == 0.0 {
            0.0
        } else {
            2.0 * m.precision * m.recall / (m.precision + m.recall)
        };
    }
    Ok(ClassReport { classes })
}

/// Support-weighted mean of the per-class F1 scores.
pub fn weighted_f1(report: &ClassReport) -> Result<f64> {
    let total: usize = report.classes.iter().map(|m| m.support).sum();
    if total == 0 {
        return Err(Error::ZeroSupport);
    }
    Ok(report
        .classes
        .iter()
        .map(|m| m.support as f64 / total as f64 * m.f1)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub runs: usize,
    pub metrics: BTreeMap<String, MeanStd>,
}

/// Mean and population standard deviation per metric.
pub fn aggregate_seeds(runs: &[BTreeMap<String, f64>]) -> Result<SeedAggregate> {
    if runs.len() < 2 {
        return Err(Error::Aggregate(format!("need at least 2 runs, got {}", runs.len())));
    }
    let keys: Vec<&String> = runs[0].keys().collect();
    for (i, r) in runs.iter().enumerate().skip(1) {
        if r.keys().collect::<Vec<_>>() != keys {
            return Err(Error::Aggregate(format!("run {i} has different metric keys")));
        }
    }
    let n = runs.len() as f64;
    let metrics = keys
        .into_iter()
        .map(|k| {
            let vals: Vec<f64> = runs.iter().map(|r| r[k]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (k.clone(), MeanStd { mean, std: var.sqrt() })
        })
        .collect();
    Ok(SeedAggregate {
        runs: runs.len(),
        metrics,
    })
}

/// One evaluation of one system on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub train: Vec<String>,
    pub test: String,
    pub seed: Option<u64>,
    pub num_documents: usize,
    pub weighted_f1: f64,
    pub per_class: BTreeMap<String, ClassMetrics>,
}

impl EvalReport {
    pub fn new(model: &str, train: &[String], test: &str, seed: Option<u64>, preds: &PredictionSet) -> Result<Self> {
        let report = per_class_prf(preds)?;
        let weighted_f1 = weighted_f1(&report)?;
        let per_class = CLASS_NAMES
            .iter()
            .zip(&report.classes)
            .map(|(n, m)| (n.to_string(), *m))
            .collect();
        Ok(Self {
            model: model.to_string(),
            train: train.to_vec(),
            test: test.to_string(),
            seed,
            num_documents: preds.len(),
            weighted_f1,
            per_class,
        })
    }

    /// `weighted_f1` plus `f1.<class>` / `recall.<class>` entries.
    pub fn metric_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("weighted_f1".to_string(), self.weighted_f1);
        for (name, c) in &self.per_class {
            m.insert(format!("f1.{name}"), c.f1);
            m.insert(format!("precision.{name}"), c.precision);
            m.insert(format!("recall.{name}"), c.recall);
        }
        m
    }
}

/// One JSON object per line: id, predicted class names, gold class names.
pub fn write_predictions(path: &Path, preds: &PredictionSet) -> Result<()> {
    let mut out = String::new();
    for i in 0..preds.len() {
        let row = serde_json::json!({
            "id": preds.ids[i],
            "predicted": preds.predicted[i],
            "gold": preds.gold[i],
        });
        out.push_str(&row.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// CSV with one row per (corpus, class) and the positive fraction.
pub fn write_label_distribution(path: &Path, corpora: &[Corpus]) -> Result<Vec<(String, [f64; NUM_CLASSES])>> {
    let mut rows = Vec::new();
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["corpus", "class", "fraction"])?;
    for c in corpora {
        let dist = compute_label_distribution(c)?;
        for (name, frac) in CLASS_NAMES.iter().zip(dist) {
            w.write_record([c.name.as_str(), name, &format!("{frac:.6}")])?;
        }
        rows.push((c.name.clone(), dist));
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows)
}
