//! Distributed dictionary representation: score a text by cosine
//! similarity between its mean word vector and per-class lexicon centroids.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use super::lexicon::{Lexicon, WordVectors};
use crate::autodiff::Mat;
use crate::corpus::{Corpus, MoralLabelVector, CLASS_NAMES, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::evaluation::PredictionSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidTable {
    /// One row per class.
    pub centroids: Mat,
}

/// Mean of the in-vocabulary vectors of each class. Out-of-vocabulary words
/// are skipped.
pub fn build_centroids(lexicon: &Lexicon, embeddings: &WordVectors) -> Result<CentroidTable> {
    let mut centroids = Mat::zeros((NUM_CLASSES, embeddings.dim()));
    for (c, words) in lexicon.words.iter().enumerate() {
        let mut found = 0usize;
        let mut row = centroids.row_mut(c);
        for w in words {
            match embeddings.get(w) {
                Some(v) => {
                    row += &v;
                    found += 1;
                }
                None => log::debug!("lexicon word `{w}` ({}) not in embedding table", CLASS_NAMES[c]),
            }
        }
        if found == 0 {
            return Err(Error::EmptyLexiconClass(CLASS_NAMES[c].to_string()));
        }
        if found < words.len() {
            log::info!("{}: {} of {} lexicon words out of vocabulary", CLASS_NAMES[c], words.len() - found, words.len());
        }
        row /= found as f64;
    }
    Ok(CentroidTable { centroids })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdrPrediction {
    /// `None` when the text has no in-vocabulary token.
    pub class: Option<usize>,
    pub scores: [f64; NUM_CLASSES],
}

impl DdrPrediction {
    /// One-hot for a prediction, all-false for an abstention.
    pub fn labels(&self) -> MoralLabelVector {
        self.class.map_or(MoralLabelVector::NON_MORAL, MoralLabelVector::one_hot)
    }
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Argmax of cosine similarity; ties go to the lowest class index.
pub fn ddr_predict(text: &str, centroids: &CentroidTable, embeddings: &WordVectors) -> DdrPrediction {
    let mut sum = Array1::<f64>::zeros(embeddings.dim());
    let mut n = 0usize;
    for tok in text.split_whitespace() {
        if let Some(v) = embeddings.get(tok) {
            sum += &v;
            n += 1;
        }
    }
    let mut scores = [0.0; NUM_CLASSES];
    if n == 0 {
        return DdrPrediction { class: None, scores };
    }
    let doc = sum / n as f64;
    let mut best = 0;
    for (c, s) in scores.iter_mut().enumerate() {
        *s = cosine(doc.view(), centroids.centroids.row(c));
    }
    for c in 1..NUM_CLASSES {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    DdrPrediction {
        class: Some(best),
        scores,
    }
}

/// Predictions for every labeled document, ready for the usual metrics.
pub fn ddr_predictions(corpus: &Corpus, centroids: &CentroidTable, embeddings: &WordVectors) -> Result<PredictionSet> {
    if corpus.num_labeled() == 0 {
        return Err(Error::NoLabeledDocuments(corpus.name.clone()));
    }
    let (mut ids, mut pred, mut gold) = (Vec::new(), Vec::new(), Vec::new());
    let mut abstained = 0usize;
    for d in corpus.labeled() {
        let p = ddr_predict(&d.processed_text, centroids, embeddings);
        abstained += usize::from(p.class.is_none());
        ids.push(d.id.clone());
        pred.push(p.labels());
        gold.push(d.labels.expect("labeled"));
    }
    if abstained > 0 {
        log::info!("ddr abstained on {abstained} documents without in-vocabulary tokens");
    }
    PredictionSet::from_labels(ids, pred, gold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> WordVectors {
        WordVectors::from_pairs([
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![0.0, 1.0]),
            ("c".to_string(), vec![1.0, 1.0]),
        ])
        .unwrap()
    }

    fn lexicon() -> Lexicon {
        let mut lex = Lexicon::default();
        for c in 0..NUM_CLASSES {
            lex.words[c] = vec!["c".to_string()];
        }
        lex.words[0] = vec!["a".to_string(), "b".to_string(), "zzz".to_string()];
        lex.words[1] = vec!["a".to_string()];
        lex
    }

    #[test]
    fn centroid_means() {
        let t = build_centroids(&lexicon(), &table()).unwrap();
        assert_eq!(t.centroids.row(0).to_vec(), vec![0.5, 0.5]);
        assert_eq!(t.centroids.row(1).to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn empty_class_is_an_error() {
        let mut lex = lexicon();
        lex.words[4] = vec!["nope".to_string()];
        assert!(matches!(build_centroids(&lex, &table()), Err(Error::EmptyLexiconClass(c)) if c == "loyalty"));
    }

    #[test]
    fn ties_go_to_lowest_index_and_oov_abstains() {
        let t = build_centroids(&lexicon(), &table()).unwrap();
        // "c" has the same direction as classes 0 and 2..9.
        let p = ddr_predict("c", &t, &table());
        assert_eq!(p.class, Some(0));
        assert!((p.scores[0] - 1.0).abs() < 1e-12);
        let q = ddr_predict("a", &t, &table());
        assert_eq!(q.class, Some(1));
        let none = ddr_predict("xyz", &t, &table());
        assert_eq!(none.class, None);
        assert!(none.labels().is_non_moral());
    }
}
