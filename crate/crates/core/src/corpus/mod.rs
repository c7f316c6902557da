//! Datasets: loading, normalization, label aggregation, splitting and
//! synthetic generation.

mod io;
mod labels;
mod preprocess;
mod synthetic;
mod vote;

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{document_record, file_sha256, load_corpus, write_corpus, CorpusFormat, LoadReport, Record};
pub use labels::{MoralClass, MoralLabelVector, CLASS_NAMES, NUM_CLASSES};
pub use preprocess::{emoji_name, emoji_table, preprocess_text};
pub use synthetic::{generate_synthetic_corpus, SyntheticSpec};
pub use vote::{majority_vote, AnnotationSet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainId {
    pub index: usize,
    pub name: String,
}

impl DomainId {
    pub fn new(index: usize, name: impl Into<String>) -> Self {
        Self {
            index,
            name: name.into(),
        }
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.name, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    UnlabeledTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub raw_text: String,
    pub processed_text: String,
    pub domain: DomainId,
    pub labels: Option<MoralLabelVector>,
    pub split: Split,
}

impl Document {
    /// Builds a document from raw text. A missing label vector marks the
    /// document as unlabeled target data.
    pub fn new(
        id: impl Into<String>,
        raw_text: impl Into<String>,
        domain: DomainId,
        labels: Option<MoralLabelVector>,
    ) -> Self {
        let raw_text = raw_text.into();
        let processed_text = preprocess_text(&raw_text);
        let split = if labels.is_some() {
            Split::Train
        } else {
            Split::UnlabeledTarget
        };
        Self {
            id: id.into(),
            raw_text,
            processed_text,
            domain,
            labels,
            split,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub positives: [usize; NUM_CLASSES],
    pub negatives: [usize; NUM_CLASSES],
}

impl LabelCounts {
    pub fn from_labels<'a, I: IntoIterator<Item = &'a MoralLabelVector>>(labels: I) -> Self {
        let mut counts = LabelCounts::default();
        for l in labels {
            for (c, flag) in l.flags().iter().enumerate() {
                if *flag {
                    counts.positives[c] += 1;
                } else {
                    counts.negatives[c] += 1;
                }
            }
        }
        counts
    }

    pub fn num_labeled(&self) -> usize {
        self.positives[0] + self.negatives[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub domain: DomainId,
    pub documents: Vec<Document>,
    pub label_counts: LabelCounts,
}

impl Corpus {
    pub fn new(name: impl Into<String>, domain: DomainId, documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for d in &documents {
            if !seen.insert(d.id.as_str()) {
                return Err(Error::DuplicateId(d.id.clone()));
            }
        }
        let label_counts = LabelCounts::from_labels(documents.iter().filter_map(|d| d.labels.as_ref()));
        Ok(Self {
            name: name.into(),
            domain,
            documents,
            label_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn labeled(&self) -> impl Iterator<Item = &Document> {
        self.documents.iter().filter(|d| d.labels.is_some())
    }

    pub fn num_labeled(&self) -> usize {
        self.labeled().count()
    }

    pub fn recompute_label_counts(&self) -> LabelCounts {
        LabelCounts::from_labels(self.documents.iter().filter_map(|d| d.labels.as_ref()))
    }

    /// Re-tags every document. Tagging as unlabeled target drops labels.
    pub fn with_split(mut self, split: Split) -> Self {
        for d in &mut self.documents {
            d.split = split;
            if split == Split::UnlabeledTarget {
                d.labels = None;
            }
        }
        self.label_counts = self.recompute_label_counts();
        self
    }

    /// Moves every document into another domain slot.
    pub fn with_domain(mut self, domain: DomainId) -> Self {
        for d in &mut self.documents {
            d.domain = domain.clone();
        }
        self.domain = domain;
        self
    }

    fn subset(&self, docs: Vec<Document>, split: Split) -> Corpus {
        let documents: Vec<Document> = docs
            .into_iter()
            .map(|mut d| {
                if d.labels.is_some() {
                    d.split = split;
                }
                d
            })
            .collect();
        let label_counts = LabelCounts::from_labels(documents.iter().filter_map(|d| d.labels.as_ref()));
        Corpus {
            name: self.name.clone(),
            domain: self.domain.clone(),
            documents,
            label_counts,
        }
    }
}

/// Seeded shuffle then cut: the first `floor(ratio * n)` documents train,
/// the remainder validate.
pub fn split_train_val(corpus: &Corpus, ratio: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} not in (0, 1)")));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::CorpusTooSmall {
            name: corpus.name.clone(),
            size: n,
            needed: 2,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let cut = (ratio * n as f64).floor() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus.documents[i].clone()).collect::<Vec<_>>();
    let train = corpus.subset(pick(&order[..cut]), Split::Train);
    let val = corpus.subset(pick(&order[cut..]), Split::Val);
    Ok((train, val))
}

/// Fraction of labeled documents carrying each class.
pub fn compute_label_distribution(corpus: &Corpus) -> Result<[f64; NUM_CLASSES]> {
    let counts = corpus.recompute_label_counts();
    let n = counts.num_labeled();
    if n == 0 {
        return Err(Error::NoLabeledDocuments(corpus.name.clone()));
    }
    let mut out = [0.0; NUM_CLASSES];
    for (o, p) in out.iter_mut().zip(counts.positives.iter()) {
        *o = *p as f64 / n as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Corpus {
        let domain = DomainId::new(0, "toy");
        let docs = (0..n)
            .map(|i| {
                let labels = if i % 2 == 0 {
                    MoralLabelVector::from_classes([MoralClass::Care])
                } else {
                    MoralLabelVector::NON_MORAL
                };
                Document::new(format!("d{i}"), format!("text {i}"), domain.clone(), Some(labels))
            })
            .collect();
        Corpus::new("toy", domain, docs).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = toy(10);
        let (a, b) = split_train_val(&c, 0.8, 7).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a2, b2) = split_train_val(&c, 0.8, 7).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert!(a.documents.iter().all(|d| d.split == Split::Train));
        assert!(b.documents.iter().all(|d| d.split == Split::Val));
    }

    #[test]
    fn split_seeds_differ() {
        let c = toy(100);
        let (a1, _) = split_train_val(&c, 0.8, 1).unwrap();
        let (a2, _) = split_train_val(&c, 0.8, 2).unwrap();
        assert_eq!(a1.len(), a2.len());
        let ids1: Vec<_> = a1.documents.iter().map(|d| &d.id).collect();
        let ids2: Vec<_> = a2.documents.iter().map(|d| &d.id).collect();
        assert_ne!(ids1, ids2);
    }

    #[test]
    fn split_too_small() {
        assert!(matches!(split_train_val(&toy(1), 0.8, 0), Err(Error::CorpusTooSmall { .. })));
        assert!(split_train_val(&toy(5), 1.0, 0).is_err());
    }

    #[test]
    fn label_distribution() {
        let c = toy(4);
        let dist = compute_label_distribution(&c).unwrap();
        assert_eq!(dist[0], 0.5);
        assert!(dist[1..].iter().all(|f| *f == 0.0));

        let domain = DomainId::new(0, "x");
        let multi = Corpus::new(
            "x",
            domain.clone(),
            vec![Document::new(
                "a",
                "t",
                domain.clone(),
                Some(MoralLabelVector::from_classes([MoralClass::Care, MoralClass::Harm])),
            )],
        )
        .unwrap();
        let dist = compute_label_distribution(&multi).unwrap();
        assert_eq!((dist[0], dist[1]), (1.0, 1.0));

        let unlabeled = toy(3).with_split(Split::UnlabeledTarget);
        assert!(matches!(
            compute_label_distribution(&unlabeled),
            Err(Error::NoLabeledDocuments(_))
        ));
    }

    #[test]
    fn all_false_distribution_is_zero() {
        let domain = DomainId::new(0, "z");
        let docs = (0..3)
            .map(|i| Document::new(format!("{i}"), "x", domain.clone(), Some(MoralLabelVector::NON_MORAL)))
            .collect();
        let c = Corpus::new("z", domain, docs).unwrap();
        assert_eq!(compute_label_distribution(&c).unwrap(), [0.0; NUM_CLASSES]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let domain = DomainId::new(0, "d");
        let docs = vec![
            Document::new("same", "a", domain.clone(), None),
            Document::new("same", "b", domain.clone(), None),
        ];
        assert!(matches!(Corpus::new("d", domain, docs), Err(Error::DuplicateId(_))));
    }
}
