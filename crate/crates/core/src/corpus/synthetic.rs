//! Bag-of-tokens corpora with controllable label shift (per-domain class
//! priors) and feature shift (domain-marker tokens).

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{MoralLabelVector, NUM_CLASSES};
use super::{Corpus, DomainId, Document};
use crate::error::{Error, Result};

fn default_markers_per_domain() -> usize {
    4
}
fn default_marker_slots() -> usize {
    3
}
fn default_tokens_per_positive() -> usize {
    2
}
fn default_filler() -> (usize, usize) {
    (2, 5)
}
fn default_distractor_rate() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_domains: usize,
    pub docs_per_domain: usize,
    /// `num_domains` rows of 10 per-class positive probabilities.
    pub per_domain_class_prior: Vec<[f64; NUM_CLASSES]>,
    pub vocab_size: usize,
    pub domain_marker_strength: f64,
    pub seed: u64,
    #[serde(default)]
    pub domain_names: Vec<String>,
    #[serde(default = "default_markers_per_domain")]
    pub markers_per_domain: usize,
    /// Independent marker insertions attempted per document.
    #[serde(default = "default_marker_slots")]
    pub marker_slots: usize,
    #[serde(default = "default_tokens_per_positive")]
    pub tokens_per_positive: usize,
    /// Inclusive range of neutral filler tokens per document.
    #[serde(default = "default_filler")]
    pub filler: (usize, usize),
    /// Probability of one token from a negative class appearing.
    #[serde(default = "default_distractor_rate")]
    pub distractor_rate: f64,
}

impl SyntheticSpec {
    pub fn new(per_domain_class_prior: Vec<[f64; NUM_CLASSES]>, docs_per_domain: usize, seed: u64) -> Self {
        Self {
            num_domains: per_domain_class_prior.len(),
            docs_per_domain,
            per_domain_class_prior,
            vocab_size: 110,
            domain_marker_strength: 0.0,
            seed,
            domain_names: Vec::new(),
            markers_per_domain: default_markers_per_domain(),
            marker_slots: default_marker_slots(),
            tokens_per_positive: default_tokens_per_positive(),
            filler: default_filler(),
            distractor_rate: default_distractor_rate(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.num_domains == 0 {
            errs.push("num_domains must be >= 1".to_string());
        }
        if self.docs_per_domain == 0 {
            errs.push("docs_per_domain must be >= 1".to_string());
        }
        if self.per_domain_class_prior.len() != self.num_domains {
            errs.push(format!(
                "per_domain_class_prior has {} rows, expected {}",
                self.per_domain_class_prior.len(),
                self.num_domains
            ));
        }
        if self
            .per_domain_class_prior
            .iter()
            .flatten()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            errs.push("class priors must lie in [0, 1]".to_string());
        }
        if !(0.0..=1.0).contains(&self.domain_marker_strength) {
            errs.push("domain_marker_strength must lie in [0, 1]".to_string());
        }
        if self.vocab_size < NUM_CLASSES + 1 {
            errs.push(format!("vocab_size must be >= {}", NUM_CLASSES + 1));
        }
        if !self.domain_names.is_empty() && self.domain_names.len() != self.num_domains {
            errs.push("domain_names must be empty or have one entry per domain".to_string());
        }
        if self.filler.0 > self.filler.1 {
            errs.push("filler range is empty".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn domain_name(&self, d: usize) -> String {
        self.domain_names
            .get(d)
            .cloned()
            .unwrap_or_else(|| format!("synthetic{d}"))
    }

    fn group_size(&self) -> usize {
        self.vocab_size / (NUM_CLASSES + 1)
    }

    /// Tokens indicative of `class`; identical in every domain.
    pub fn class_tokens(&self, class: usize) -> Vec<String> {
        let g = self.group_size();
        (class * g..(class + 1) * g).map(|k| format!("tok{k}")).collect()
    }

    pub fn filler_tokens(&self) -> Vec<String> {
        let g = self.group_size();
        (NUM_CLASSES * g..self.vocab_size).map(|k| format!("tok{k}")).collect()
    }

    pub fn marker_tokens(&self, domain: usize) -> Vec<String> {
        (0..self.markers_per_domain).map(|j| format!("dm{domain}x{j}")).collect()
    }
}

/// One corpus per domain, deterministic under `spec.seed`.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<Vec<Corpus>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let class_tokens: Vec<Vec<String>> = (0..NUM_CLASSES).map(|c| spec.class_tokens(c)).collect();
    let filler = spec.filler_tokens();

    let mut out = Vec::with_capacity(spec.num_domains);
    for d in 0..spec.num_domains {
        let name = spec.domain_name(d);
        let domain = DomainId::new(d, name.clone());
        let markers = spec.marker_tokens(d);
        let prior = &spec.per_domain_class_prior[d];
        let mut docs = Vec::with_capacity(spec.docs_per_domain);
        for i in 0..spec.docs_per_domain {
            let mut labels = MoralLabelVector::NON_MORAL;
            for (c, p) in prior.iter().enumerate() {
                labels.set(c, rng.random::<f64>() < *p);
            }

            let mut tokens: Vec<&str> = Vec::new();
            for c in labels.classes() {
                for _ in 0..spec.tokens_per_positive {
                    tokens.push(class_tokens[c.index()].choose(&mut rng).unwrap());
                }
            }
            if rng.random::<f64>() < spec.distractor_rate {
                let negatives: Vec<usize> = (0..NUM_CLASSES).filter(|c| !labels.get(*c)).collect();
                if let Some(&c) = negatives.choose(&mut rng) {
                    tokens.push(class_tokens[c].choose(&mut rng).unwrap());
                }
            }
            let n_filler = rng.random_range(spec.filler.0..=spec.filler.1);
            if !filler.is_empty() {
                for _ in 0..n_filler {
                    tokens.push(filler.choose(&mut rng).unwrap());
                }
            }
            if !markers.is_empty() {
                for _ in 0..spec.marker_slots {
                    if rng.random::<f64>() < spec.domain_marker_strength {
                        tokens.push(markers.choose(&mut rng).unwrap());
                    }
                }
            }
            tokens.shuffle(&mut rng);
            docs.push(Document::new(
                format!("{name}-{i:05}"),
                tokens.join(" "),
                domain.clone(),
                Some(labels),
            ));
        }
        out.push(Corpus::new(name, domain, docs)?);
    }
    Ok(out)
}
