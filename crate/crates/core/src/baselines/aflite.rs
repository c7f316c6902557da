//! AFLite: repeatedly fit linear classifiers on random partitions of fixed
//! embeddings and drop the documents they get right too often.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::corpus::{Corpus, MoralLabelVector, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::linear::{FitOptions, MultiLabelLogistic};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AFLiteConfig {
    pub num_partitions: usize,
    pub train_fraction: f64,
    /// Documents scoring at or above this are candidates for removal.
    pub predictability_threshold: f64,
    /// Fixed per-round cap; when absent the cap is
    /// `ceil(max_remove_fraction * current size)`.
    pub max_remove_per_round: Option<usize>,
    pub max_remove_fraction: f64,
    pub min_size_fraction: f64,
    pub min_delta_fraction: f64,
    pub fit: FitOptions,
}

impl Default for AFLiteConfig {
    fn default() -> Self {
        Self {
            num_partitions: 64,
            train_fraction: 0.8,
            predictability_threshold: 0.75,
            max_remove_per_round: None,
            max_remove_fraction: 0.05,
            min_size_fraction: 0.5,
            min_delta_fraction: 0.02,
            fit: FitOptions {
                iterations: 100,
                learning_rate: 0.1,
                l2: 1e-4,
            },
        }
    }
}

impl AFLiteConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.num_partitions < 2 {
            errs.push(format!("num_partitions must be >= 2, got {}", self.num_partitions));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            errs.push(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if !(self.predictability_threshold > 0.0 && self.predictability_threshold <= 1.0) {
            errs.push(format!("predictability_threshold must lie in (0, 1], got {}", self.predictability_threshold));
        }
        if !(self.max_remove_fraction > 0.0 && self.max_remove_fraction <= 1.0) {
            errs.push(format!("max_remove_fraction must lie in (0, 1], got {}", self.max_remove_fraction));
        }
        if !(0.0..1.0).contains(&self.min_size_fraction) {
            errs.push(format!("min_size_fraction must lie in [0, 1), got {}", self.min_size_fraction));
        }
        if !(0.0..=1.0).contains(&self.min_delta_fraction) {
            errs.push(format!("min_delta_fraction must lie in [0, 1], got {}", self.min_delta_fraction));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    fn cap(&self, size: usize) -> usize {
        self.max_remove_per_round
            .unwrap_or_else(|| (self.max_remove_fraction * size as f64).ceil() as usize)
    }

    /// Smallest dataset a round accepts: at least one training and one
    /// held-out document per partition on average.
    pub fn min_dataset_size(&self) -> usize {
        (2.0 / (1.0 - self.train_fraction) - 1e-9).ceil() as usize
    }
}

/// Labeled documents with embeddings from a frozen encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AfliteDataset {
    pub ids: Vec<String>,
    pub embeddings: Mat,
    pub labels: Vec<MoralLabelVector>,
}

impl AfliteDataset {
    pub fn new(ids: Vec<String>, embeddings: Mat, labels: Vec<MoralLabelVector>) -> Result<Self> {
        if embeddings.nrows() != ids.len() || labels.len() != ids.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                actual: embeddings.nrows().min(labels.len()),
            });
        }
        Ok(Self { ids, embeddings, labels })
    }

    /// Labeled documents of `corpus`; `embed` maps their texts to rows.
    pub fn from_corpus(corpus: &Corpus, embed: impl FnOnce(&[&str]) -> Result<Mat>) -> Result<Self> {
        let docs: Vec<_> = corpus.labeled().collect();
        if docs.is_empty() {
            return Err(Error::NoLabeledDocuments(corpus.name.clone()));
        }
        let texts: Vec<&str> = docs.iter().map(|d| d.processed_text.as_str()).collect();
        let embeddings = embed(&texts)?;
        Self::new(
            docs.iter().map(|d| d.id.clone()).collect(),
            embeddings,
            docs.iter().map(|d| d.labels.expect("labeled")).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Fraction of held-out evaluations each document was predicted exactly.
/// Documents never held out are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictabilityScore {
    pub scores: BTreeMap<String, f64>,
}

/// Per-row (correct, evaluated) counts over `rows` of the dataset.
fn score_rows(data: &AfliteDataset, rows: &[usize], cfg: &AFLiteConfig, seed: u64) -> Result<Vec<(usize, usize)>> {
    let n = rows.len();
    if n < cfg.min_dataset_size() {
        return Err(Error::CorpusTooSmall {
            name: "aflite dataset".to_string(),
            size: n,
            needed: cfg.min_dataset_size(),
        });
    }
    let n_train = ((cfg.train_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![(0usize, 0usize); n];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.num_partitions {
        order.shuffle(&mut rng);
        let (train, held) = order.split_at(n_train);
        let pick = |idx: &[usize]| {
            let global: Vec<usize> = idx.iter().map(|&i| rows[i]).collect();
            let x = data.embeddings.select(ndarray::Axis(0), &global);
            let y = Mat::from_shape_fn((idx.len(), NUM_CLASSES), |(r, c)| f64::from(u8::from(data.labels[global[r]].get(c))));
            (x, y)
        };
        let (x, y) = pick(train);
        let model = MultiLabelLogistic::fit(&x, &y, &cfg.fit)?;
        let (hx, _) = pick(held);
        for (&i, flags) in held.iter().zip(model.predict(&hx)) {
            let gold = data.labels[rows[i]];
            let exact = flags.iter().enumerate().all(|(c, f)| *f == gold.get(c));
            counts[i].0 += usize::from(exact);
            counts[i].1 += 1;
        }
    }
    Ok(counts)
}

pub fn aflite_round(data: &AfliteDataset, cfg: &AFLiteConfig, seed: u64) -> Result<PredictabilityScore> {
    cfg.validate()?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let counts = score_rows(data, &rows, cfg, seed)?;
    let scores = counts
        .iter()
        .enumerate()
        .filter(|(_, (_, seen))| *seen > 0)
        .map(|(i, (hit, seen))| (data.ids[i].clone(), *hit as f64 / *seen as f64))
        .collect();
    Ok(PredictabilityScore { scores })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AfliteRound {
    pub round: usize,
    pub size_before: usize,
    pub removed: usize,
    pub size_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfliteOutcome {
    /// Surviving row indices into the input dataset, ascending.
    pub kept: Vec<usize>,
    pub removed_ids: Vec<String>,
    pub rounds: Vec<AfliteRound>,
}

impl AfliteOutcome {
    /// Initial size followed by the size after each round.
    pub fn sizes(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.rounds.first().map(|r| r.size_before).into_iter().collect();
        out.extend(self.rounds.iter().map(|r| r.size_after));
        out
    }
}

/// Rounds of scoring and removal. Each round removes up to the cap of the
/// most predictable documents scoring at least the threshold, never going
/// below `ceil(min_size_fraction * N0)`. Stops once the size reaches that
/// floor or a round removes fewer than `min_delta_fraction` of its input.
pub fn aflite_filter(data: &AfliteDataset, cfg: &AFLiteConfig, seed: u64) -> Result<AfliteOutcome> {
    cfg.validate()?;
    let n0 = data.len();
    let floor = (cfg.min_size_fraction * n0 as f64).ceil() as usize;
    let mut rows: Vec<usize> = (0..n0).collect();
    let mut rounds = Vec::new();
    let mut removed_ids = Vec::new();
    loop {
        let round = rounds.len();
        let size_before = rows.len();
        let round_seed = seed ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let counts = score_rows(data, &rows, cfg, round_seed)?;
        let mut candidates: Vec<(f64, usize)> = counts
            .iter()
            .enumerate()
            .filter(|(_, (_, seen))| *seen > 0)
            .map(|(i, (hit, seen))| (*hit as f64 / *seen as f64, i))
            .filter(|(s, _)| *s >= cfg.predictability_threshold)
            .collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let limit = cfg.cap(size_before).min(size_before.saturating_sub(floor));
        let mut drop: Vec<usize> = candidates.iter().take(limit).map(|(_, i)| *i).collect();
        drop.sort_unstable();
        for &i in drop.iter().rev() {
            removed_ids.push(data.ids[rows.remove(i)].clone());
        }
        let removed = drop.len();
        rounds.push(AfliteRound {
            round,
            size_before,
            removed,
            size_after: rows.len(),
        });
        log::debug!("aflite round {round}: {size_before} -> {} ({removed} removed)", rows.len());
        if rows.len() <= floor || (removed as f64) < cfg.min_delta_fraction * size_before as f64 {
            break;
        }
    }
    Ok(AfliteOutcome {
        kept: rows,
        removed_ids,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noise(n: usize, seed: u64) -> AfliteDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Mat::from_shape_fn((n, 4), |_| rng.random::<f64>());
        let labels = (0..n).map(|_| MoralLabelVector::one_hot(rng.random_range(0..NUM_CLASSES))).collect();
        AfliteDataset::new((0..n).map(|i| format!("d{i}")).collect(), x, labels).unwrap()
    }

    #[test]
    fn too_small_rejected() {
        let cfg = AFLiteConfig::default();
        assert_eq!(cfg.min_dataset_size(), 10);
        assert!(matches!(aflite_round(&noise(9, 1), &cfg, 0), Err(Error::CorpusTooSmall { .. })));
        assert!(aflite_round(&noise(10, 1), &cfg, 0).is_ok());
    }

    #[test]
    fn unpredictable_data_stops_immediately() {
        let data = noise(200, 2);
        let out = aflite_filter(&data, &AFLiteConfig::default(), 3).unwrap();
        assert_eq!(out.rounds.len(), 1);
        assert_eq!(out.kept.len(), 200);
        assert!(out.removed_ids.is_empty());
    }

    #[test]
    fn scores_are_fractions() {
        let cfg = AFLiteConfig {
            num_partitions: 3,
            ..AFLiteConfig::default()
        };
        let s = aflite_round(&noise(50, 4), &cfg, 5).unwrap();
        assert!(s.scores.len() <= 50);
        assert!(s.scores.values().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn invalid_config_listed() {
        let cfg = AFLiteConfig {
            num_partitions: 1,
            predictability_threshold: 0.0,
            ..AFLiteConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
