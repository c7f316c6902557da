//! Domain-balanced mini-batches.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One example slot: `doc` indexes into the corpus of `domain`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchItem {
    pub domain: usize,
    pub doc: usize,
    pub labeled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn labeled(&self) -> impl Iterator<Item = &BatchItem> {
        self.items.iter().filter(|i| i.labeled)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub quotas: Vec<usize>,
    pub batches: Vec<Batch>,
}

/// `floor(batch_size / domains)` each, remainder to the lowest indices.
pub fn batch_quotas(batch_size: usize, domains: usize) -> Vec<usize> {
    if domains == 0 {
        return Vec::new();
    }
    let base = batch_size / domains;
    let extra = batch_size % domains;
    (0..domains).map(|d| base + usize::from(d < extra)).collect()
}

/// One epoch of batches. `labeled_sizes[d]` is the size of labeled corpus
/// `d`; the target, when present, takes domain index `labeled_sizes.len()`.
/// The number of batches covers the largest corpus once; smaller corpora are
/// visited in shuffled order and then topped up by sampling with replacement.
pub fn build_mixed_batches(
    labeled_sizes: &[usize],
    target_size: Option<usize>,
    batch_size: usize,
    seed: u64,
) -> Result<BatchPlan> {
    let mut sizes: Vec<(usize, bool)> = labeled_sizes.iter().map(|&n| (n, true)).collect();
    if let Some(t) = target_size {
        sizes.push((t, false));
    }
    if sizes.is_empty() {
        return Err(Error::invalid("no corpora to batch"));
    }
    if let Some(d) = sizes.iter().position(|(n, _)| *n == 0) {
        return Err(Error::CorpusTooSmall {
            name: format!("domain {d}"),
            size: 0,
            needed: 1,
        });
    }
    if batch_size < sizes.len() {
        return Err(Error::invalid(format!(
            "batch size {batch_size} smaller than the number of domains {}",
            sizes.len()
        )));
    }
    let quotas = batch_quotas(batch_size, sizes.len());
    let steps = sizes
        .iter()
        .zip(&quotas)
        .map(|((n, _), q)| n.div_ceil(*q))
        .max()
        .unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let streams: Vec<Vec<usize>> = sizes
        .iter()
        .zip(&quotas)
        .map(|((n, _), q)| {
            let mut order: Vec<usize> = (0..*n).collect();
            order.shuffle(&mut rng);
            let need = steps * q;
            while order.len() < need {
                order.push(rng.random_range(0..*n));
            }
            order
        })
        .collect();

    let batches = (0..steps)
        .map(|s| {
            let mut items = Vec::with_capacity(batch_size);
            for (d, ((_, labeled), q)) in sizes.iter().zip(&quotas).enumerate() {
                for &doc in &streams[d][s * q..(s + 1) * q] {
                    items.push(BatchItem {
                        domain: d,
                        doc,
                        labeled: *labeled,
                    });
                }
            }
            Batch { items }
        })
        .collect();
    Ok(BatchPlan { quotas, batches })
}

/// Plain shuffled batches over one pool; the last batch may be short.
pub fn shuffled_batches(size: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..size).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
