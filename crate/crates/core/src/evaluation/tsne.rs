//! Exact t-SNE and the coordinate export.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneOptions {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
}

impl Default for TsneOptions {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
        }
    }
}

fn sq_distances(x: &Mat) -> Mat {
    let n = x.nrows();
    let norms: Vec<f64> = x.outer_iter().map(|r| r.dot(&r)).collect();
    let g = x.dot(&x.t());
    Mat::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { (norms[i] + norms[j] - 2.0 * g[[i, j]]).max(0.0) })
}

/// Row-conditional affinities with a per-row bandwidth found by bisection on
/// the entropy, then symmetrized.
fn joint_probabilities(d: &Mat, perplexity: f64) -> Mat {
    let n = d.nrows();
    let target = perplexity.ln();
    let mut p = Mat::zeros((n, n));
    for i in 0..n {
        let (mut lo, mut hi, mut beta) = (f64::NEG_INFINITY, f64::INFINITY, 1.0);
        let min_d = (0..n).filter(|&j| j != i).map(|j| d[[i, j]]).fold(f64::INFINITY, f64::min);
        for _ in 0..64 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let e = (-(d[[i, j]] - min_d) * beta).exp();
                p[[i, j]] = e;
                sum += e;
                weighted += e * (d[[i, j]] - min_d);
            }
            let entropy = sum.ln() + beta * weighted / sum;
            for j in 0..n {
                p[[i, j]] /= sum;
            }
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
    }
    let sym = (&p + &p.t()) / (2.0 * n as f64);
    sym.mapv(|v| v.max(1e-12))
}

/// Two-dimensional embedding of the rows of `x`; deterministic under `seed`.
pub fn tsne(x: &Mat, opts: &TsneOptions, seed: u64) -> Result<Mat> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid("t-SNE needs at least two points"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-SNE input"));
    }
    let perplexity = opts.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let p = joint_probabilities(&sq_distances(x), perplexity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y = Mat::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let mut update = Mat::zeros((n, 2));
    let mut gains = Mat::ones((n, 2));
    let mut num = Mat::zeros((n, n));
    for it in 0..opts.iterations {
        let exag = if it < opts.exaggeration_iters {
            opts.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < opts.exaggeration_iters { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let dy0 = y[[i, 0]] - y[[j, 0]];
                    let dy1 = y[[i, 1]] - y[[j, 1]];
                    let v = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                    num[[i, j]] = v;
                    z += v;
                }
            }
        }
        let mut grad = Mat::zeros((n, 2));
        for i in 0..n {
            let (mut g0, mut g1) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[[i, j]] / z;
                let m = (exag * p[[i, j]] - q) * num[[i, j]];
                g0 += m * (y[[i, 0]] - y[[j, 0]]);
                g1 += m * (y[[i, 1]] - y[[j, 1]]);
            }
            grad[[i, 0]] = 4.0 * g0;
            grad[[i, 1]] = 4.0 * g1;
        }
        for ((g, u), gain) in grad.iter().zip(update.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*u > 0.0) {
                *gain + 0.2
            } else {
                (*gain * 0.8).max(0.01)
            };
            *u = momentum * *u - opts.learning_rate * *gain * g;
        }
        y += &update;
        let mean = y.mean_axis(ndarray::Axis(0)).expect("non-empty");
        y -= &mean;
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsnePoint {
    pub x: f64,
    pub y: f64,
    pub domain: String,
}

/// Samples `sample_size` documents per corpus, embeds them with `featurize`
/// and reduces the embeddings jointly.
pub fn export_tsne<F>(corpora: &[Corpus], featurize: F, sample_size: usize, seed: u64, opts: &TsneOptions) -> Result<Vec<TsnePoint>>
where
    F: Fn(&[&Document]) -> Result<Mat>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs: Vec<&Document> = Vec::new();
    let mut domains = Vec::new();
    for c in corpora {
        if sample_size > c.len() {
            return Err(Error::CorpusTooSmall {
                name: c.name.clone(),
                size: c.len(),
                needed: sample_size,
            });
        }
        let mut idx = sample(&mut rng, c.len(), sample_size).into_vec();
        idx.sort_unstable();
        for i in idx {
            docs.push(&c.documents[i]);
            domains.push(c.name.clone());
        }
    }
    let features = featurize(&docs)?;
    let coords = tsne(&features, opts, seed)?;
    Ok(coords
        .outer_iter()
        .zip(domains)
        .map(|(r, domain)| TsnePoint {
            x: r[0],
            y: r[1],
            domain,
        })
        .collect())
}

pub fn write_tsne_csv(path: &Path, points: &[TsnePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clusters() -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise = Normal::new(0.0, 0.1).unwrap();
        Mat::from_shape_fn((40, 5), |(i, j)| if i < 20 { 0.0 } else { 5.0 } * (j == 0) as u8 as f64 + noise.sample(&mut rng))
    }

    #[test]
    fn separates_clusters_and_is_deterministic() {
        let x = clusters();
        let opts = TsneOptions {
            iterations: 300,
            ..TsneOptions::default()
        };
        let a = tsne(&x, &opts, 3).unwrap();
        assert_eq!(a, tsne(&x, &opts, 3).unwrap());
        let centroid = |r: std::ops::Range<usize>| {
            let n = r.len() as f64;
            r.fold((0.0, 0.0), |acc, i| (acc.0 + a[[i, 0]] / n, acc.1 + a[[i, 1]] / n))
        };
        let (c0, c1) = (centroid(0..20), centroid(20..40));
        let between = ((c0.0 - c1.0).powi(2) + (c0.1 - c1.1).powi(2)).sqrt();
        let within = (0..20)
            .map(|i| ((a[[i, 0]] - c0.0).powi(2) + (a[[i, 1]] - c0.1).powi(2)).sqrt())
            .fold(0.0, f64::max);
        assert!(between > within, "between {between} within {within}");
    }

    #[test]
    fn conditional_rows_reach_perplexity() {
        let x = clusters();
        let d = sq_distances(&x);
        let p = joint_probabilities(&d, 5.0);
        assert!((p.sum() - 1.0).abs() < 1e-6);
    }
}
