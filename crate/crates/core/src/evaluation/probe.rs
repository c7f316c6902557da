//! Linear domain probe: how well can a fresh classifier tell domains apart
//! from fixed features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::linear::{FitOptions, SoftmaxRegression};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSplit {
    pub train_fraction: f64,
}

impl Default for ProbeSplit {
    fn default() -> Self {
        Self { train_fraction: 0.5 }
    }
}

/// Held-out accuracy of a softmax probe. Each domain is subsampled to the
/// size of the smallest one, so chance is `1 / num_domains`.
pub fn domain_probe_accuracy(features: &Mat, domains: &[usize], split: ProbeSplit, seed: u64) -> Result<f64> {
    if features.nrows() != domains.len() {
        return Err(Error::DimensionMismatch {
            expected: features.nrows(),
            actual: domains.len(),
        });
    }
    let num = domains.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_domain: Vec<Vec<usize>> = vec![Vec::new(); num];
    for (i, &d) in domains.iter().enumerate() {
        by_domain[d].push(i);
    }
    let per = by_domain.iter().filter(|v| !v.is_empty()).map(Vec::len).min().unwrap_or(0);
    let per_train = (per as f64 * split.train_fraction).floor() as usize;
    if by_domain.iter().filter(|v| !v.is_empty()).count() < 2 || per_train == 0 || per_train == per {
        return Err(Error::invalid("domain probe needs at least two domains with >= 2 rows each"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for rows in by_domain.iter_mut().filter(|v| !v.is_empty()) {
        rows.shuffle(&mut rng);
        train.extend_from_slice(&rows[..per_train]);
        test.extend_from_slice(&rows[per_train..per]);
    }
    let pick = |idx: &[usize]| features.select(ndarray::Axis(0), idx);
    let labels = |idx: &[usize]| idx.iter().map(|&i| domains[i]).collect::<Vec<_>>();
    let model = SoftmaxRegression::fit(&pick(&train), &labels(&train), num, &FitOptions::default())?;
    Ok(model.accuracy(&pick(&test), &labels(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separable_vs_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200;
        let domains: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let shifted = Mat::from_shape_fn((n, 3), |(i, j)| rng.random::<f64>() + if j == 0 { 3.0 * domains[i] as f64 } else { 0.0 });
        assert!(domain_probe_accuracy(&shifted, &domains, ProbeSplit::default(), 1).unwrap() > 0.95);
        let same = Mat::from_shape_fn((n, 3), |_| rng.random::<f64>());
        assert!(domain_probe_accuracy(&same, &domains, ProbeSplit::default(), 1).unwrap() < 0.65);
    }
}
